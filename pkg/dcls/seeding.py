"""Named random substreams derived from one master seed."""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(master: int, *names: object) -> int:
    """Hash (master, names...) into a 63-bit seed.

    The same path always yields the same seed, independent of how many other
    streams were drawn before it.
    """
    h = hashlib.sha256(str(int(master)).encode("utf-8"))
    for name in names:
        h.update(b"\x1f")
        h.update(str(name).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def substream(master: int, *names: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))


def torch_generator(seed: int) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed) & 0x7FFF_FFFF_FFFF_FFFF)
    return gen
