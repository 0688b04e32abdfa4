"""
Label-aware absorbing noise schedule.

A token survives (stays unmasked) at step t with probability

    q_t(w) = clamp(1 - t/T - lam * sin(t*pi/T) * w, 0, 1)

where w is the token's normalized [CLS]-attention weight. The forward process
uses the running minimum of q over 0..t so masking is absorbing, and a single
uniform draw per token couples all steps into one nested trajectory.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .corpus import MASK_ID, TokenizedSample
from .encoder import ForwardTrace
from .errors import ConfigError, ShapeError

NEVER = np.iinfo(np.int64).max


@dataclass(frozen=True)
class NoiseSchedule:
    T: int = 32
    lam: float = 0.5

    def __post_init__(self):
        if int(self.T) < 1:
            raise ConfigError("schedule T must be >= 1")
        if self.lam < 0:
            raise ConfigError("schedule lambda must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TokenWeights:
    raw: np.ndarray
    normalized: np.ndarray

    def __len__(self) -> int:
        return len(self.raw)


def _check_step(t: int, T: int) -> None:
    if not 0 <= t <= T:
        raise ConfigError(f"step {t} outside [0, {T}]")


def token_weights(trace: ForwardTrace, sample: TokenizedSample) -> TokenWeights:
    """Head-averaged last-layer attention from [CLS] to each position, max-normalized.

    Non-maskable positions get a normalized weight of 0; an all-zero row
    normalizes to all zeros.
    """
    attention = np.asarray(trace.attention, dtype=np.float64)
    if attention.ndim != 3 or attention.shape[1] != len(sample) or attention.shape[2] != len(sample):
        raise ShapeError(f"trace length {attention.shape[-1]} does not match sample length {len(sample)}")
    return weights_from_cls_row(attention[:, 0, :].mean(axis=0), sample.maskable)


def weights_from_cls_row(raw: Sequence[float], maskable: Sequence[bool]) -> TokenWeights:
    raw = np.asarray(raw, dtype=np.float64)
    mask = np.asarray(maskable, dtype=bool)
    if raw.shape != mask.shape:
        raise ShapeError("weights do not align with the sample")
    normalized = np.zeros_like(raw)
    peak = raw[mask].max() if mask.any() else 0.0
    if peak > 0:
        normalized[mask] = raw[mask] / peak
    return TokenWeights(raw=raw, normalized=normalized)


def sinus_modulation(t: float, T: int) -> float:
    _check_step(t, T)
    return math.sin(t * math.pi / T)


def survival_prob(t: float, T: int, lam: float, w: float) -> float:
    _check_step(t, T)
    q = 1.0 - t / T - lam * math.sin(t * math.pi / T) * w
    return min(1.0, max(0.0, q))


def survival_curve(T: int, lam: float, w) -> np.ndarray:
    """Raw survival for t = 0..T; ``w`` may be a scalar or an array (shape (..., T+1))."""
    t = np.arange(T + 1, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)[..., None]
    q = 1.0 - t / T - lam * np.sin(t * np.pi / T) * w
    return np.clip(q, 0.0, 1.0)


def effective_curve(T: int, lam: float, w) -> np.ndarray:
    return np.minimum.accumulate(survival_curve(T, lam, w), axis=-1)


def effective_survival(t: int, T: int, lam: float, w: float) -> float:
    """min over t' in 0..t of survival_prob; non-increasing in t."""
    _check_step(t, T)
    return float(effective_curve(T, lam, w)[int(t)])


@dataclass(frozen=True)
class MaskTrajectory:
    """One nested forward trajectory; mask_times[i] == NEVER for non-maskable positions."""

    source: TokenizedSample
    draws: np.ndarray
    mask_times: np.ndarray
    schedule: NoiseSchedule

    def masked_at(self, t: int) -> np.ndarray:
        _check_step(t, self.schedule.T)
        return np.flatnonzero(self.mask_times <= t)

    def revealed_at(self, t: int) -> np.ndarray:
        """Positions whose mask time is exactly t (M_t minus M_{t-1})."""
        return np.flatnonzero(self.mask_times == t)


def mask_times_from_draws(draws: np.ndarray, weights: np.ndarray, maskable: Sequence[bool],
                          schedule: NoiseSchedule) -> np.ndarray:
    """m_i = min{t >= 1 : u_i >= effective_survival(t)}."""
    maskable = np.asarray(maskable, dtype=bool)
    times = np.full(len(maskable), NEVER, dtype=np.int64)
    if maskable.any():
        curves = effective_curve(schedule.T, schedule.lam, weights[maskable])[:, 1:]
        hit = draws[maskable][:, None] >= curves
        times[maskable] = hit.argmax(axis=1) + 1
    return times


def sample_trajectory(
    sample: TokenizedSample,
    weights: TokenWeights,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> MaskTrajectory:
    if len(weights) != len(sample):
        raise ShapeError("weights do not align with the sample")
    maskable = np.asarray(sample.maskable, dtype=bool)
    draws = np.zeros(len(sample), dtype=np.float64)
    draws[maskable] = rng.random(int(maskable.sum()))
    times = mask_times_from_draws(draws, weights.normalized, maskable, schedule)
    return MaskTrajectory(source=sample, draws=draws, mask_times=times, schedule=schedule)


def corrupt_at_step(traj: MaskTrajectory, t: int) -> List[int]:
    ids = list(traj.source.ids)
    for i in traj.masked_at(t):
        ids[int(i)] = MASK_ID
    return ids


@dataclass(frozen=True)
class StepGroups:
    T: int
    num_groups: int

    def __post_init__(self):
        if self.num_groups < 1 or self.T % self.num_groups:
            raise ConfigError(f"num_groups {self.num_groups} must divide T={self.T}")

    @property
    def size(self) -> int:
        return self.T // self.num_groups

    def steps(self, group_index: int) -> Tuple[int, ...]:
        """Steps of the 1-based group ``group_index``."""
        if not 1 <= group_index <= self.num_groups:
            raise ConfigError(f"group index {group_index} outside 1..{self.num_groups}")
        start = (group_index - 1) * self.size + 1
        return tuple(range(start, start + self.size))

    @property
    def groups(self) -> List[Tuple[int, ...]]:
        return [self.steps(g) for g in range(1, self.num_groups + 1)]

    def group_of(self, t: int) -> Optional[int]:
        if not 1 <= t <= self.T:
            return None
        return (t - 1) // self.size + 1


def step_groups(T: int, num_groups: int) -> StepGroups:
    return StepGroups(T=T, num_groups=num_groups)
