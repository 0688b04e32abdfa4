"""
Static augmentation policies and dataset splits.

B/D grows every class to the majority count; G/E adds n pseudo samples per
original. Both take token weights from the proxy model.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .corpus import LabeledSample, TokenizedSample, Vocab
from .encoder import EncoderModel
from .errors import ConfigError, DataError
from .generator import GeneratorModel, PseudoSample, attention_weights, generate_many
from .schedule import StepGroups
from .seeding import derive_seed, substream

log = logging.getLogger(__name__)

BALANCE = "balance"
N_EACH = "n_each"
VARIANTS = (BALANCE, N_EACH)


@dataclass(frozen=True)
class AugPolicy:
    variant: str = N_EACH
    n: int = 4
    group_index: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"policy must be one of {VARIANTS}")
        if self.variant == N_EACH and self.n < 1:
            raise ConfigError("n must be >= 1 for the n-samples-each policy")

    @property
    def short_name(self) -> str:
        return "B/D" if self.variant == BALANCE else "G/E"


@dataclass
class AugmentedDataset:
    """Originals plus pseudo samples; ``PseudoSample.source_id`` indexes ``originals``."""

    originals: List[TokenizedSample]
    pseudo: List[PseudoSample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.originals) + len(self.pseudo)

    def class_counts(self, vocab: Vocab) -> Dict[str, int]:
        counts = Counter(vocab.classes[s.label_id] for s in self.originals)
        counts.update(p.label for p in self.pseudo)
        return {name: counts.get(name, 0) for name in vocab.classes}

    def pseudo_lists(self) -> List[List[Sequence[int]]]:
        lists: List[List[Sequence[int]]] = [[] for _ in self.originals]
        for p in self.pseudo:
            lists[p.source_id].append(p.ids)
        return lists


def augment_n_each(
    dataset: Sequence[TokenizedSample],
    gen: GeneratorModel,
    proxy: EncoderModel,
    n: int,
    group_index: int = 4,
    num_groups: int = 8,
    seed: int = 0,
    workers: int = 1,
    progress: bool = False,
) -> AugmentedDataset:
    if n < 0:
        raise ConfigError("n must be >= 0")
    out = AugmentedDataset(originals=list(dataset))
    if n == 0 or not dataset:
        return out
    groups = StepGroups(gen.schedule.T, num_groups)
    weights = attention_weights(proxy, dataset)
    produced = generate_many(gen, dataset, weights, groups, group_index, n, derive_seed(seed, "n_each"),
                             workers=workers, progress=progress)
    out.pseudo = [p for group in produced for p in group]
    log.info("G/E: %d pseudo samples for %d originals", len(out.pseudo), len(dataset))
    return out


def augment_balance(
    dataset: Sequence[TokenizedSample],
    gen: GeneratorModel,
    proxy: EncoderModel,
    policy: AugPolicy,
    num_groups: int = 8,
    workers: int = 1,
    progress: bool = False,
) -> AugmentedDataset:
    """Generate from sources drawn with replacement until every class matches the majority."""
    vocab = gen.vocab
    out = AugmentedDataset(originals=list(dataset))
    by_class = {c: [i for i, s in enumerate(dataset) if s.label_id == c] for c in range(vocab.num_classes)}
    for c, members in by_class.items():
        if not members:
            raise DataError(f"class '{vocab.classes[c]}' has no samples to amplify")
    target = max(len(m) for m in by_class.values())
    groups = StepGroups(gen.schedule.T, num_groups)

    sources: List[int] = []
    counts: List[int] = []
    for c, members in by_class.items():
        deficit = target - len(members)
        if deficit == 0:
            continue
        rng = substream(policy.seed, "balance", vocab.classes[c])
        drawn = np.bincount(rng.integers(len(members), size=deficit), minlength=len(members))
        for local, count in enumerate(drawn):
            if count:
                sources.append(members[local])
                counts.append(int(count))
        log.debug("B/D: class '%s' needs %d pseudo samples", vocab.classes[c], deficit)
    if not sources:
        return out

    picked = [dataset[i] for i in sources]
    weights = attention_weights(proxy, picked)
    produced = generate_many(gen, picked, weights, groups, policy.group_index, counts,
                             derive_seed(policy.seed, "balance"), source_ids=sources,
                             workers=workers, progress=progress)
    out.pseudo = [p for group in produced for p in group]
    log.info("B/D: %d pseudo samples, every class at %d", len(out.pseudo), target)
    return out


def augment(
    dataset: Sequence[TokenizedSample],
    gen: GeneratorModel,
    proxy: EncoderModel,
    policy: AugPolicy,
    num_groups: int = 8,
    workers: int = 1,
    progress: bool = False,
) -> AugmentedDataset:
    if policy.variant == BALANCE:
        return augment_balance(dataset, gen, proxy, policy, num_groups, workers, progress)
    return augment_n_each(dataset, gen, proxy, policy.n, policy.group_index, num_groups,
                          policy.seed, workers, progress)


def _select(dataset: Sequence[LabeledSample], keep_of, seed: int, tag: str) -> List[LabeledSample]:
    by_label: Dict[str, List[int]] = {}
    for i, s in enumerate(dataset):
        by_label.setdefault(s.label, []).append(i)
    chosen: List[int] = []
    for label, members in by_label.items():
        keep = keep_of(label, len(members))
        rng = substream(seed, tag, label)
        chosen.extend(members[j] for j in rng.choice(len(members), size=keep, replace=False))
    return [dataset[i] for i in sorted(chosen)]


def partial_split(dataset: Sequence[LabeledSample], fraction: float, seed: int = 0) -> List[LabeledSample]:
    """Class-stratified subsample keeping round(count * fraction) per class (halves round up)."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction {fraction} outside (0, 1]")

    def keep_of(label: str, count: int) -> int:
        keep = int(np.floor(count * fraction + 0.5))
        if keep < 1:
            raise DataError(f"fraction {fraction} leaves class '{label}' empty")
        return min(keep, count)

    return _select(dataset, keep_of, seed, "partial")


def few_shot_split(dataset: Sequence[LabeledSample], shots: int, seed: int = 0) -> List[LabeledSample]:
    if shots < 1:
        raise ConfigError("shots must be >= 1")

    def keep_of(label: str, count: int) -> int:
        if count < shots:
            raise DataError(f"class '{label}' has {count} samples, {shots} shots requested")
        return shots

    return _select(dataset, keep_of, seed, "few_shot")
