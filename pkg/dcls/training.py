"""
Proxy and text-classifier training.

Both stages share one mini-batch loop over class-interleaved batches. The
classifier stage adds pseudo samples from the generator, regenerated from the
current classifier's attention (reflective augmentation), and optimizes the
noise-resistant objective.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .corpus import TokenizedSample
from .encoder import Batch, EncoderConfig, EncoderModel, OptimizerState, evaluate_objective, gradients, init_model, optimizer_step
from .errors import ConfigError, DataError, DivergenceError
from .generator import GeneratorModel, PseudoSample, attention_weights, generate_many
from .losses import LossFlags
from .schedule import StepGroups
from .seeding import derive_seed, substream, torch_generator

log = logging.getLogger(__name__)

REFRESH_MODES = ("epoch", "batch", "static")

PseudoIds = List[List[Sequence[int]]]


@dataclass
class TrainConfig:
    epochs: int = 8
    batch_size: int = 32
    tau: float = 1.0
    B: int = 4
    lr: float = 3e-4
    weight_decay: float = 0.01
    seed: int = 0
    refresh: str = "epoch"
    use_da: bool = True
    use_lap: bool = True
    use_nrt: bool = True
    num_groups: int = 8
    group_index: int = 4
    temperature: float = 1.0
    workers: int = 1
    progress: bool = False

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.use_nrt and self.batch_size < 2:
            raise ConfigError("batch size must be >= 2 when the contrastive loss is enabled")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.B < 0:
            raise ConfigError("B must be >= 0")
        if self.refresh not in REFRESH_MODES:
            raise ConfigError(f"refresh must be one of {REFRESH_MODES}")

    @property
    def flags(self) -> LossFlags:
        return LossFlags(use_da=self.use_da, use_nrt=self.use_nrt)

    def to_dict(self) -> dict:
        return asdict(self)


def stratified_batches(labels: Sequence[int], k: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Split indices into batches of about ``k`` that mix classes.

    Each class is shuffled, the classes are laid end to end (largest first)
    and dealt round-robin over the batches, which spreads each class over as
    many batches as its size allows. No batch has a single element unless
    the dataset does.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        return []
    if k < 1:
        raise ConfigError("batch size must be >= 1")
    classes, counts = np.unique(labels, return_counts=True)
    by_size = [c for _, c in sorted(zip(-counts, classes))]
    deck = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in by_size])
    num_batches = -(-n // k)
    if n >= 2 and n // num_batches < 2:
        num_batches = n // 2
    batches = [deck[b::num_batches] for b in range(num_batches)]
    order = rng.permutation(num_batches)
    return [rng.permutation(batches[b]) for b in order]


def _fit(
    model: EncoderModel,
    dataset: Sequence[TokenizedSample],
    config: TrainConfig,
    objective: str,
    stage: str,
    pseudo_for: Optional[Callable[[Sequence[int], str], PseudoIds]] = None,
) -> EncoderModel:
    state = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    dropout_gen = torch_generator(derive_seed(config.seed, "train", "dropout"))
    labels = [s.label_id for s in dataset]
    everything = list(range(len(dataset)))

    for epoch in range(1, config.epochs + 1):
        rng = substream(config.seed, "train", "epoch", epoch)
        batches = stratified_batches(labels, config.batch_size, rng)
        epoch_pseudo = pseudo_for(everything, f"{epoch}") if pseudo_for and config.refresh != "batch" else None
        sums: Dict[str, float] = {"L_c": 0.0, "L_e": 0.0, "L": 0.0}
        correct = 0
        for b, idx in enumerate(tqdm(batches, desc=f"{stage} epoch {epoch}", leave=False, disable=not config.progress)):
            idx = [int(i) for i in idx]
            if pseudo_for is None:
                pseudo = ()
            elif epoch_pseudo is not None:
                pseudo = [epoch_pseudo[i] for i in idx]
            else:
                pseudo = pseudo_for(idx, f"{epoch}.{b}")
            batch = Batch(inputs=[dataset[i].ids for i in idx], labels=[labels[i] for i in idx], pseudo=pseudo)
            result = evaluate_objective(model, batch, objective, tau=config.tau, flags=config.flags,
                                        train_mode=True, generator=dropout_gen)
            loss = result.loss.item()
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite {stage} loss at epoch {epoch}, batch {b}")
            optimizer_step(model, gradients(model, result.loss), state)
            l_e = result.terms.get("L_e", loss)
            sums["L_e"] += l_e * len(idx)
            sums["L_c"] += result.terms.get("L_c", 0.0) * len(idx)
            sums["L"] += loss * len(idx)
            correct += result.correct
            log.debug("%s epoch %d batch %d: loss %.5f", stage, epoch, b, loss)
        n = len(dataset)
        entry = {"epoch": epoch, **{key: value / n for key, value in sums.items()}, "train_acc": correct / n}
        model.history.append(entry)
        log.info("%s epoch %d/%d: L_c %.4f  L_e %.4f  L %.4f  acc %.3f", stage, epoch, config.epochs,
                 entry["L_c"], entry["L_e"], entry["L"], entry["train_acc"])
    return model


def _check_dataset(dataset: Sequence[TokenizedSample]) -> None:
    if not dataset:
        raise DataError("empty dataset")


def train_proxy(dataset: Sequence[TokenizedSample], encoder_config: EncoderConfig, config: TrainConfig) -> EncoderModel:
    """Plain cross-entropy fine-tuning on the originals; the result only supplies token weights."""
    _check_dataset(dataset)
    if len({s.label_id for s in dataset}) < 2:
        raise DataError("proxy training needs at least two classes")
    config.validate()
    model = init_model(encoder_config)
    return _fit(model, dataset, config, "ce_classify", "proxy")


def reflective_augment(
    tc_model: EncoderModel,
    gen: GeneratorModel,
    batch: Sequence[TokenizedSample],
    groups: StepGroups,
    group_index: int,
    B: int,
    seed: int,
    source_ids: Optional[Sequence[int]] = None,
    temperature: float = 1.0,
    workers: int = 1,
) -> List[List[PseudoSample]]:
    """B pseudo samples per original, with token weights from the classifier being trained."""
    weights = attention_weights(tc_model, batch)
    return generate_many(gen, batch, weights, groups, group_index, B, seed,
                         source_ids=source_ids, temperature=temperature, workers=workers)


def train_with_noise_resistance(
    dataset: Sequence[TokenizedSample],
    gen: Optional[GeneratorModel],
    config: TrainConfig,
    encoder_config: EncoderConfig,
    static_pseudo: Optional[PseudoIds] = None,
) -> EncoderModel:
    """Train the classifier on L = L_c + L_e.

    With ``refresh="epoch"`` pseudo samples are regenerated once per epoch,
    with ``"batch"`` for every batch, and ``"static"`` uses ``static_pseudo``
    (one possibly empty list per original). With use_da and use_nrt both off
    this is plain cross-entropy fine-tuning.
    """
    _check_dataset(dataset)
    config.validate()
    model = init_model(encoder_config)
    if not (config.use_da or config.use_nrt):
        return _fit(model, dataset, config, "ce_classify", "classifier")

    pseudo_for = None
    if config.use_da and config.refresh == "static":
        if static_pseudo is None or len(static_pseudo) != len(dataset):
            raise ConfigError("static refresh needs one pseudo list per original")
        pseudo_for = lambda idx, tag: [static_pseudo[i] for i in idx]  # noqa: E731
    elif config.use_da and config.B > 0:
        if gen is None:
            raise ConfigError("augmentation is enabled but no generator was given")
        if gen.use_label_prompt != config.use_lap:
            log.warning("generator label prompting (%s) differs from use_lap (%s)", gen.use_label_prompt, config.use_lap)
        groups = StepGroups(gen.schedule.T, config.num_groups)

        def pseudo_for(idx: Sequence[int], tag: str) -> PseudoIds:
            produced = reflective_augment(
                model, gen, [dataset[i] for i in idx], groups, config.group_index, config.B,
                derive_seed(config.seed, "reflective", tag), source_ids=idx,
                temperature=config.temperature, workers=config.workers,
            )
            return [[p.ids for p in group] for group in produced]

    return _fit(model, dataset, config, "noise_resistant", "classifier", pseudo_for)
