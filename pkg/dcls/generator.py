"""
Diffusion LM sample generator.

The generator is an EncoderModel used in LM mode. It is trained to rebuild
masked tokens of label-prompted sequences corrupted along label-aware
trajectories, and it produces pseudo samples by walking a trajectory backwards
from a chosen step, revealing the tokens whose mask time is t at step t.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from .corpus import CLS_ID, MASK_ID, PAD_ID, SEP_ID, LabeledSample, TokenizedSample, Vocab, detokenize
from .encoder import (
    Batch,
    EncoderConfig,
    EncoderModel,
    OptimizerState,
    encode_many,
    init_model,
    load_checkpoint,
    loss_and_grads,
    optimizer_step,
    pad_batch,
    save_checkpoint,
)
from .errors import ConfigError, DataError, DivergenceError, ShapeError
from .schedule import (
    MaskTrajectory,
    NoiseSchedule,
    StepGroups,
    TokenWeights,
    corrupt_at_step,
    sample_trajectory,
    weights_from_cls_row,
)
from .seeding import derive_seed, substream, torch_generator

log = logging.getLogger(__name__)

# [CLS] <label> [SEP] precede the content; sample position j sits at j + PROMPT_SHIFT
PROMPT_WIDTH = 3
PROMPT_SHIFT = PROMPT_WIDTH - 1


@dataclass
class GeneratorModel:
    encoder: EncoderModel
    vocab: Vocab
    schedule: NoiseSchedule
    use_label_prompt: bool = True
    history: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.encoder.config.vocab_size != len(self.vocab):
            raise ShapeError("generator vocab size does not match its encoder")


@dataclass(frozen=True)
class PromptedSequence:
    ids: Tuple[int, ...]
    content_offset: int
    masked: Tuple[int, ...]


@dataclass(frozen=True)
class PseudoSample:
    text: str
    label: str
    ids: Tuple[int, ...]
    source_id: int
    t_star: int
    group: Optional[int]
    seed: int

    def as_dict(self) -> dict:
        return {
            "text": self.text,
            "label": self.label,
            "source_id": self.source_id,
            "t_star": self.t_star,
            "group": self.group,
            "seed": self.seed,
        }

    def as_labeled(self) -> LabeledSample:
        return LabeledSample(text=self.text, label=self.label)


@dataclass
class GeneratorTrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-4
    weight_decay: float = 0.01
    seed: int = 0
    use_label_prompt: bool = True
    progress: bool = False


def label_prompt(
    sample: TokenizedSample,
    masked_ids: Sequence[int],
    vocab: Vocab,
    use_label: bool = True,
    max_len: Optional[int] = None,
) -> PromptedSequence:
    """Lay out [CLS] <label> [SEP] + masked content + [SEP].

    With ``use_label=False`` the label slot holds [PAD].
    """
    if len(masked_ids) != len(sample):
        raise ShapeError("masked ids do not align with the sample")
    slot = vocab.label_token_id(vocab.classes[sample.label_id]) if use_label else PAD_ID
    ids = (CLS_ID, slot, SEP_ID) + tuple(int(t) for t in masked_ids[1:])
    if max_len is not None and len(ids) > max_len:
        raise ShapeError(f"prompted sequence length {len(ids)} exceeds max_len {max_len}")
    masked = tuple(
        j + PROMPT_SHIFT
        for j in range(1, len(sample))
        if sample.maskable[j] and int(masked_ids[j]) == MASK_ID
    )
    return PromptedSequence(ids=ids, content_offset=PROMPT_WIDTH, masked=masked)


def _prompt_targets(sample: TokenizedSample, prompted: PromptedSequence) -> Tuple[int, ...]:
    return prompted.ids[:PROMPT_WIDTH] + sample.ids[1:]


def attention_weights(model: EncoderModel, samples: Sequence[TokenizedSample], batch_size: int = 128) -> List[TokenWeights]:
    """Token weights of every sample from the model's eval-mode last-layer [CLS] attention."""
    if not samples:
        return []
    _, _, attention = encode_many(model, [s.ids for s in samples], batch_size)
    return [weights_from_cls_row(a[:, 0, :].mean(axis=0), s.maskable) for a, s in zip(attention, samples)]


def train_generator(
    dataset: Sequence[TokenizedSample],
    proxy: EncoderModel,
    schedule: NoiseSchedule,
    config: GeneratorTrainConfig,
    vocab: Vocab,
    encoder_config: EncoderConfig,
) -> GeneratorModel:
    """Denoising training under the label-aware schedule (x0-parameterized, no time input)."""
    if not dataset:
        raise DataError("empty dataset")
    model = init_model(encoder_config)
    gen = GeneratorModel(model, vocab, schedule, use_label_prompt=config.use_label_prompt)
    if config.epochs <= 0:
        return gen

    weights = attention_weights(proxy, dataset)
    state = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    dropout_gen = torch_generator(derive_seed(config.seed, "generator", "dropout"))
    max_len = encoder_config.max_len
    n = len(dataset)

    for epoch in range(1, config.epochs + 1):
        rng = substream(config.seed, "generator", "epoch", epoch)
        order = rng.permutation(n)
        losses = []
        starts = range(0, n, config.batch_size)
        for start in tqdm(starts, desc=f"generator epoch {epoch}", leave=False, disable=not config.progress):
            inputs, targets, masked = [], [], []
            for i in order[start: start + config.batch_size]:
                sample = dataset[int(i)]
                traj = sample_trajectory(sample, weights[int(i)], schedule, rng)
                t = int(rng.integers(1, schedule.T + 1))
                prompted = label_prompt(sample, corrupt_at_step(traj, t), vocab, config.use_label_prompt, max_len)
                if not prompted.masked:
                    continue
                inputs.append(prompted.ids)
                targets.append(_prompt_targets(sample, prompted))
                masked.append(prompted.masked)
            if not inputs:
                log.debug("epoch %d: batch at %d has no masked positions, skipped", epoch, start)
                continue
            loss, grads = loss_and_grads(
                model, Batch(inputs=inputs, targets=targets, masked=masked), "ce_lm_masked",
                train_mode=True, generator=dropout_gen,
            )
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite generator loss at epoch {epoch}")
            optimizer_step(model, grads, state)
            losses.append(loss)
        mean = float(np.mean(losses)) if losses else float("nan")
        gen.history.append({"epoch": epoch, "loss": mean, "batches": len(losses)})
        log.info("generator epoch %d/%d: masked-LM loss %.4f", epoch, config.epochs, mean)
    return gen


def reverse_generate_batch(
    gen: GeneratorModel,
    trajs: Sequence[MaskTrajectory],
    t_stars: Sequence[int],
    rngs: Sequence[np.random.Generator],
    temperature: float = 1.0,
) -> List[Tuple[int, ...]]:
    """Run the reverse process for many trajectories at once.

    Each step does one forward pass over the sequences that reveal tokens at
    that step; revealed positions are filled left to right from that pass, each
    item drawing from its own RNG. Returns [CLS] content [SEP] ids.
    """
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    if not (len(trajs) == len(t_stars) == len(rngs)):
        raise ShapeError("trajectories, steps and rngs must align")
    encoder = gen.encoder
    content = torch.as_tensor(gen.vocab.content_ids())
    current: List[List[int]] = []
    for traj, t_star in zip(trajs, t_stars):
        if not 0 <= t_star <= traj.schedule.T:
            raise ConfigError(f"t_star {t_star} outside [0, {traj.schedule.T}]")
        prompted = label_prompt(traj.source, corrupt_at_step(traj, t_star), gen.vocab,
                                gen.use_label_prompt, encoder.config.max_len)
        current.append(list(prompted.ids))

    for t in range(max(t_stars, default=0), 0, -1):
        active = [i for i, (traj, t_star) in enumerate(zip(trajs, t_stars))
                  if t <= t_star and len(traj.revealed_at(t))]
        if not active:
            continue
        ids, key_mask = pad_batch([current[i] for i in active])
        with torch.no_grad():
            hidden, _ = encoder.encode(ids, key_mask)
            logits = encoder.lm_logits(hidden)
        for row, i in enumerate(active):
            for j in trajs[i].revealed_at(t):
                pos = int(j) + PROMPT_SHIFT
                probs = torch.softmax(logits[row, pos, content].double() / temperature, dim=-1).numpy()
                choice = rngs[i].choice(len(probs), p=probs / probs.sum())
                current[i][pos] = int(content[choice])
    return [(CLS_ID,) + tuple(seq[PROMPT_WIDTH:]) for seq in current]


def reverse_generate(
    gen: GeneratorModel,
    traj: MaskTrajectory,
    t_star: int,
    label: Optional[str],
    rng: np.random.Generator,
    temperature: float = 1.0,
    source_id: int = -1,
    group: Optional[int] = None,
    seed: int = -1,
) -> PseudoSample:
    source_label = gen.vocab.classes[traj.source.label_id]
    if label is not None and label != source_label:
        raise DataError(f"label '{label}' does not match the source label '{source_label}'")
    ids = reverse_generate_batch(gen, [traj], [t_star], [rng], temperature)[0]
    return PseudoSample(
        text=detokenize(gen.vocab, ids), label=source_label, ids=ids,
        source_id=source_id, t_star=int(t_star), group=group, seed=seed,
    )


@dataclass
class _Job:
    item: int
    replica: int
    seed: int
    traj: MaskTrajectory
    t_star: int
    rng: np.random.Generator


def _plan(sample, weights, schedule, groups, group_index, seed, source_id, item, replicas) -> List[_Job]:
    steps = groups.steps(group_index)
    jobs = []
    for b in range(replicas):
        replica_seed = derive_seed(seed, source_id, b)
        rng = np.random.default_rng(replica_seed)
        traj = sample_trajectory(sample, weights, schedule, rng)
        t_star = int(steps[int(rng.integers(len(steps)))])
        jobs.append(_Job(item, b, replica_seed, traj, t_star, rng))
    return jobs


def _run_jobs(gen: GeneratorModel, jobs: Sequence[_Job], temperature: float, group_index: int) -> List[PseudoSample]:
    ids_list = reverse_generate_batch(gen, [j.traj for j in jobs], [j.t_star for j in jobs],
                                      [j.rng for j in jobs], temperature)
    label_of = gen.vocab.classes
    return [
        PseudoSample(
            text=detokenize(gen.vocab, ids), label=label_of[job.traj.source.label_id], ids=ids,
            source_id=-1, t_star=job.t_star, group=group_index, seed=job.seed,
        )
        for job, ids in zip(jobs, ids_list)
    ]


def generate_for_sample(
    gen: GeneratorModel,
    sample: TokenizedSample,
    weights: TokenWeights,
    groups: StepGroups,
    group_index: int,
    B: int,
    seed: int,
    source_id: int = 0,
    temperature: float = 1.0,
) -> List[PseudoSample]:
    """B pseudo samples, each from a fresh trajectory and a t_star drawn from the group.

    Replica b uses the stream derive_seed(seed, source_id, b), so the result
    does not depend on which other samples are generated alongside.
    """
    if B < 1:
        raise ConfigError("B must be >= 1")
    jobs = _plan(sample, weights, gen.schedule, groups, group_index, seed, source_id, 0, B)
    return [_with_source(p, source_id) for p in _run_jobs(gen, jobs, temperature, group_index)]


def _with_source(p: PseudoSample, source_id: int) -> PseudoSample:
    return PseudoSample(p.text, p.label, p.ids, source_id, p.t_star, p.group, p.seed)


def generate_many(
    gen: GeneratorModel,
    samples: Sequence[TokenizedSample],
    weights: Sequence[TokenWeights],
    groups: StepGroups,
    group_index: int,
    B: Union[int, Sequence[int]],
    seed: int,
    source_ids: Optional[Sequence[int]] = None,
    temperature: float = 1.0,
    workers: int = 1,
    chunk_size: int = 128,
    progress: bool = False,
) -> List[List[PseudoSample]]:
    """Pseudo samples for many sources; ``B`` may be one count or a count per source.

    Work is split into fixed chunks and fanned out over a thread pool; the
    output order follows ``samples`` whatever the worker count.
    """
    if len(weights) != len(samples):
        raise ShapeError("weights must align with samples")
    source_ids = list(range(len(samples))) if source_ids is None else list(source_ids)
    counts = [B] * len(samples) if isinstance(B, int) else list(B)
    if len(counts) != len(samples) or len(source_ids) != len(samples):
        raise ShapeError("per-sample counts and ids must align with samples")

    jobs: List[_Job] = []
    for item, (sample, w, sid, count) in enumerate(zip(samples, weights, source_ids, counts)):
        jobs.extend(_plan(sample, w, gen.schedule, groups, group_index, seed, sid, item, count))
    chunks = [jobs[i: i + chunk_size] for i in range(0, len(jobs), chunk_size)]

    out: List[List[PseudoSample]] = [[] for _ in samples]
    workers = max(1, min(workers, len(chunks) or 1, 64))
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="dcls-gen") as ex:
        results = ex.map(lambda c: _run_jobs(gen, c, temperature, group_index), chunks)
        for chunk, produced in tqdm(zip(chunks, results), total=len(chunks), desc="generating",
                                    leave=False, disable=not progress):
            for job, p in zip(chunk, produced):
                out[job.item].append(_with_source(p, source_ids[job.item]))
    return out


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Token-level Levenshtein distance."""
    a = list(a)
    b = list(b)
    prev = np.arange(len(b) + 1)
    for i, x in enumerate(a, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return int(prev[-1])


def normalized_edit_distance(a: Sequence[int], b: Sequence[int]) -> float:
    return edit_distance(a, b) / max(len(a), len(b), 1)


def save_generator(gen: GeneratorModel, path: Union[str, Path]) -> Path:
    meta = {
        "kind": "generator",
        "classes": list(gen.vocab.classes),
        "schedule": gen.schedule.to_dict(),
        "use_label_prompt": gen.use_label_prompt,
        "history": gen.history,
    }
    return save_checkpoint(gen.encoder, path, meta)


def load_generator(path: Union[str, Path], vocab: Vocab) -> GeneratorModel:
    model, meta = load_checkpoint(path)
    if meta.get("kind") != "generator":
        raise DataError(f"{path} is not a generator checkpoint")
    if list(meta.get("classes", [])) != list(vocab.classes):
        raise DataError("generator label prompts do not match the dataset classes")
    schedule = NoiseSchedule(**meta["schedule"])
    return GeneratorModel(model, vocab, schedule, bool(meta.get("use_label_prompt", True)),
                          list(meta.get("history", [])))
