"""
Compact transformer encoder shared by the proxy, the generator and the
classifier.

One network carries a classifier head on the [CLS] state and an LM head tied
to the input embeddings. Attention is computed explicitly so the last-layer
[CLS] rows can be read back as token weights. Training goes through
``loss_and_grads`` + ``optimizer_step``; ``gradient_check`` compares the
autograd gradients against central finite differences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import PAD_ID
from .errors import ConfigError, DataError, DivergenceError, ShapeError
from .export import JSONExporter, atomic_write
from .losses import BatchRepresentations, LossFlags, classification_loss, total_loss
from .seeding import torch_generator

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dcls-ckpt-v1"
OBJECTIVES = ("ce_classify", "ce_lm_masked", "noise_resistant")
MODES = ("classify", "lm")
DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass
class EncoderConfig:
    vocab_size: int
    num_classes: int
    max_len: int = 64
    model_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    ffn_dim: int = 128
    dropout: float = 0.1
    seed: int = 0
    dtype: str = "float64"

    def validate(self) -> None:
        for name in ("vocab_size", "num_classes", "max_len", "model_dim", "num_heads", "num_layers", "ffn_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "EncoderConfig":
        return cls(**dict(data))


def sinusoidal_table(max_len: int, dim: int) -> torch.Tensor:
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div_term = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(max_len, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div_term)
    table[:, 1::2] = torch.cos(position * div_term)[:, : dim // 2]
    return table


def _dropout(x: torch.Tensor, p: float, generator: Optional[torch.Generator]) -> torch.Tensor:
    if p <= 0.0 or generator is None:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        n, length, dim = x.shape
        q, k, v = self.qkv(x).view(n, length, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        ctx = (probs @ v).transpose(1, 2).reshape(n, length, dim)
        return self.out(ctx), probs


class EncoderLayer(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(config.model_dim)
        self.attn = SelfAttention(config.model_dim, config.num_heads)
        self.norm2 = nn.LayerNorm(config.model_dim)
        self.ffn = nn.Sequential(
            nn.Linear(config.model_dim, config.ffn_dim),
            nn.GELU(),
            nn.Linear(config.ffn_dim, config.model_dim),
        )

    def forward(self, x, key_mask, p, generator):
        a, probs = self.attn(self.norm1(x), key_mask)
        x = x + _dropout(a, p, generator)
        x = x + _dropout(self.ffn(self.norm2(x)), p, generator)
        return x, probs


class EncoderModel(nn.Module):
    """Pre-norm transformer encoder with a [CLS] classifier head and a tied LM head."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        d = config.model_dim
        self.embed = nn.Embedding(config.vocab_size, d)
        self.register_buffer("positions", sinusoidal_table(config.max_len, d), persistent=False)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.num_layers))
        self.final_norm = nn.LayerNorm(d)
        self.classifier = nn.Linear(d, config.num_classes)
        self.lm_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.history: List[dict] = []

    def encode(
        self,
        ids: torch.Tensor,
        key_mask: torch.Tensor,
        train: bool = False,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """Return final hidden states (N, L, d) and per-layer attention (N, H, L, L)."""
        p = self.config.dropout if train else 0.0
        length = ids.shape[1]
        x = self.embed(ids) * math.sqrt(self.config.model_dim) + self.positions[:length].to(self.embed.weight.dtype)
        x = _dropout(x, p, generator)
        attentions = []
        for layer in self.layers:
            x, probs = layer(x, key_mask, p, generator)
            attentions.append(probs)
        return self.final_norm(x), attentions

    def class_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.classifier(hidden[:, 0])

    def lm_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return hidden @ self.embed.weight.T + self.lm_bias

    @property
    def dtype(self) -> torch.dtype:
        return self.embed.weight.dtype


def init_model(config: EncoderConfig) -> EncoderModel:
    """Build a model with parameters drawn from U(-a, a), a = 1/sqrt(fan_in).

    Embeddings use a = sqrt(3/d) so each row has unit expected norm; biases
    start at zero and LayerNorm at identity. Same config + seed gives
    bitwise-identical parameters.
    """
    config.validate()
    model = EncoderModel(config).to(DTYPES[config.dtype])
    gen = torch_generator(config.seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if "norm" in name:
                param.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                param.zero_()
            else:
                fan_in = param.shape[-1]
                bound = math.sqrt(3.0 / fan_in) if name == "embed.weight" else 1.0 / math.sqrt(fan_in)
                draw = torch.rand(param.shape, generator=gen, dtype=torch.float64)
                param.copy_(((draw * 2.0 - 1.0) * bound).to(param.dtype))
    return model


def pad_batch(seqs: Sequence[Sequence[int]], max_len: Optional[int] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    if not seqs:
        raise ShapeError("empty batch")
    longest = max(len(s) for s in seqs)
    if max_len is not None and longest > max_len:
        raise ShapeError(f"input length {longest} exceeds max_len {max_len}; truncate before calling")
    ids = torch.full((len(seqs), longest), PAD_ID, dtype=torch.long)
    key_mask = torch.zeros((len(seqs), longest), dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        key_mask[i, : len(s)] = True
    return ids, key_mask


def _check_ids(model: EncoderModel, seqs: Sequence[Sequence[int]]) -> None:
    vocab_size = model.config.vocab_size
    for s in seqs:
        for t in s:
            if not 0 <= int(t) < vocab_size:
                raise DataError(f"invalid token id {t}")


@dataclass
class ForwardTrace:
    """Everything one forward pass exposes for a single sequence (numpy arrays)."""

    mode: str
    hidden: np.ndarray
    class_logits: np.ndarray
    lm_logits: np.ndarray
    attention: np.ndarray
    attentions: List[np.ndarray]
    pooled: np.ndarray

    @property
    def logits(self) -> np.ndarray:
        return self.class_logits if self.mode == "classify" else self.lm_logits


def forward(
    model: EncoderModel,
    ids: Sequence[int],
    mode: str = "classify",
    train_mode: bool = False,
    rng: Optional[torch.Generator] = None,
) -> ForwardTrace:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if len(ids) > model.config.max_len:
        raise ShapeError(f"input length {len(ids)} exceeds max_len {model.config.max_len}; truncate before calling")
    _check_ids(model, [ids])
    if train_mode and rng is None:
        rng = torch_generator(model.config.seed)
    batch_ids, key_mask = pad_batch([ids])
    with torch.no_grad():
        hidden, attentions = model.encode(batch_ids, key_mask, train=train_mode, generator=rng if train_mode else None)
        class_logits = model.class_logits(hidden)
        lm_logits = model.lm_logits(hidden)
    return ForwardTrace(
        mode=mode,
        hidden=hidden[0].double().numpy(),
        class_logits=class_logits[0].double().numpy(),
        lm_logits=lm_logits[0].double().numpy(),
        attention=attentions[-1][0].double().numpy(),
        attentions=[a[0].double().numpy() for a in attentions],
        pooled=hidden[0, 0].double().numpy(),
    )


def encode_many(
    model: EncoderModel,
    seqs: Sequence[Sequence[int]],
    batch_size: int = 128,
) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray]]:
    """Eval-mode pass over many sequences.

    Returns pooled representations (n, d), class logits (n, m) and each
    sequence's last-layer attention (H, L_i, L_i).
    """
    pooled, logits, attention = [], [], []
    with torch.no_grad():
        for start in range(0, len(seqs), batch_size):
            chunk = seqs[start: start + batch_size]
            ids, key_mask = pad_batch(chunk, model.config.max_len)
            hidden, attentions = model.encode(ids, key_mask)
            pooled.append(hidden[:, 0].double().numpy())
            logits.append(model.class_logits(hidden).double().numpy())
            last = attentions[-1].double().numpy()
            for i, s in enumerate(chunk):
                attention.append(last[i, :, : len(s), : len(s)])
    d = model.config.model_dim
    m = model.config.num_classes
    return (
        np.concatenate(pooled) if pooled else np.zeros((0, d)),
        np.concatenate(logits) if logits else np.zeros((0, m)),
        attention,
    )


def predict(model: EncoderModel, seqs: Sequence[Sequence[int]], batch_size: int = 128) -> np.ndarray:
    _, logits, _ = encode_many(model, seqs, batch_size)
    return logits.argmax(axis=1)


# --- objectives -------------------------------------------------------------

@dataclass
class Batch:
    """A training batch.

    ``inputs`` are the sequences fed to the encoder. Classification objectives
    use ``labels``; ``ce_lm_masked`` uses ``targets`` (original ids aligned
    with inputs) and ``masked`` (supervised positions per sequence);
    ``noise_resistant`` may carry ``pseudo`` sequences per original.
    """

    inputs: Sequence[Sequence[int]]
    labels: Sequence[int] = ()
    targets: Sequence[Sequence[int]] = ()
    masked: Sequence[Sequence[int]] = ()
    pseudo: Sequence[Sequence[Sequence[int]]] = ()

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass
class ObjectiveResult:
    loss: torch.Tensor
    terms: Dict[str, float] = field(default_factory=dict)
    correct: int = 0


def evaluate_objective(
    model: EncoderModel,
    batch: Batch,
    objective: str,
    tau: float = 1.0,
    flags: LossFlags = LossFlags(),
    train_mode: bool = False,
    generator: Optional[torch.Generator] = None,
) -> ObjectiveResult:
    if objective not in OBJECTIVES:
        raise ConfigError(f"objective must be one of {OBJECTIVES}")
    if len(batch) == 0:
        raise ShapeError("empty batch")
    _check_ids(model, batch.inputs)
    gen = generator if train_mode else None

    if objective == "ce_lm_masked":
        if len(batch.targets) != len(batch) or len(batch.masked) != len(batch):
            raise ShapeError("ce_lm_masked needs targets and masked positions for every sequence")
        ids, key_mask = pad_batch(batch.inputs, model.config.max_len)
        targets = torch.full_like(ids, PAD_ID)
        supervised = torch.zeros_like(key_mask)
        for i, (tgt, pos) in enumerate(zip(batch.targets, batch.masked)):
            if len(tgt) != len(batch.inputs[i]):
                raise ShapeError("targets must align with inputs")
            targets[i, : len(tgt)] = torch.as_tensor(list(tgt), dtype=torch.long)
            for p in pos:
                supervised[i, int(p)] = True
        if not bool(supervised.any()):
            raise DataError("no supervised positions")
        hidden, _ = model.encode(ids, key_mask, train=train_mode, generator=gen)
        logits = model.lm_logits(hidden)[supervised]
        loss = F.cross_entropy(logits, targets[supervised])
        correct = int((logits.argmax(dim=-1) == targets[supervised]).sum())
        return ObjectiveResult(loss=loss, terms={"L_lm": loss.item()}, correct=correct)

    if len(batch.labels) != len(batch):
        raise ShapeError("classification objectives need one label per input")
    labels = torch.as_tensor(list(batch.labels), dtype=torch.long)
    k = len(batch)
    pseudo_lists = list(batch.pseudo) if objective == "noise_resistant" and flags.use_da else []
    if pseudo_lists and len(pseudo_lists) != k:
        raise ShapeError("pseudo lists must align with originals")
    flat_pseudo = [seq for group in pseudo_lists for seq in group]
    _check_ids(model, flat_pseudo)

    ids, key_mask = pad_batch(list(batch.inputs) + flat_pseudo, model.config.max_len)
    hidden, _ = model.encode(ids, key_mask, train=train_mode, generator=gen)
    logits = model.class_logits(hidden)
    original_logits = logits[:k]
    correct = int((original_logits.argmax(dim=-1) == labels).sum())

    # ragged pseudo lists -> (k, width) gather index; absent slots point at row 0 and are masked
    width = max((len(g) for g in pseudo_lists), default=0)
    index = torch.zeros((k, width), dtype=torch.long)
    pseudo_mask = torch.zeros((k, width), dtype=torch.bool)
    offset = k
    for i, group in enumerate(pseudo_lists):
        n = len(group)
        index[i, :n] = torch.arange(offset, offset + n)
        pseudo_mask[i, :n] = True
        offset += n
    pseudo_logits = logits[index]

    reps = BatchRepresentations(
        pooled=hidden[:k, 0],
        labels=labels,
        original_logits=original_logits,
        pseudo_logits=pseudo_logits,
        pseudo_mask=pseudo_mask,
    )
    if objective == "ce_classify":
        loss = classification_loss(reps)
        return ObjectiveResult(loss=loss, terms={"L_e": loss.item()}, correct=correct)
    terms = total_loss(reps, tau=tau, flags=flags)
    return ObjectiveResult(
        loss=terms.total,
        terms={"L_c": terms.contrastive.item(), "L_e": terms.classification.item(), "L": terms.total.item()},
        correct=correct,
    )


def gradients(model: EncoderModel, loss: torch.Tensor) -> Dict[str, torch.Tensor]:
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for name, p, g in zip(names, params, grads)
    }


def loss_and_grads(
    model: EncoderModel,
    batch: Batch,
    objective: str,
    tau: float = 1.0,
    flags: LossFlags = LossFlags(),
    train_mode: bool = False,
    generator: Optional[torch.Generator] = None,
) -> Tuple[float, Dict[str, torch.Tensor]]:
    """Scalar loss and a gradient for every named parameter."""
    result = evaluate_objective(model, batch, objective, tau=tau, flags=flags,
                                train_mode=train_mode, generator=generator)
    return result.loss.item(), gradients(model, result.loss)


def gradient_check(
    model: EncoderModel,
    batch: Batch,
    objective: str,
    num_params: int = 20,
    step: float = 1e-5,
    seed: int = 0,
    tau: float = 1.0,
    flags: LossFlags = LossFlags(),
) -> float:
    """Max relative error between autograd and central finite differences.

    Runs in eval mode (no dropout) on ``num_params`` randomly chosen scalar
    parameters.
    """
    _, grads = loss_and_grads(model, batch, objective, tau=tau, flags=flags)
    named = list(model.named_parameters())
    sizes = np.array([p.numel() for _, p in named])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(int(offsets[-1]), size=min(num_params, int(offsets[-1])), replace=False)

    def loss_at() -> float:
        with torch.no_grad():
            return evaluate_objective(model, batch, objective, tau=tau, flags=flags).loss.item()

    worst = 0.0
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, param = named[which]
        local = int(flat - offsets[which])
        view = param.data.view(-1)
        original = view[local].item()
        view[local] = original + step
        plus = loss_at()
        view[local] = original - step
        minus = loss_at()
        view[local] = original
        numeric = (plus - minus) / (2.0 * step)
        analytic = grads[name].reshape(-1)[local].item()
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# --- optimizer --------------------------------------------------------------

@dataclass
class OptimizerState:
    """AdamW hyper-parameters, step counter and (once bound) the moment buffers."""

    lr: float = 3e-4
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    _optimizer: Optional[torch.optim.AdamW] = field(default=None, repr=False, compare=False)

    def bind(self, model: EncoderModel) -> torch.optim.AdamW:
        if self._optimizer is None:
            self._optimizer = torch.optim.AdamW(
                model.parameters(), lr=self.lr, betas=self.betas, eps=self.eps,
                weight_decay=self.weight_decay, foreach=False,
            )
        return self._optimizer

    def moments(self, model: EncoderModel) -> Dict[str, Tuple[torch.Tensor, torch.Tensor]]:
        opt = self.bind(model)
        out = {}
        for name, p in model.named_parameters():
            st = opt.state.get(p, {})
            if st:
                out[name] = (st["exp_avg"], st["exp_avg_sq"])
        return out


def optimizer_step(model: EncoderModel, grads: Mapping[str, torch.Tensor], state: OptimizerState) -> OptimizerState:
    """Apply one AdamW update; nothing is touched if any gradient is non-finite."""
    named = list(model.named_parameters())
    for name, p in named:
        if name not in grads:
            raise ShapeError(f"missing gradient for '{name}'")
        g = grads[name]
        if tuple(g.shape) != tuple(p.shape):
            raise ShapeError(f"gradient shape {tuple(g.shape)} does not match parameter '{name}' {tuple(p.shape)}")
        if not bool(torch.isfinite(g).all()):
            raise DivergenceError("non-finite gradient", parameter=name)
    opt = state.bind(model)
    for name, p in named:
        p.grad = grads[name].detach().to(p.dtype).clone()
    opt.step()
    opt.zero_grad(set_to_none=True)
    state.step += 1
    return state


# --- checkpoints ------------------------------------------------------------

def _stem(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def checkpoint_exists(path: Union[str, Path]) -> bool:
    stem = _stem(path)
    return stem.with_suffix(".json").exists() and stem.with_suffix(".bin").exists()


def save_checkpoint(model: EncoderModel, path: Union[str, Path], meta: Optional[Mapping] = None) -> Path:
    """Write ``<stem>.json`` (manifest) and ``<stem>.bin`` (little-endian float64 blob)."""
    stem = _stem(path)
    entries, chunks, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().double().numpy().astype("<f8").tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    atomic_write(stem.with_suffix(".bin"), b"".join(chunks))
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "params": entries,
        "blob": stem.with_suffix(".bin").name,
        "meta": dict(meta or {}),
    }
    JSONExporter(stem.with_suffix(".json")).export(manifest)
    log.debug("saved checkpoint %s (%d tensors, %d bytes)", stem, len(entries), offset)
    return stem.with_suffix(".json")


def load_checkpoint(path: Union[str, Path]) -> Tuple[EncoderModel, dict]:
    stem = _stem(path)
    manifest_path = stem.with_suffix(".json")
    if not manifest_path.exists():
        raise DataError(f"checkpoint not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"unsupported checkpoint format {manifest.get('format')!r}")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    config = EncoderConfig.from_dict(manifest["config"])
    model = EncoderModel(config).to(DTYPES[config.dtype])
    state = {}
    for entry in manifest["params"]:
        raw = np.frombuffer(blob, dtype="<f8", count=int(np.prod(entry["shape"], dtype=np.int64)), offset=entry["offset"])
        state[entry["name"]] = torch.from_numpy(raw.reshape(entry["shape"]).copy()).to(DTYPES[config.dtype])
    model.load_state_dict(state)
    model.history = list(manifest.get("meta", {}).get("history", []))
    return model, manifest.get("meta", {})
