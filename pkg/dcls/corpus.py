"""
Corpus handling for dcls.

Whitespace tokenization, the vocabulary with its special and label-prompt
tokens, JSONL ingestion and a synthetic sentiment corpus for desk-scale runs.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DataError
from .export import JSONExporter, JSONLinesExporter

SPECIAL_TOKENS: Tuple[str, ...] = ("[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]")
PAD_ID, MASK_ID, CLS_ID, SEP_ID, UNK_ID = range(len(SPECIAL_TOKENS))

MASK_RENDER = "[M]"
UNK_RENDER = "[UNK]"
VOCAB_FORMAT = "dcls-vocab-v1"

PathLike = Union[str, "os.PathLike[str]"]


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def label_token(name: str) -> str:
    # Upper-case prefix keeps it disjoint from the lower-cased corpus tokens.
    return f"[LBL_{name}]"


@dataclass(frozen=True)
class LabeledSample:
    text: str
    label: str

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise DataError("empty text")
        if not isinstance(self.label, str) or not self.label:
            raise DataError("empty label")

    def as_dict(self) -> dict:
        return {"text": self.text, "label": self.label}


@dataclass(frozen=True)
class Vocab:
    """Token table with fixed special ids, then label prompts, then corpus tokens."""

    tokens: Tuple[str, ...]
    classes: Tuple[str, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise DataError("vocab must start with the special tokens")
        expected = tuple(label_token(c) for c in self.classes)
        if self.tokens[len(SPECIAL_TOKENS): len(SPECIAL_TOKENS) + len(self.classes)] != expected:
            raise DataError("vocab label tokens do not match its classes")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("duplicate class names")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise DataError("duplicate tokens in vocab")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def first_content_id(self) -> int:
        return len(SPECIAL_TOKENS) + len(self.classes)

    @property
    def label_ids(self) -> Tuple[int, ...]:
        start = len(SPECIAL_TOKENS)
        return tuple(range(start, start + len(self.classes)))

    def class_id(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise DataError(f"unknown label '{label}'") from None

    def label_token_id(self, label: str) -> int:
        return len(SPECIAL_TOKENS) + self.class_id(label)

    def is_label_id(self, token_id: int) -> bool:
        return len(SPECIAL_TOKENS) <= token_id < self.first_content_id

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if not 0 <= int(token_id) < len(self.tokens):
            raise DataError(f"invalid token id {token_id}")
        return self.tokens[int(token_id)]

    def content_ids(self) -> np.ndarray:
        """Ids a generator may emit: corpus tokens only (no specials, UNK or label prompts)."""
        return np.arange(self.first_content_id, len(self.tokens), dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "format": VOCAB_FORMAT,
            "tokens": list(self.tokens),
            "classes": list(self.classes),
            "special_ids": {tok: i for i, tok in enumerate(SPECIAL_TOKENS)},
            "label_ids": {c: self.label_token_id(c) for c in self.classes},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Vocab":
        if data.get("format") != VOCAB_FORMAT:
            raise DataError(f"unsupported vocab format {data.get('format')!r}")
        return cls(tokens=tuple(data["tokens"]), classes=tuple(data["classes"]))


@dataclass(frozen=True)
class TokenizedSample:
    ids: Tuple[int, ...]
    label_id: int
    maskable: Tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "maskable", tuple(bool(m) for m in self.maskable))
        if len(self.ids) < 2 or self.ids[0] != CLS_ID or self.ids[-1] != SEP_ID:
            raise DataError("tokenized sample must be framed as [CLS] ... [SEP]")
        if len(self.maskable) != len(self.ids):
            raise DataError("maskable flags do not align with ids")
        if self.maskable[0] or self.maskable[-1]:
            raise DataError("[CLS]/[SEP] positions cannot be maskable")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def maskable_positions(self) -> List[int]:
        return [i for i, m in enumerate(self.maskable) if m]


def build_vocab(
    samples: Sequence[LabeledSample],
    min_count: int = 1,
    classes: Optional[Sequence[str]] = None,
) -> Vocab:
    """Build a vocab; tokens below min_count fall back to [UNK].

    Classes default to their order of first appearance in ``samples``.
    """
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")
    if not samples:
        raise DataError("empty corpus")
    if classes is None:
        classes = list(dict.fromkeys(s.label for s in samples))
    else:
        classes = list(classes)
        known = set(classes)
        for s in samples:
            if s.label not in known:
                raise DataError(f"unknown label '{s.label}'")

    counts = Counter(tok for s in samples for tok in normalize_text(s.text).split())
    words = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    tokens = SPECIAL_TOKENS + tuple(label_token(c) for c in classes) + tuple(words)
    return Vocab(tokens=tokens, classes=tuple(classes))


def tokenize(vocab: Vocab, sample: LabeledSample, max_len: Optional[int] = None) -> TokenizedSample:
    """Frame a sample as [CLS] t1..tn [SEP]; content is cut so the result fits ``max_len``."""
    label_id = vocab.class_id(sample.label)
    words = normalize_text(sample.text).split()
    if max_len is not None:
        if max_len < 3:
            raise ConfigError("max_len must leave room for at least one content token")
        words = words[: max_len - 2]
    ids = [CLS_ID] + [vocab.id_of(w) for w in words] + [SEP_ID]
    maskable = [False] + [True] * len(words) + [False]
    return TokenizedSample(ids=tuple(ids), label_id=label_id, maskable=tuple(maskable))


def detokenize(vocab: Vocab, ids: Iterable[int]) -> str:
    out: List[str] = []
    for token_id in ids:
        token = vocab.token_of(token_id)
        token_id = int(token_id)
        if token_id in (PAD_ID, CLS_ID, SEP_ID) or vocab.is_label_id(token_id):
            continue
        if token_id == MASK_ID:
            out.append(MASK_RENDER)
        elif token_id == UNK_ID:
            out.append(UNK_RENDER)
        else:
            out.append(token)
    return " ".join(out)


def load_jsonl(path: PathLike) -> List[LabeledSample]:
    """Read ``{"text": ..., "label": ...}`` lines; errors cite the 1-based line number."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    samples: List[LabeledSample] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise DataError("malformed JSON", line=lineno) from None
            if not isinstance(obj, dict):
                raise DataError("expected a JSON object", line=lineno)
            for key in ("text", "label"):
                if key not in obj:
                    raise DataError(f"missing field '{key}'", line=lineno)
                if not isinstance(obj[key], str):
                    raise DataError(f"field '{key}' must be a string", line=lineno)
            try:
                samples.append(LabeledSample(text=obj["text"], label=obj["label"]))
            except DataError as e:
                raise DataError(str(e), line=lineno) from None
    return samples


def write_jsonl(path: PathLike, records: Iterable[Mapping]) -> Path:
    """Write one JSON object per line, atomically."""
    return JSONLinesExporter(path).export(records)


def save_vocab(vocab: Vocab, path: PathLike) -> Path:
    return JSONExporter(path).export(vocab.to_dict())


def load_vocab(path: PathLike) -> Vocab:
    path = Path(path)
    if not path.exists():
        raise DataError(f"vocab not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return Vocab.from_dict(json.load(f))


def label_histogram(samples: Iterable[LabeledSample]) -> Dict[str, int]:
    """Label counts in order of first appearance."""
    hist: Dict[str, int] = {}
    for s in samples:
        hist[s.label] = hist.get(s.label, 0) + 1
    return hist


def dataset_stats(samples: Sequence[LabeledSample]) -> dict:
    """Size, label count, average token length and S/D of the label distribution."""
    if not samples:
        raise DataError("empty corpus")
    hist = label_histogram(samples)
    props = np.array(list(hist.values()), dtype=np.float64) / len(samples)
    lengths = [len(normalize_text(s.text).split()) for s in samples]
    return {
        "size": len(samples),
        "num_labels": len(hist),
        "avg_length": float(np.mean(lengths)),
        "label_sd": float(np.std(props)),
        "histogram": hist,
    }


# --- synthetic corpus -------------------------------------------------------

_LEXICONS: Dict[str, Tuple[str, ...]] = {
    "pos": ("wonderful", "delightful", "fantastic", "brilliant", "lovely", "superb", "joyful", "excellent"),
    "neg": ("terrible", "awful", "horrible", "dreadful", "miserable", "disgusting", "furious", "hateful"),
    "neu": ("ordinary", "routine", "typical", "standard", "usual", "plain", "regular", "average"),
    "fear": ("terrifying", "frightening", "alarming", "scary", "chilling", "menacing", "worrying", "creepy"),
    "surprise": ("astonishing", "unexpected", "startling", "shocking", "stunning", "amazing", "sudden", "remarkable"),
    "sad": ("heartbreaking", "gloomy", "sorrowful", "tragic", "depressing", "bleak", "mournful", "painful"),
}

_ALIASES = {
    "positive": "pos", "happy": "pos", "joy": "pos",
    "negative": "neg", "angry": "neg", "anger": "neg",
    "neutral": "neu",
    "sadness": "sad",
}

_TEMPLATES: Tuple[str, ...] = (
    "the {subject} we saw {time} was {w}",
    "honestly the {subject} felt {w} {time}",
    "i think the {subject} is {w} overall",
    "my friends said the {subject} was {w}",
    "{time} the {subject} turned out {w}",
    "we found the {subject} rather {w} and {filler}",
    "the {subject} {time} seemed {w} to everyone",
    "after all that the {subject} looked {w} and {filler}",
)
_SUBJECTS = ("movie", "service", "hotel", "meal", "concert", "trip",
             "update", "app", "game", "book", "lecture", "match")
_TIMES = ("today", "yesterday", "last night", "this morning", "on sunday",
          "at the weekend", "this week", "again")
_FILLERS = ("nothing else happened", "we went home", "the weather was mild",
            "people kept talking", "the queue was long")


@dataclass(frozen=True)
class SynthSpec:
    classes: Tuple[Tuple[str, int], ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple((str(n), int(c)) for n, c in self.classes))
        if not self.classes:
            raise ConfigError("synthetic spec needs at least one class")
        for name, count in self.classes:
            if count < 1:
                raise ConfigError(f"class '{name}' needs a count >= 1")


def class_lexicons(names: Sequence[str]) -> Dict[str, Tuple[str, ...]]:
    """Strong emotion words per class; unknown names take the unused lexicons in order."""
    out: Dict[str, Tuple[str, ...]] = {}
    used = set()
    pending = []
    for name in names:
        key = _ALIASES.get(name.lower(), name.lower())
        if key in _LEXICONS and key not in used:
            out[name] = _LEXICONS[key]
            used.add(key)
        else:
            pending.append(name)
    spare = [k for k in _LEXICONS if k not in used]
    for name in pending:
        if spare:
            out[name] = _LEXICONS[spare.pop(0)]
        else:
            stem = "".join(ch for ch in name.lower() if ch.isalnum()) or "cls"
            out[name] = tuple(f"{stem}word{j}" for j in range(8))
    return out


def synth_corpus(
    spec: SynthSpec,
    exclude: Optional[Iterable[Tuple[str, str]]] = None,
    max_attempts: int = 1000,
) -> List[LabeledSample]:
    """Template-generated samples, class by class, a pure function of ``spec``.

    Each text carries its class through a single strong emotion word placed in
    templates shared by every class. ``exclude`` holds (text, label) pairs that
    must not be produced, which keeps a test split disjoint from training.
    """
    rng = np.random.default_rng(spec.seed)
    lexicons = class_lexicons([name for name, _ in spec.classes])
    banned = set(exclude or ())
    samples: List[LabeledSample] = []
    for name, count in spec.classes:
        words = lexicons[name]
        for _ in range(count):
            for _attempt in range(max_attempts):
                template = _TEMPLATES[rng.integers(len(_TEMPLATES))]
                text = template.format(
                    subject=_SUBJECTS[rng.integers(len(_SUBJECTS))],
                    time=_TIMES[rng.integers(len(_TIMES))],
                    filler=_FILLERS[rng.integers(len(_FILLERS))],
                    w=words[rng.integers(len(words))],
                )
                if (text, name) not in banned:
                    break
            else:
                raise DataError(f"could not draw a new sample for class '{name}'")
            samples.append(LabeledSample(text=text, label=name))
    return samples
