"""Macro-F1 / accuracy evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from .corpus import TokenizedSample
from .encoder import EncoderModel, predict
from .errors import DataError, ShapeError


@dataclass
class ClassScores:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class Metrics:
    macro_f1: float
    accuracy: float
    per_class: List[ClassScores] = field(default_factory=list)
    confusion: List[List[int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Metrics":
        return cls(
            macro_f1=float(data["macro_f1"]),
            accuracy=float(data["accuracy"]),
            per_class=[ClassScores(**c) for c in data.get("per_class", [])],
            confusion=[list(map(int, row)) for row in data.get("confusion", [])],
        )


def metrics_from_predictions(y_true: Sequence[int], y_pred: Sequence[int], classes: Sequence[str]) -> Metrics:
    """Per-class scores over every class in ``classes``; absent classes score 0."""
    if len(y_true) != len(y_pred):
        raise ShapeError("predictions and labels differ in length")
    if len(y_true) == 0:
        raise DataError("empty test set")
    labels = list(range(len(classes)))
    precision, recall, f1, support = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, zero_division=0
    )
    per_class = [
        ClassScores(label=name, precision=float(p), recall=float(r), f1=float(f), support=int(s))
        for name, p, r, f, s in zip(classes, precision, recall, f1, support)
    ]
    return Metrics(
        macro_f1=float(np.mean(f1)),
        accuracy=float(accuracy_score(y_true, y_pred)),
        per_class=per_class,
        confusion=confusion_matrix(y_true, y_pred, labels=labels).tolist(),
    )


def evaluate(model: EncoderModel, test: Sequence[TokenizedSample], classes: Sequence[str], batch_size: int = 128) -> Metrics:
    if not test:
        raise DataError("empty test set")
    predictions = predict(model, [s.ids for s in test], batch_size)
    return metrics_from_predictions([s.label_id for s in test], predictions.tolist(), classes)


def summarize(values: Sequence[float]) -> Dict[str, float]:
    """Mean and population standard deviation over seeds."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"mean": float("nan"), "std": float("nan")}
    return {"mean": float(arr.mean()), "std": float(arr.std())}
