"""
2D projection of pooled representations for plotting.

PCA is the default and deterministic; t-SNE (seeded, PCA-initialized) is
available for figures.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.decomposition import PCA
from sklearn.manifold import TSNE

from .errors import ConfigError, DataError

PROJECTORS = ("pca", "tsne")
CSV_COLUMNS = ["id", "is_pseudo", "group", "label", "x", "y"]


@dataclass
class ProjectedPoint:
    id: int
    is_pseudo: bool
    group: Optional[int]
    label: str
    x: float
    y: float
    source_id: Optional[int] = None

    def row(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k in CSV_COLUMNS}


def project(features: np.ndarray, method: str = "pca", seed: int = 0, perplexity: float = 30.0) -> np.ndarray:
    """Map (n, d) features to (n, 2)."""
    if method not in PROJECTORS:
        raise ConfigError(f"projector must be one of {PROJECTORS}")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 3:
        raise DataError("projection needs at least 3 points")
    if features.shape[1] < 2:
        features = np.hstack([features, np.zeros((features.shape[0], 2 - features.shape[1]))])
    if method == "pca":
        return PCA(n_components=2, svd_solver="full").fit_transform(features)
    tsne = TSNE(
        n_components=2,
        init="pca",
        random_state=seed,
        perplexity=min(perplexity, features.shape[0] - 1.0),
    )
    return tsne.fit_transform(features)


def group_distances(points: Sequence[ProjectedPoint]) -> List[Dict[str, float]]:
    """Mean projected distance from each pseudo point to its source original, per group."""
    originals = {p.source_id: p for p in points if not p.is_pseudo}
    per_group: Dict[int, List[float]] = {}
    for p in points:
        if p.is_pseudo and p.source_id in originals:
            o = originals[p.source_id]
            per_group.setdefault(p.group, []).append(float(np.hypot(p.x - o.x, p.y - o.y)))
    return [
        {"group": g, "pairs": len(d), "mean_distance": float(np.mean(d))}
        for g, d in sorted(per_group.items())
    ]
