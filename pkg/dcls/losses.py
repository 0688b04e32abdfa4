"""
Noise-resistant training objective.

The contrastive term only repels original samples of different labels
(negatives); pseudo samples contribute cross-entropy supervision and never
enter the contrastive term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossFlags:
    use_da: bool = True
    use_nrt: bool = True


@dataclass
class BatchRepresentations:
    """Encoder outputs for k originals and their pseudo samples.

    pooled: (k, d) [CLS] representations of the originals
    labels: (k,) class ids
    original_logits: (k, m)
    pseudo_logits: (k, B, m); B may be 0
    pseudo_mask: (k, B) bool, False for absent pseudo slots (ragged lists)
    """

    pooled: torch.Tensor
    labels: torch.Tensor
    original_logits: torch.Tensor
    pseudo_logits: Optional[torch.Tensor] = None
    pseudo_mask: Optional[torch.Tensor] = None

    def __post_init__(self):
        k = self.labels.shape[0]
        if self.pooled.shape[0] != k or self.original_logits.shape[0] != k:
            raise ShapeError("representations, logits and labels must share the batch dimension")
        if self.pseudo_logits is None:
            self.pseudo_logits = self.original_logits.new_zeros((k, 0, self.original_logits.shape[-1]))
        if self.pseudo_mask is None:
            self.pseudo_mask = torch.ones(self.pseudo_logits.shape[:2], dtype=torch.bool)
        if tuple(self.pseudo_mask.shape) != tuple(self.pseudo_logits.shape[:2]):
            raise ShapeError("pseudo mask does not match pseudo logits")

    @property
    def k(self) -> int:
        return int(self.labels.shape[0])

    def without_pseudo(self) -> "BatchRepresentations":
        return BatchRepresentations(self.pooled, self.labels, self.original_logits)


@dataclass
class LossTerms:
    contrastive: torch.Tensor
    classification: torch.Tensor
    total: torch.Tensor


def contrastive_loss(reps: BatchRepresentations, tau: float = 1.0) -> torch.Tensor:
    """(1/k) * log sum_i sum_{j in N_i} exp(cos(h_i, h_j) / tau).

    N_i holds the originals whose label differs from l_i. A batch without any
    negative pair returns 0.
    """
    if tau <= 0:
        raise ConfigError("tau must be > 0")
    h = reps.pooled
    norms = h.norm(dim=1)
    if bool((norms <= 1e-12).any()):
        raise ShapeError("zero-norm representation: cosine similarity undefined")
    unit = h / norms[:, None]
    sim = unit @ unit.T / tau
    negatives = reps.labels[:, None] != reps.labels[None, :]
    if not bool(negatives.any()):
        return h.sum() * 0.0
    return torch.logsumexp(sim[negatives], dim=0) / reps.k


def classification_loss(reps: BatchRepresentations) -> torch.Tensor:
    """Mean cross-entropy over every original and every present pseudo sample.

    With all B slots present this is -(1/(k(B+1))) sum_i sum_b log p(l_i).
    """
    labels = reps.labels
    log_p = F.log_softmax(reps.original_logits, dim=-1)
    total = -log_p.gather(1, labels[:, None]).sum()
    count = reps.k
    if reps.pseudo_logits.shape[1] > 0:
        log_q = F.log_softmax(reps.pseudo_logits, dim=-1)
        b = reps.pseudo_logits.shape[1]
        picked = log_q.gather(2, labels[:, None, None].expand(-1, b, 1)).squeeze(2)
        total = total - (picked * reps.pseudo_mask.to(picked.dtype)).sum()
        count += int(reps.pseudo_mask.sum())
    return total / count


def total_loss(reps: BatchRepresentations, tau: float = 1.0, flags: LossFlags = LossFlags()) -> LossTerms:
    """L = L_c + L_e, adjusted by the ablation flags.

    use_da=False drops the pseudo samples from L_e; use_nrt=False drops L_c.
    """
    if not flags.use_da:
        reps = reps.without_pseudo()
    l_e = classification_loss(reps)
    if flags.use_nrt:
        l_c = contrastive_loss(reps, tau)
    else:
        l_c = l_e * 0.0
    return LossTerms(contrastive=l_c, classification=l_e, total=l_c + l_e)
