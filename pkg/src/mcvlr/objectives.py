"""Contrastive training objectives over batch score matrices.

``nce_loss`` is softmax cross-entropy of each row's ground-truth column
against the other columns as in-batch negatives, with no temperature. The
symmetric variant for multi-channel retrieval adds the column direction,
where the other videos in the batch act as negatives.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import DataError, NumericError


def _check_scores(scores: torch.Tensor) -> torch.Tensor:
    if scores.ndim != 2 or scores.numel() == 0:
        raise DataError(f"score matrix must be nonempty 2-D, got shape {tuple(scores.shape)}")
    if not torch.isfinite(scores).all():
        raise NumericError("non-finite entries in score matrix")
    return scores


def nce_loss(scores: torch.Tensor, labels: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Mean over rows of -log softmax(scores[i])[labels[i]]."""
    scores = _check_scores(scores)
    labels = torch.as_tensor(labels, dtype=torch.long, device=scores.device)
    if labels.shape != (scores.shape[0],):
        raise DataError(f"expected {scores.shape[0]} labels, got shape {tuple(labels.shape)}")
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise DataError("label out of range")
    return F.cross_entropy(scores / temperature, labels)


def symmetric_loss(scores: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """0.5 * (row-wise NCE + column-wise NCE) with the diagonal as ground truth."""
    scores = _check_scores(scores)
    if scores.shape[0] != scores.shape[1]:
        raise DataError(f"symmetric loss needs a square matrix, got {tuple(scores.shape)}")
    diag = torch.arange(scores.shape[0], device=scores.device)
    return 0.5 * (nce_loss(scores, diag, temperature) + nce_loss(scores.T, diag, temperature))


def loss_gradient_check(loss_fn, scores: torch.Tensor, labels=None, h: float = 1e-5) -> float:
    """Max relative deviation between the analytic gradient of ``loss_fn``
    w.r.t. every score entry and central finite differences of step ``h``.

    Runs in float64 regardless of the input dtype. ``labels``, when given,
    is forwarded to ``loss_fn`` as its second argument.
    """
    if h <= 0:
        raise DataError(f"finite-difference step must be positive, got {h}")
    if labels is not None:
        inner = loss_fn
        loss_fn = lambda s: inner(s, labels)
    s = scores.detach().double().clone().requires_grad_(True)
    loss_fn(s).backward()
    analytic = s.grad.detach()
    base = s.detach().clone()
    worst = 0.0
    for idx in torch.cartesian_prod(*(torch.arange(n) for n in base.shape)):
        idx = tuple(idx.tolist())
        plus, minus = base.clone(), base.clone()
        plus[idx] += h
        minus[idx] -= h
        fd = (loss_fn(plus) - loss_fn(minus)).item() / (2 * h)
        a = analytic[idx].item()
        denom = max(abs(a), abs(fd), 1e-8)
        worst = max(worst, abs(a - fd) / denom)
    return worst
