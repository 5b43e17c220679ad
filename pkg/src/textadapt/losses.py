"""Score-map and domain losses with analytic gradients.

The per-negative term of the score-map loss is ``(1 - beta) * Y_hat``:
confidence on background is penalized. ``LossConfig(literal=True)``
evaluates the printed form ``-(1 - beta) * (1 - Y_hat)`` instead. The
two differ by the constant ``(1 - beta) * |Neg|`` and share one gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from textadapt.core import PixelPartition, PixelState

BALANCED = "balanced"


@dataclass(frozen=True)
class LossConfig:
    beta: Union[str, float] = BALANCED  # "balanced" or a fixed value in [0, 1]
    epsilon_log: float = 1e-6
    literal: bool = False

    def __post_init__(self):
        if self.beta != BALANCED and not (
            isinstance(self.beta, (int, float)) and 0.0 <= float(self.beta) <= 1.0
        ):
            raise ValueError(f"beta must be 'balanced' or in [0, 1], got {self.beta!r}")
        if not 0 < self.epsilon_log <= 1e-3:
            raise ValueError("epsilon_log must lie in (0, 1e-3]")


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _check_shapes(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def _score_loss(pred: np.ndarray, pos: np.ndarray, neg: np.ndarray, cfg: LossConfig):
    n_pos = int(np.count_nonzero(pos))
    n_neg = int(np.count_nonzero(neg))
    if cfg.beta == BALANCED:
        total = n_pos + n_neg
        beta = 1.0 - n_pos / total if total else 1.0
    else:
        beta = float(cfg.beta)
    eps = cfg.epsilon_log
    clamped = np.clip(pred, eps, 1.0 - eps)
    grad = np.zeros_like(pred)

    pos_term = -beta * float(np.sum(np.log(clamped[pos])))
    in_range = (pred > eps) & (pred < 1.0 - eps)
    grad[pos] = np.where(in_range[pos], -beta / clamped[pos], 0.0)

    if cfg.literal:
        neg_term = -(1.0 - beta) * float(np.sum(1.0 - pred[neg]))
    else:
        neg_term = (1.0 - beta) * float(np.sum(pred[neg]))
    grad[neg] = 1.0 - beta
    return pos_term + neg_term, grad


def balanced_score_loss(pred, gt, cfg: LossConfig = LossConfig()):
    """Class-balanced score-map loss over every pixel; returns ``(loss, dloss/dpred)``."""
    p, g = _values(pred), _values(gt)
    _check_shapes(p, g)
    return _score_loss(p, g == 1.0, g == 0.0, cfg)


def weak_score_loss(pred, gt, partition, cfg: LossConfig = LossConfig()):
    """Score-map loss where only NEGATIVE_KEPT pixels contribute as negatives.

    IGNORED pixels get zero loss and zero gradient. Positives are the
    ground-truth text pixels that are not IGNORED.
    """
    p, g = _values(pred), _values(gt)
    part = np.asarray(getattr(partition, "data", partition))
    _check_shapes(p, g, part)
    pos = (g == 1.0) & (part != PixelState.IGNORED)
    neg = (g == 0.0) & (part == PixelState.NEGATIVE_KEPT)
    return _score_loss(p, pos, neg, cfg)


def select_negatives(pred, candidate_negatives, eta: float) -> PixelPartition:
    """Keep the floor(eta * |Neg|) least confident candidates as negatives.

    Other candidates become IGNORED; pixels outside the candidate mask are
    POSITIVE. Ties resolve by row-major pixel index.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    p = _values(pred)
    cand = np.asarray(candidate_negatives, dtype=bool)
    _check_shapes(p, cand)
    out = np.full(p.shape, PixelState.POSITIVE, dtype=np.int8)
    idx = np.flatnonzero(cand)
    # guard against eta * n landing a hair under an integer
    k = int(math.floor(eta * idx.size + 1e-9))
    order = idx[np.argsort(p.ravel()[idx], kind="stable")]
    flat = out.ravel()
    flat[order[:k]] = PixelState.NEGATIVE_KEPT
    flat[order[k:]] = PixelState.IGNORED
    return PixelPartition(out)


def domain_loss(p, y, epsilon: float = 1e-7):
    """Mean binary cross-entropy of domain probabilities; returns ``(loss, dloss/dp)``.

    Domain label 0 is source, 1 is target.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("domain loss needs a non-empty batch")
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("domain labels must be 0 or 1")
    pc = np.clip(p, epsilon, 1.0 - epsilon)
    n = p.size
    loss = -float(np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    grad = -(y / pc - (1.0 - y) / (1.0 - pc)) / n
    grad[(p <= epsilon) | (p >= 1.0 - epsilon)] = 0.0
    return loss, grad


def domain_loss_from_logits(z, y):
    """Same loss parameterized by logits; stable for saturated classifiers."""
    z = np.asarray(z, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("domain loss needs a non-empty batch")
    # -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    p = 0.5 * (1.0 + np.tanh(0.5 * z))
    return loss, (p - y) / z.size


def partition_from_masks(positive: np.ndarray, negative_kept: np.ndarray) -> PixelPartition:
    out = np.full(positive.shape, PixelState.IGNORED, dtype=np.int8)
    out[negative_kept] = PixelState.NEGATIVE_KEPT
    out[positive] = PixelState.POSITIVE
    return PixelPartition(out)


def full_partition(gt, ignore: Optional[np.ndarray] = None) -> PixelPartition:
    """Every positive POSITIVE, every negative NEGATIVE_KEPT, ``ignore`` pixels IGNORED."""
    g = _values(gt)
    out = np.where(g == 1.0, PixelState.POSITIVE, PixelState.NEGATIVE_KEPT).astype(np.int8)
    if ignore is not None:
        out[np.asarray(ignore, dtype=bool)] = PixelState.IGNORED
    return PixelPartition(out)
