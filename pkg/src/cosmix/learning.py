"""Soft Dice loss, its gradient, EMA teacher blending and plain SGD.

Labels here are column indices into the probability matrix, with IGNORE
marking points that take no part in the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IGNORE, as_labels
from .errors import AllIgnored, LengthMismatch, NonFiniteGradient, ShapeMismatch

DICE_EPS = 1e-5


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.001
    beta: float = 0.99
    gamma: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if int(self.gamma) < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")


def _dice_terms(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = as_labels(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ShapeMismatch(f"probs {probs.shape} vs labels {labels.shape}")
    valid = labels != IGNORE
    if not np.any(valid):
        raise AllIgnored("every point is IGNORE")
    cols = labels[valid]
    if cols.min() < 0 or cols.max() >= probs.shape[1]:
        raise ShapeMismatch("label index outside the probability columns")
    p = probs[valid]
    onehot = np.zeros_like(p)
    onehot[np.arange(cols.size), cols] = 1.0
    counts = onehot.sum(axis=0)
    present = counts > 0
    inter = (p * onehot).sum(axis=0)
    num = 2.0 * inter + DICE_EPS
    den = (p * p).sum(axis=0) + counts + DICE_EPS
    return valid, p, onehot, present, num, den


def dice_loss(probs, labels) -> float:
    """``1 - mean_c (2 sum p*y + eps) / (sum p^2 + sum y^2 + eps)`` over present classes."""
    _, _, _, present, num, den = _dice_terms(probs, labels)
    return float(1.0 - np.mean(num[present] / den[present]))


def dice_grad(probs, labels) -> np.ndarray:
    """Gradient of :func:`dice_loss` with respect to ``probs``; IGNORE rows are zero."""
    return dice_loss_and_grad(probs, labels)[1]


def dice_loss_and_grad(probs, labels) -> tuple[float, np.ndarray]:
    valid, p, onehot, present, num, den = _dice_terms(probs, labels)
    m = present.sum()
    loss = float(1.0 - np.mean(num[present] / den[present]))
    # d/dp of num/den = (2y * den - num * 2p) / den^2, for present classes only
    g = (2.0 * onehot * den - 2.0 * p * num) / (den * den)
    g *= present * (-1.0 / m)
    grad = np.zeros(np.shape(probs), dtype=np.float64)
    grad[valid] = g
    return loss, grad


def total_loss(loss_s2t: float | None, loss_t2s: float | None) -> float:
    """Sum of the two branch losses; a disabled branch passes ``None``."""
    return sum(v for v in (loss_s2t, loss_t2s) if v is not None)


def ema_update(teacher, student, beta: float) -> np.ndarray:
    teacher = np.asarray(teacher, dtype=np.float64)
    student = np.asarray(student, dtype=np.float64)
    if teacher.shape != student.shape:
        raise LengthMismatch(f"teacher {teacher.shape} vs student {student.shape}")
    return beta * teacher + (1.0 - beta) * student


def sgd_step(params, grads, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise LengthMismatch(f"params {params.shape} vs grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    return params - lr * grads
