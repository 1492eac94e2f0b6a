"""Training objectives: L1, margin-gated (clipped) L1, pairwise contrastive.

Every loss comes with an explicit gradient w.r.t. the predictions so the
training loop can run fully in numpy. Conventions at non-smooth points:
d|x|/dx = 0 at x = 0, and the clipped L1 has gradient exactly 0 anywhere
inside its margin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError

Pair = tuple[tuple[float, float], tuple[float, float]]  # ((y_i, yhat_i), (y_j, yhat_j))


@dataclass
class LossConfig:
    use_clipped: bool = False
    tau: float = 0.25
    use_contrastive: bool = False
    alpha: float = 0.1
    contrastive_weight: float = 0.5

    def validate(self) -> None:
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.contrastive_weight < 0:
            raise ConfigError("contrastive_weight must be >= 0")


def l1_loss(y: float, y_hat: float) -> float:
    return abs(y - y_hat)


def l1_grad(y: float, y_hat: float) -> float:
    """d l1 / d y_hat; 0 at the non-smooth point."""
    d = y_hat - y
    return float(np.sign(d))


def clipped_l1_loss(y: float, y_hat: float, tau: float) -> float:
    """|y - y_hat| when outside the tau margin, else exactly 0."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    d = abs(y - y_hat)
    return d if d > tau else 0.0


def clipped_l1_grad(y: float, y_hat: float, tau: float) -> float:
    d = y_hat - y
    return float(np.sign(d)) if abs(d) > tau else 0.0


def contrastive_loss(pairs: Sequence[Pair], alpha: float) -> float:
    """Mean over pairs of max(0, | (yhat_i-yhat_j) - (y_i-y_j) | - alpha).

    Penalizes getting the *relative* difference of a pair wrong by more than
    the margin; empty input returns 0 by convention.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if len(pairs) == 0:
        return 0.0
    total = 0.0
    for (y_i, yhat_i), (y_j, yhat_j) in pairs:
        rel_err = (yhat_i - yhat_j) - (y_i - y_j)
        total += max(0.0, abs(rel_err) - alpha)
    return total / len(pairs)


def all_pairs(predictions: np.ndarray, targets: np.ndarray) -> list[Pair]:
    """All unordered index pairs of a batch, as contrastive_loss input."""
    n = len(predictions)
    return [
        ((float(targets[i]), float(predictions[i])), (float(targets[j]), float(predictions[j])))
        for i in range(n)
        for j in range(i + 1, n)
    ]


def _contrastive_value_and_grad(predictions: np.ndarray, targets: np.ndarray, alpha: float):
    n = len(predictions)
    if n < 2:
        return 0.0, np.zeros(n, dtype=np.float64)
    ii, jj = np.triu_indices(n, k=1)
    rel = (predictions[ii] - predictions[jj]) - (targets[ii] - targets[jj])
    hinge = np.abs(rel) - alpha
    active = hinge > 0
    value = float(hinge[active].sum()) / len(ii)
    grad = np.zeros(n, dtype=np.float64)
    sign = np.sign(rel) * active
    np.add.at(grad, ii, sign)
    np.add.at(grad, jj, -sign)
    return value, grad / len(ii)


def total_loss(predictions, targets, cfg: LossConfig):
    """Batch objective -> (total, per-term breakdown dict)."""
    total, breakdown, _ = total_loss_and_grad(predictions, targets, cfg)
    return total, breakdown


def total_loss_and_grad(predictions, targets, cfg: LossConfig):
    """Objective value, per-term breakdown, and gradient w.r.t. predictions."""
    cfg.validate()
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(
            f"predictions and targets must match, got {predictions.shape} vs {targets.shape}"
        )
    if predictions.size == 0:
        raise ValueError("empty batch")
    n = len(predictions)
    diff = predictions - targets
    if cfg.use_clipped:
        outside = np.abs(diff) > cfg.tau
        primary = float(np.abs(diff)[outside].sum()) / n
        dprimary = np.sign(diff) * outside / n
    else:
        primary = float(np.abs(diff).mean())
        dprimary = np.sign(diff) / n
    breakdown = {"primary": primary, "contrastive": 0.0}
    grad = dprimary
    if cfg.use_contrastive:
        c_value, c_grad = _contrastive_value_and_grad(predictions, targets, cfg.alpha)
        breakdown["contrastive"] = c_value
        grad = grad + cfg.contrastive_weight * c_grad
    total = breakdown["primary"] + cfg.contrastive_weight * breakdown["contrastive"]
    return total, breakdown, grad
