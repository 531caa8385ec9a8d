"""Variance-invariance-covariance regularized objective and its gradient.

All reductions run in float64 regardless of the input dtype.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np


@dataclass(frozen=True)
class VicregWeights:
    """Term weights, the hinge target for per-dimension std, and the std stabilizer."""

    invariance: float = 25.0
    variance: float = 25.0
    covariance: float = 1.0
    target_std: float = 1.0
    epsilon: float = 1e-4

    def __post_init__(self):
        if min(self.invariance, self.variance, self.covariance) < 0:
            raise ValueError("loss weights (invariance, variance, covariance) must be non-negative")
        if self.target_std <= 0 or self.epsilon <= 0:
            raise ValueError("target_std and epsilon must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> "VicregWeights":
        known = {f.name for f in fields(cls)}
        if set(obj) - known:
            raise ValueError(f"unknown loss keys: {sorted(set(obj) - known)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    invariance: float
    variance_a: float
    variance_b: float
    covariance_a: float
    covariance_b: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _as_batch(z, min_rows: int = 2) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"embeddings must be an (n, d) matrix, got shape {z.shape}")
    if z.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} embeddings per batch, got {z.shape[0]}")
    return z


def _check_pair(za, zb):
    if za.shape != zb.shape:
        raise ValueError(f"shape mismatch: {za.shape} vs {zb.shape}")


def invariance_loss(za, zb) -> float:
    """Mean over the batch of squared Euclidean distances between paired rows."""
    za, zb = _as_batch(za, 1), _as_batch(zb, 1)
    _check_pair(za, zb)
    return float(np.sum((za - zb) ** 2) / za.shape[0])


def variance_loss(z, target_std: float = 1.0, epsilon: float = 1e-4) -> float:
    """Hinge on each column's (unbiased) standard deviation, averaged over columns."""
    z = _as_batch(z)
    std = np.sqrt(z.var(axis=0, ddof=1) + epsilon)
    return float(np.mean(np.maximum(0.0, target_std - std)))


def covariance_matrix(z) -> np.ndarray:
    z = _as_batch(z)
    zc = z - z.mean(axis=0)
    return zc.T @ zc / (z.shape[0] - 1)


def covariance_loss(z) -> float:
    """Sum of squared off-diagonal covariances divided by the dimension ``d``."""
    c = covariance_matrix(z)
    off = c - np.diag(np.diag(c))
    return float(np.sum(off ** 2) / c.shape[0])


def vicreg_total(za, zb, w: VicregWeights = VicregWeights()) -> LossBreakdown:
    za, zb = _as_batch(za), _as_batch(zb)
    _check_pair(za, zb)
    s = invariance_loss(za, zb)
    va = variance_loss(za, w.target_std, w.epsilon)
    vb = variance_loss(zb, w.target_std, w.epsilon)
    ca = covariance_loss(za)
    cb = covariance_loss(zb)
    total = w.invariance * s + w.variance * (va + vb) + w.covariance * (ca + cb)
    return LossBreakdown(s, va, vb, ca, cb, total)


def _regularizer_grad(z: np.ndarray, w: VicregWeights) -> np.ndarray:
    n, d = z.shape
    zc = z - z.mean(axis=0)
    grad = np.zeros_like(z)
    if w.variance:
        std = np.sqrt(np.sum(zc ** 2, axis=0) / (n - 1) + w.epsilon)
        active = (w.target_std - std) > 0
        grad -= w.variance * zc * (active / std) / (d * (n - 1))
    if w.covariance:
        c = zc.T @ zc / (n - 1)
        np.fill_diagonal(c, 0.0)
        # zc already has zero column means, so the centering Jacobian drops out
        grad += w.covariance * 4.0 / (d * (n - 1)) * (zc @ c)
    return grad


def vicreg_grad(za, zb, w: VicregWeights = VicregWeights()) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`vicreg_total` with respect to both embedding batches.

    A single-row batch is accepted only when both regularizer weights are zero. The hinge
    subgradient at ``std == target_std`` is taken as zero.
    """
    min_rows = 1 if (w.variance == 0 and w.covariance == 0) else 2
    za, zb = _as_batch(za, min_rows), _as_batch(zb, min_rows)
    _check_pair(za, zb)
    n = za.shape[0]
    diff = (2.0 * w.invariance / n) * (za - zb)
    ga, gb = diff.copy(), -diff
    if min_rows == 2:
        ga += _regularizer_grad(za, w)
        gb += _regularizer_grad(zb, w)
    return ga, gb
