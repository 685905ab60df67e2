"""Logistic loss kernels over one shard: loss, gradient, Hessian-vector.

These are the statistical queries the training methods aggregate across
data centers. Regularization is deliberately absent here; the lambda/2
||w||^2 term is added exactly once at the global aggregator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from gdml.data import DcShard, to_csr


@dataclass
class LossStats:
    loss_sum: float
    grad: np.ndarray


def _as_matrix(shard, d: int):
    if isinstance(shard, DcShard):
        cache = getattr(shard, "_csr_cache", None)
        if cache is None or cache[0].shape[1] != d:
            cache = to_csr(shard.examples, d)
            shard._csr_cache = cache
        return cache
    X, y = shard
    return X, np.asarray(y, dtype=np.float64)


def _check_w(w, d=None):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("weight vector must be 1-d")
    if d is not None and w.size != d:
        raise ValueError(f"weight vector has length {w.size}, expected {d}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weight vector contains non-finite entries")
    return w


def logistic_loss_sum(margins: np.ndarray, y: np.ndarray) -> float:
    """Sum of log(1 + exp(-y * m)) with the numerically stable branch."""
    z = y * margins
    # logaddexp(0, -z) == log1p(exp(-z)) for z>0 and -z + log1p(exp(z)) otherwise
    return float(np.sum(np.logaddexp(0.0, -z)))


def local_loss_grad(shard, w) -> LossStats:
    """Loss sum and gradient of the unregularized logistic loss over a shard."""
    w = _check_w(w)
    X, y = _as_matrix(shard, w.size)
    m = X @ w
    loss = logistic_loss_sum(m, y)
    coef = -y * expit(-y * m)
    grad = X.T @ coef
    return LossStats(loss, np.asarray(grad, dtype=np.float64))


def local_hessian_vec(shard, w, v) -> np.ndarray:
    """Hessian-vector product of the shard loss at w (no lambda term)."""
    w = _check_w(w)
    v = _check_w(v, w.size)
    X, _y = _as_matrix(shard, w.size)
    m = X @ w
    sig = expit(m)
    curv = sig * (1.0 - sig)
    return np.asarray(X.T @ (curv * (X @ v)), dtype=np.float64)


def margins(shard, w, d: int = None) -> np.ndarray:
    """X @ w for a shard; the kernels below reuse cached margins."""
    w = _check_w(w, d)
    X, _ = _as_matrix(shard, w.size)
    return X @ w


def loss_grad_from_margins(X: sp.csr_matrix, y: np.ndarray, m: np.ndarray):
    """loss_sum and gradient given precomputed margins m = X @ w."""
    loss = logistic_loss_sum(m, y)
    coef = -y * expit(-y * m)
    return loss, np.asarray(X.T @ coef, dtype=np.float64)


def curvature_from_margins(m: np.ndarray) -> np.ndarray:
    sig = expit(m)
    return sig * (1.0 - sig)


def hessian_vec_from_curvature(X: sp.csr_matrix, curv: np.ndarray, v: np.ndarray):
    return np.asarray(X.T @ (curv * (X @ v)), dtype=np.float64)


def global_objective(loss_sum_total: float, w, lam: float) -> float:
    """Full objective: lambda/2 ||w||^2 + total loss over all shards."""
    if lam <= 0:
        raise ValueError("regularization constant lambda must be > 0")
    w = _check_w(w)
    return 0.5 * lam * float(w @ w) + float(loss_sum_total)
