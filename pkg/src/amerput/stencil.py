"""Directional decomposition of the diffusion matrix and drift.

A decomposition writes ``1/2 sigma sigma^T = sum_k a_k l_k l_k^T`` and
``beta = sum_k b_k l_k`` with ``a_k = a_{-k} >= 0`` and ``b_k >= 0``, the
sum running over ``k = +-1, ..., +-d1``.  Directions are stored as a
``(2*d1, d)`` integer array ordered ``l_1, ..., l_d1, -l_1, ..., -l_d1``
and coefficient evaluation returns arrays with columns in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from .errors import DiagonalDominanceViolated
from .model import LogModel, as_points

__all__ = [
    "StencilDecomposition",
    "TestFunction",
    "build_1d",
    "build_diag_dominant",
    "validate_decomposition",
    "apply_continuous_L",
    "apply_generator",
    "diffusion_matrix",
]

# Clipping threshold for round-off in axis weights of dominant-but-tight matrices.
_DOMINANCE_SLACK = 1e-14


@dataclass(frozen=True)
class StencilDecomposition:
    """Directions ``l_k`` and coefficient functions ``a_k, b_k``.

    ``coeff_fn(t, X)`` returns ``(a, b)``, each of shape ``(n, 2*d1)``.
    """

    d: int
    d1: int
    directions: np.ndarray
    coeff_fn: Callable
    time_homogeneous: bool = False

    def __post_init__(self):
        dirs = np.asarray(self.directions)
        if dirs.shape != (2 * self.d1, self.d):
            raise ValueError(f"directions must have shape {(2 * self.d1, self.d)}")
        if not np.array_equal(dirs[self.d1:], -dirs[: self.d1]):
            raise ValueError("directions must satisfy l_{-k} = -l_k")

    def column(self, k):
        """Column index of the signed direction label ``k`` in ``{+-1..+-d1}``."""
        if k == 0 or abs(k) > self.d1:
            raise ValueError(f"direction label must be in +-1..+-{self.d1}, got {k}")
        return k - 1 if k > 0 else self.d1 + (-k) - 1

    def direction(self, k):
        return self.directions[self.column(k)]

    @property
    def labels(self):
        return list(range(1, self.d1 + 1)) + [-k for k in range(1, self.d1 + 1)]

    @property
    def max_step(self):
        return float(np.max(np.linalg.norm(self.directions, axis=1)))

    def coefficients(self, t, x):
        a, b = self.coeff_fn(t, as_points(x, self.d))
        return np.asarray(a, dtype=float), np.asarray(b, dtype=float)

    def a(self, t, x, k):
        return float(self.coefficients(t, x)[0][0, self.column(k)])

    def b(self, t, x, k):
        return float(self.coefficients(t, x)[1][0, self.column(k)])


def diffusion_matrix(log_model: LogModel, t, x):
    """``1/2 sigma sigma^T`` at a batch of points, shape ``(n, d, d)``."""
    s = log_model.sigma(t, as_points(x, log_model.d))
    return 0.5 * np.einsum("nik,njk->nij", s, s)


def build_1d(log_model: LogModel) -> StencilDecomposition:
    """Decomposition for a single asset with ``l_{+-1} = +-1``.

    The diffusion ``sigma^2 / 2`` is split evenly between both directions and
    the drift goes to whichever side matches its sign.
    """
    if log_model.d != 1:
        raise ValueError(f"build_1d needs d == 1, got d == {log_model.d}")

    def coeff_fn(t, X):
        s = log_model.sigma(t, X)[:, 0, 0]
        beta = log_model.beta(t, X)[:, 0]
        a = np.repeat((0.25 * s * s)[:, None], 2, axis=1)
        b = np.stack([np.maximum(beta, 0.0), np.maximum(-beta, 0.0)], axis=1)
        return a, b

    return StencilDecomposition(
        d=1,
        d1=1,
        directions=np.array([[1], [-1]]),
        coeff_fn=coeff_fn,
        time_homogeneous=log_model.time_homogeneous,
    )


def _dominance_margins(A):
    diag = np.diagonal(A, axis1=1, axis2=2)
    off = np.sum(np.abs(A), axis=2) - np.abs(diag)
    return diag - off


def build_diag_dominant(log_model: LogModel, sample_pts) -> StencilDecomposition:
    """Axis-plus-diagonal decomposition for diagonally dominant diffusion.

    Directions are ``e_i`` followed by ``e_i + e_j`` and ``e_i - e_j`` for
    ``i < j``.  Pair weights are ``A_ii - sum_{j != i} |A_ij|`` on axes,
    ``max(A_ij, 0)`` on ``e_i + e_j`` and ``max(-A_ij, 0)`` on ``e_i - e_j``;
    each pair weight is split evenly between ``k`` and ``-k``.  The drift
    is carried by the axes only.

    ``sample_pts`` is a sequence of ``(t, x)`` at which dominance is checked
    before the decomposition is returned.  Evaluation at other points
    raises :class:`DiagonalDominanceViolated` if dominance fails there.
    """
    d = log_model.d
    for t, x in sample_pts:
        A = diffusion_matrix(log_model, t, x)
        margin = _dominance_margins(A)[0]
        if np.any(margin < -_DOMINANCE_SLACK):
            raise DiagonalDominanceViolated(t, np.ravel(x), float(margin.min()))

    pairs = list(combinations(range(d), 2))
    pos = np.eye(d, dtype=int).tolist()
    for i, j in pairs:
        v = [0] * d
        v[i], v[j] = 1, 1
        pos.append(v)
    for i, j in pairs:
        v = [0] * d
        v[i], v[j] = 1, -1
        pos.append(v)
    pos = np.array(pos, dtype=int).reshape(-1, d)
    d1 = pos.shape[0]
    directions = np.vstack([pos, -pos])
    ii = np.array([p[0] for p in pairs], dtype=int)
    jj = np.array([p[1] for p in pairs], dtype=int)

    def coeff_fn(t, X):
        A = diffusion_matrix(log_model, t, X)
        margin = _dominance_margins(A)
        bad = np.any(margin < -_DOMINANCE_SLACK, axis=1)
        if np.any(bad):
            n = int(np.argmax(bad))
            raise DiagonalDominanceViolated(t, X[n], float(margin[n].min()))
        n = X.shape[0]
        w = np.empty((n, d1))
        w[:, :d] = np.maximum(margin, 0.0)
        off = A[:, ii, jj]
        w[:, d : d + len(pairs)] = np.maximum(off, 0.0)
        w[:, d + len(pairs) :] = np.maximum(-off, 0.0)
        half = 0.5 * w
        a = np.hstack([half, half])
        beta = log_model.beta(t, X)
        b = np.zeros((n, 2 * d1))
        b[:, :d] = np.maximum(beta, 0.0)
        b[:, d1 : d1 + d] = np.maximum(-beta, 0.0)
        return a, b

    return StencilDecomposition(
        d=d,
        d1=d1,
        directions=directions,
        coeff_fn=coeff_fn,
        time_homogeneous=log_model.time_homogeneous,
    )


def validate_decomposition(dec: StencilDecomposition, log_model: LogModel, sample_pts):
    """Largest reconstruction residuals over the sample points.

    Returns a JSON-serialisable dict with the worst Frobenius-norm error in
    the diffusion matrix, the worst Euclidean error in the drift, and the
    most negative coefficient / symmetry defect seen.
    """
    L = dec.directions.astype(float)
    outer = np.einsum("ki,kj->kij", L, L)
    worst_matrix = 0.0
    worst_drift = 0.0
    min_coeff = np.inf
    asym = 0.0
    for t, x in sample_pts:
        a, b = dec.coefficients(t, x)
        A = diffusion_matrix(log_model, t, x)
        beta = log_model.beta(t, as_points(x, log_model.d))
        A_rec = np.einsum("nk,kij->nij", a, outer)
        b_rec = b @ L
        worst_matrix = max(worst_matrix, float(np.max(np.linalg.norm(A_rec - A, axis=(1, 2)))))
        worst_drift = max(worst_drift, float(np.max(np.linalg.norm(b_rec - beta, axis=1))))
        min_coeff = min(min_coeff, float(a.min()), float(b.min()))
        asym = max(asym, float(np.max(np.abs(a[:, : dec.d1] - a[:, dec.d1 :]))))
    return {
        "matrix_residual": worst_matrix,
        "drift_residual": worst_drift,
        "min_coefficient": min_coeff,
        "symmetry_defect": asym,
        "max_direction_norm": dec.max_step,
        "n_samples": len(sample_pts),
    }


@dataclass(frozen=True)
class TestFunction:
    """Smooth function with exact gradient and Hessian, used to probe operators."""

    __test__ = False  # not a pytest class

    value: Callable
    grad: Callable
    hess: Callable


def apply_continuous_L(dec: StencilDecomposition, rho, eta: TestFunction, t, x):
    """``sum_k (a_k D^2_{l_k} eta + b_k D_{l_k} eta) - rho eta`` at one point."""
    x = np.asarray(x, dtype=float).reshape(dec.d)
    a, b = dec.coefficients(t, x)
    L = dec.directions.astype(float)
    g = np.asarray(eta.grad(x), dtype=float).reshape(dec.d)
    H = np.asarray(eta.hess(x), dtype=float).reshape(dec.d, dec.d)
    first = L @ g
    second = np.einsum("ki,ij,kj->k", L, H, L)
    r = float(np.asarray(rho(t, x.reshape(1, -1))).reshape(-1)[0])
    return float(a[0] @ second + b[0] @ first - r * float(eta.value(x)))


def apply_generator(log_model: LogModel, eta: TestFunction, t, x):
    """Generator written directly from ``sigma``, ``beta`` and ``rho``.

    ``sum_ij 1/2 (sigma sigma^T)_ij eta_ij + sum_i beta_i eta_i - rho eta``;
    serves as the independent reference for :func:`apply_continuous_L`.
    """
    x = np.asarray(x, dtype=float).reshape(log_model.d)
    X = x.reshape(1, -1)
    A = diffusion_matrix(log_model, t, X)[0]
    beta = log_model.beta(t, X)[0]
    r = float(log_model.rho(t, X)[0])
    H = np.asarray(eta.hess(x), dtype=float).reshape(log_model.d, log_model.d)
    g = np.asarray(eta.grad(x), dtype=float).reshape(log_model.d)
    return float(np.sum(A * H) + beta @ g - r * float(eta.value(x)))
