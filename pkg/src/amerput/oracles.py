"""Independent references for validating the lattice solver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotConverged
from .lattice import Lattice
from .model import CutoffPayoff, LogModel, as_points
from .stencil import StencilDecomposition, diffusion_matrix

__all__ = [
    "bs_european_put",
    "bs_european_call",
    "crr_american_put",
    "brute_force_discrete",
    "ExitBoundParams",
    "exit_bound",
    "exit_condition_constant",
    "mc_exit_probability",
    "bm_two_sided_exit_probability",
    "bm_exit_probability_images",
]


def _ncdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _check_bs(S, K, r, sigma, T):
    for name, v in (("S", S), ("K", K), ("sigma", sigma), ("T", T)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if r < 0:
        raise ValueError("r must be nonnegative")


def bs_european_put(S, K, r, sigma, T):
    """Black-Scholes price of a European put."""
    _check_bs(S, K, r, sigma, T)
    sd = sigma * math.sqrt(T)
    d1 = (math.log(S / K) + (r + 0.5 * sigma * sigma) * T) / sd
    d2 = d1 - sd
    return K * math.exp(-r * T) * _ncdf(-d2) - S * _ncdf(-d1)


def bs_european_call(S, K, r, sigma, T):
    _check_bs(S, K, r, sigma, T)
    sd = sigma * math.sqrt(T)
    d1 = (math.log(S / K) + (r + 0.5 * sigma * sigma) * T) / sd
    d2 = d1 - sd
    return S * _ncdf(d1) - K * math.exp(-r * T) * _ncdf(d2)


def crr_american_put(S, K, r, sigma, T, n, american=True):
    """Cox-Ross-Rubinstein binomial tree with ``n`` steps.

    With ``american=True`` the payoff is compared against the continuation
    value at every node.
    """
    _check_bs(S, K, r, sigma, T)
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    dt = T / n
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    disc = math.exp(-r * dt)
    p = (math.exp(r * dt) - d) / (u - d)
    if not 0.0 < p < 1.0:
        raise ValueError("tree is not arbitrage free for these parameters (p outside (0, 1))")
    log_u = sigma * math.sqrt(dt)
    j = np.arange(n + 1)
    values = np.maximum(K - S * np.exp(log_u * (2 * j - n)), 0.0)
    for i in range(n - 1, -1, -1):
        values = disc * (p * values[1 : i + 2] + (1.0 - p) * values[: i + 1])
        if american:
            exercise = K - S * np.exp(log_u * (2 * np.arange(i + 1) - i))
            np.maximum(values, exercise, out=values)
    return float(values[0])


def brute_force_discrete(
    log_model: LogModel,
    dec: StencilDecomposition,
    payoff: CutoffPayoff,
    lattice: Lattice,
    tol=1e-12,
    max_iter=2_000_000,
    european=False,
    obstacle_fn=None,
):
    """Solve the whole space-time obstacle system by global fixed-point iteration.

    Iterates ``w <- max(w + theta (delta_tau w + L_h w), g)`` on all interior
    nodes simultaneously, with ``theta = 1 / (2/tau + max diagonal)`` so that
    the map is monotone.  Boundary and terminal nodes hold the cut-off
    payoff.  Returns the grid values, shape ``(n_levels, n_spatial)``.
    """
    lat = lattice
    if lat.n_nodes > 5000:
        raise ValueError(f"brute force is limited to 5000 nodes, lattice has {lat.n_nodes}")
    J = lat.n_levels - 1
    coords = lat.coords
    cut = payoff.value(coords)
    g_full = payoff.base.g_log(coords) if obstacle_fn is None else obstacle_fn(coords)
    g = np.asarray(g_full, dtype=float)[lat.interior]
    if european:
        g = np.full_like(g, -np.inf)

    w = np.tile(cut, (J + 1, 1))
    if J == 0 or lat.n_interior == 0:
        return w
    X = coords[lat.interior]
    a = np.empty((J, lat.n_interior, len(dec.directions)))
    b = np.empty_like(a)
    r = np.empty((J, lat.n_interior))
    for j in range(J):
        t = lat.time(j)
        a[j], b[j] = dec.coefficients(t, X)
        r[j] = log_model.rho(t, X)
    h = lat.h
    tau = lat.tau
    d1 = dec.d1
    opposite = np.concatenate([np.arange(d1, 2 * d1), np.arange(d1)])
    diag_max = float(np.max(np.sum(2 * a / h**2 + b / h, axis=2) + r))
    theta = 1.0 / (2.0 / tau + diag_max)
    inner = lat.interior
    nbr = lat.neighbors

    def operator(w):
        centre = w[:J, inner]
        nb = w[:J][:, nbr]
        second = (nb + nb[:, :, opposite] - 2.0 * centre[:, :, None]) / (h * h)
        first = (nb - centre[:, :, None]) / h
        L = np.sum(a * second + b * first, axis=2) - r * centre
        return (w[1:, inner] - centre) / tau + L

    for it in range(1, max_iter + 1):
        F = operator(w)
        centre = w[:J, inner]
        res = float(np.max(np.abs(np.maximum(F, g[None, :] - centre))))
        if res <= tol:
            return w
        w[:J, inner] = np.maximum(centre + theta * F, g[None, :])
    raise NotConverged(max_iter, res)


@dataclass(frozen=True)
class ExitBoundParams:
    """Constants of the exponential exit-time estimate.

    ``lambda_ = 2 K`` and ``mu = exp(-lambda_ T) / 2``.
    """

    K_bound: float
    T: float

    def __post_init__(self):
        if not self.K_bound > 0 or not self.T > 0:
            raise ValueError("K_bound and T must be positive")

    @property
    def lambda_(self):
        return 2.0 * self.K_bound

    @property
    def mu(self):
        return math.exp(-self.lambda_ * self.T) / 2.0


def exit_bound(params: ExitBoundParams, R, x0):
    """``min(1, 3 exp(-mu R^2) (1 + exp(|x0|^2 / 2)))`` for a deterministic start."""
    if not R > 0:
        raise ValueError("R must be positive")
    x0 = np.asarray(x0, dtype=float)
    return min(1.0, 3.0 * math.exp(-params.mu * R * R) * (1.0 + math.exp(float(x0 @ x0) / 2.0)))


def exit_condition_constant(log_model: LogModel, n_samples=2000, radius=10.0, seed=0):
    """Smallest ``K`` with ``2 x.beta + |sigma|^2 + (a x, x) <= K (1 + |x|^2)`` on samples.

    Samples ``(t, x)`` uniformly in ``[0, T] x [-radius, radius]^d`` plus
    the origin; the result is a sampled lower estimate of the true constant.
    """
    rng = np.random.default_rng(seed)
    d = log_model.d
    X = np.vstack([np.zeros((1, d)), rng.uniform(-radius, radius, size=(n_samples, d))])
    ts = rng.uniform(0.0, log_model.T, size=8)
    worst = 0.0
    for t in ts:
        beta = log_model.beta(t, X)
        s = log_model.sigma(t, X)
        A = diffusion_matrix(log_model, t, X)
        lhs = (
            2.0 * np.sum(X * beta, axis=1)
            + np.sum(s * s, axis=(1, 2))
            + np.einsum("ni,nij,nj->n", X, A, X)
        )
        worst = max(worst, float(np.max(lhs / (1.0 + np.sum(X * X, axis=1)))))
    return worst


def mc_exit_probability(log_model: LogModel, x0, R, T, n_paths, n_steps, seed, block=10_000):
    """Euler-Maruyama estimate of ``P(sup_{t<=T} |x_t| >= R)``.

    Crossings are only checked at the simulation times, so the estimate is
    biased low.  Paths are simulated in blocks, block ``b`` drawing from
    ``default_rng([seed, b])``; results do not depend on how blocks are
    scheduled.  Returns ``(estimate, standard_error)``.
    """
    n_paths = int(n_paths)
    n_steps = int(n_steps)
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be positive")
    d = log_model.d
    x0 = as_points(x0, d)[0]
    dt = T / n_steps
    sq = math.sqrt(dt)
    hits = 0
    for b, start in enumerate(range(0, n_paths, block)):
        m = min(block, n_paths - start)
        rng = np.random.default_rng([int(seed), b])
        x = np.tile(x0, (m, 1))
        exited = np.linalg.norm(x, axis=1) >= R
        for k in range(n_steps):
            t = k * dt
            beta = log_model.beta(t, x)
            s = log_model.sigma(t, x)
            dW = rng.standard_normal((m, s.shape[2])) * sq
            x = x + beta * dt + np.einsum("nij,nj->ni", s, dW)
            exited |= np.einsum("ni,ni->n", x, x) >= R * R
        hits += int(np.count_nonzero(exited))
    p = hits / n_paths
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / n_paths)


def bm_two_sided_exit_probability(a, T, sigma=1.0, tol=1e-14):
    """``P(sup_{t<=T} |sigma W_t| >= a)`` for standard Brownian motion started at 0.

    Uses the eigenfunction series
    ``P(stay) = (4/pi) sum_n (-1)^n / (2n+1) exp(-(2n+1)^2 pi^2 sigma^2 T / (8 a^2))``
    when it converges quickly and the image (reflection) series otherwise.
    """
    if not a > 0 or not T > 0:
        raise ValueError("a and T must be positive")
    s2T = sigma * sigma * T
    if s2T / (a * a) > 0.3:
        total = 0.0
        n = 0
        while True:
            k = 2 * n + 1
            term = (-1) ** n / k * math.exp(-k * k * math.pi**2 * s2T / (8.0 * a * a))
            total += term
            if abs(term) < tol:
                break
            n += 1
        return 1.0 - 4.0 / math.pi * total
    return bm_exit_probability_images(a, T, sigma, tol)


def bm_exit_probability_images(a, T, sigma=1.0, tol=1e-16):
    """Reflection-principle image sum for the same probability.

    ``P(stay) = sum_k (-1)^k [Phi((2k+1) a / s) - Phi((2k-1) a / s)]`` with
    ``s = sigma sqrt(T)``, summed over all integers ``k``.
    """
    s = sigma * math.sqrt(T)
    stay = 0.0
    k = 0
    while True:
        terms = []
        for kk in ({k, -k} if k else {0}):
            terms.append((-1) ** abs(kk) * (_ncdf((2 * kk + 1) * a / s) - _ncdf((2 * kk - 1) * a / s)))
        stay += sum(terms)
        if k > 0 and max(abs(v) for v in terms) < tol:
            break
        k += 1
    return 1.0 - stay
