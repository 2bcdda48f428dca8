"""Market coefficients in price space and their log-price counterparts.

All coefficient callables are vectorised over points: a batch of ``n``
states is passed as an array of shape ``(n, d)`` and the callable returns
an array whose leading axis has length ``n``.  Single points of shape
``(d,)`` are accepted by the public helpers and promoted to a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "MarketModel",
    "LogModel",
    "PayoffSpec",
    "CutoffPayoff",
    "to_log_model",
    "put_payoff",
    "basket_put_payoff",
    "table_payoff",
    "eval_cutoff",
    "cutoff_ramp",
    "check_market",
    "check_payoff",
]


def as_points(x, d):
    """Return ``x`` as a float array of shape ``(n, d)``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.shape[0] == d else arr.reshape(-1, 1)
    if arr.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {arr.shape}")
    return arr


def _vol_matrix(vol, d):
    v = np.asarray(vol, dtype=float)
    if v.ndim == 0:
        if d != 1:
            v = v * np.eye(d)
        else:
            v = v.reshape(1, 1)
    if v.shape != (d, d):
        raise ValueError(f"volatility must be a {d}x{d} matrix, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class MarketModel:
    """Rate and volatility as functions of ``(t, S)`` with ``S > 0``.

    ``rate(t, S)`` maps ``(n, d)`` prices to ``(n,)`` nonnegative rates and
    ``vol(t, S)`` maps them to ``(n, d, d)`` volatility matrices.
    ``K_bound`` bounds both the rate and the Frobenius norm of ``vol``.
    """

    d: int
    rate: Callable
    vol: Callable
    T: float
    K_bound: float
    time_homogeneous: bool = False
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValueError("d must be a positive integer")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.K_bound > 0:
            raise ValueError("K_bound must be positive")

    @classmethod
    def constant(cls, d, rate, vol, T, K_bound=None):
        sig = _vol_matrix(vol, d)
        r = float(rate)
        if r < 0:
            raise ValueError("rate must be nonnegative")
        if K_bound is None:
            K_bound = max(r, float(np.linalg.norm(sig)), 1e-12)

        def rate_fn(t, S):
            S = as_points(S, d)
            return np.full(S.shape[0], r)

        def vol_fn(t, S):
            S = as_points(S, d)
            return np.broadcast_to(sig, (S.shape[0], d, d)).copy()

        return cls(
            d=d,
            rate=rate_fn,
            vol=vol_fn,
            T=float(T),
            K_bound=float(K_bound),
            time_homogeneous=True,
            description={"kind": "constant", "rate": r, "vol": sig.tolist()},
        )

    @classmethod
    def time_table(cls, d, times, rates, vols, T, K_bound=None):
        """Piecewise-linear interpolation in time of tabulated coefficients.

        ``rates`` has one entry per time and ``vols`` one ``d x d`` matrix
        (or scalar when ``d == 1``) per time; both are held constant outside
        the tabulated range.
        """
        times = np.asarray(times, dtype=float)
        rates = np.asarray(rates, dtype=float)
        vols = np.array([_vol_matrix(v, d) for v in vols])
        if times.ndim != 1 or len(times) < 1:
            raise ValueError("times must be a nonempty 1-D sequence")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if rates.shape != times.shape or vols.shape[0] != times.shape[0]:
            raise ValueError("tables must have one entry per time")
        if np.any(rates < 0):
            raise ValueError("tabulated rates must be nonnegative")
        if K_bound is None:
            K_bound = max(rates.max(), max(np.linalg.norm(v) for v in vols), 1e-12)
        flat = vols.reshape(len(times), d * d)

        def rate_fn(t, S):
            S = as_points(S, d)
            return np.full(S.shape[0], np.interp(t, times, rates))

        def vol_fn(t, S):
            S = as_points(S, d)
            m = np.array([np.interp(t, times, flat[:, c]) for c in range(d * d)])
            return np.broadcast_to(m.reshape(d, d), (S.shape[0], d, d)).copy()

        return cls(
            d=d,
            rate=rate_fn,
            vol=vol_fn,
            T=float(T),
            K_bound=float(K_bound),
            time_homogeneous=len(times) == 1,
            description={
                "kind": "time_table",
                "times": times.tolist(),
                "rates": rates.tolist(),
                "vols": vols.tolist(),
            },
        )


@dataclass(frozen=True)
class LogModel:
    """Coefficients of the log-price dynamics.

    Coordinates are ``x = ln S - log_origin`` so that balls centred at the
    origin can be placed around any reference price.
    """

    d: int
    sigma: Callable
    beta: Callable
    rho: Callable
    T: float
    log_origin: np.ndarray
    time_homogeneous: bool = False

    def to_price(self, x):
        return np.exp(as_points(x, self.d) + self.log_origin)

    def to_log(self, S):
        return np.log(as_points(S, self.d)) - self.log_origin


def to_log_model(m: MarketModel, log_origin=None) -> LogModel:
    """Transform price-space coefficients into log-price coefficients.

    The drift is ``beta^i = rho - 1/2 * sum_j sigma_ij^2``.
    """
    d = m.d
    origin = np.zeros(d) if log_origin is None else np.broadcast_to(
        np.asarray(log_origin, dtype=float), (d,)
    ).copy()

    def price(x):
        return np.exp(as_points(x, d) + origin)

    def sigma(t, x):
        return m.vol(t, price(x))

    def rho(t, x):
        return m.rate(t, price(x))

    def beta(t, x):
        S = price(x)
        r = m.rate(t, S)
        s = m.vol(t, S)
        return r[:, None] - 0.5 * np.sum(s * s, axis=2)

    return LogModel(
        d=d,
        sigma=sigma,
        beta=beta,
        rho=rho,
        T=m.T,
        log_origin=origin,
        time_homogeneous=m.time_homogeneous,
    )


@dataclass(frozen=True)
class PayoffSpec:
    """Payoff in price space and in log coordinates.

    ``sup_g`` and ``lip_g`` are declared constants; :func:`check_payoff`
    spot-checks them but cannot prove them.
    """

    d: int
    g_price: Callable
    g_log: Callable
    sup_g: float
    lip_g: float
    description: dict = field(default_factory=dict, compare=False)


def _log_payoff(g_price, d, origin):
    def g_log(x):
        return g_price(np.exp(as_points(x, d) + origin))

    return g_log


def put_payoff(K_strike, log_origin=0.0) -> PayoffSpec:
    """One-asset put ``max(K_strike - S, 0)``."""
    K = float(K_strike)
    if not K > 0:
        raise ValueError("K_strike must be positive")
    origin = np.array([float(log_origin)])

    def g_price(S):
        S = as_points(S, 1)
        return np.maximum(K - S[:, 0], 0.0)

    return PayoffSpec(
        d=1,
        g_price=g_price,
        g_log=_log_payoff(g_price, 1, origin),
        sup_g=K,
        lip_g=K,
        description={"type": "put", "K_strike": K},
    )


def basket_put_payoff(K_strike, weights, log_origin=None) -> PayoffSpec:
    """Basket put ``max(K - sum_i w_i S_i, 0)`` with nonnegative weights."""
    K = float(K_strike)
    w = np.asarray(weights, dtype=float)
    if not K > 0:
        raise ValueError("K_strike must be positive")
    if w.ndim != 1 or np.any(w < 0):
        raise ValueError("weights must be a nonnegative vector")
    d = w.shape[0]
    origin = np.zeros(d) if log_origin is None else np.broadcast_to(
        np.asarray(log_origin, dtype=float), (d,)
    ).copy()

    def g_price(S):
        return np.maximum(K - as_points(S, d) @ w, 0.0)

    # d/dx_i of sum_j w_j e^{x_j} is bounded by K on the support of the payoff
    return PayoffSpec(
        d=d,
        g_price=g_price,
        g_log=_log_payoff(g_price, d, origin),
        sup_g=K,
        lip_g=K,
        description={"type": "basket_put", "K_strike": K, "weights": w.tolist()},
    )


def table_payoff(S_points, values, log_origin=0.0) -> PayoffSpec:
    """One-asset payoff interpolated linearly from a table, flat outside it."""
    S_points = np.asarray(S_points, dtype=float)
    values = np.asarray(values, dtype=float)
    if S_points.ndim != 1 or S_points.shape != values.shape or len(S_points) < 2:
        raise ValueError("payoff table needs matching 1-D price and value arrays")
    if np.any(S_points <= 0) or np.any(np.diff(S_points) <= 0):
        raise ValueError("payoff table prices must be positive and increasing")
    origin = np.array([float(log_origin)])

    def g_price(S):
        return np.interp(as_points(S, 1)[:, 0], S_points, values)

    # Lipschitz constant in log space: |dg/dx| = S |dg/dS|, maximised on the table
    slopes = np.abs(np.diff(values) / np.diff(S_points))
    lip = float(np.max(slopes * S_points[1:])) if len(slopes) else 0.0
    return PayoffSpec(
        d=1,
        g_price=g_price,
        g_log=_log_payoff(g_price, 1, origin),
        sup_g=float(np.max(np.abs(values))),
        lip_g=lip,
        description={
            "type": "custom-table",
            "S": S_points.tolist(),
            "values": values.tolist(),
        },
    )


def cutoff_ramp(x, R1):
    """Multiplicative ramp: 1 on ``B_{R1}``, 0 outside ``B_{R1+1}``, linear between."""
    r = np.linalg.norm(np.atleast_2d(x), axis=-1)
    return np.clip(R1 + 1.0 - r, 0.0, 1.0)


@dataclass(frozen=True)
class CutoffPayoff:
    """Payoff cut off outside a ball: ``g`` on ``B_{R1}``, zero beyond ``B_{R1+1}``."""

    base: PayoffSpec
    R1: float

    def __post_init__(self):
        if not self.R1 > 0:
            raise ValueError("R1 must be positive")

    @property
    def d(self):
        return self.base.d

    def value(self, x):
        pts = as_points(x, self.base.d)
        return self.base.g_log(pts) * cutoff_ramp(pts, self.R1)


def eval_cutoff(c: CutoffPayoff, x) -> float:
    return float(c.value(np.asarray(x, dtype=float).reshape(1, c.d))[0])


def check_market(m: MarketModel, n_samples=1000, seed=0, log_radius=5.0):
    """Spot-check the declared bounds on random ``(t, S)`` samples.

    Returns a dict with the worst observed rate, volatility norm and
    whether both stay inside ``[0, K_bound]``.
    """
    rng = np.random.default_rng(seed)
    worst_rate = 0.0
    worst_min_rate = np.inf
    worst_vol = 0.0
    for t in rng.uniform(0.0, m.T, size=8):
        S = np.exp(rng.uniform(-log_radius, log_radius, size=(n_samples // 8 + 1, m.d)))
        r = m.rate(t, S)
        v = np.linalg.norm(m.vol(t, S), axis=(1, 2))
        worst_rate = max(worst_rate, float(r.max()))
        worst_min_rate = min(worst_min_rate, float(r.min()))
        worst_vol = max(worst_vol, float(v.max()))
    ok = worst_min_rate >= 0 and worst_rate <= m.K_bound and worst_vol <= m.K_bound
    return {
        "ok": bool(ok),
        "max_rate": worst_rate,
        "min_rate": worst_min_rate,
        "max_vol_norm": worst_vol,
        "K_bound": m.K_bound,
    }


def check_payoff(p: PayoffSpec, n_samples=1000, seed=0, log_radius=5.0):
    """Spot-check ``sup_g`` and ``lip_g`` on random log-space samples and pairs."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-log_radius, log_radius, size=(n_samples, p.d))
    y = x + rng.normal(scale=0.1, size=x.shape)
    gx = p.g_log(x)
    gy = p.g_log(y)
    dist = np.linalg.norm(x - y, axis=1)
    ratio = np.abs(gx - gy) / np.where(dist > 0, dist, np.inf)
    return {
        "ok": bool(np.max(np.abs(gx)) <= p.sup_g and np.max(ratio) <= p.lip_g * (1 + 1e-12)),
        "max_abs": float(np.max(np.abs(gx))),
        "max_lipschitz_ratio": float(np.max(ratio)),
    }
