"""Backward induction for the localised discrete obstacle problem.

On every interior node of the cylinder ``Q_R`` the solution satisfies
``max[delta_tau w + L_h w, g - w] = 0``; on the remaining nodes (outside
``B_R`` or at ``t = T``) it equals the cut-off payoff.  Levels are solved
from ``T`` backwards; each level is a linear complementarity problem for
the M-matrix ``I / tau - L_h``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from . import kernels
from .discrete_ops import (
    LevelOperator,
    apply_Lh_level,
    assemble_level,
    delta_time_level,
    level_coefficients,
)
from .errors import ConfigError, InnerSolveDiverged
from .lattice import DEFAULT_MAX_NODES, Lattice, LatticeSpec, build_lattice
from .model import CutoffPayoff, LogModel
from .stencil import StencilDecomposition

__all__ = [
    "SolveConfig",
    "DiscreteSolution",
    "LevelSolution",
    "solve",
    "solve_on_lattice",
    "solve_level_lcp",
    "residual",
    "obstacle_violation",
    "check_comparison",
]

METHODS = ("policy-iteration", "projected-sor")


@dataclass(frozen=True)
class SolveConfig:
    tau: float
    h: float
    R: float
    R1: float
    method: str = "policy-iteration"
    lcp_tol: float = 1e-10
    max_inner_iters: int = 200
    european_mode: bool = False
    omega: float = 1.2
    x0: Optional[tuple] = None
    t0: float = 0.0
    max_nodes: int = DEFAULT_MAX_NODES

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau", "must be positive")
        if not self.h > 0:
            raise ConfigError("h", "must be positive")
        if not self.R1 > 0:
            raise ConfigError("R1", "must be positive")
        if not self.R > self.R1:
            raise ConfigError("R", f"R={self.R} must exceed R1={self.R1}")
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}")
        if not self.lcp_tol > 0:
            raise ConfigError("lcp_tol", "must be positive")
        if int(self.max_inner_iters) < 1:
            raise ConfigError("max_inner_iters", "must be at least 1")
        if not 0 < self.omega < 2:
            raise ConfigError("omega", "must lie in (0, 2)")

    def to_dict(self):
        out = asdict(self)
        if out["x0"] is not None:
            out["x0"] = [float(v) for v in out["x0"]]
        return out


@dataclass
class LevelSolution:
    values: np.ndarray
    stop: np.ndarray
    iterations: int
    residual: float


@dataclass
class DiscreteSolution:
    """Grid function on every enumerated node plus solve metadata.

    ``values`` and ``stop`` have shape ``(n_levels, n_spatial)``; ``stop``
    is only meaningful on interior nodes.  ``bound`` is the a priori bound
    ``sup |w| <= bound`` (no running reward, so it is the sup of the data).
    """

    lattice: Lattice
    values: np.ndarray
    stop: np.ndarray
    obstacle: np.ndarray
    boundary: np.ndarray
    iterations: np.ndarray
    level_residuals: np.ndarray
    config: SolveConfig
    log_model: LogModel = field(repr=False)
    dec: StencilDecomposition = field(repr=False)
    payoff: CutoffPayoff = field(repr=False)
    bound: float = 0.0

    @property
    def max_level_residual(self):
        return float(self.level_residuals.max(initial=0.0))

    def level(self, t):
        j = int(np.argmin(np.abs(self.lattice.times - t)))
        return j

    def value_at(self, x, t=None):
        """Multilinear interpolation of the level nearest to ``t`` (default ``t0``)."""
        lat = self.lattice
        j = 0 if t is None else self.level(t)
        x = np.asarray(x, dtype=float).reshape(lat.d)
        rel = (x - lat.x0) / lat.h
        base = np.floor(rel + 1e-12).astype(np.int64)
        frac = np.clip(rel - base, 0.0, 1.0)
        total = 0.0
        for corner in range(2 ** lat.d):
            bits = np.array([(corner >> m) & 1 for m in range(lat.d)])
            weight = float(np.prod(np.where(bits == 1, frac, 1.0 - frac)))
            if weight == 0.0:
                continue
            pos = lat.lookup(base + bits)
            if pos < 0:
                raise ValueError(f"query point {tuple(x)} is outside the lattice")
            total += weight * self.values[j, pos]
        return float(total)

    def summary(self, query_points=None):
        lat = self.lattice
        q = [np.zeros(lat.d)] if query_points is None else [np.asarray(p, dtype=float) for p in query_points]
        prices = []
        for p in q:
            prices.append(
                {
                    "x": [float(v) for v in p],
                    "S": [float(v) for v in np.exp(p + self.log_model.log_origin)],
                    "value": self.value_at(p),
                }
            )
        return {
            "query": prices,
            "residual": residual(self),
            "solver_residual": self.max_level_residual,
            "inner_iterations": {
                "total": int(self.iterations.sum()),
                "max": int(self.iterations.max(initial=0)),
            },
            "lattice": lat.stats(),
            "config": self.config.to_dict(),
            "bound": self.bound,
        }

    def write_csv(self, path):
        lat = self.lattice
        interior = lat.domain.spatial_interior
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t"] + [f"x{m + 1}" for m in range(lat.d)] + ["w", "region"])
            last = lat.n_levels - 1
            for j, t in enumerate(lat.times):
                for n in range(lat.n_spatial):
                    if j == last or not interior[n]:
                        region = "boundary"
                    else:
                        region = "stop" if self.stop[j, n] else "continue"
                    wr.writerow(
                        [repr(float(t))] + [repr(float(v)) for v in lat.coords[n]]
                        + [repr(float(self.values[j, n])), region]
                    )

    def write_json(self, path, query_points=None):
        with open(path, "w") as fh:
            json.dump(self.summary(query_points), fh, indent=2)


def _tridiagonal_bands(B):
    """``(lower, diag, upper)`` of a tridiagonal CSR matrix."""
    n = B.shape[0]
    dia = B.todia()
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    for off, row in zip(dia.offsets, dia.data):
        if off == 0:
            diag[:] = row
        elif off == -1:
            lower[1:] = row[: n - 1]
        elif off == 1:
            upper[: n - 1] = row[1:]
        elif np.any(row != 0):
            raise ValueError("matrix is not tridiagonal")
    return lower, diag, upper


class _PolicySystem:
    """Linear solves for a fixed stop/continue policy.

    Stop rows are replaced by identity rows; continuation rows keep ``B``.
    Tridiagonal matrices go through the Thomas kernel, other 1-D banded
    matrices through LAPACK banded solves, everything else through a
    sparse direct factorisation.
    """

    def __init__(self, B):
        self.B = B.tocsr()
        n = B.shape[0]
        self.n = n
        coo = B.tocoo()
        band = int(np.max(np.abs(coo.col - coo.row), initial=0))
        self.kind = "tridiagonal" if band <= 1 else ("banded" if band <= 8 else "sparse")
        self.band = band
        if self.kind == "tridiagonal":
            self.bands = _tridiagonal_bands(self.B)
        elif self.kind == "banded":
            ab = np.zeros((2 * band + 1, n))
            ab[band + coo.row - coo.col, coo.col] += coo.data
            self.ab = ab

    def solve(self, stop, rhs_cont, rhs_stop):
        rhs = np.where(stop, rhs_stop, rhs_cont)
        cont = ~stop
        if self.kind == "tridiagonal":
            lower, diag, upper = self.bands
            return kernels.thomas(
                np.where(cont, lower, 0.0), np.where(cont, diag, 1.0), np.where(cont, upper, 0.0), rhs
            )
        if self.kind == "banded":
            # entry ab[r, c] belongs to row c + r - band; zero the stop rows
            ab = self.ab.copy()
            rows = np.arange(self.n)[None, :] + (np.arange(2 * self.band + 1)[:, None] - self.band)
            valid = (rows >= 0) & (rows < self.n)
            mask = np.ones_like(ab)
            mask[valid] = np.where(cont[rows[valid]], 1.0, 0.0)
            ab *= mask
            ab[self.band, stop] = 1.0
            return solve_banded((self.band, self.band), ab, rhs)
        D = sp.diags(cont.astype(float))
        P = (D @ self.B + sp.diags(stop.astype(float))).tocsc()
        return spsolve(P, rhs)


def solve_level_lcp(A: LevelOperator, forcing, obstacle, config: SolveConfig, w_init=None, policy_init=None, system=None):
    """Solve ``max[forcing - (I/tau - A) w, obstacle - w] = 0`` on one level.

    ``forcing`` carries ``w_next / tau`` plus the boundary contribution.  An
    obstacle of ``-inf`` gives the unconstrained linear solve.  Policy
    iteration alternates stop/continue policies (ties go to stop) with
    exact linear solves; projected SOR sweeps rows in index order.
    """
    f = np.asarray(forcing, dtype=float)
    g = np.asarray(obstacle, dtype=float)
    n = len(f)
    B = system.B if system is not None else (sp.identity(n, format="csr") / config.tau - A.matrix).tocsr()
    if config.method == "projected-sor":
        start = f * config.tau if w_init is None else w_init
        # sweep to a tighter target so that the residual recomputed from
        # the stored grid (different rounding) still meets lcp_tol
        w, sweeps, res = kernels.psor(
            B, f, g, start, config.omega, 0.25 * config.lcp_tol, config.max_inner_iters
        )
        if res > config.lcp_tol:
            raise InnerSolveDiverged(-1, res, sweeps)
        p = f - B @ w
        return LevelSolution(w, (g - w) >= p, sweeps, res)

    system = system or _PolicySystem(B)
    stop = np.zeros(n, dtype=bool) if policy_init is None else np.asarray(policy_init, dtype=bool).copy()
    stop &= np.isfinite(g)
    g_rhs = np.where(np.isfinite(g), g, 0.0)
    it = 0
    seen = set()
    best = None
    while True:
        it += 1
        w = system.solve(stop, f, g_rhs)
        p = f - B @ w
        q = g - w
        res = float(np.max(np.abs(np.maximum(p, q)), initial=0.0))
        new_stop = q >= p
        if np.array_equal(new_stop, stop):
            break
        # Where p and q are both round-off (w and g ~ 0 far out of the money)
        # the policy can wander or cycle without changing w.  Once the
        # residual is within tolerance and no longer improving, or a policy
        # repeats, the best iterate seen so far is returned.
        stagnant = best is not None and res >= best[2]
        if best is None or res < best[2]:
            best = (w, stop, res)
        seen.add(np.packbits(stop).tobytes())
        revisit = np.packbits(new_stop).tobytes() in seen
        if (stagnant and best[2] <= config.lcp_tol) or revisit or it >= config.max_inner_iters:
            w, stop, res = best
            if res <= config.lcp_tol:
                break
            raise InnerSolveDiverged(-1, res, it)
        stop = new_stop
    return LevelSolution(w, stop, it, res)


def solve_on_lattice(log_model: LogModel, dec: StencilDecomposition, payoff: CutoffPayoff, config: SolveConfig, lattice: Lattice, obstacle_fn=None):
    """Backward induction on an already built lattice.

    ``obstacle_fn(X)`` overrides the interior obstacle (default: the
    uncut payoff ``g``); boundary and terminal values always come from
    the cut-off payoff.
    """
    lat = lattice
    J = lat.n_levels - 1
    coords = lat.coords
    boundary_vals = payoff.value(coords)
    g_full = payoff.base.g_log(coords) if obstacle_fn is None else obstacle_fn(coords)
    g_int = np.asarray(g_full, dtype=float)[lat.interior]
    obstacle = np.full(lat.n_interior, -np.inf) if config.european_mode else g_int

    values = np.empty((J + 1, lat.n_spatial))
    stop = np.zeros((J + 1, lat.n_spatial), dtype=bool)
    values[J] = boundary_vals
    iters = np.zeros(J, dtype=np.int64)
    level_res = np.zeros(J)
    rho = log_model.rho

    reuse = dec.time_homogeneous and log_model.time_homogeneous
    cached_op = None
    cached_system = None
    policy = None
    for j in range(J - 1, -1, -1):
        values[j] = boundary_vals
        if cached_op is None or not reuse:
            coeffs = level_coefficients(dec, rho, lat, j)
            op = assemble_level(dec, rho, lat, j, coeffs=coeffs)
            B = (sp.identity(lat.n_interior, format="csr") / config.tau - op.matrix).tocsr()
            system = _PolicySystem(B) if config.method == "policy-iteration" else _SimpleSystem(B)
            cached_op, cached_system = op, system
        op, system = cached_op, cached_system
        forcing = values[j + 1, lat.interior] / config.tau + op.boundary_matrix @ values[j]
        try:
            sol = solve_level_lcp(
                op, forcing, obstacle, config,
                w_init=values[j + 1, lat.interior], policy_init=policy, system=system,
            )
        except InnerSolveDiverged as exc:
            raise InnerSolveDiverged(j, exc.residual, exc.iterations) from None
        values[j, lat.interior] = sol.values
        stop[j, lat.interior] = sol.stop
        iters[j] = sol.iterations
        level_res[j] = sol.residual
        policy = sol.stop

    bound = float(max(np.max(np.abs(g_int), initial=0.0), np.max(np.abs(boundary_vals), initial=0.0)))
    return DiscreteSolution(
        lattice=lat,
        values=values,
        stop=stop,
        obstacle=np.asarray(g_full, dtype=float),
        boundary=boundary_vals,
        iterations=iters,
        level_residuals=level_res,
        config=config,
        log_model=log_model,
        dec=dec,
        payoff=payoff,
        bound=bound,
    )


class _SimpleSystem:
    def __init__(self, B):
        self.B = B


def make_lattice(log_model: LogModel, dec: StencilDecomposition, config: SolveConfig) -> Lattice:
    x0 = tuple(np.zeros(log_model.d)) if config.x0 is None else tuple(float(v) for v in config.x0)
    if len(x0) != log_model.d:
        raise ConfigError("x0", f"needs {log_model.d} components")
    if config.tau > log_model.T:
        raise ConfigError("tau", "must not exceed T")
    spec = LatticeSpec(
        t0=config.t0, x0=x0, tau=config.tau, h=config.h, T=log_model.T, directions=dec.directions
    )
    return build_lattice(spec, config.R, max_nodes=config.max_nodes)


def solve(log_model: LogModel, dec: StencilDecomposition, payoff: CutoffPayoff, config: SolveConfig) -> DiscreteSolution:
    """Solve the localised obstacle problem on ``Q_R`` with cut-off payoff ``g_{R1}``."""
    if not math.isclose(payoff.R1, config.R1):
        raise ConfigError("R1", f"payoff cut-off radius {payoff.R1} differs from config R1={config.R1}")
    lattice = make_lattice(log_model, dec, config)
    return solve_on_lattice(log_model, dec, payoff, config, lattice)


def level_equation(sol: DiscreteSolution, j):
    """``(delta_tau w + L_h w, g - w)`` at the interior nodes of level ``j``.

    Recomputed from the stored grid values through the neighbour table,
    independently of the matrices used during the solve.
    """
    lat = sol.lattice
    pde = delta_time_level(lat, sol.values, j) + apply_Lh_level(
        sol.dec, sol.log_model.rho, lat, j, sol.values[j]
    )
    if sol.config.european_mode:
        obst = np.full(lat.n_interior, -np.inf)
    else:
        obst = sol.obstacle[lat.interior] - sol.values[j, lat.interior]
    return pde, obst


def residual(sol: DiscreteSolution) -> float:
    """``max |max[delta_tau w + L_h w, g - w]|`` over the interior nodes."""
    worst = 0.0
    for j in range(sol.lattice.n_levels - 1):
        pde, obst = level_equation(sol, j)
        if len(pde):
            worst = max(worst, float(np.max(np.abs(np.maximum(pde, obst)))))
    return worst


def obstacle_violation(sol: DiscreteSolution) -> float:
    """``max (g - w)`` over interior nodes; at most ``lcp_tol`` for a valid solve.

    European solves have no obstacle and return ``-inf``.
    """
    lat = sol.lattice
    if sol.config.european_mode or lat.n_levels < 2 or lat.n_interior == 0:
        return -np.inf
    w = sol.values[:-1, lat.interior]
    g = sol.obstacle[lat.interior]
    return float(np.max(g[None, :] - w))


def check_comparison(sol1: DiscreteSolution, sol2: DiscreteSolution, tol=1e-9):
    """Check ``w1 <= w2 + tol`` on every node of a shared lattice.

    Returns ``(holds, worst_violation)`` where the violation is
    ``max(w1 - w2)`` (nonpositive when the ordering is strict).
    """
    if sol1.values.shape != sol2.values.shape or not np.allclose(sol1.lattice.coords, sol2.lattice.coords):
        raise ValueError("solutions live on different lattices")
    worst = float(np.max(sol1.values - sol2.values, initial=-np.inf))
    return worst <= tol, worst
