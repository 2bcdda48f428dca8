"""Refinement and localisation studies, exit-probability tables, reports.

A :class:`Problem` bundles a market model, a payoff and the reference
price around which log coordinates are centred.  Studies run the solver on
a family of configurations and collect their results into report objects
that serialise to JSON (full metadata) or CSV (one row per run).

Solves inside a study are independent and may run on a thread pool
(``jobs > 1``); results are always assembled in submission order, so
reports do not depend on the job count.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources

import numpy as np

from . import __version__
from .discrete_ops import assemble_level, check_monotone, delta_time, second_dir
from .errors import AmerputError, ConfigError, ReportIOError, StudyAborted
from .model import CutoffPayoff, LogModel, MarketModel, PayoffSpec, as_points, to_log_model
from .oracles import (
    ExitBoundParams,
    bm_two_sided_exit_probability,
    brute_force_discrete,
    crr_american_put,
    exit_bound,
    exit_condition_constant,
    mc_exit_probability,
)
from .solver import SolveConfig, make_lattice, solve, solve_on_lattice
from .stencil import build_1d, build_diag_dominant, validate_decomposition

__all__ = [
    "Problem",
    "ConvergenceRow",
    "ConvergenceReport",
    "LocalisationRow",
    "RadiusCutRow",
    "LocalisationReport",
    "ExitProbRow",
    "ExitProbReport",
    "convergence_study",
    "localisation_study",
    "exitprob_study",
    "emit_report",
    "read_report",
    "report_schema",
    "validate_report",
    "run_validation",
    "random_market_1d",
    "random_market_2d",
    "random_payoff_1d",
    "random_instance",
]

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# problems


@dataclass(frozen=True)
class Problem:
    """Market, payoff and the log-coordinate origin ``ln S_ref``."""

    market: MarketModel
    payoff: PayoffSpec
    log_origin: tuple = (0.0,)

    def __post_init__(self):
        if self.market.d != self.payoff.d:
            raise ConfigError("payoff", f"payoff dimension {self.payoff.d} != model dimension {self.market.d}")
        if len(self.log_origin) != self.market.d:
            raise ConfigError("model.S_ref", f"needs {self.market.d} components")

    @property
    def d(self):
        return self.market.d

    def log_model(self) -> LogModel:
        return to_log_model(self.market, np.asarray(self.log_origin, dtype=float))

    def decomposition(self, log_model=None, R=3.0, seed=0):
        """``build_1d`` for one asset, the axis-plus-diagonal stencil otherwise.

        In the multi-asset case diagonal dominance is spot-checked at random
        points of ``[0, T] x B_R`` before solving.
        """
        lm = log_model or self.log_model()
        if lm.d == 1:
            return build_1d(lm)
        rng = np.random.default_rng(seed)
        pts = []
        for t in np.linspace(0.0, lm.T, 5):
            x = rng.uniform(-R, R, size=(64, lm.d))
            x = x[np.linalg.norm(x, axis=1) < R]
            pts.extend((float(t), xi) for xi in x)
        pts.append((0.0, np.zeros(lm.d)))
        return build_diag_dominant(lm, pts)

    def cutoff(self, R1) -> CutoffPayoff:
        return CutoffPayoff(self.payoff, R1)

    def describe(self):
        return {
            "d": self.d,
            "T": self.market.T,
            "K_bound": self.market.K_bound,
            "market": self.market.description,
            "payoff": self.payoff.description,
            "log_origin": [float(v) for v in self.log_origin],
        }

    def crr_parameters(self):
        """``(r, sigma, K)`` when the problem is a constant-coefficient 1-D put, else ``None``."""
        m, p = self.market.description, self.payoff.description
        if self.d != 1 or m.get("kind") != "constant" or p.get("type") != "put":
            return None
        return float(m["rate"]), float(np.asarray(m["vol"]).reshape(-1)[0]), float(p["K_strike"])


def _map(fn, items, jobs):
    """Apply ``fn`` to ``items`` in order; returns ``(results, error)``.

    Stops at the first failure in submission order and returns the results
    before it together with the exception.
    """
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        out = []
        for it in items:
            try:
                out.append(fn(it))
            except AmerputError as exc:
                return out, exc
        return out, None
    out = []
    with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
        futures = [pool.submit(fn, it) for it in items]
        for fut in futures:
            try:
                out.append(fut.result())
            except AmerputError as exc:
                for other in futures:
                    other.cancel()
                return out, exc
    return out, None


def _fit_line(x, y):
    """Least-squares ``y = c + s x``; returns ``(s, c, r_squared)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.vstack([np.ones_like(x), x]).T
    (c, s), *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (c + s * x)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else None
    return float(s), float(c), (None if r2 is None else float(r2))


def _ball_points(d, h, radius, x0=None):
    """Lattice points ``x0 + h i`` strictly inside ``B_radius``, lexicographic."""
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    m = int(math.ceil(radius / h)) + 1
    idx = np.array(list(itertools.product(range(-m, m + 1), repeat=d)), dtype=float)
    pts = x0 + h * idx
    keep = np.linalg.norm(pts, axis=1) < radius - 1e-9 * max(h, 1.0)
    return pts[keep]


# ---------------------------------------------------------------------------
# report types


class _Report:
    KIND = ""
    ROW_TYPE = None

    def to_dict(self):
        out = {"schema_version": SCHEMA_VERSION, "kind": self.KIND}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("rows", "r1_rows"):
                v = [asdict(r) for r in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data):
        if data.get("kind") != cls.KIND:
            raise ValueError(f"expected a {cls.KIND} report, got {data.get('kind')!r}")
        kwargs = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            v = data[f.name]
            if f.name == "rows":
                v = [cls.ROW_TYPE(**r) for r in v]
            elif f.name == "r1_rows":
                v = [RadiusCutRow(**r) for r in v]
            kwargs[f.name] = v
        return cls(**kwargs)


@dataclass
class ConvergenceRow:
    level: int
    tau: float
    h: float
    error: float
    n_nodes: int


@dataclass
class ConvergenceReport(_Report):
    """Errors against a reference under ``(tau0 4^-i, h0 2^-i)`` refinement.

    ``slope_h`` and ``slope_tau`` are least-squares slopes of log error vs
    log h and log tau; ``None`` when fewer than two errors are positive.
    """

    KIND = "convergence"
    ROW_TYPE = ConvergenceRow

    rows: list = field(default_factory=list)
    slope_h: float = None
    slope_tau: float = None
    slope_note: str = ""
    reference: dict = field(default_factory=dict)
    query_points: list = field(default_factory=list)
    problem: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = None
    tool_version: str = __version__
    complete: bool = True

    @property
    def errors(self):
        return [r.error for r in self.rows]


@dataclass
class LocalisationRow:
    R: float
    sup_diff: float


@dataclass
class RadiusCutRow:
    R1: float
    sup_diff: float


@dataclass
class LocalisationReport(_Report):
    """Sup-differences on ``B_R2`` against the largest-``R`` run.

    ``gamma_hat`` is the slope of log-difference vs ``R1 - R`` over the rows
    whose difference exceeds ``fit_floor``; ``None`` (with ``r_squared``)
    when fewer than two rows qualify.
    """

    KIND = "localisation"
    ROW_TYPE = LocalisationRow

    R1: float = 0.0
    R2: float = 0.0
    reference_R: float = 0.0
    rows: list = field(default_factory=list)
    r1_rows: list = field(default_factory=list)
    fit_floor: float = 0.0
    n_fit_points: int = 0
    gamma_hat: float = None
    intercept: float = None
    r_squared: float = None
    monotone_in_R: bool = True
    problem: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = None
    tool_version: str = __version__
    complete: bool = True


@dataclass
class ExitProbRow:
    R: float
    estimate: float
    stderr: float
    bound: float
    bound_ok: bool
    series: float = None
    series_z: float = None


@dataclass
class ExitProbReport(_Report):
    """Monte Carlo exit probabilities from ``B_R`` next to the exponential bound."""

    KIND = "exitprob"
    ROW_TYPE = ExitProbRow

    rows: list = field(default_factory=list)
    x0: list = field(default_factory=list)
    T: float = 0.0
    n_paths: int = 0
    n_steps: int = 0
    K_bound: float = 0.0
    mu: float = 0.0
    problem: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = None
    tool_version: str = __version__
    complete: bool = True


_REPORT_TYPES = {c.KIND: c for c in (ConvergenceReport, LocalisationReport, ExitProbReport)}


# ---------------------------------------------------------------------------
# studies


def convergence_study(
    problem: Problem,
    config: SolveConfig,
    n_levels,
    R2,
    tau0=None,
    h0=None,
    reference="auto",
    crr_steps=10_000,
    jobs=1,
):
    """Solve at ``(tau0 4^-i, h0 2^-i)``, ``i = 0..n_levels-1``, and measure errors.

    Errors are the max over the coarsest-lattice points inside ``B_R2``
    (present in every refinement) of ``|w_i(t0, x) - ref(x)|``.  With
    ``reference="auto"`` a constant-coefficient 1-D put is compared with
    the CRR tree (``crr_steps`` steps); any other problem with a solve one
    level finer than the study ("self", i.e. self-convergence).

    Raises :class:`StudyAborted` carrying the partial report if a solve fails.
    """
    if int(n_levels) < 3:
        raise ConfigError("levels", f"need at least 3 refinement levels, got {n_levels}")
    if not 0 < R2 < config.R1:
        raise ConfigError("R2", f"R2={R2} must lie in (0, R1={config.R1})")
    n_levels = int(n_levels)
    tau0 = config.tau if tau0 is None else float(tau0)
    h0 = config.h if h0 is None else float(h0)
    lm = problem.log_model()
    dec = problem.decomposition(lm, config.R)
    x_base = np.zeros(problem.d) if config.x0 is None else np.asarray(config.x0, dtype=float)
    query = _ball_points(problem.d, h0, R2, x_base)

    crr = problem.crr_parameters()
    if reference == "auto":
        reference = "crr" if crr is not None else "self"
    if reference == "crr" and crr is None:
        raise ConfigError("reference", "the CRR reference needs a constant-coefficient one-asset put")
    if reference not in ("crr", "self"):
        raise ConfigError("reference", f"unknown reference {reference!r}")

    configs = [replace(config, tau=tau0 * 4.0**-i, h=h0 * 2.0**-i) for i in range(n_levels)]
    report = ConvergenceReport(
        query_points=query.tolist(),
        problem=problem.describe(),
        config=config.to_dict(),
        complete=False,
    )

    def run(cfg):
        sol = solve(lm, dec, problem.cutoff(cfg.R1), cfg)
        vals = np.array([sol.value_at(q) for q in query])
        return vals, sol.lattice.n_nodes

    if reference == "crr":
        r, sigma, K = crr
        maturity = lm.T - config.t0
        S = np.exp(query[:, 0] + lm.log_origin[0])
        ref_vals = np.array([crr_american_put(s, K, r, sigma, maturity, crr_steps) for s in S])
        report.reference = {
            "kind": "crr",
            "steps": int(crr_steps),
            "description": "Cox-Ross-Rubinstein American put at the query points",
        }
        runs, err = _map(run, configs, jobs)
    else:
        finest = replace(config, tau=tau0 * 4.0**-n_levels, h=h0 * 2.0**-n_levels)
        runs, err = _map(run, configs + [finest], jobs)
        if err is None:
            ref_vals = runs.pop()[0]
        report.reference = {
            "kind": "self",
            "tau": finest.tau,
            "h": finest.h,
            "description": "finest-grid solution of the same scheme (self-convergence)",
        }

    if err is None:
        for i, (vals, n_nodes) in enumerate(runs):
            cfg = configs[i]
            error = float(np.max(np.abs(vals - ref_vals), initial=0.0))
            report.rows.append(ConvergenceRow(i, cfg.tau, cfg.h, error, int(n_nodes)))
    else:
        # the reference is not available for a self-study that stopped early;
        # keep the finished levels with unknown error
        if reference == "crr":
            for i, (vals, n_nodes) in enumerate(runs):
                error = float(np.max(np.abs(vals - ref_vals), initial=0.0))
                report.rows.append(ConvergenceRow(i, configs[i].tau, configs[i].h, error, int(n_nodes)))
        raise StudyAborted(report, err)

    errs = np.array(report.errors)
    pos = errs > 0
    if np.count_nonzero(pos) >= 2:
        hs = np.array([r.h for r in report.rows])[pos]
        taus = np.array([r.tau for r in report.rows])[pos]
        report.slope_h = _fit_line(np.log(hs), np.log(errs[pos]))[0]
        report.slope_tau = _fit_line(np.log(taus), np.log(errs[pos]))[0]
        report.slope_note = f"fitted on {int(np.count_nonzero(pos))} positive errors"
    else:
        report.slope_note = "undefined: fewer than two positive errors"
    report.complete = True
    return report


def _values_on_ball(sol, points_idx):
    pos = sol.lattice.lookup(points_idx)
    if np.any(pos < 0):
        raise ValueError("comparison nodes missing from a lattice")
    return sol.values[:, pos]


def localisation_study(problem: Problem, config: SolveConfig, R_grid, R1, R2, R1_grid=(), jobs=1):
    """Measure how the solution on ``B_R2`` depends on the domain radius ``R``.

    Every run uses the ``(tau, h)`` of ``config`` and cut-off radius ``R1``;
    differences are sup norms over all time levels and all lattice points
    in ``B_R2`` against the largest ``R``.  ``R1_grid`` optionally probes
    the cut-off: at the largest ``R`` each ``R1'`` is compared with the
    uncut payoff.
    """
    R_grid = [float(r) for r in R_grid]
    if len(R_grid) < 4:
        raise ConfigError("R_grid", f"need at least 4 radii, got {len(R_grid)}")
    if not 0 < R2 < R1:
        raise ConfigError("R2", f"need 0 < R2={R2} < R1={R1}")
    if min(R_grid) <= R1:
        raise ConfigError("R_grid", f"every R must exceed R1={R1}")
    for r1 in R1_grid:
        if not R2 < r1 < max(R_grid):
            raise ConfigError("R1_grid", f"R1={r1} must lie in (R2, max R)")
    R_sorted = sorted(R_grid)
    R_max = R_sorted[-1]
    lm = problem.log_model()
    dec = problem.decomposition(lm, R_max)
    x_base = np.zeros(problem.d) if config.x0 is None else np.asarray(config.x0, dtype=float)
    ball = _ball_points(problem.d, config.h, R2, x_base)
    ball_idx = np.rint((ball - x_base) / config.h).astype(np.int64)
    floor = 10.0 * config.lcp_tol

    report = LocalisationReport(
        R1=float(R1),
        R2=float(R2),
        reference_R=R_max,
        fit_floor=floor,
        problem=problem.describe(),
        config=replace(config, R1=float(R1)).to_dict(),
        complete=False,
    )

    def run(R):
        cfg = replace(config, R=R, R1=float(R1))
        return _values_on_ball(solve(lm, dec, problem.cutoff(R1), cfg), ball_idx)

    runs, err = _map(run, R_sorted, jobs)
    if err is not None:
        raise StudyAborted(report, err)
    ref = runs[-1]
    for R, vals in zip(R_sorted, runs):
        report.rows.append(LocalisationRow(R, float(np.max(np.abs(vals - ref), initial=0.0))))

    body = [r for r in report.rows if r.R < R_max]
    diffs = [r.sup_diff for r in body]
    report.monotone_in_R = all(a >= b for a, b in zip(diffs, diffs[1:]))
    fit = [r for r in body if r.sup_diff > floor]
    report.n_fit_points = len(fit)
    if len(fit) >= 2 and len({r.R for r in fit}) >= 2:
        s, c, r2 = _fit_line([R1 - r.R for r in fit], [math.log(r.sup_diff) for r in fit])
        report.gamma_hat, report.intercept, report.r_squared = s, c, r2

    if R1_grid:
        cfg_max = replace(config, R=R_max, R1=float(R1))
        lattice = make_lattice(lm, dec, cfg_max)
        # a cut-off radius beyond the enumerated ball leaves g untouched
        uncut = CutoffPayoff(problem.payoff, 2.0 * lattice.enum_radius + 1.0)

        def run_cut(r1):
            # the lattice is fixed, so only the payoff changes between runs
            payoff = uncut if r1 is None else problem.cutoff(r1)
            return _values_on_ball(solve_on_lattice(lm, dec, payoff, cfg_max, lattice), ball_idx)

        cut_runs, err = _map(run_cut, [None] + sorted(float(v) for v in R1_grid), jobs)
        if err is not None:
            raise StudyAborted(report, err)
        base = cut_runs[0]
        for r1, vals in zip(sorted(float(v) for v in R1_grid), cut_runs[1:]):
            report.r1_rows.append(RadiusCutRow(r1, float(np.max(np.abs(vals - base), initial=0.0))))
    report.complete = True
    return report


def _driftless_bm_sigma(log_model: LogModel, n=64, seed=0):
    """Volatility of a 1-D driftless constant-volatility model, else ``None``."""
    if log_model.d != 1:
        return None
    rng = np.random.default_rng(seed)
    X = rng.uniform(-5.0, 5.0, size=(n, 1))
    sigmas, betas = [], []
    for t in np.linspace(0.0, log_model.T, 4):
        sigmas.append(log_model.sigma(t, X)[:, 0, 0])
        betas.append(log_model.beta(t, X)[:, 0])
    s = np.concatenate(sigmas)
    b = np.concatenate(betas)
    if np.max(np.abs(b)) > 1e-14 or np.ptp(s) > 1e-14 * max(1.0, abs(s[0])):
        return None
    return abs(float(s[0]))


def exitprob_study(problem: Problem, R_grid, n_paths, n_steps, seed, x0=None, K_bound=None):
    """Exit probability ``P(sup |x_t| >= R)`` by Monte Carlo next to ``exit_bound``.

    ``K_bound`` defaults to the sampled growth constant of the log
    dynamics.  For driftless constant-volatility 1-D models the exact
    two-sided exit probability is added together with the z-score of the
    estimate against it.
    """
    lm = problem.log_model()
    x0 = np.zeros(lm.d) if x0 is None else as_points(x0, lm.d)[0]
    K = exit_condition_constant(lm) if K_bound is None else float(K_bound)
    params = ExitBoundParams(K, lm.T)
    sigma = _driftless_bm_sigma(lm)
    report = ExitProbReport(
        x0=[float(v) for v in x0],
        T=lm.T,
        n_paths=int(n_paths),
        n_steps=int(n_steps),
        K_bound=K,
        mu=params.mu,
        problem=problem.describe(),
        seed=int(seed),
    )
    for R in R_grid:
        R = float(R)
        p, se = mc_exit_probability(lm, x0, R, lm.T, n_paths, n_steps, seed)
        bound = exit_bound(params, R, x0)
        series = z = None
        if sigma is not None and np.all(x0 == 0):
            series = bm_two_sided_exit_probability(R, lm.T, sigma)
            z = (p - series) / se if se > 0 else None
        report.rows.append(ExitProbRow(R, p, se, bound, bool(p <= bound + 3 * se), series, z))
    return report


# ---------------------------------------------------------------------------
# serialisation


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_cell(text, typ):
    if text == "":
        return None
    if typ is bool or typ == "bool":
        return text == "true"
    if typ is int or typ == "int":
        return int(text)
    return float(text)


def report_schema():
    """The published JSON schema for reports."""
    text = resources.files("amerput").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def validate_report(data):
    """Validate a report dict against the published schema."""
    import jsonschema

    jsonschema.validate(data, report_schema())


def emit_report(report, path, fmt=None, final=True):
    """Write ``report`` as JSON or CSV (``fmt`` defaults from the file suffix).

    The file is written to ``path + ".partial"`` and renamed into place when
    ``final`` is true; with ``final=False`` it stays under the ``.partial``
    name.  Returns the path written.
    """
    path = os.fspath(path)
    fmt = fmt or ("csv" if path.endswith(".csv") else "json")
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    elif fmt == "csv":
        names = [f.name for f in fields(report.ROW_TYPE)]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(names)
        for row in report.rows:
            wr.writerow([_csv_cell(getattr(row, n)) for n in names])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    tmp = path + ".partial"
    try:
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        if final:
            os.replace(tmp, path)
            return path
    except OSError as exc:
        raise ReportIOError(path, exc) from exc
    return tmp


def read_report(path, fmt=None, kind=None):
    """Read a report written by :func:`emit_report`.

    JSON files give the full report object.  CSV files carry rows only, so
    ``kind`` must name the report type and a list of row objects is returned.
    """
    path = os.fspath(path)
    fmt = fmt or ("csv" if path.endswith(".csv") else "json")
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise ReportIOError(path, exc) from exc
    if fmt == "json":
        data = json.loads(text)
        return _REPORT_TYPES[data["kind"]].from_dict(data)
    if kind not in _REPORT_TYPES:
        raise ValueError(f"CSV reports need kind in {sorted(_REPORT_TYPES)}")
    row_type = _REPORT_TYPES[kind].ROW_TYPE
    types = {f.name: f.type for f in fields(row_type)}
    rd = csv.reader(io.StringIO(text))
    header = next(rd)
    return [row_type(**{n: _parse_cell(v, types[n]) for n, v in zip(header, line)}) for line in rd]


# ---------------------------------------------------------------------------
# random instances


def random_market_1d(rng, T=1.0, degenerate_prob=0.15):
    """Smooth random one-asset model with state and time dependent coefficients.

    ``rate = r0 + r1 sin(ln S + 3t)`` with ``0 <= r1 <= r0`` and
    ``vol = s0 (1 + c cos(2 ln S - t) / 2)``; with probability
    ``degenerate_prob`` the volatility vanishes identically.
    """
    r0 = rng.uniform(0.0, 0.1)
    r1 = rng.uniform(0.0, r0)
    s0 = 0.0 if rng.random() < degenerate_prob else rng.uniform(0.05, 0.6)
    c = rng.uniform(0.0, 1.0)

    def rate(t, S):
        x = np.log(as_points(S, 1)[:, 0])
        return r0 + r1 * np.sin(x + 3.0 * t)

    def vol(t, S):
        x = np.log(as_points(S, 1)[:, 0])
        return (s0 * (1.0 + 0.5 * c * np.cos(2.0 * x - t)))[:, None, None]

    return MarketModel(
        d=1,
        rate=rate,
        vol=vol,
        T=float(T),
        K_bound=max(r0 + r1, 1.5 * s0, 1e-12),
        time_homogeneous=False,
        description={"kind": "random_1d", "r0": r0, "r1": r1, "s0": s0, "c": c},
    )


def random_market_2d(rng, T=1.0):
    """Random two-asset model whose half diffusion matrix is diagonally dominant.

    ``A12 = c0 cos(x1 - x2 + t)`` and ``A_ii = |c0| (1 + u_i) + e_i`` keep
    strict dominance everywhere; ``sigma`` is the Cholesky factor of ``2A``.
    """
    c0 = rng.uniform(-0.05, 0.05)
    u = rng.uniform(0.0, 1.0, size=2)
    e = rng.uniform(0.002, 0.05, size=2)
    r0 = rng.uniform(0.0, 0.08)

    def half_cov(t, x):
        n = x.shape[0]
        A = np.empty((n, 2, 2))
        off = c0 * np.cos(x[:, 0] - x[:, 1] + t)
        A[:, 0, 1] = A[:, 1, 0] = off
        A[:, 0, 0] = abs(c0) * (1.0 + u[0]) + e[0]
        A[:, 1, 1] = abs(c0) * (1.0 + u[1]) + e[1]
        return A

    def rate(t, S):
        return np.full(as_points(S, 2).shape[0], r0)

    def vol(t, S):
        return np.linalg.cholesky(2.0 * half_cov(t, np.log(as_points(S, 2))))

    diag_max = float(np.max(abs(c0) * (1.0 + u) + e))
    return MarketModel(
        d=2,
        rate=rate,
        vol=vol,
        T=float(T),
        K_bound=max(r0, 2.0 * math.sqrt(2.0 * diag_max), 1e-12),
        time_homogeneous=False,
        description={"kind": "random_2d", "c0": c0, "u": u.tolist(), "e": e.tolist(), "r0": r0},
    )


def _log_table_payoff(knots, values, d=1):
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)

    def g_log(x):
        return np.interp(as_points(x, d)[:, 0], knots, values)

    def g_price(S):
        return g_log(np.log(as_points(S, d)))

    slopes = np.abs(np.diff(values) / np.diff(knots))
    return PayoffSpec(
        d=d,
        g_price=g_price,
        g_log=g_log,
        sup_g=float(np.max(np.abs(values))),
        lip_g=float(slopes.max(initial=0.0)),
        description={"type": "log-table", "knots": knots.tolist(), "values": values.tolist()},
    )


def random_payoff_1d(rng, n_knots=6, scale=1.0, span=3.0):
    """Nonnegative piecewise-linear payoff in log coordinates, flat beyond the knots."""
    knots = np.sort(rng.uniform(-span, span, size=n_knots))
    knots[0], knots[-1] = -span, span
    return _log_table_payoff(knots, scale * rng.uniform(0.0, 1.0, size=n_knots))


def add_payoffs(p: PayoffSpec, q: PayoffSpec) -> PayoffSpec:
    """Pointwise sum ``p + q``."""
    return PayoffSpec(
        d=p.d,
        g_price=lambda S: p.g_price(S) + q.g_price(S),
        g_log=lambda x: p.g_log(x) + q.g_log(x),
        sup_g=p.sup_g + q.sup_g,
        lip_g=p.lip_g + q.lip_g,
        description={"type": "sum", "terms": [p.description, q.description]},
    )


@dataclass(frozen=True)
class Instance:
    problem: Problem
    config: SolveConfig


def random_instance(rng, max_half_width=8, max_steps=9, payoff=None):
    """Small random 1-D instance: at most 19 spatial nodes and 10 time levels."""
    h = rng.uniform(0.1, 0.4)
    tau = rng.uniform(0.02, 0.2)
    steps = int(rng.integers(1, max_steps + 1))
    m = int(rng.integers(2, max_half_width + 1))
    R = (m + 0.5) * h
    R1 = rng.uniform(0.3, 0.9) * R
    market = random_market_1d(rng, T=tau * steps)
    payoff = payoff or random_payoff_1d(rng, span=R + 2 * h)
    return Instance(Problem(market, payoff), SolveConfig(tau=tau, h=h, R=R, R1=R1))


# ---------------------------------------------------------------------------
# validation


def _check(name, ok, **detail):
    return {"name": name, "ok": bool(ok), "detail": detail}


def _sample_points(rng, d, T, n=40, radius=3.0):
    return [(float(rng.uniform(0, T)), rng.uniform(-radius, radius, size=d)) for _ in range(n)]


def run_validation(small=True, seed=0):
    """Self-checks used by ``amerput validate``.

    Stencil reconstruction on random models, exactness of the discrete
    operators on polynomials, monotonicity of assembled operators, and
    agreement with the brute-force fixed point on small instances.
    Returns a list of ``{"name", "ok", "detail"}`` dicts.
    """
    rng = np.random.default_rng(seed)
    n_models = 5 if small else 25
    n_brute = 5 if small else 50
    checks = []

    worst = {"matrix_residual": 0.0, "drift_residual": 0.0, "min_coefficient": np.inf}
    for i in range(n_models):
        for market in (random_market_1d(rng), random_market_2d(rng)):
            lm = to_log_model(market)
            pts = _sample_points(rng, lm.d, lm.T)
            dec = build_1d(lm) if lm.d == 1 else build_diag_dominant(lm, pts)
            rep = validate_decomposition(dec, lm, pts)
            worst["matrix_residual"] = max(worst["matrix_residual"], rep["matrix_residual"])
            worst["drift_residual"] = max(worst["drift_residual"], rep["drift_residual"])
            worst["min_coefficient"] = min(worst["min_coefficient"], rep["min_coefficient"])
    checks.append(
        _check(
            "stencil_reconstruction",
            worst["matrix_residual"] <= 1e-12 and worst["drift_residual"] <= 1e-12 and worst["min_coefficient"] >= 0,
            **worst,
        )
    )

    # dyadic steps, points and integer coefficients keep every floating-point
    # operation exact, so any error is a defect of the operator
    err2 = 0.0
    errt = 0.0
    for _ in range(n_models):
        c = rng.integers(-4, 5, size=3).astype(float)
        Q = rng.integers(-4, 5, size=(2, 2)).astype(float)
        Q = Q + Q.T
        ell = rng.integers(-2, 3, size=2)
        h = 2.0 ** -int(rng.integers(1, 6))
        x = rng.integers(-16, 17, size=2) / 8.0

        def quad(t, y, Q=Q, c=c):
            y = np.asarray(y, dtype=float)
            return c[0] + c[1:] @ y + 0.5 * y @ Q @ y

        err2 = max(err2, abs(second_dir(quad, 0.0, x, ell, h) - float(ell @ Q @ ell)))
        a, b = rng.integers(-4, 5, size=2).astype(float)
        tau = 2.0 ** -int(rng.integers(1, 5))
        T = 1.0
        t = T - tau * int(rng.integers(0, 3)) - tau / 2 if rng.random() < 0.5 else T - tau / 4

        def aff(s, y, a=a, b=b):
            return a + b * s

        errt = max(errt, abs(delta_time(aff, t, x, tau, T) - b * min(tau, T - t) / tau))
    checks.append(_check("operator_exactness", err2 <= 1e-13 and errt <= 1e-13, second_dir=err2, delta_time=errt))

    mono_ok = True
    worst_off = np.inf
    for _ in range(n_models):
        for market in (random_market_1d(rng), random_market_2d(rng)):
            prob = Problem(market, random_payoff_1d(rng) if market.d == 1 else _basket_like(market.d), (0.0,) * market.d)
            lm = prob.log_model()
            dec = prob.decomposition(lm, R=1.0)
            cfg = SolveConfig(tau=0.1, h=0.25, R=1.0, R1=0.5)
            lat = make_lattice(lm, dec, cfg)
            for j in range(lat.n_levels - 1):
                st = check_monotone(assemble_level(dec, lm.rho, lat, j))
                mono_ok &= st["ok"]
                worst_off = min(worst_off, st["min_offdiag"])
    checks.append(_check("monotone_operators", mono_ok, min_offdiag=worst_off))

    worst_gap = 0.0
    for _ in range(n_brute):
        inst = random_instance(rng)
        lm = inst.problem.log_model()
        dec = inst.problem.decomposition(lm)
        sol = solve(lm, dec, inst.problem.cutoff(inst.config.R1), inst.config)
        ref = brute_force_discrete(lm, dec, inst.problem.cutoff(inst.config.R1), sol.lattice)
        worst_gap = max(worst_gap, float(np.max(np.abs(sol.values - ref))))
    checks.append(_check("brute_force_agreement", worst_gap <= 1e-9, max_abs_diff=worst_gap, instances=n_brute))
    return checks


def _basket_like(d):
    def g_log(x):
        return np.maximum(1.0 - np.mean(np.exp(as_points(x, d)), axis=1), 0.0)

    return PayoffSpec(
        d=d,
        g_price=lambda S: np.maximum(1.0 - np.mean(as_points(S, d), axis=1), 0.0),
        g_log=g_log,
        sup_g=1.0,
        lip_g=1.0,
        description={"type": "basket_put", "K_strike": 1.0, "weights": [1.0 / d] * d},
    )
