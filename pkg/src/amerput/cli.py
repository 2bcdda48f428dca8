"""Command-line front end: ``amerput {price,converge,localize,exitprob,validate}``.

Configuration comes from a JSON file (``--config``) checked against the
shipped schema; individual flags override file values.  Without a config
file the one-asset Black-Scholes put (S = K = 100, r = 0.05, sigma = 0.2,
T = 1) is used.

Exit statuses: 0 success, 1 configuration error, 2 solver failure,
3 validation failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from .errors import (
    AmerputError,
    ConfigError,
    DiagonalDominanceViolated,
    StudyAborted,
)
from .harness import (
    Problem,
    convergence_study,
    emit_report,
    exitprob_study,
    localisation_study,
    run_validation,
)
from .model import MarketModel, basket_put_payoff, put_payoff, table_payoff
from .solver import SolveConfig, obstacle_violation, residual, solve

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_VALIDATION = 3

JOBS_ENV = "AMERPUT_JOBS"

DEFAULT_CONFIG = {
    "schema_version": 1,
    "model": {"kind": "constant", "d": 1, "T": 1.0, "rate": 0.05, "vol": 0.2, "S_ref": 100.0},
    "payoff": {"type": "put", "K_strike": 100.0},
    "scheme": {
        "tau": 1e-3,
        "h": 5e-3,
        "R": 3.0,
        "R1": 2.5,
        "R2": 1.0,
        "method": "policy-iteration",
        "lcp_tol": 1e-10,
        "european_mode": False,
    },
    "study": {"seed": 0},
}


def config_schema():
    text = resources.files("amerput").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def load_config(path):
    """Read a config file; returns the parsed dict (not yet validated)."""
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path} is not valid JSON: {exc}") from exc


def validate_config(cfg):
    """Schema check followed by the cross-field checks; raises :class:`ConfigError`."""
    try:
        jsonschema.validate(cfg, config_schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "config"
        raise ConfigError(where, exc.message) from None
    sch = cfg["scheme"]
    if not sch["h"] > 0:
        raise ConfigError("scheme.h", "must be positive")
    if not sch["tau"] > 0:
        raise ConfigError("scheme.tau", "must be positive")
    if not sch["tau"] < cfg["model"]["T"]:
        raise ConfigError("scheme.tau", f"tau={sch['tau']} must be smaller than T={cfg['model']['T']}")
    if not sch["R2"] > 0:
        raise ConfigError("scheme.R2", "must be positive")
    if not sch["R1"] > sch["R2"]:
        raise ConfigError("scheme.R1", f"need R1={sch['R1']} > R2={sch['R2']}")
    if not sch["R"] > sch["R1"]:
        raise ConfigError("scheme.R", f"need R={sch['R']} > R1={sch['R1']}")


def _deep_merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


_SCHEME_FLAGS = {
    "tau": "tau",
    "h": "h",
    "R": "R",
    "R1": "R1",
    "R2": "R2",
    "method": "method",
    "lcp_tol": "lcp_tol",
    "max_inner_iters": "max_inner_iters",
    "omega": "omega",
}
_STUDY_FLAGS = {
    "seed": "seed",
    "levels": "levels",
    "tau0": "tau0",
    "h0": "h0",
    "reference": "reference",
    "crr_steps": "crr_steps",
    "R_grid": "R_grid",
    "R1_grid": "R1_grid",
    "n_paths": "n_paths",
    "n_steps": "n_steps",
    "K_exit": "K_exit",
    "query_S": "query_S",
}


def resolve_config(args):
    """File config (or the built-in default) with command-line overrides applied."""
    if args.config:
        cfg = load_config(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("config", "top level must be a JSON object")
        cfg.setdefault("study", {})
    else:
        cfg = copy.deepcopy(DEFAULT_CONFIG)
    for attr, key in _SCHEME_FLAGS.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg.setdefault("scheme", {})[key] = v
    if getattr(args, "european", None):
        cfg.setdefault("scheme", {})["european_mode"] = True
    for attr, key in _STUDY_FLAGS.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg["study"][key] = v
    cfg["study"]["kind"] = args.command
    validate_config(cfg)
    return cfg


def build_problem(cfg):
    m = cfg["model"]
    d = int(m["d"])
    try:
        if m["kind"] == "constant":
            market = MarketModel.constant(d, m["rate"], m["vol"], m["T"], m.get("K_bound"))
        else:
            market = MarketModel.time_table(d, m["times"], m["rates"], m["vols"], m["T"], m.get("K_bound"))
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None
    S_ref = np.broadcast_to(np.asarray(m.get("S_ref", 1.0), dtype=float), (d,))
    origin = np.log(S_ref)
    p = cfg["payoff"]
    try:
        if p["type"] == "put":
            if d != 1:
                raise ConfigError("payoff.type", "a single-asset put needs model.d == 1")
            payoff = put_payoff(p["K_strike"], origin[0])
        elif p["type"] == "basket_put":
            if len(p["weights"]) != d:
                raise ConfigError("payoff.weights", f"needs {d} entries")
            payoff = basket_put_payoff(p["K_strike"], p["weights"], origin)
        else:
            if d != 1:
                raise ConfigError("payoff.type", "custom-table payoffs need model.d == 1")
            payoff = table_payoff(p["S"], p["values"], origin[0])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("payoff", str(exc)) from None
    return Problem(market, payoff, tuple(float(v) for v in origin))


def build_solve_config(cfg):
    s = cfg["scheme"]
    keys = ("method", "lcp_tol", "european_mode", "max_inner_iters", "omega")
    try:
        return SolveConfig(
            tau=float(s["tau"]), h=float(s["h"]), R=float(s["R"]), R1=float(s["R1"]),
            **{k: s[k] for k in keys if k in s},
        )
    except ConfigError as exc:
        raise ConfigError(f"scheme.{exc.field}", str(exc).split(": ", 1)[-1]) from None


def _emit(report, args, partial=False):
    written = []
    for path, fmt in ((args.out, "json"), (args.csv, "csv")):
        if path:
            written.append(emit_report(report, path, fmt, final=not partial))
    return written


def cmd_price(args, cfg):
    problem = build_problem(cfg)
    config = build_solve_config(cfg)
    lm = problem.log_model()
    sol = solve(lm, problem.decomposition(lm, config.R), problem.cutoff(config.R1), config)
    query = cfg["study"].get("query_S")
    if query is None:
        pts = [np.zeros(problem.d)]
    else:
        pts = [lm.to_log(np.asarray(q, dtype=float).reshape(-1))[0] for q in query]
    out = sol.summary(pts)
    out["residual"] = residual(sol)
    out["obstacle_violation"] = obstacle_violation(sol)
    if math.isinf(out["obstacle_violation"]):
        out["obstacle_violation"] = None
    out["value"] = out["query"][0]["value"]
    out["tool_version"] = __version__
    text = json.dumps(out, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    if args.csv:
        sol.write_csv(args.csv)
    return EXIT_OK


def cmd_converge(args, cfg):
    problem = build_problem(cfg)
    config = build_solve_config(cfg)
    st = cfg["study"]
    try:
        report = convergence_study(
            problem,
            config,
            st.get("levels", 4),
            cfg["scheme"]["R2"],
            tau0=st.get("tau0"),
            h0=st.get("h0"),
            reference=st.get("reference", "auto"),
            crr_steps=st.get("crr_steps", 10_000),
            jobs=args.jobs,
        )
    except StudyAborted as exc:
        for p in _emit(exc.report, args, partial=True):
            print(f"partial report written to {p}", file=sys.stderr)
        raise
    _emit(report, args)
    print(json.dumps({"errors": report.errors, "slope_h": report.slope_h, "slope_tau": report.slope_tau, "note": report.slope_note}))
    return EXIT_OK


def cmd_localize(args, cfg):
    problem = build_problem(cfg)
    config = build_solve_config(cfg)
    st = cfg["study"]
    sch = cfg["scheme"]
    R_grid = st.get("R_grid", [sch["R"]])
    try:
        report = localisation_study(
            problem, config, R_grid, sch["R1"], sch["R2"], R1_grid=st.get("R1_grid", ()), jobs=args.jobs
        )
    except StudyAborted as exc:
        for p in _emit(exc.report, args, partial=True):
            print(f"partial report written to {p}", file=sys.stderr)
        raise
    _emit(report, args)
    print(
        json.dumps(
            {
                "rows": [[r.R, r.sup_diff] for r in report.rows],
                "gamma_hat": report.gamma_hat,
                "r_squared": report.r_squared,
                "n_fit_points": report.n_fit_points,
            }
        )
    )
    return EXIT_OK


def cmd_exitprob(args, cfg):
    problem = build_problem(cfg)
    st = cfg["study"]
    report = exitprob_study(
        problem,
        st.get("R_grid", [1.0, 2.0, 3.0]),
        st.get("n_paths", 100_000),
        st.get("n_steps", 1000),
        st.get("seed", 0),
        x0=st.get("x0"),
        K_bound=st.get("K_exit"),
    )
    _emit(report, args)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args, cfg):
    small = bool(args.small or cfg["study"].get("small", False))
    checks = run_validation(small=small, seed=cfg["study"].get("seed", 0))
    ok = all(c["ok"] for c in checks)
    print(json.dumps({"ok": ok, "checks": checks}, indent=2, default=float))
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {
    "price": cmd_price,
    "converge": cmd_converge,
    "localize": cmd_localize,
    "exitprob": cmd_exitprob,
    "validate": cmd_validate,
}


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_jobs():
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--tau", type=float)
    common.add_argument("--h", type=float)
    common.add_argument("--R", type=float)
    common.add_argument("--R1", type=float)
    common.add_argument("--R2", type=float)
    common.add_argument("--method", choices=["policy-iteration", "projected-sor"])
    common.add_argument("--lcp-tol", dest="lcp_tol", type=float)
    common.add_argument("--max-inner-iters", dest="max_inner_iters", type=int)
    common.add_argument("--omega", type=float)
    common.add_argument("--european", action="store_true", default=None, help="drop the early-exercise obstacle")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=_default_jobs(), help=f"worker threads (default ${JOBS_ENV} or 1)")
    common.add_argument("--out", help="JSON output file")
    common.add_argument("--csv", help="CSV output file")

    parser = argparse.ArgumentParser(prog="amerput", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"amerput {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", parents=[common], help="solve once and print the value at t=0")
    p.add_argument("--query-S", dest="query_S", type=_floats, action="append", help="price point(s), comma-separated per asset")

    p = sub.add_parser("converge", parents=[common], help="refinement study")
    p.add_argument("--levels", type=int)
    p.add_argument("--tau0", type=float)
    p.add_argument("--h0", type=float)
    p.add_argument("--reference", choices=["auto", "crr", "self"])
    p.add_argument("--crr-steps", dest="crr_steps", type=int)

    p = sub.add_parser("localize", parents=[common], help="domain-radius study")
    p.add_argument("--R-grid", dest="R_grid", type=_floats)
    p.add_argument("--R1-grid", dest="R1_grid", type=_floats)

    p = sub.add_parser("exitprob", parents=[common], help="Monte Carlo exit probabilities vs the exponential bound")
    p.add_argument("--R-grid", dest="R_grid", type=_floats)
    p.add_argument("--paths", dest="n_paths", type=int)
    p.add_argument("--steps", dest="n_steps", type=int)
    p.add_argument("--K-exit", dest="K_exit", type=float)

    p = sub.add_parser("validate", parents=[common], help="self-checks of stencils, operators and solver")
    p.add_argument("--small", action="store_true")
    return parser


def run(argv=None):
    """Parse ``argv`` and run one subcommand; returns the exit status."""
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DiagonalDominanceViolated as exc:
        print(f"config error: model.vol: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AmerputError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
