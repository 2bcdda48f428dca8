"""Small model builders shared by the test modules."""

import numpy as np

from amerput.model import LogModel, as_points


def const_log_model(sigma, beta, rho=0.0, T=1.0):
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    d = beta.shape[0]

    def sig(t, x):
        return np.broadcast_to(sigma, (as_points(x, d).shape[0], d, d)).copy()

    def bet(t, x):
        return np.broadcast_to(beta, (as_points(x, d).shape[0], d)).copy()

    def rh(t, x):
        return np.full(as_points(x, d).shape[0], float(rho))

    return LogModel(d=d, sigma=sig, beta=bet, rho=rh, T=T, log_origin=np.zeros(d), time_homogeneous=True)


def solve_instance(inst, payoff=None, **overrides):
    """Solve a harness ``Instance``; ``payoff`` replaces the instance payoff."""
    from dataclasses import replace

    from amerput.model import CutoffPayoff
    from amerput.solver import solve

    config = replace(inst.config, **overrides) if overrides else inst.config
    lm = inst.problem.log_model()
    dec = inst.problem.decomposition(lm)
    base = payoff or inst.problem.payoff
    return solve(lm, dec, CutoffPayoff(base, config.R1), config)


def brute_force_for(sol):
    """Global fixed-point oracle on the lattice of ``sol``."""
    from amerput.oracles import brute_force_discrete

    return brute_force_discrete(
        sol.log_model, sol.dec, sol.payoff, sol.lattice, european=sol.config.european_mode
    )


def constant_payoff(value, span=10.0):
    from amerput.harness import _log_table_payoff

    return _log_table_payoff([-span, span], [value, value])
