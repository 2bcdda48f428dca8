import math

import numpy as np
import pytest
from hypothesis import settings

from amerput.harness import Problem
from amerput.model import MarketModel, put_payoff
from amerput.oracles import crr_american_put
from amerput.solver import SolveConfig, solve

settings.register_profile("amerput", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("amerput")

LN100 = math.log(100.0)


def bs_problem():
    """One-asset put S = K = 100, r = 0.05, sigma = 0.2, T = 1, centred at ln 100."""
    return Problem(MarketModel.constant(1, 0.05, 0.2, 1.0), put_payoff(100.0, LN100), (LN100,))


@pytest.fixture(scope="session")
def bs():
    return bs_problem()


@pytest.fixture(scope="session")
def bs_config():
    return SolveConfig(tau=1e-3, h=5e-3, R=3.0, R1=2.5)


def solve_problem(problem, config):
    lm = problem.log_model()
    return solve(lm, problem.decomposition(lm, config.R), problem.cutoff(config.R1), config)


@pytest.fixture(scope="session")
def bs_american(bs, bs_config):
    return solve_problem(bs, bs_config)


@pytest.fixture(scope="session")
def bs_european(bs, bs_config):
    from dataclasses import replace

    return solve_problem(bs, replace(bs_config, european_mode=True))


@pytest.fixture(scope="session")
def crr_ref():
    return crr_american_put(100.0, 100.0, 0.05, 0.2, 1.0, 10_000)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def acceptance_line(number, ok, detail):
    """Print and record the one-line verdict of an acceptance criterion."""
    line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line, flush=True)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
