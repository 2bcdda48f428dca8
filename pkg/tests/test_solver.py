import csv
import json
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from amerput.errors import ConfigError, InnerSolveDiverged
from amerput.harness import add_payoffs, random_instance, random_payoff_1d
from amerput.model import CutoffPayoff
from amerput.discrete_ops import assemble_level
from amerput.solver import (
    SolveConfig,
    check_comparison,
    level_equation,
    obstacle_violation,
    residual,
    solve,
    solve_level_lcp,
)
from helpers import brute_force_for, const_log_model, constant_payoff, solve_instance


@pytest.fixture(scope="module")
def instances():
    rng = np.random.default_rng(7)
    return [random_instance(rng) for _ in range(12)]


class TestSolveConfig:
    def test_R_must_exceed_R1(self):
        with pytest.raises(ConfigError) as exc:
            SolveConfig(tau=0.1, h=0.1, R=1.0, R1=1.0)
        assert exc.value.field == "R"

    @pytest.mark.parametrize("field,value", [("tau", 0.0), ("h", -1.0), ("lcp_tol", 0.0), ("omega", 2.0), ("method", "newton")])
    def test_rejects(self, field, value):
        kw = dict(tau=0.1, h=0.1, R=2.0, R1=1.0)
        kw[field] = value
        with pytest.raises(ConfigError):
            SolveConfig(**kw)


class TestSolveBasics:
    def test_zero_payoff_gives_zero(self, instances):
        sol = solve_instance(instances[0], payoff=constant_payoff(0.0))
        assert np.all(sol.values == 0.0)
        assert residual(sol) == 0.0

    def test_terminal_and_boundary(self, instances):
        sol = solve_instance(instances[1])
        lat = sol.lattice
        cut = sol.payoff.value(lat.coords)
        np.testing.assert_array_equal(sol.values[-1], cut)
        np.testing.assert_array_equal(sol.values[:, lat.boundary], np.tile(cut[lat.boundary], (lat.n_levels, 1)))

    def test_reproducible(self, instances):
        a = solve_instance(instances[2])
        b = solve_instance(instances[2])
        assert np.array_equal(a.values, b.values)

    def test_residual_and_feasibility(self, instances):
        for inst in instances:
            for method in ("policy-iteration", "projected-sor"):
                sol = solve_instance(inst, method=method)
                assert residual(sol) <= 1e-10
                assert obstacle_violation(sol) <= 1e-10

    def test_complementarity_per_node(self, instances):
        sol = solve_instance(instances[3])
        for j in range(sol.lattice.n_levels - 1):
            pde, obst = level_equation(sol, j)
            slack = -obst
            assert np.all(np.minimum(slack, -pde) >= -1e-10)
            assert np.all(np.minimum(slack, -pde) <= 1e-10)

    def test_config_payoff_radius_mismatch(self, instances):
        inst = instances[0]
        lm = inst.problem.log_model()
        with pytest.raises(ConfigError):
            solve(lm, inst.problem.decomposition(lm), CutoffPayoff(inst.problem.payoff, inst.config.R1 * 0.5), inst.config)


class TestResidual:
    def test_zero_data(self, instances):
        sol = solve_instance(instances[0], payoff=constant_payoff(0.0))
        assert residual(sol) == 0.0

    def test_unit_perturbation(self, instances):
        inst = next(i for i in instances if i.problem.market.T / i.config.tau > 2.5)
        sol = solve_instance(inst)
        lat = sol.lattice
        tau = lat.tau
        j = 1
        # a continuation node at level j - 1, so its equation is pde = 0
        cont = np.flatnonzero(~sol.stop[j - 1, lat.interior])
        k = int(cont[len(cont) // 2]) if len(cont) else len(lat.interior) // 2
        node = lat.interior[k]
        pde0, obst0 = level_equation(sol, j - 1)
        sol.values[j, node] += 1.0
        try:
            pde1, obst1 = level_equation(sol, j - 1)
            # only the time difference at the same node sees the change
            assert pde1[k] == pytest.approx(pde0[k] + 1.0 / tau, rel=1e-12)
            expected = max(pde0[k] + 1.0 / tau, obst0[k])
            assert residual(sol) >= expected - 1e-9
            assert residual(sol) >= 1.0 / tau - 1.0
        finally:
            sol.values[j, node] -= 1.0


class TestLevelLCP:
    def _setup(self, n=15):
        from amerput.lattice import LatticeSpec, build_lattice
        from amerput.stencil import build_1d

        lm = const_log_model(0.3, 0.05, rho=0.04)
        dec = build_1d(lm)
        lat = build_lattice(LatticeSpec(0.0, (0.0,), 0.1, 0.1, 1.0, dec.directions), (n // 2 + 0.5) * 0.1)
        op = assemble_level(dec, lm.rho, lat, 0)
        return op, lat

    def test_european_single_solve(self):
        op, lat = self._setup()
        config = SolveConfig(tau=0.1, h=0.1, R=1.0, R1=0.5)
        f = np.linspace(1.0, 2.0, lat.n_interior)
        sol = solve_level_lcp(op, f, np.full(lat.n_interior, -np.inf), config)
        assert sol.iterations == 1
        B = sp.identity(lat.n_interior) / config.tau - op.matrix
        assert np.max(np.abs(B @ sol.values - f)) <= config.lcp_tol
        assert not sol.stop.any()

    def test_obstacle_everywhere(self):
        op, lat = self._setup()
        config = SolveConfig(tau=0.1, h=0.1, R=1.0, R1=0.5)
        f = np.linspace(1.0, 2.0, lat.n_interior)
        free = solve_level_lcp(op, f, np.full(lat.n_interior, -np.inf), config).values
        for method in ("policy-iteration", "projected-sor"):
            sol = solve_level_lcp(op, f, free + 1.0, replace(config, method=method))
            np.testing.assert_allclose(sol.values, free + 1.0, rtol=0, atol=1e-12)
            assert sol.stop.all()

    def test_divergence_reported(self):
        op, lat = self._setup()
        config = SolveConfig(tau=0.1, h=0.1, R=1.0, R1=0.5, method="projected-sor", max_inner_iters=1)
        f = np.linspace(1.0, 2.0, lat.n_interior)
        with pytest.raises(InnerSolveDiverged):
            solve_level_lcp(op, f, np.zeros(lat.n_interior), config)


class TestOracleAgreement:
    def test_brute_force(self, instances):
        for inst in instances[:6]:
            sol = solve_instance(inst)
            ref = brute_force_for(sol)
            assert np.max(np.abs(sol.values - ref)) <= 1e-9

    def test_brute_force_european(self, instances):
        sol = solve_instance(instances[5], european_mode=True)
        assert np.max(np.abs(sol.values - brute_force_for(sol))) <= 1e-9

    def test_methods_agree(self, instances):
        for inst in instances:
            pi = solve_instance(inst)
            psor = solve_instance(inst, method="projected-sor")
            assert np.max(np.abs(pi.values - psor.values)) <= 10 * inst.config.lcp_tol


class TestComparison:
    def test_identical(self, instances):
        sol = solve_instance(instances[0])
        ok, worst = check_comparison(sol, sol)
        assert ok and worst == 0.0

    def test_shift_by_one(self, instances):
        for inst in instances[:6]:
            s1 = solve_instance(inst)
            s2 = solve_instance(inst, payoff=add_payoffs(inst.problem.payoff, constant_payoff(1.0)))
            assert check_comparison(s1, s2)[0]
            assert np.max(s2.values - s1.values) <= 1.0 + 1e-9

    def test_random_bump(self, rng, instances):
        for inst in instances:
            bump = random_payoff_1d(rng, span=inst.config.R + 1.0)
            s1 = solve_instance(inst)
            s2 = solve_instance(inst, payoff=add_payoffs(inst.problem.payoff, bump))
            ok, worst = check_comparison(s1, s2)
            assert ok, worst

    def test_different_lattices_rejected(self, instances):
        with pytest.raises(ValueError):
            check_comparison(solve_instance(instances[0]), solve_instance(instances[1]))


class TestBlackScholes:
    def test_price_near_reference(self, bs_american, crr_ref):
        assert abs(bs_american.value_at([0.0]) - crr_ref) <= 0.05

    def test_bounds(self, bs_american):
        w = bs_american.values
        assert w.min() >= -1e-12
        assert w.max() <= bs_american.bound + 1e-12
        assert bs_american.bound == pytest.approx(100.0 * (1 - np.exp(-3.0)), rel=1e-3)

    def test_american_dominates_european(self, bs_american, bs_european):
        assert np.all(bs_american.values >= bs_european.values - 1e-10)
        assert bs_european.values.min() >= -1e-12
        assert obstacle_violation(bs_european) == -np.inf

    def test_export(self, tmp_path, bs):
        config = SolveConfig(tau=0.1, h=0.1, R=1.0, R1=0.5)
        from conftest import solve_problem

        sol = solve_problem(bs, config)
        sol.write_csv(tmp_path / "w.csv")
        rows = list(csv.DictReader(open(tmp_path / "w.csv")))
        assert len(rows) == sol.lattice.n_nodes
        assert set(r["region"] for r in rows) <= {"stop", "continue", "boundary"}
        assert float(rows[0]["w"]) == sol.values[0, 0]
        sol.write_json(tmp_path / "w.json", query_points=[[0.0], [0.05]])
        data = json.load(open(tmp_path / "w.json"))
        assert data["query"][0]["value"] == sol.value_at([0.0])
        assert data["query"][1]["S"][0] == pytest.approx(100 * np.exp(0.05))
        assert data["residual"] <= 1e-10
