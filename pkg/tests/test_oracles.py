import math

import numpy as np
import pytest
from scipy import integrate, stats

from amerput.lattice import LatticeSpec, build_lattice
from amerput.model import CutoffPayoff, put_payoff
from amerput.oracles import (
    ExitBoundParams,
    bm_exit_probability_images,
    bm_two_sided_exit_probability,
    brute_force_discrete,
    bs_european_call,
    bs_european_put,
    crr_american_put,
    exit_bound,
    exit_condition_constant,
    mc_exit_probability,
)
from amerput.solver import SolveConfig, solve_on_lattice
from amerput.stencil import build_1d
from helpers import const_log_model, constant_payoff

BS = dict(S=100.0, K=100.0, r=0.05, sigma=0.2, T=1.0)


class TestBlackScholes:
    def test_parity(self):
        c = bs_european_call(**BS)
        p = bs_european_put(**BS)
        assert c - p == pytest.approx(100.0 - 100.0 * math.exp(-0.05), abs=1e-10)

    def test_quadrature(self):
        S, K, r, s, T = BS.values()
        mu = (r - 0.5 * s * s) * T
        vol = s * math.sqrt(T)
        z_star = (math.log(K / S) - mu) / vol

        def integrand(z):
            return (K - S * math.exp(mu + vol * z)) * stats.norm.pdf(z)

        val, _ = integrate.quad(integrand, -np.inf, z_star, epsabs=1e-13, epsrel=1e-13)
        assert bs_european_put(**BS) == pytest.approx(math.exp(-r * T) * val, abs=1e-8)

    def test_vanishing_volatility(self):
        for S in (80.0, 100.0, 120.0):
            assert bs_european_put(S, 100.0, 0.0, 1e-9, 1.0) == pytest.approx(max(100.0 - S, 0.0), abs=1e-6)

    @pytest.mark.parametrize("bad", [dict(S=0.0), dict(K=-1.0), dict(sigma=0.0), dict(T=0.0)])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            bs_european_put(**{**BS, **bad})


class TestCRR:
    def test_single_step(self):
        u, d = math.exp(0.2), math.exp(-0.2)
        p = (1 - d) / (u - d)
        expected = p * max(100 - 100 * u, 0) + (1 - p) * max(100 - 100 * d, 0)
        assert crr_american_put(100, 100, 0.0, 0.2, 1.0, 1) == pytest.approx(expected, rel=1e-14)

    def test_zero_rate_no_early_exercise(self):
        for n in (1, 7, 200):
            a = crr_american_put(100, 95, 0.0, 0.3, 0.5, n)
            e = crr_american_put(100, 95, 0.0, 0.3, 0.5, n, american=False)
            assert a == e

    def test_self_convergence(self, crr_ref):
        assert abs(crr_american_put(**BS, n=5000) - crr_ref) <= 0.005

    def test_dominates_european(self, crr_ref):
        assert crr_ref >= bs_european_put(**BS) - 1e-6
        for S in (80.0, 110.0):
            assert crr_american_put(S, 100, 0.05, 0.2, 1.0, 2000) >= bs_european_put(S, 100, 0.05, 0.2, 1.0) - 1e-6

    def test_rejects_steps(self):
        with pytest.raises(ValueError):
            crr_american_put(**BS, n=0)


class TestBruteForce:
    def test_zero_payoff(self):
        lm = const_log_model(0.3, 0.02, rho=0.01)
        dec = build_1d(lm)
        lat = build_lattice(LatticeSpec(0.0, (0.0,), 0.25, 0.2, 1.0, dec.directions), 0.9)
        w = brute_force_discrete(lm, dec, CutoffPayoff(constant_payoff(0.0), 0.5), lat)
        assert np.all(w == 0.0)

    def test_single_node_recursion(self):
        tau, h, rho = 0.2, 0.1, 0.05
        lm = const_log_model(0.3, 0.04, rho=rho)
        dec = build_1d(lm)
        lat = build_lattice(LatticeSpec(0.0, (0.0,), tau, h, 1.0, dec.directions), 0.05)
        assert lat.n_interior == 1
        payoff = CutoffPayoff(put_payoff(1.0, 0.0), 0.02)
        g0 = float(payoff.base.g_log(np.zeros((1, 1)))[0])
        cut = payoff.value(lat.coords)
        # hand-built scalar recursion: a = sigma^2 / 4 per direction,
        # neighbour weights 2a/h^2 + b/h with one-sided drift b
        a = 0.25 * 0.3**2
        beta = 0.04
        w_up = 2 * a / h**2 + max(beta, 0) / h
        w_dn = 2 * a / h**2 + max(-beta, 0) / h
        x_up = lat.lookup([1])
        x_dn = lat.lookup([-1])
        centre = lat.interior[0]
        w = cut[centre]
        expected = []
        for _ in range(lat.n_levels - 1):
            rhs = w / tau + w_up * cut[x_up] + w_dn * cut[x_dn]
            w = max(rhs / (1 / tau + w_up + w_dn + rho), g0)
            expected.append(w)
        expected = expected[::-1]
        grid = brute_force_discrete(lm, dec, payoff, lat, tol=1e-13)
        np.testing.assert_allclose(grid[:-1, centre], expected, rtol=0, atol=1e-11)
        sol = solve_on_lattice(lm, dec, payoff, SolveConfig(tau=tau, h=h, R=0.05, R1=0.02), lat)
        np.testing.assert_allclose(sol.values[:-1, centre], expected, rtol=0, atol=1e-12)

    def test_size_limit(self):
        lm = const_log_model(0.3, 0.0)
        dec = build_1d(lm)
        lat = build_lattice(LatticeSpec(0.0, (0.0,), 0.01, 0.01, 1.0, dec.directions), 1.0)
        with pytest.raises(ValueError):
            brute_force_discrete(lm, dec, CutoffPayoff(constant_payoff(0.0), 0.5), lat)


class TestExitBound:
    def test_constants(self):
        p = ExitBoundParams(0.5, 1.0)
        assert p.lambda_ == 1.0
        assert p.mu == pytest.approx(math.exp(-1) / 2)
        assert exit_bound(p, 10.0, [0.0]) == pytest.approx(6 * math.exp(-100 * p.mu), rel=1e-12)
        assert exit_bound(p, 10.0, [0.0]) == pytest.approx(6.2e-8, rel=0.05)

    def test_decreasing_and_limit(self):
        p = ExitBoundParams(0.3, 2.0)
        vals = [exit_bound(p, R, [0.4]) for R in np.linspace(1, 40, 50)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-10
        assert 0 < p.mu <= 0.5

    def test_origin_form(self):
        p = ExitBoundParams(1.0, 1.0)
        for R in (1.0, 4.0, 8.0):
            assert exit_bound(p, R, [0.0]) == min(1.0, 6 * math.exp(-p.mu * R * R))

    def test_rejects(self):
        with pytest.raises(ValueError):
            ExitBoundParams(0.0, 1.0)
        with pytest.raises(ValueError):
            exit_bound(ExitBoundParams(1.0, 1.0), 0.0, [0.0])

    def test_condition_constant_brownian(self):
        assert exit_condition_constant(const_log_model(1.0, 0.0)) == pytest.approx(1.0)


class TestMonteCarlo:
    def test_frozen_path(self):
        est, se = mc_exit_probability(const_log_model(0.0, 0.0), [0.3], 1.0, 1.0, 1000, 10, seed=1)
        assert est == 0.0 and se == 0.0

    def test_deterministic_drift(self):
        lm = const_log_model(np.zeros((2, 2)), [1.0, 0.0])
        est, _ = mc_exit_probability(lm, [0.0, 0.0], 0.5, 1.0, 500, 100, seed=1)
        assert est == 1.0

    def test_reproducible_and_seed_sensitive(self):
        lm = const_log_model(1.0, 0.0)
        a = mc_exit_probability(lm, [0.0], 1.5, 1.0, 3000, 50, seed=3)
        b = mc_exit_probability(lm, [0.0], 1.5, 1.0, 3000, 50, seed=3)
        c = mc_exit_probability(lm, [0.0], 1.5, 1.0, 3000, 50, seed=4)
        assert a == b and a != c

    def test_other_block_size_consistent(self):
        lm = const_log_model(1.0, 0.0)
        est, se = mc_exit_probability(lm, [0.0], 1.5, 1.0, 3000, 50, seed=3, block=1000)
        ref = bm_two_sided_exit_probability(1.5, 1.0)
        assert abs(est - ref) <= 0.05

    def test_biased_low_against_series(self):
        lm = const_log_model(1.0, 0.0)
        est, se = mc_exit_probability(lm, [0.0], 1.0, 1.0, 20_000, 200, seed=11)
        ref = bm_two_sided_exit_probability(1.0, 1.0)
        assert ref - 0.05 <= est <= ref + 3 * se


class TestSeries:
    @pytest.mark.parametrize("a,T", [(0.5, 1.0), (1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (2.0, 0.1)])
    def test_eigen_vs_images(self, a, T):
        assert bm_two_sided_exit_probability(a, T) == pytest.approx(bm_exit_probability_images(a, T), abs=1e-12)

    def test_known_value(self):
        # two-sided exit at level 2 by time 1 is about twice the one-sided tail
        p = bm_two_sided_exit_probability(2.0, 1.0)
        one_sided = 2 * stats.norm.sf(2.0)
        assert one_sided < p < 2 * one_sided
        assert p == pytest.approx(0.0910, abs=5e-4)

    def test_scaling(self):
        assert bm_two_sided_exit_probability(2.0, 1.0, sigma=2.0) == pytest.approx(
            bm_two_sided_exit_probability(1.0, 1.0), abs=1e-14
        )
