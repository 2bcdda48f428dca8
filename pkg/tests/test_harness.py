import json
import math
from dataclasses import replace

import numpy as np
import pytest

from amerput.errors import ConfigError, ReportIOError, StudyAborted
from amerput.harness import (
    ConvergenceReport,
    ExitProbReport,
    LocalisationReport,
    Problem,
    _fit_line,
    convergence_study,
    emit_report,
    exitprob_study,
    localisation_study,
    read_report,
    run_validation,
    validate_report,
)
from amerput.model import MarketModel, put_payoff
from amerput.solver import SolveConfig
from helpers import constant_payoff

LN100 = math.log(100.0)


def zero_problem():
    return Problem(MarketModel.constant(1, 0.05, 0.2, 1.0), constant_payoff(0.0), (LN100,))


def demo_problem():
    """High-volatility put whose value on B_1 still feels the domain radius."""
    return Problem(MarketModel.constant(1, 0.05, 1.0, 1.0), put_payoff(100.0, LN100), (LN100,))


DEMO_CONFIG = SolveConfig(tau=0.05, h=0.05, R=3.5, R1=1.5)


@pytest.fixture(scope="module")
def demo_localisation():
    return localisation_study(demo_problem(), DEMO_CONFIG, [2.0, 2.5, 3.0, 3.5], 1.5, 1.0, R1_grid=[1.5, 2.5])


@pytest.fixture(scope="module")
def small_convergence():
    return convergence_study(
        Problem(MarketModel.constant(1, 0.05, 0.2, 1.0), put_payoff(100.0, LN100), (LN100,)),
        SolveConfig(tau=0.016, h=0.02, R=3.0, R1=2.5),
        n_levels=3,
        R2=0.1,
    )


class TestFitLine:
    def test_exact_line(self):
        s, c, r2 = _fit_line([0, 1, 2], [1, 3, 5])
        assert (s, c) == pytest.approx((2.0, 1.0))
        assert r2 == pytest.approx(1.0)

    def test_flat_has_no_r2(self):
        assert _fit_line([0, 1, 2], [4, 4, 4])[2] is None


class TestConvergenceStudy:
    def test_zero_payoff(self):
        rep = convergence_study(zero_problem(), SolveConfig(tau=0.1, h=0.1, R=2.0, R1=1.5), 3, 0.5, reference="self")
        assert rep.errors == [0.0, 0.0, 0.0]
        assert rep.slope_h is None and rep.slope_tau is None
        assert rep.slope_note.startswith("undefined")

    def test_refinement_ladder(self, small_convergence):
        rows = small_convergence.rows
        assert [r.level for r in rows] == [0, 1, 2]
        for a, b in zip(rows, rows[1:]):
            assert b.tau == pytest.approx(a.tau / 4)
            assert b.h == pytest.approx(a.h / 2)

    def test_errors_decrease(self, small_convergence):
        errs = small_convergence.errors
        assert all(a > b for a, b in zip(errs, errs[1:]))
        assert small_convergence.reference["kind"] == "crr"
        assert small_convergence.slope_h > 0

    def test_query_points_in_ball(self, small_convergence):
        q = np.array(small_convergence.query_points)
        assert len(q) == 9 and np.all(np.abs(q) < 0.1)

    def test_self_reference_for_variable_coefficients(self):
        market = MarketModel.time_table(1, [0.0, 0.5, 1.0], [0.02, 0.06, 0.04], [0.25, 0.2, 0.3], 1.0)
        rep = convergence_study(
            Problem(market, put_payoff(1.0)), SolveConfig(tau=0.16, h=0.2, R=2.5, R1=2.0), 3, 0.5
        )
        assert rep.reference["kind"] == "self"
        assert all(e >= 0 for e in rep.errors)

    def test_rejects(self):
        cfg = SolveConfig(tau=0.1, h=0.1, R=2.0, R1=1.5)
        with pytest.raises(ConfigError):
            convergence_study(zero_problem(), cfg, 2, 0.5)
        with pytest.raises(ConfigError):
            convergence_study(zero_problem(), cfg, 3, 1.5)

    def test_abort_keeps_partial(self):
        problem = Problem(MarketModel.constant(1, 0.05, 0.2, 1.0), put_payoff(100.0, LN100), (LN100,))
        cfg = SolveConfig(tau=0.1, h=0.1, R=2.0, R1=1.5, max_nodes=2000)
        with pytest.raises(StudyAborted) as exc:
            convergence_study(problem, cfg, 3, 0.5, crr_steps=200)
        rep = exc.value.report
        assert not rep.complete
        assert len(rep.rows) == 1
        assert type(exc.value.cause).__name__ == "GridTooLarge"


class TestLocalisationStudy:
    def test_demo_decay(self, demo_localisation):
        """Demonstration on a sigma = 1 model, not an acceptance case."""
        rep = demo_localisation
        assert rep.monotone_in_R
        assert rep.rows[-1].sup_diff == 0.0
        assert rep.gamma_hat is not None and rep.gamma_hat > 0
        assert rep.r_squared >= 0.9

    def test_cutoff_probe(self, demo_localisation):
        r1 = demo_localisation.r1_rows
        assert [r.R1 for r in r1] == [1.5, 2.5]
        assert r1[0].sup_diff >= r1[1].sup_diff >= 0

    def test_identical_radii(self):
        rep = localisation_study(demo_problem(), DEMO_CONFIG, [2.0, 3.0, 3.0, 3.0], 1.5, 1.0)
        assert [r.sup_diff for r in rep.rows[1:]] == [0.0, 0.0, 0.0]

    def test_zero_payoff_gives_no_fit(self):
        rep = localisation_study(zero_problem(), DEMO_CONFIG, [2.0, 2.5, 3.0, 3.5], 1.5, 1.0)
        assert all(r.sup_diff == 0.0 for r in rep.rows)
        assert rep.gamma_hat is None and rep.n_fit_points == 0

    @pytest.mark.parametrize(
        "grid,R1,R2",
        [([2.0, 2.5, 3.0], 1.5, 1.0), ([1.5, 2.5, 3.0, 3.5], 1.5, 1.0), ([2.0, 2.5, 3.0, 3.5], 1.5, 1.5)],
    )
    def test_rejects(self, grid, R1, R2):
        with pytest.raises(ConfigError):
            localisation_study(demo_problem(), DEMO_CONFIG, grid, R1, R2)

    def test_jobs_do_not_change_report(self, demo_localisation):
        rep = localisation_study(
            demo_problem(), DEMO_CONFIG, [2.0, 2.5, 3.0, 3.5], 1.5, 1.0, R1_grid=[1.5, 2.5], jobs=3
        )
        assert rep.to_dict() == demo_localisation.to_dict()


class TestExitProbStudy:
    def test_brownian_rows(self):
        bm = Problem(MarketModel.constant(1, 0.5, 1.0, 1.0), put_payoff(1.0))
        rep = exitprob_study(bm, [1.0, 2.0], 4000, 100, seed=5)
        assert rep.K_bound == pytest.approx(1.0)
        assert rep.mu == pytest.approx(math.exp(-2.0) / 2)
        for row in rep.rows:
            assert row.series is not None and row.bound_ok
        again = exitprob_study(bm, [1.0, 2.0], 4000, 100, seed=5)
        assert again.to_dict() == rep.to_dict()

    def test_no_series_with_drift(self):
        rep = exitprob_study(demo_problem(), [1.0], 500, 20, seed=1)
        assert rep.rows[0].series is None


class TestReports:
    def test_json_round_trip(self, tmp_path, demo_localisation, small_convergence):
        for rep in (demo_localisation, small_convergence):
            path = emit_report(rep, tmp_path / f"{rep.KIND}.json")
            back = read_report(path)
            assert back == rep
            assert back.to_dict() == rep.to_dict()
            assert not (tmp_path / f"{rep.KIND}.json.partial").exists()

    def test_csv_round_trip(self, tmp_path, demo_localisation, small_convergence):
        for rep in (demo_localisation, small_convergence):
            path = emit_report(rep, tmp_path / f"{rep.KIND}.csv")
            assert read_report(path, kind=rep.KIND) == rep.rows

    def test_empty_report_header_only(self, tmp_path):
        for cls in (ConvergenceReport, LocalisationReport, ExitProbReport):
            path = emit_report(cls(), tmp_path / f"{cls.KIND}.csv")
            lines = open(path).read().splitlines()
            assert len(lines) == 1 and lines[0].startswith(("level", "R"))
            assert read_report(path, kind=cls.KIND) == []

    def test_empty_rows_validate(self, demo_localisation, small_convergence):
        for rep in (demo_localisation, small_convergence):
            validate_report(replace(rep, rows=[]).to_dict())

    def test_schema(self, demo_localisation, small_convergence):
        for rep in (demo_localisation, small_convergence):
            validate_report(json.loads(json.dumps(rep.to_dict())))
        bad = small_convergence.to_dict()
        bad["rows"][0]["error"] = -1.0
        import jsonschema

        with pytest.raises(jsonschema.ValidationError):
            validate_report(bad)

    def test_partial_write(self, tmp_path, small_convergence):
        path = emit_report(small_convergence, tmp_path / "c.json", final=False)
        assert path.endswith(".partial")
        assert not (tmp_path / "c.json").exists()

    def test_io_error_names_path(self, tmp_path, small_convergence):
        target = tmp_path / "missing" / "c.json"
        with pytest.raises(ReportIOError) as exc:
            emit_report(small_convergence, target)
        assert str(target) in str(exc.value)
        with pytest.raises(ReportIOError):
            read_report(target)

    def test_determinism(self, small_convergence):
        again = convergence_study(
            Problem(MarketModel.constant(1, 0.05, 0.2, 1.0), put_payoff(100.0, LN100), (LN100,)),
            SolveConfig(tau=0.016, h=0.02, R=3.0, R1=2.5),
            n_levels=3,
            R2=0.1,
            jobs=2,
        )
        assert again.to_dict() == small_convergence.to_dict()


def test_validation_small():
    checks = run_validation(small=True)
    assert [c["name"] for c in checks] == [
        "stencil_reconstruction",
        "operator_exactness",
        "monotone_operators",
        "brute_force_agreement",
    ]
    assert all(c["ok"] for c in checks), checks
