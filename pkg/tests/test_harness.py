import dataclasses
import filecmp
import json

import numpy as np
import pytest

from degvis import harness, reporting, solver
from degvis.errors import (
    ConfigError,
    IncompleteCampaignError,
    InsufficientDataError,
    StructuralError,
)
from degvis.harness import (
    ExperimentConfig,
    fit_eps_scaling,
    grid_refinement_study,
    run_campaign,
    summarize,
    verify_bounds,
)
from degvis.model import GasModel, theory_bounds

SW = GasModel(2.0, 1.0)


def base_dict(**over):
    d = {
        "model": {"gamma": 2.0, "alpha": 1.0},
        "initial_data": {
            "family": "compressive-pulse",
            "far_field": {"rho_minus": 1.2, "rho_plus": 0.8, "u_minus": 0.2, "u_plus": -0.2},
            "velocity_amplitude": 1.0, "rho_amplitude": -0.2, "width": 1.0,
        },
        "grid": {"cells": [128], "half_length": 8.0},
        "solver": {"snapshot_interval": 0.05},
        "eps": [0.4, 0.2, 0.1],
        "end_time": 0.2,
    }
    d.update(over)
    return d


@pytest.fixture(scope="module")
def small_campaign(tmp_path_factory):
    out = tmp_path_factory.mktemp("camp")
    cfg = ExperimentConfig.from_dict(base_dict())
    return cfg, run_campaign(cfg, out, workers=1), out


class TestConfig:
    def test_round_trip(self):
        cfg = ExperimentConfig.from_dict(base_dict())
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("over,field", [
        ({"eps": [0.1, 0.2]}, "eps"),
        ({"eps": []}, "eps"),
        ({"eps": [1.5]}, "eps"),
        ({"grid": {"cells": [256, 128], "half_length": 8.0}}, "grid.cells"),
        ({"grid": {"cells": [8], "half_length": 8.0}}, "grid.cells"),
        ({"grid": {"cells": [128], "half_length": 1.0}}, "grid.half_length"),
        ({"model": {"gamma": 3.0, "alpha": 1.0}}, "model"),
        ({"model": {"gamma": 2.0}}, "model.alpha"),
        ({"end_time": -1.0}, "end_time"),
        ({"solver": {"viscous_treatment": "magic"}}, "solver.viscous_treatment"),
        ({"solver": {"cfl": 0.3}}, "solver"),
        ({"bogus": 1}, "<root>"),
    ])
    def test_errors_name_field(self, over, field):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(base_dict(**over))
        assert exc.value.field == field

    def test_eps_range_message(self):
        with pytest.raises(ConfigError, match=r"\(0, 1\)"):
            ExperimentConfig.from_dict(base_dict(eps=[1.5]))

    def test_exactly_one_eps_source(self):
        d = base_dict()
        d["eps_fractions_of_delta_1"] = [1.0]
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)
        del d["eps"]
        cfg = ExperimentConfig.from_dict(d)
        assert cfg.eps is None and cfg.eps_fractions == (1.0,)

    def test_family_validation(self):
        d = base_dict()
        d["initial_data"] = {"family": "square"}
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(d)
        assert exc.value.field == "initial_data.family"

    def test_overrides_revalidated(self):
        cfg = ExperimentConfig.from_dict(base_dict())
        assert cfg.with_overrides(eps=[0.05, 0.3]).eps == (0.3, 0.05)
        with pytest.raises(ConfigError):
            cfg.with_overrides(eps=[2.0])
        with pytest.raises(ConfigError):
            cfg.with_overrides(cells=4)

    def test_from_json_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(tmp_path / "missing.json")
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(p)


def test_campaign_cardinality(small_campaign):
    cfg, res, out = small_campaign
    assert len(res.reports) == 3
    assert [r.eps for r in res.reports] == [0.4, 0.2, 0.1]
    assert len(list((out / "runs").iterdir())) == 3
    assert (out / reporting.SUMMARY_JSON).is_file()
    assert (out / reporting.VERDICTS_TXT).read_text().splitlines()[0].split() == list(
        reporting.TABLE_COLUMNS)


def test_campaign_deterministic_files(small_campaign, tmp_path):
    cfg, res, out = small_campaign
    run_campaign(cfg, tmp_path / "again", workers=2)
    a, b = out / "runs", tmp_path / "again" / "runs"
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        # run.json differs only in wall-clock timing
        assert filecmp.cmp(a / n / reporting.DIAGNOSTICS_CSV, b / n / reporting.DIAGNOSTICS_CSV,
                           shallow=False)
        for s in (a / n / "snapshots").iterdir():
            assert filecmp.cmp(s, b / n / "snapshots" / s.name, shallow=False)
    assert filecmp.cmp(out / reporting.SUMMARY_JSON, tmp_path / "again" / reporting.SUMMARY_JSON,
                       shallow=False)


def test_serial_and_parallel_summaries_identical(small_campaign):
    cfg, res, _ = small_campaign
    par = run_campaign(cfg, None, workers=3)
    assert json.dumps(reporting._jsonable(par.summary), sort_keys=True) == json.dumps(
        reporting._jsonable(res.summary), sort_keys=True)


def test_summary_reaggregates_from_disk(small_campaign):
    cfg, res, out = small_campaign
    summary, reports = harness.load_campaign(out)
    again = summarize(cfg.to_dict(), cfg.model, cfg.end_time, summary["kappa0_lower"], reports,
                      summary["eps"])
    again["run_dirs"] = summary["run_dirs"]
    assert reporting._jsonable(again) == summary


def test_refuses_populated_dir(small_campaign):
    cfg, _, out = small_campaign
    with pytest.raises(harness.OutputExistsError):
        run_campaign(cfg, out, workers=1)


def test_gating_large_eps():
    cfg = ExperimentConfig.from_dict(base_dict(eps=[0.95, 0.5]))
    res = run_campaign(cfg, None, workers=1)
    tb = res.bounds
    assert 0.95 > tb.eps_gamma
    a = {v.eps: v for v in res.verdicts.by_bound("a:active_potential")}
    assert a[0.95].status == "not-applicable"
    b = {v.eps: v for v in res.verdicts.by_bound("b:density_floor")}
    assert b[0.95].status == "not-applicable" and b[0.5].status == "not-applicable"
    c = {v.eps: v for v in res.verdicts.by_bound("c:deregularization")}
    assert c[0.95].status == "not-applicable"


def test_mutated_min_density_fails(small_campaign):
    cfg, res, _ = small_campaign
    kappa0 = res.summary["kappa0_lower"]
    tb = theory_bounds(SW, cfg.end_time, kappa0)
    r = res.reports[-1]
    bad_records = list(r.records)
    bad_records[2] = dataclasses.replace(bad_records[2], min_rho=0.5 * tb.kappa_T)
    bad = dataclasses.replace(r, records=bad_records)
    sheet = verify_bounds(SW, cfg.end_time, kappa0, [bad])
    (v,) = sheet.by_bound("b:density_floor")
    assert v.status == "fail" and v.margin < 0
    assert not sheet.passed


def test_marginal_pass_warns(small_campaign):
    cfg, res, _ = small_campaign
    kappa0 = res.summary["kappa0_lower"]
    tb = theory_bounds(SW, cfg.end_time, kappa0)
    r = res.reports[-1]
    recs = [dataclasses.replace(x, min_rho=tb.kappa_T * 1.001) for x in r.records]
    sheet = verify_bounds(SW, cfg.end_time, kappa0, [dataclasses.replace(r, records=recs)])
    (v,) = sheet.by_bound("b:density_floor")
    assert v.status == "pass-with-warning"


def test_missing_and_failed_runs_reported(small_campaign):
    cfg, res, _ = small_campaign
    kappa0 = res.summary["kappa0_lower"]
    with pytest.raises(IncompleteCampaignError) as exc:
        verify_bounds(SW, cfg.end_time, kappa0, res.reports[:2], required_eps=[0.4, 0.2, 0.1])
    assert any("0.1" in g for g in exc.value.gaps)
    failed = dataclasses.replace(res.reports[-1], status="positivity-loss")
    with pytest.raises(IncompleteCampaignError):
        verify_bounds(SW, cfg.end_time, kappa0, res.reports[:2] + [failed])


def test_bd_ratio_detects_blowup(small_campaign):
    cfg, res, _ = small_campaign
    kappa0 = res.summary["kappa0_lower"]
    r = res.reports[-1]
    recs = [dataclasses.replace(x, bd_energy_1=x.bd_energy_1 * 100) for x in r.records]
    sheet = verify_bounds(SW, cfg.end_time, kappa0,
                          res.reports[:2] + [dataclasses.replace(r, records=recs)])
    (v,) = sheet.by_bound("d:bd_energy_1")
    assert v.status == "fail"


class TestEpsFit:
    def test_exact_power_law(self):
        eps = np.array([0.2, 0.1, 0.05, 0.025])
        fit = fit_eps_scaling(eps, 3.0 * eps ** (8 / 3), 8 / 3)
        assert fit.slope == pytest.approx(8 / 3, abs=1e-12)
        assert fit.residual < 1e-12
        assert fit.slope_minus_theta == pytest.approx(0.0, abs=1e-12)

    def test_noisy_power_law(self):
        rng = np.random.default_rng(3)
        eps = np.geomspace(0.2, 0.01, 6)
        for _ in range(20):
            w = 2.0 * eps**2.5 * (1 + 0.01 * rng.standard_normal(eps.size))
            assert abs(fit_eps_scaling(eps, w, 2.5).slope - 2.5) < 0.1

    def test_degenerate(self):
        fit = fit_eps_scaling([0.2, 0.1, 0.05], [-0.2, -0.3, 0.0])
        assert fit.degenerate and fit.to_dict()["verdict"].startswith("degenerate")

    def test_insufficient(self):
        with pytest.raises(InsufficientDataError):
            fit_eps_scaling([0.2, 0.1, 0.05], [0.1, 0.01, -1.0])


class TestRefinement:
    def test_non_nested(self):
        cfg = ExperimentConfig.from_dict(base_dict(grid={"cells": [128, 200, 400],
                                                         "half_length": 8.0}))
        with pytest.raises(StructuralError):
            grid_refinement_study(cfg, eps=0.1)
        cfg = ExperimentConfig.from_dict(base_dict(grid={"cells": [128, 256],
                                                         "half_length": 8.0}))
        with pytest.raises(StructuralError):
            grid_refinement_study(cfg, eps=0.1)

    def test_steady_case_exact(self):
        d = base_dict(grid={"cells": [64, 128, 256], "half_length": 4.0})
        d["initial_data"] = {"family": "constant", "rho": 1.1, "u": 0.3}
        res = grid_refinement_study(ExperimentConfig.from_dict(d), eps=0.1)
        assert res.exact and res.order("rho") is None

    def _smooth_cfg(self):
        return ExperimentConfig.from_dict(base_dict(
            grid={"cells": [128, 256, 512], "half_length": 8.0},
            solver={"viscous_treatment": "explicit"}, end_time=0.1))

    def test_smooth_order(self):
        res = grid_refinement_study(self._smooth_cfg(), eps=0.1, workers=1)
        assert not res.exact
        assert 1.8 <= res.order("rho") <= 2.2 and 1.8 <= res.order("u") <= 2.2

    def test_first_order_mutation(self, monkeypatch):
        def upwind(rho, u):
            m = rho * u
            return np.where(0.5 * (u[:-1] + u[1:]) >= 0.0, m[:-1], m[1:])

        monkeypatch.setattr(solver, "mass_flux", upwind)
        res = grid_refinement_study(self._smooth_cfg(), eps=0.1, workers=1)
        assert 0.7 <= res.order("rho") <= 1.3

    def test_residual_study(self):
        cfg = ExperimentConfig.from_dict(base_dict(
            grid={"cells": [128, 256, 512], "half_length": 8.0},
            solver={"viscous_treatment": "explicit"}, end_time=0.2))
        out = harness.residual_refinement_study(cfg, 0.1, 0.04, eps=0.1)
        assert all(r >= 3.4 for r in out["ratios"])


def test_domain_doubling_small_change():
    cfg = ExperimentConfig.from_dict(base_dict(grid={"cells": [256], "half_length": 8.0},
                                               end_time=0.5))
    out = harness.domain_doubling_check(cfg, 0.1, workers=1)
    assert out["passed"], out


def test_worker_count(monkeypatch):
    monkeypatch.setenv("DEGVIS_THREADS", "3")
    assert harness.worker_count() == 3
    monkeypatch.setenv("DEGVIS_THREADS", "0")
    assert harness.worker_count() >= 1
    assert harness.worker_count(2) == 2
