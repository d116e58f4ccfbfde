"""Experiment campaigns: eps-sweeps, grid refinement, domain doubling and
verdicts against the closed-form bounds."""
from __future__ import annotations

import logging
import math
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import reporting
from .diagnostics import density_floor_ode_check, gronwall_envelope, w_equation_residual
from .errors import (
    ConfigError,
    DegvisError,
    IncompleteCampaignError,
    InsufficientDataError,
    StructuralError,
)
from .grid import Grid1D
from .model import GasModel, theory_bounds
from .profiles import FAMILIES, FarFieldStates, make_initial_family, validate_initial
from .solver import TREATMENTS, SolverConfig, advance, initial_state, run

log = logging.getLogger(__name__)

WARN_FRACTION = 0.01
EXACT_SLACK = 1e-9
BD_RATIO_LIMIT = 10.0
EXACT_DIFF = 1e-13

_FAMILY_KEYS = {"far_field", "order", "rho", "u", "velocity_amplitude", "rho_amplitude",
                "width", "center", "enforce_mono"}
_SOLVER_KEYS = {"cfl_number", "diffusion_number", "snapshot_interval", "viscous_treatment"}


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Campaign description, usually loaded from JSON (see README for the schema).

    Exactly one of ``eps`` (absolute values) and ``eps_fractions`` (multiples
    of the data-dependent threshold ``delta_1``) is set.
    """

    gamma: float
    alpha: float
    family: str
    family_params: dict
    cells: tuple
    half_length: float
    end_time: float
    eps: tuple | None = None
    eps_fractions: tuple | None = None
    solver: dict = field(default_factory=dict)
    output_dir: str | None = None
    domain_doubling: bool = False

    def __post_init__(self):
        try:
            GasModel(self.gamma, self.alpha)
        except DegvisError as exc:
            raise ConfigError("model", str(exc)) from None
        if self.family not in FAMILIES:
            raise ConfigError("initial_data.family", f"must be one of {FAMILIES}")
        extra = set(self.family_params) - _FAMILY_KEYS
        if extra:
            raise ConfigError("initial_data", f"unknown keys {sorted(extra)}")
        cells = tuple(self.cells)
        if not cells or any(int(n) != n or n < 16 for n in cells):
            raise ConfigError("grid.cells", "need a nonempty list of integers >= 16")
        if list(cells) != sorted(cells) or len(set(cells)) != len(cells):
            raise ConfigError("grid.cells", "must be strictly ascending")
        object.__setattr__(self, "cells", tuple(int(n) for n in cells))
        if not (self.half_length >= 2.0):
            raise ConfigError("grid.half_length", "must be >= 2")
        if not (self.end_time > 0.0 and math.isfinite(self.end_time)):
            raise ConfigError("end_time", "must be positive")
        if (self.eps is None) == (self.eps_fractions is None):
            raise ConfigError("eps", "give exactly one of 'eps' and 'eps_fractions_of_delta_1'")
        name, values = (("eps", self.eps) if self.eps is not None
                        else ("eps_fractions_of_delta_1", self.eps_fractions))
        values = tuple(float(v) for v in values)
        if not values:
            raise ConfigError(name, "list is empty")
        if list(values) != sorted(values, reverse=True) or len(set(values)) != len(values):
            raise ConfigError(name, "must be strictly descending")
        if name == "eps" and not all(0.0 < v < 1.0 for v in values):
            raise ConfigError("eps", "every eps must lie in the open interval (0, 1)")
        if name != "eps" and not all(0.0 < v <= 1.0 for v in values):
            raise ConfigError(name, "fractions must lie in (0, 1]")
        object.__setattr__(self, "eps" if name == "eps" else "eps_fractions", values)
        extra = set(self.solver) - _SOLVER_KEYS
        if extra:
            raise ConfigError("solver", f"unknown keys {sorted(extra)}")
        treatment = self.solver.get("viscous_treatment", "implicit")
        if treatment not in TREATMENTS:
            raise ConfigError("solver.viscous_treatment", f"must be one of {TREATMENTS}")
        try:
            self.solver_config(0.5)
        except DegvisError as exc:
            raise ConfigError("solver", str(exc)) from None

    @property
    def model(self):
        return GasModel(self.gamma, self.alpha)

    def solver_config(self, eps, end_time=None):
        T = self.end_time if end_time is None else end_time
        s = dict(self.solver)
        s.setdefault("snapshot_interval", T)
        s["snapshot_interval"] = min(s["snapshot_interval"], T)
        return SolverConfig(eps=eps, end_time=T, **s)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        known = {"model", "initial_data", "grid", "solver", "eps", "eps_fractions_of_delta_1",
                 "end_time", "output_dir", "domain_doubling"}
        extra = set(d) - known
        if extra:
            raise ConfigError("<root>", f"unknown keys {sorted(extra)}")
        try:
            model = d["model"]
            init = dict(d["initial_data"])
            grid = d["grid"]
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), "missing section") from None
        for sect, keys, obj in (("model", ("gamma", "alpha"), model),
                                ("grid", ("cells", "half_length"), grid)):
            for k in keys:
                if k not in obj:
                    raise ConfigError(f"{sect}.{k}", "missing")
        if "end_time" not in d:
            raise ConfigError("end_time", "missing")
        family = init.pop("family", None)
        if family is None:
            raise ConfigError("initial_data.family", "missing")
        cells = grid["cells"]
        if isinstance(cells, (int, float)):
            cells = [cells]
        try:
            return cls(
                gamma=float(model["gamma"]), alpha=float(model["alpha"]),
                family=family, family_params=init, cells=tuple(cells),
                half_length=float(grid["half_length"]), end_time=float(d["end_time"]),
                eps=tuple(d["eps"]) if "eps" in d else None,
                eps_fractions=(tuple(d["eps_fractions_of_delta_1"])
                               if "eps_fractions_of_delta_1" in d else None),
                solver=dict(d.get("solver", {})), output_dir=d.get("output_dir"),
                domain_doubling=bool(d.get("domain_doubling", False)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("<root>", str(exc)) from None

    @classmethod
    def from_json(cls, path):
        import json
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self):
        d = {
            "model": {"gamma": self.gamma, "alpha": self.alpha},
            "initial_data": {"family": self.family, **self.family_params},
            "grid": {"cells": list(self.cells), "half_length": self.half_length},
            "solver": dict(self.solver),
            "end_time": self.end_time,
            "domain_doubling": self.domain_doubling,
        }
        if self.eps is not None:
            d["eps"] = list(self.eps)
        else:
            d["eps_fractions_of_delta_1"] = list(self.eps_fractions)
        if self.output_dir is not None:
            d["output_dir"] = self.output_dir
        return d

    def with_overrides(self, eps=None, cells=None, end_time=None):
        """Copy with CLI overrides applied and re-validated."""
        kw = {}
        if eps:
            kw.update(eps=tuple(sorted(eps, reverse=True)), eps_fractions=None)
        if cells is not None:
            kw["cells"] = (int(cells),)
        if end_time is not None:
            kw["end_time"] = float(end_time)
        return replace(self, **kw) if kw else self


def build_initial(cfg: ExperimentConfig, cells, half_length=None, **overrides):
    grid = Grid1D(cfg.half_length if half_length is None else half_length, cells)
    params = dict(cfg.family_params)
    params.update(overrides)
    ff = params.pop("far_field", None)
    if ff is not None and not isinstance(ff, FarFieldStates):
        ff = FarFieldStates(**ff)
    return make_initial_family(cfg.family, cfg.model, grid, ff, **params)


def check_initial(cfg, data):
    check_mono = cfg.family_params.get("enforce_mono", True)
    report = validate_initial(cfg.model, data, check_mono=check_mono)
    if not report.passed:
        names = ", ".join(f"{c.name} (worst at x={c.worst_x:.4g}: {c.worst_value:.4g})"
                          for c in report.failures())
        raise ConfigError("initial_data", f"initial data fails hypotheses: {names}")
    return report


def resolve_eps(cfg, bounds):
    if cfg.eps is not None:
        return list(cfg.eps)
    if not bounds.delta_1 > 0.0:
        raise ConfigError("eps_fractions_of_delta_1",
                          "delta_1 underflows to 0 for this model and horizon; give 'eps' explicitly")
    return [f * bounds.delta_1 for f in cfg.eps_fractions]


# ---------------------------------------------------------------- verdicts

@dataclass(frozen=True)
class Verdict:
    bound: str
    theoretical: object
    observed: object
    margin: object
    status: str
    eps: float | None = None
    cells: int | None = None
    note: str = ""

    @property
    def label(self):
        tags = []
        if self.eps is not None:
            tags.append(f"eps={self.eps:.6g}")
        if self.cells is not None:
            tags.append(f"N={self.cells}")
        return f"{self.bound}[{','.join(tags)}]" if tags else self.bound

    def to_dict(self):
        return {"bound": self.bound, "label": self.label, "theoretical": self.theoretical,
                "observed": self.observed, "margin": self.margin, "status": self.status,
                "eps": self.eps, "cells": self.cells, "note": self.note}


PASSING = ("pass", "pass-with-warning", "not-applicable", "info")


@dataclass(frozen=True)
class VerdictSheet:
    entries: tuple

    @property
    def passed(self):
        return all(v.status in PASSING for v in self.entries)

    def by_bound(self, bound):
        return [v for v in self.entries if v.bound == bound]

    def to_dict(self):
        return {"passed": self.passed, "entries": [v.to_dict() for v in self.entries]}


def _inequality(bound, theoretical, observed, margin, eps, cells, note=""):
    if not (math.isfinite(observed) and math.isfinite(margin)):
        status = "fail"
    elif margin < 0.0:
        status = "fail"
    elif margin < WARN_FRACTION * abs(theoretical):
        status = "pass-with-warning"
    else:
        status = "pass"
    return Verdict(bound, theoretical, observed, margin, status, eps, cells, note)


def _series(report, name):
    return np.array([getattr(r, name) for r in report.records])


def verify_bounds(model, T, kappa0, reports, required_eps=None, floor_tol=0.0) -> VerdictSheet:
    """Compare observed run diagnostics against the theoretical inequalities.

    (a) ``max_t sup_x w <= C_gamma eps**theta`` for ``eps <= eps_gamma``
    (b) ``min rho >= kappa(T)`` for ``eps <= delta_1``
    (c) ``mu_eps == mu`` node-wise for ``eps < delta_T``
    (d) BD energies uniformly bounded across the sweep (ratio check)
    (e) density-minimum differential inequality for ``eps <= delta_1``
    plus an informational Gronwall-envelope comparison.
    """
    tb = theory_bounds(model, T, kappa0)
    reports = list(reports)
    gaps = [f"eps={r.eps:.6g},N={r.grid['cells']} ({r.status})"
            for r in reports if not r.completed and r.eps <= tb.delta_1]
    present = {(round(r.eps, 15)) for r in reports if r.completed}
    for e in required_eps or ():
        if round(e, 15) not in present:
            gaps.append(f"eps={e:.6g} (missing)")
    if gaps:
        raise IncompleteCampaignError(gaps)

    out = []
    for r in reports:
        if not r.completed:
            continue
        eps, n = r.eps, r.grid["cells"]
        sup_w = _series(r, "sup_w")
        if eps <= tb.eps_gamma:
            bound = tb.w_bound(eps)
            obs = float(np.max(sup_w))
            out.append(_inequality("a:active_potential", bound, obs, bound - obs, eps, n))
        else:
            out.append(Verdict("a:active_potential", tb.w_bound(eps), float(np.max(sup_w)), None,
                               "not-applicable", eps, n, "eps > eps_gamma"))
        min_rho = _series(r, "min_rho")
        if eps <= tb.delta_1:
            obs = float(np.min(min_rho))
            out.append(_inequality("b:density_floor", tb.kappa_T, obs, obs - tb.kappa_T, eps, n))
        else:
            out.append(Verdict("b:density_floor", tb.kappa_T, float(np.min(min_rho)), None,
                               "not-applicable", eps, n, "eps > delta_1"))
        dev = float(np.max(_series(r, "mu_max_rel_deviation")))
        if eps < tb.delta_T:
            status = "pass" if dev <= EXACT_SLACK else "fail"
            out.append(Verdict("c:deregularization", 0.0, dev, EXACT_SLACK - dev, status, eps, n,
                               "max relative |mu_eps - mu| / mu over nodes and snapshots"))
        else:
            out.append(Verdict("c:deregularization", 0.0, dev, None, "not-applicable", eps, n,
                               "eps >= delta_T"))
        times = _series(r, "t")
        if eps <= tb.delta_1:
            chk = density_floor_ode_check(model, eps, min_rho, _series(r, "w_at_argmin_rho"),
                                          times, tb.C_gamma, tb.delta_1, tol=floor_tol)
            status = "pass" if chk.passed else "fail"
            out.append(Verdict("e:density_floor_ode", 0.0, chk.worst_margin, chk.worst_margin,
                               status, eps, n, "worst of rho_m' - rhs"))
        else:
            out.append(Verdict("e:density_floor_ode", 0.0, None, None, "not-applicable", eps, n,
                               "eps > delta_1"))
        env = gronwall_envelope(model, eps, float(sup_w[0]), _series(r, "rho_at_argmax_w"), times)
        slack = float(np.min(env.values - sup_w))
        out.append(Verdict("f:gronwall_envelope", float(np.max(env.values)), float(np.max(sup_w)),
                           slack, "info", eps, n, "min over t of envelope minus observed sup w"))

    by_cells = {}
    for r in reports:
        if r.completed:
            by_cells.setdefault(r.grid["cells"], []).append(r)
    for n, group in sorted(by_cells.items()):
        out.extend(_bd_uniformity(group, n))
    return VerdictSheet(tuple(out))


def _bd_uniformity(group, n):
    group = sorted(group, key=lambda r: -r.eps)
    res = []
    for name in ("bd_energy_1", "bd_energy_2"):
        series = [_series(r, name) for r in group]
        finite = all(np.all(np.isfinite(s)) for s in series)
        peaks = np.array([float(np.max(s)) for s in series])
        if not finite:
            res.append(Verdict(f"d:{name}", BD_RATIO_LIMIT, math.inf, None, "fail", None, n,
                               "non-finite energy"))
            continue
        if len(group) < 2:
            res.append(Verdict(f"d:{name}", BD_RATIO_LIMIT, float(peaks[0]), None,
                               "not-applicable", None, n, "single run"))
            continue
        lo, hi = float(np.min(peaks)), float(np.max(peaks))
        ratio = hi / lo if lo > 0.0 else (1.0 if hi == 0.0 else math.inf)
        ref = peaks[0]
        to_ref = hi / ref if ref > 0.0 else (1.0 if hi == 0.0 else math.inf)
        ok = ratio <= BD_RATIO_LIMIT and 1.0 / BD_RATIO_LIMIT <= to_ref <= BD_RATIO_LIMIT
        res.append(Verdict(f"d:{name}", BD_RATIO_LIMIT, ratio, BD_RATIO_LIMIT - ratio,
                           "pass" if ok else "fail", None, n,
                           f"max/min of sup_t energy across eps; max/largest-eps = {to_ref:.6g}"))
    return res


# ---------------------------------------------------------------- eps scaling

@dataclass(frozen=True)
class EpsScalingFit:
    degenerate: bool
    slope: float | None = None
    intercept: float | None = None
    residual: float | None = None
    theta: float | None = None
    n_points: int = 0

    @property
    def slope_minus_theta(self):
        if self.slope is None or self.theta is None:
            return None
        return self.slope - self.theta

    def to_dict(self):
        return {"degenerate": self.degenerate, "slope": self.slope, "intercept": self.intercept,
                "residual": self.residual, "theta": self.theta, "n_points": self.n_points,
                "slope_minus_theta": self.slope_minus_theta,
                "verdict": "degenerate: w nonpositive" if self.degenerate else "fitted"}


def fit_eps_scaling(eps_values, max_w, theta=None):
    """Least-squares slope of ``log(max_t sup_x w)`` against ``log eps``."""
    e = np.asarray(eps_values, dtype=float)
    w = np.asarray(max_w, dtype=float)
    if e.shape != w.shape:
        raise StructuralError("eps and max_w must align")
    if e.size and np.all(w <= 0.0):
        return EpsScalingFit(True, theta=theta, n_points=0)
    use = w > 0.0
    if np.unique(e[use]).size < 3:
        raise InsufficientDataError(
            f"need >= 3 runs with distinct eps and positive sup w, got {int(use.sum())}")
    x, y = np.log(e[use]), np.log(w[use])
    (slope, intercept), res, *_ = np.polyfit(x, y, 1, full=True)
    resid = float(np.sqrt(res[0] / x.size)) if res.size else 0.0
    return EpsScalingFit(False, float(slope), float(intercept), resid, theta, int(use.sum()))


# ---------------------------------------------------------------- campaigns

def _run_task(args):
    model, solver_cfg, data, keep = args
    return run(model, solver_cfg, data, keep_snapshots=keep)


def worker_count(requested=None):
    if requested is None:
        try:
            requested = int(os.environ.get("DEGVIS_THREADS", "0"))
        except ValueError:
            requested = 0
    if requested <= 0:
        requested = os.cpu_count() or 1
    return max(1, requested)


def execute(tasks, workers=None):
    """Run tasks, returning results in task order regardless of completion order."""
    workers = min(worker_count(workers), max(1, len(tasks)))
    if workers == 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks))


def run_summary(report):
    recs = report.records
    if not recs:
        return {"eps": report.eps, "cells": report.grid["cells"], "status": report.status,
                "message": report.message, "n_snapshots": 0}
    mass0 = recs[0].mass
    return {
        "eps": report.eps,
        "cells": report.grid["cells"],
        "half_length": report.grid["half_length"],
        "status": report.status,
        "message": report.message,
        "steps": report.steps,
        "n_snapshots": len(recs),
        "min_rho": min(r.min_rho for r in recs),
        "max_rho": max(r.max_rho for r in recs),
        "max_sup_w": max(r.sup_w for r in recs),
        "max_bd_energy_1": max(r.bd_energy_1 for r in recs),
        "max_bd_energy_2": max(r.bd_energy_2 for r in recs),
        "max_h4_rho": max(r.h4_rho for r in recs),
        "max_h4_u": max(r.h4_u for r in recs),
        "max_mu_rel_deviation": max(r.mu_max_rel_deviation for r in recs),
        "max_mass_balance_defect": max(abs(r.mass - mass0 - r.boundary_inflow) for r in recs),
    }


def summarize(cfg_dict, model, T, kappa0, reports, required_eps=None):
    """Campaign summary; a pure function of the run reports (no timings)."""
    tb = theory_bounds(model, T, kappa0)
    try:
        sheet = verify_bounds(model, T, kappa0, reports, required_eps)
        gaps = []
    except IncompleteCampaignError as exc:
        sheet, gaps = None, exc.gaps
    fits = {}
    by_cells = {}
    for r in reports:
        if r.completed:
            by_cells.setdefault(r.grid["cells"], []).append(r)
    for n, group in sorted(by_cells.items()):
        try:
            fit = fit_eps_scaling([r.eps for r in group],
                                  [max(x.sup_w for x in r.records) for r in group], model.theta)
            fits[str(n)] = fit.to_dict()
        except InsufficientDataError as exc:
            fits[str(n)] = {"degenerate": None, "error": str(exc)}
    return {
        "config": cfg_dict,
        "model": model.to_dict() | {"alpha_star": model.alpha_star, "theta": model.theta},
        "horizon_T": T,
        "kappa0_lower": kappa0,
        "theory_bounds": tb.to_dict(),
        "eps": [r.eps for r in reports],
        "runs": [run_summary(r) for r in reports],
        "gaps": gaps,
        "verdicts": sheet.to_dict() if sheet is not None else None,
        "eps_scaling": fits,
    }


@dataclass
class CampaignResult:
    config: ExperimentConfig
    bounds: object
    eps: list
    reports: list
    summary: dict
    verdicts: VerdictSheet | None
    output_dir: Path | None = None
    extras: dict = field(default_factory=dict)

    @property
    def gaps(self):
        return self.summary["gaps"]


def run_dir_name(i, eps, cells):
    return f"run_{i:03d}_eps{eps:.6e}_N{cells}"


def run_campaign(cfg: ExperimentConfig, out_dir=None, workers=None, keep_snapshots=True,
                 force=False):
    """Execute every (eps, N) run, write per-run outputs and the campaign summary."""
    model = cfg.model
    datasets = {}
    for n in cfg.cells:
        datasets[n] = build_initial(cfg, n)
        check_initial(cfg, datasets[n])
    kappa0 = min(d.kappa0_lower for d in datasets.values())
    bounds = theory_bounds(model, cfg.end_time, kappa0)
    eps_list = resolve_eps(cfg, bounds)
    tasks, keys = [], []
    for e in eps_list:
        for n in cfg.cells:
            tasks.append((model, cfg.solver_config(e), datasets[n], keep_snapshots))
            keys.append((e, n))
    log.info("campaign: %d runs, delta_1=%.6g, kappa(T)=%.6g", len(tasks), bounds.delta_1,
             bounds.kappa_T)
    reports = execute(tasks, workers)
    summary = summarize(cfg.to_dict(), model, cfg.end_time, kappa0, reports, eps_list)
    sheet = None
    if summary["verdicts"] is not None:
        sheet = verify_bounds(model, cfg.end_time, kappa0, reports, eps_list)
    result = CampaignResult(cfg, bounds, eps_list, reports, summary, sheet)
    if cfg.domain_doubling:
        result.extras["domain_doubling"] = domain_doubling_check(cfg, eps_list[0], workers)
        summary["domain_doubling"] = result.extras["domain_doubling"]
    if out_dir is not None:
        write_campaign(result, out_dir, force=force)
    return result


class OutputExistsError(DegvisError, FileExistsError):
    pass


def write_campaign(result, out_dir, force=False):
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise OutputExistsError(f"{out} is not empty; use --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("runs", "plots"):
        if (out / stale).is_dir():
            shutil.rmtree(out / stale)
    model = result.config.model
    names = []
    for i, r in enumerate(result.reports):
        name = run_dir_name(i, r.eps, r.grid["cells"])
        reporting.write_run(out / "runs" / name, model, r)
        names.append(name)
    summary = dict(result.summary)
    summary["run_dirs"] = names
    reporting.write_json(out / reporting.SUMMARY_JSON, summary)
    if result.verdicts is not None:
        reporting.write_json(out / reporting.VERDICTS_JSON, result.verdicts.to_dict())
        (out / reporting.VERDICTS_TXT).write_text(reporting.verdict_table(result.verdicts),
                                                  encoding="utf-8")
    result.output_dir = out
    return out


def load_campaign(out_dir):
    """Read back the summary and every run report of a campaign directory."""
    out = Path(out_dir)
    summary = reporting.read_json(out / reporting.SUMMARY_JSON)
    reports = [reporting.load_run(out / "runs" / name) for name in summary["run_dirs"]]
    return summary, reports


def reverify(out_dir):
    summary, reports = load_campaign(out_dir)
    model = GasModel(summary["model"]["gamma"], summary["model"]["alpha"])
    required = [r["eps"] for r in summary["runs"]]
    return verify_bounds(model, summary["horizon_T"], summary["kappa0_lower"], reports,
                         sorted(set(required), reverse=True))


# ---------------------------------------------------------------- refinement

@dataclass(frozen=True)
class RefinementResult:
    cells: tuple
    differences: dict
    orders: dict
    exact: bool

    def order(self, var):
        return None if self.exact else self.orders[var][-1]

    def to_dict(self):
        return {"cells": list(self.cells), "differences": self.differences,
                "orders": self.orders, "exact": self.exact}


def _nested(cells):
    if len(cells) < 3:
        raise StructuralError("need at least 3 grid levels")
    if any(b != 2 * a for a, b in zip(cells[:-1], cells[1:])):
        raise StructuralError(f"grid levels must be nested by factor 2, got {list(cells)}")


def _level_data(cfg, cells):
    """Initial data on every level with the coarsest level's velocity amplitude,
    so that all levels sample the same function."""
    base = build_initial(cfg, cells[0])
    out = [base]
    if "effective_amplitude" in base.params:
        amp = base.params["effective_amplitude"]
        for n in cells[1:]:
            d = build_initial(cfg, n, velocity_amplitude=amp, enforce_mono=False)
            d.params["enforce_mono"] = cfg.family_params.get("enforce_mono", True)
            out.append(d)
    else:
        out.extend(build_initial(cfg, n) for n in cells[1:])
    for d in out:
        check_initial(cfg, d)
    return out


def _l2(diff, dx):
    return float(np.sqrt(dx * np.sum(diff * diff)))


def grid_refinement_study(cfg: ExperimentConfig, eps=None, end_time=None, workers=None):
    """Richardson self-convergence order from nested-grid solutions at the end time."""
    cells = cfg.cells
    _nested(cells)
    data = _level_data(cfg, cells)
    T = cfg.end_time if end_time is None else end_time
    if eps is None:
        bounds = theory_bounds(cfg.model, cfg.end_time, min(d.kappa0_lower for d in data))
        eps = resolve_eps(cfg, bounds)[0]
    scfg = cfg.solver_config(eps, T)
    scfg = replace(scfg, snapshot_interval=T)
    reports = execute([(cfg.model, scfg, d, False) for d in data], workers)
    for r in reports:
        if not r.completed:
            raise DegvisError(f"refinement run N={r.grid['cells']} failed: {r.message}")
    finals = [r.final_state for r in reports]
    diffs, orders = {}, {}
    scale = 1.0
    for var in ("rho", "u"):
        d = []
        for coarse, fine in zip(finals[:-1], finals[1:]):
            a, b = getattr(coarse, var), getattr(fine, var)[::2]
            d.append(_l2(a - b, coarse.grid.dx))
            scale = max(scale, float(np.max(np.abs(a))))
        diffs[var] = d
    exact = all(v <= EXACT_DIFF * scale for var in diffs for v in diffs[var])
    for var, d in diffs.items():
        orders[var] = [] if exact else [math.log2(d[i] / d[i + 1]) if d[i + 1] > 0 else math.inf
                                        for i in range(len(d) - 1)]
    return RefinementResult(tuple(cells), diffs, orders, exact)


def residual_refinement_study(cfg: ExperimentConfig, t_mid, base_interval, eps=None,
                              workers=None):
    """Active-potential equation residual at ``t_mid`` on nested grids.

    The residual uses states at ``t_mid -+ h/2`` with ``h`` halved together
    with ``dx`` (``h = base_interval`` on the coarsest level).
    """
    cells = cfg.cells
    _nested(cells)
    data = _level_data(cfg, cells)
    if eps is None:
        bounds = theory_bounds(cfg.model, cfg.end_time, min(d.kappa0_lower for d in data))
        eps = resolve_eps(cfg, bounds)[0]
    model = cfg.model
    norms = []
    for k, d in enumerate(data):
        h = base_interval / 2**k
        scfg = replace(cfg.solver_config(eps, t_mid + h), snapshot_interval=t_mid + h)
        s0 = initial_state(d)
        sa = advance(model, scfg, s0, t_mid - 0.5 * h)
        sb = advance(model, scfg, sa, t_mid + 0.5 * h)
        norms.append(w_equation_residual(model, eps, sa, sb))
    ratios = [norms[i] / norms[i + 1] for i in range(len(norms) - 1)]
    return {"cells": list(cells), "residuals": norms, "ratios": ratios, "eps": eps}


def domain_doubling_check(cfg: ExperimentConfig, eps, workers=None, tolerance=0.01):
    """Compare tracked diagnostics on ``[-L, L]`` and ``[-2L, 2L]`` at equal spacing."""
    n, L = cfg.cells[-1], cfg.half_length
    data = [build_initial(cfg, n, L), build_initial(cfg, 2 * n, 2 * L)]
    for d in data:
        check_initial(cfg, d)
    scfg = cfg.solver_config(eps)
    reports = execute([(cfg.model, scfg, d, False) for d in data], workers)
    keys = ("min_rho", "max_rho", "max_sup_w", "max_bd_energy_1", "max_bd_energy_2")
    s0, s1 = run_summary(reports[0]), run_summary(reports[1])
    changes = {}
    for k in keys:
        if k not in s0 or k not in s1:
            changes[k] = math.inf
            continue
        a, b = s0[k], s1[k]
        changes[k] = abs(b - a) / max(abs(a), abs(b), 1e-300)
    worst = max(changes.values())
    return {"cells": [n, 2 * n], "half_length": [L, 2 * L], "relative_changes": changes,
            "worst": worst, "passed": bool(worst < tolerance)}
