"""Command-line entry point: ``degvis {simulate,sweep,verify,refine,report}``.

Exit codes
    0  success
    1  configuration or usage error (bad config, unreadable file, populated
       output directory without --force, missing campaign summary)
    2  density lost positivity during ``simulate``
    3  incomplete campaign (a required run is missing or failed)
    4  a verdict failed, or the refinement order left [1.8, 2.2]
"""
from __future__ import annotations

import argparse
import logging
import math
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, reporting
from .errors import ConfigError, DegvisError, IncompleteCampaignError
from .model import theory_bounds
from .solver import run

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_POSITIVITY = 2
EXIT_INCOMPLETE = 3
EXIT_VERDICT = 4

ORDER_RANGE = (1.8, 2.2)
DEFAULT_OUT = "degvis_out"

log = logging.getLogger("degvis")


def _load_config(args):
    if not args.config:
        raise ConfigError("--config", "required for this subcommand")
    cfg = harness.ExperimentConfig.from_json(args.config)
    if getattr(args, "skip_mono_w0", False):
        cfg = replace(cfg, family_params={**cfg.family_params, "enforce_mono": False})
    return cfg.with_overrides(eps=args.eps, cells=args.cells, end_time=args.end_time)


def _out_dir(args, cfg=None):
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(DEFAULT_OUT)


def _prepare_out(out, force):
    if out.exists() and not out.is_dir():
        raise ConfigError("--out", f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError("--out", f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def _clear_run_outputs(out):
    if (out / "snapshots").is_dir():
        shutil.rmtree(out / "snapshots")
    for name in (reporting.RUN_JSON, reporting.DIAGNOSTICS_CSV, "failure_state.csv"):
        (out / name).unlink(missing_ok=True)


def cmd_simulate(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    _prepare_out(out, args.force)
    _clear_run_outputs(out)
    data = harness.build_initial(cfg, cfg.cells[0])
    harness.check_initial(cfg, data)
    bounds = theory_bounds(cfg.model, cfg.end_time, data.kappa0_lower)
    eps = harness.resolve_eps(cfg, bounds)[0]
    log.info("simulate: eps=%.6g N=%d L=%g T=%g", eps, cfg.cells[0], cfg.half_length,
             cfg.end_time)
    report = run(cfg.model, cfg.solver_config(eps), data, keep_snapshots=True)
    reporting.write_run(out, cfg.model, report)
    if report.status == "positivity-loss":
        print(f"positivity loss: {report.message}; failing state in {out / 'failure_state.csv'}",
              file=sys.stderr)
        return EXIT_POSITIVITY
    if not report.completed:
        print(f"run stopped: {report.status} {report.message}", file=sys.stderr)
        return EXIT_INCOMPLETE
    last = report.records[-1]
    print(f"completed t={last.t:.6g} steps={report.steps} min_rho={min(r.min_rho for r in report.records):.6g} "
          f"max_sup_w={max(r.sup_w for r in report.records):.6g}")
    return EXIT_OK


def _print_sheet(sheet):
    sys.stdout.write(reporting.verdict_table(sheet))


def cmd_sweep(args):
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    _prepare_out(out, args.force)
    result = harness.run_campaign(cfg, out, force=True)
    for n, fit in result.summary["eps_scaling"].items():
        if fit.get("degenerate"):
            print(f"eps scaling N={n}: degenerate: w nonpositive")
        elif "error" in fit:
            print(f"eps scaling N={n}: {fit['error']}")
        else:
            print(f"eps scaling N={n}: slope={fit['slope']:.4f} theta={fit['theta']:.4f} "
                  f"residual={fit['residual']:.3g}")
    if result.gaps:
        print("incomplete campaign: " + ", ".join(result.gaps), file=sys.stderr)
        return EXIT_INCOMPLETE
    _print_sheet(result.verdicts)
    return EXIT_OK if result.verdicts.passed else EXIT_VERDICT


def _campaign_dir(args):
    out = _out_dir(args)
    if not (out / reporting.SUMMARY_JSON).is_file():
        raise ConfigError("--out", f"no campaign summary in {out}")
    return out


def cmd_verify(args):
    out = _campaign_dir(args)
    sheet = harness.reverify(out)
    _print_sheet(sheet)
    return EXIT_OK if sheet.passed else EXIT_VERDICT


def cmd_refine(args):
    cfg = _load_config(args)
    eps = args.eps[0] if args.eps else None
    res = harness.grid_refinement_study(cfg, eps=eps)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        reporting.write_json(out / "refinement.json", res.to_dict())
    if res.exact:
        print("refinement: differences at machine precision, order exact")
        return EXIT_OK
    ok = True
    for var in ("rho", "u"):
        orders = res.orders[var]
        print(f"{var}: differences {', '.join(f'{d:.4e}' for d in res.differences[var])}; "
              f"orders {', '.join(f'{o:.4f}' for o in orders)}")
        ok &= ORDER_RANGE[0] <= orders[-1] <= ORDER_RANGE[1]
    return EXIT_OK if ok else EXIT_VERDICT


PLOT_STUB = '''"""Plot the series written by ``degvis report`` (matplotlib assumed)."""
import glob
import os

import numpy as np
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
for prefix, ylabel in (("sup_w", "sup_x w"), ("min_rho", "min_x rho")):
    fig, ax = plt.subplots()
    for path in sorted(glob.glob(os.path.join(here, prefix + "_*.dat"))):
        t, y = np.loadtxt(path, unpack=True, ndmin=2)
        ax.plot(t, y, label=os.path.basename(path)[len(prefix) + 1:-4])
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.savefig(os.path.join(here, prefix + ".png"), dpi=120)

eps, w, ref = np.loadtxt(os.path.join(here, "max_w_vs_eps.dat"), unpack=True, ndmin=2)
fig, ax = plt.subplots()
pos = w > 0
if pos.any():
    ax.loglog(eps[pos], w[pos], "o", label="max sup w")
ax.loglog(eps, ref, "--", label="C eps^theta")
ax.set_xlabel("eps")
ax.legend()
fig.savefig(os.path.join(here, "max_w_vs_eps.png"), dpi=120)
'''


def _write_series(path, header, cols):
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for row in zip(*cols):
            fh.write(" ".join(reporting.fmt(v) for v in row) + "\n")


def cmd_report(args):
    out = _campaign_dir(args)
    summary, reports = harness.load_campaign(out)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    multi_n = len({r.grid["cells"] for r in reports}) > 1
    rows = []
    for r in reports:
        tag = f"eps{r.eps:.6e}" + (f"_N{r.grid['cells']}" if multi_n else "")
        t = [x.t for x in r.records]
        _write_series(plots / f"sup_w_{tag}.dat", "t sup_w", (t, [x.sup_w for x in r.records]))
        _write_series(plots / f"min_rho_{tag}.dat", "t min_rho",
                      (t, [x.min_rho for x in r.records]))
        if r.records:
            rows.append((r.eps, max(x.sup_w for x in r.records)))
    tb = summary["theory_bounds"]
    rows.sort()
    eps = np.array([e for e, _ in rows])
    _write_series(plots / "max_w_vs_eps.dat", f"eps max_sup_w reference(C_gamma*eps^theta, theta={tb['theta']!r})",
                  (eps, [w for _, w in rows], tb["C_gamma"] * eps ** tb["theta"]))
    (plots / "plot_campaign.py").write_text(PLOT_STUB, encoding="utf-8")
    verdicts = out / reporting.VERDICTS_TXT
    if verdicts.is_file():
        sys.stdout.write(verdicts.read_text(encoding="utf-8"))
    else:
        print("no verdict sheet (campaign incomplete): " + ", ".join(summary.get("gaps", [])))
    print(f"plot data written to {plots}")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "run one simulation (first eps, first N of the config)"),
    "sweep": (cmd_sweep, "run an eps/N campaign and check the bounds"),
    "verify": (cmd_verify, "re-check the bounds of an existing campaign directory"),
    "refine": (cmd_refine, "grid self-convergence study over the config's N list"),
    "report": (cmd_report, "write plot data for a campaign and print its verdict table"),
}


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"not finite: {text!r}")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="degvis", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", metavar="PATH", help="experiment configuration (JSON)")
        p.add_argument("--out", metavar="DIR", help="output (or campaign) directory")
        p.add_argument("--eps", metavar="F", type=_positive_float, action="append",
                       help="regularization parameter; repeat for several values")
        p.add_argument("--cells", metavar="N", type=int, help="number of grid cells")
        p.add_argument("--end-time", metavar="T", type=_positive_float, help="final time")
        p.add_argument("--force", action="store_true", help="overwrite a populated output directory")
        p.add_argument("--verbose", "-v", action="count", default=0)
        p.add_argument("--skip-mono-w0", action="store_true",
                       help="do not rescale or validate the initial velocity slope bound")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler, _ = COMMANDS[args.command]
    try:
        return handler(args)
    except IncompleteCampaignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPLETE
    except (ConfigError, harness.OutputExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegvisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
