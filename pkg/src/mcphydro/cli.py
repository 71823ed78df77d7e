"""Command-line front end.

Subcommands: ingest, synth, train, benchmark, evaluate, report, grad-check.
Exit codes: 0 success, 2 validation error, 3 numeric fault, 4 plan error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .autodiff import check_grad
from .benchmarks import benchmark_suite
from .data_model import (
    DEFAULT_WY_START_MONTH,
    SyntheticTruth,
    complete_water_years,
    generate_synthetic,
    ingest_forcing,
    partition_by_year,
    write_forcing,
)
from .errors import (
    NumericFaultError,
    PlanError,
    ValidationError,
)
from .gates import count_parameters, parameter_names
from .grammar import parse_arch
from .mcp_core import mass_ledger, run_sequence, simulate
from .metrics import annual_distribution, kge
from .params import ParameterVector
from .reporting import (
    boxplot_svg,
    write_hydrograph_csv,
    write_table_csv,
    write_table_json,
)
from .training import (
    PlanStage,
    TrainConfig,
    init_params,
    run_protocol,
)


def _add_common(p):
    p.add_argument("--data", help="forcing CSV path")
    p.add_argument("--out", default=".", help="output directory or file")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--epochs", type=int, help="training epoch budget")
    p.add_argument("--jobs", type=int, default=1,
                   help="concurrent seed workers")
    p.add_argument("--wy-start", type=int, default=DEFAULT_WY_START_MONTH,
                   help="water-year start month (default 10)")


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="mcphydro",
        description="mass-conserving cell rainfall-runoff toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and summarize a forcing CSV")
    _add_common(p)

    p = sub.add_parser("synth", help="generate seeded synthetic forcing")
    _add_common(p)
    p.add_argument("--arch", default="MC{O=sig,L=sig}",
                   help="truth architecture")
    p.add_argument("--params", help="JSON file of truth parameters")
    p.add_argument("--seed", type=int, default=2925)
    p.add_argument("--years", type=int, default=20)

    p = sub.add_parser("train", help="run a training plan")
    _add_common(p)
    p.add_argument("--arch", help="architecture text (single stage)")
    p.add_argument("--plan", help="JSON plan file with ordered stages")
    p.add_argument("--resume", action="store_true",
                   help="skip stages whose config hash already completed")

    p = sub.add_parser("benchmark", help="train comparison models")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score saved parameters on data")
    _add_common(p)
    p.add_argument("--arch", required=True)
    p.add_argument("--params", required=True, help="params.json path")

    p = sub.add_parser("report", help="emit tables and figures for runs")
    _add_common(p)
    p.add_argument("--runs", required=True, help="directory holding runs/")
    p.add_argument("--years", help="comma-separated water years for "
                                   "hydrograph extracts")

    p = sub.add_parser("grad-check", help="verify gradients numerically")
    _add_common(p)
    p.add_argument("--arch", default="MC{O=sig,L=sig:con}")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=2925)
    return ap


def _config(args):
    kw = {"wy_start_month": args.wy_start, "jobs": args.jobs}
    if args.seeds:
        kw["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.epochs:
        kw["epochs"] = args.epochs
    return TrainConfig(**kw)


def _load_forcing(args):
    if not args.data:
        raise ValidationError("--data is required for this command")
    return ingest_forcing(args.data)


def _truth_params(arch, args):
    names = parameter_names(arch)
    if args.params:
        with open(args.params) as fh:
            return ParameterVector.from_dict(tuple(names), json.load(fh))
    return init_params(arch, args.seed)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_ingest(args):
    fs = _load_forcing(args)
    wys = complete_water_years(fs.dates, args.wy_start)
    print(f"rows: {len(fs)}")
    print(f"span: {fs.dates[0]} .. {fs.dates[-1]}")
    print(f"complete water years: {len(wys)}")
    print(f"observed output: {'yes' if fs.obs_out is not None else 'no'}")
    return 0


def _cmd_synth(args):
    arch = parse_arch(args.arch)
    params = _truth_params(arch, args)
    truth = SyntheticTruth(arch, params, args.seed)
    fs = generate_synthetic(truth, args.years,
                            wy_start_month=args.wy_start)
    out = args.out
    if os.path.isdir(out):
        out = os.path.join(out, "synthetic.csv")
    write_forcing(fs, out)
    print(f"wrote {len(fs)} days to {out}")
    return 0


def _plan_stages(args):
    if args.plan:
        with open(args.plan) as fh:
            doc = json.load(fh)
        stages = doc.get("stages")
        if not isinstance(stages, list) or not stages:
            raise PlanError(f"{args.plan}: plan needs a non-empty "
                            "'stages' list")
        out = []
        for st in stages:
            if "arch" not in st:
                raise PlanError(f"{args.plan}: stage missing 'arch'")
            out.append(PlanStage(st["arch"], st.get("parent")))
        return out
    if args.arch:
        return [PlanStage(args.arch)]
    raise PlanError("train needs --arch or --plan")


def _cmd_train(args):
    stages = _plan_stages(args)
    for st in stages:
        parse_arch(st.arch_text)  # fail fast on grammar errors
    fs = _load_forcing(args)
    cfg = _config(args)
    mask = partition_by_year(fs, wy_start_month=args.wy_start)
    outcomes = run_protocol(stages, fs, mask, cfg, args.out,
                            resume=args.resume)
    for arch_id, outcome in outcomes.items():
        best = outcome.best
        print(f"{arch_id}: best seed {outcome.best_seed} "
              f"select {best.select_ss:.4f} test {best.test_ss:.4f}")
    return 0


def _cmd_benchmark(args):
    fs = _load_forcing(args)
    cfg = _config(args)
    mask = partition_by_year(fs, wy_start_month=args.wy_start)
    rows = benchmark_suite(fs, mask, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "benchmarks.json")
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)
    for row in rows:
        if "error" in row:
            print(f"{row['model']}: FAILED {row['error']}")
        else:
            print(f"{row['model']}: median {row['median']:.4f} "
                  f"({row['n_params']} params)")
    print(f"wrote {path}")
    return 0


def _cmd_evaluate(args):
    fs = _load_forcing(args)
    arch = parse_arch(args.arch)
    with open(args.params) as fh:
        params = ParameterVector.from_dict(
            tuple(parameter_names(arch)), json.load(fh))
    trace = simulate(arch, params, fs, wy_start_month=args.wy_start)
    ledger = mass_ledger(trace)
    print(f"mass residual: {ledger.residual:.3e}")
    if fs.obs_out is not None:
        c = kge(trace.o, fs.obs_out)
        print(f"kge {c.kge:.4f}  kge_ss {c.kge_ss:.4f}  "
              f"alpha {c.alpha:.3f} beta {c.beta:.3f} rho {c.rho:.3f}")
        dist = annual_distribution(trace.o, fs.obs_out, fs.dates,
                                   args.wy_start)
        print("annual percentiles: " + ", ".join(
            f"{k}={v:.3f}" for k, v in dist.percentiles.items()))
    if os.path.isdir(args.out):
        trace.to_csv(os.path.join(args.out, "trace.csv"))
    return 0


def _cmd_report(args):
    fs = _load_forcing(args)
    runs_root = os.path.join(args.runs, "runs")
    if not os.path.isdir(runs_root):
        raise ValidationError(f"no runs/ directory under {args.runs}")
    entries = []
    for arch_id in sorted(os.listdir(runs_root)):
        best_path = os.path.join(runs_root, arch_id, "best.json")
        if not os.path.exists(best_path):
            continue
        with open(best_path) as fh:
            seed = json.load(fh)["seed"]
        arch = parse_arch(arch_id)
        meta_path = os.path.join(runs_root, arch_id, str(seed), "meta.json")
        with open(meta_path) as fh:
            meta = json.load(fh)
        from .data_model import ScalingStats
        scaling = {c: ScalingStats(v["mean"], v["std"])
                   for c, v in meta["scaling"].items()}
        arch = arch.with_scaling(scaling)
        with open(os.path.join(runs_root, arch_id, str(seed),
                               "params.json")) as fh:
            params = ParameterVector.from_dict(
                tuple(parameter_names(arch)), json.load(fh))
        trace = simulate(arch, params, fs, wy_start_month=args.wy_start)
        dist = annual_distribution(trace.o, fs.obs_out, fs.dates,
                                   args.wy_start)
        entries.append((arch_id, dist.percentiles, count_parameters(arch)))
        if args.years:
            years = [int(y) for y in args.years.split(",")]
            write_hydrograph_csv(
                fs, trace.o, years,
                os.path.join(args.out, f"hydrograph_{seed}_{arch_id}.csv"),
                args.wy_start)
    if not entries:
        raise ValidationError("no completed runs to report")
    os.makedirs(args.out, exist_ok=True)
    write_table_csv(entries, os.path.join(args.out, "percentiles.csv"))
    write_table_json(entries, os.path.join(args.out, "percentiles.json"))
    boxplot_svg(entries, os.path.join(args.out, "boxplot.svg"))
    print(f"reported {len(entries)} architectures to {args.out}")
    return 0


def _cmd_grad_check(args):
    arch = parse_arch(args.arch)
    rng = np.random.default_rng(args.seed)
    n = args.steps
    u = rng.exponential(8.0, n) * (rng.random(n) < 0.3)
    d = np.maximum(0.1, 3.5 + 2.5 * np.sin(2 * np.pi * np.arange(n) / 365.25))
    obs = rng.exponential(1.0, n) + 0.1
    values = rng.uniform(-1.0, 1.0, count_parameters(arch))

    def loss_fn(pvars):
        outputs, _, _, _ = run_sequence(arch, pvars, u, d, 0, False)
        err = 0.0
        for o, ob in zip(outputs, obs):
            err = (o - ob) * (o - ob) + err
        return err / n

    report = check_grad(loss_fn, values)
    print(f"max relative error: {report['max_rel_error']:.3e} "
          f"(tol {report['tol']:.0e}) -> "
          f"{'ok' if report['ok'] else 'MISMATCH'}")
    return 0 if report["ok"] else 3


_COMMANDS = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "benchmark": _cmd_benchmark,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "grad-check": _cmd_grad_check,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except PlanError as exc:
        print(f"plan error: {exc}", file=sys.stderr)
        return 4
    except NumericFaultError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
