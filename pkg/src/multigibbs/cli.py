"""Command-line entry point: ``multigibbs <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .experiments import EXPERIMENTS, experiment_harness, run_replicate, summarise
from .mctest import RANK, STUDENTISED, interaction_test_matrix
from .model import read_raster
from .pattern import Window, read_pattern_csv, write_pattern_csv
from .pipeline import PipelineConfig, StageError, read_sim_params, run_pipeline, simulate_from_params, write_pca
from .report import write_matrix_csv, write_pgm, write_rows
from .simulate import substream

log = logging.getLogger("multigibbs")


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as err:  # noqa: BLE001
        raise StageError(name, f"{type(err).__name__}: {err}") from err


def _window(values):
    return None if values is None else Window(*values)


def cmd_simulate(args) -> None:
    if args.experiment is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows, truth = [], None
        for r in range(args.replicates):
            data = _stage("simulate", experiment_harness, args.experiment,
                          substream(args.seed, "experiment", args.experiment, r))
            name = f"replicate_{r + 1:03d}.csv"
            write_pattern_csv(data.pattern, out / name)
            rows.append([r + 1, name, len(data.pattern), " ".join(map(str, data.pattern.counts))])
            truth = data.truth
        write_rows(out / "manifest.csv", ["replicate", "file", "n_points", "counts"], rows)
        write_matrix_csv(truth.astype(np.int64), out / "truth.csv")
        print(f"wrote {args.replicates} replicates to {out}")
        return
    if args.params is None:
        raise StageError("simulate", "give a parameter file or --experiment")
    params = _stage("config", read_sim_params, args.params)
    pat = _stage("simulate", simulate_from_params, params, substream(args.seed, "simulate"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pattern_csv(pat, out)
    write_matrix_csv(params.truth.astype(np.int64), out.with_name(out.stem + "_truth.csv"))
    print(f"wrote {len(pat)} points to {out}")


def _run_config(args, fit_only: bool) -> None:
    cfg = _stage("config", PipelineConfig.read, args.config)
    rep = _stage("report", run_pipeline, cfg, fit_only=fit_only)
    for rule, g in rep.gammas.items():
        print(f"{rule:10s} gamma={g:.6g} detected={int(np.triu(rep.matrices[rule]).sum())}")
    print(f"outputs in {rep.output}")


def cmd_fit(args) -> None:
    _run_config(args, fit_only=True)


def cmd_cv(args) -> None:
    _run_config(args, fit_only=False)


def cmd_mctest(args) -> None:
    pat = _stage("load", read_pattern_csv, args.pattern, _window(args.window))
    lo, hi, n = args.grid
    res = _stage("mctest", interaction_test_matrix, pat, np.linspace(lo, hi, int(n)), s=args.s,
                 bandwidth=args.bandwidth, cell=args.cell, test=args.test, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(res.pvalues, out / "pvalues.csv")
    write_matrix_csv(res.indicators.astype(np.int64), out / "indicators.csv")
    write_pgm(res.indicators, out / "indicators.pgm")
    print(f"{int(res.indicators.sum())} of {res.indicators.size} pairs significant; outputs in {out}")


def cmd_pca(args) -> None:
    rasters = [_stage("load", read_raster, f) for f in args.rasters]
    names = _stage("pca", write_pca, rasters, args.k, args.out)
    print(f"wrote {', '.join(names)} to {args.out}")


def cmd_experiment(args) -> None:
    mc = None
    if args.mc:
        mc = dict(s=args.s, test=args.test)
        if args.grid is not None:
            lo, hi, n = args.grid
            mc["r"] = np.linspace(lo, hi, int(n))
    results = []
    for r in range(args.replicates):
        res = _stage("experiment", run_replicate, args.id, r, seed=args.seed, mc=mc)
        results.append(res)
        log.info("replicate %d done", r + 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(results[0].rates[next(iter(results[0].rates))])
    rows = [[res.replicate + 1, rule] + [rates[k] for k in keys]
            for res in results for rule, rates in res.rates.items()]
    write_rows(out / "rates.csv", ["replicate", "rule"] + keys, rows)
    summ = summarise(results)
    srows = [[rule] + [v for k in keys for v in summ[rule][k]] for rule in summ]
    write_rows(out / "summary.csv", ["rule"] + [f"{k}_{s}" for k in keys for s in ("mean", "sd")], srows)
    for rule, stats in summ.items():
        print(f"{rule:16s} TP {stats['tp'][0]:.2f} ({stats['tp'][1]:.2f})  FP {stats['fp'][0]:.2f} ({stats['fp'][1]:.2f})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multigibbs", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a pattern from a parameter file or an experiment")
    p.add_argument("params", nargs="?")
    p.add_argument("--experiment", type=int, choices=EXPERIMENTS)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV file, or directory with --experiment")
    p.set_defaults(fn=cmd_simulate)

    for name, fn, text in (("fit", cmd_fit, "penalty path and AIC0.5 from a config file"),
                           ("cv", cmd_cv, "full run with cross-validation from a config file")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.set_defaults(fn=fn)

    p = sub.add_parser("mctest", help="Monte Carlo interaction tests")
    p.add_argument("pattern")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--grid", type=float, nargs=3, default=(0.5, 15.0, 30), metavar=("RMIN", "RMAX", "N"))
    p.add_argument("--s", type=int, default=999)
    p.add_argument("--bandwidth", type=float, default=30.0)
    p.add_argument("--cell", type=float, default=2.0)
    p.add_argument("--test", choices=(STUDENTISED, RANK), default=STUDENTISED)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_mctest)

    p = sub.add_parser("pca", help="principal-component maps of covariate rasters")
    p.add_argument("rasters", nargs="+")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pca)

    p = sub.add_parser("experiment", help="replicated simulation study")
    p.add_argument("id", type=int, choices=EXPERIMENTS)
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mc", action="store_true", help="add the Monte Carlo test matrix")
    p.add_argument("--s", type=int, default=199)
    p.add_argument("--test", choices=(STUDENTISED, RANK), default=STUDENTISED)
    p.add_argument("--grid", type=float, nargs=3, metavar=("RMIN", "RMAX", "N"))
    p.set_defaults(fn=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except StageError as err:
        print(f"multigibbs: error {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
