"""Command-line entry point: run, batch, sweep, analyze, compare, gen-fundamentals."""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from typing import List, Optional

import numpy as np

from . import analytics, calibration, io
from .core import STREAM_FUNDAMENTAL, STREAM_VIEW, ConfigError, SimConfig, make_generator, validate_config
from .engine import RunFailure, World, run_batch
from .fundamentals import FundamentalSeries, approximate_fundamental, generate_fundamental

log = logging.getLogger("rlmarket")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


def _config(path: Optional[str]) -> SimConfig:
    return io.parse_config(path) if path else validate_config(SimConfig())


def _outdir(path: str, force: bool) -> str:
    if os.path.exists(path) and (not os.path.isdir(path) or os.listdir(path)):
        if not force:
            raise UsageError(f"output directory {path} is not empty (use --force to overwrite)")
        if os.path.isdir(path):
            shutil.rmtree(path)
        else:
            os.remove(path)
    os.makedirs(path, exist_ok=True)
    return path


def _seeds(cfg: SimConfig, runs: int, first: Optional[int]) -> List[int]:
    base = cfg.master_seed if first is None else first
    return [base + k for k in range(runs)]


def cmd_run(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = cfg.with_(master_seed=args.seed)
    if args.noise:
        cfg = cfg.with_(noise_agent_mode=True)
    validate_config(cfg)
    out = _outdir(args.output, args.force)
    res = World(cfg, trace=args.trace, book_snapshots=args.book).run()
    m = io.emit_run(res, out)
    log.info("run seed=%d: %d files in %s", cfg.master_seed, len(m.entries) + 1, out)
    return EXIT_OK


def cmd_batch(args) -> int:
    cfg = _config(args.config)
    if args.noise:
        cfg = cfg.with_(noise_agent_mode=True)
    runs = args.runs if args.runs is not None else cfg.run_count
    if runs < 1:
        raise UsageError("--runs must be at least 1")
    seeds = _seeds(cfg, runs, args.seed)
    out = _outdir(args.output, args.force)
    results = run_batch(cfg, seeds, workers=args.workers)
    failed = 0
    rows = []
    for seed, res in zip(seeds, results):
        sub = f"run_{seed:06d}"
        if isinstance(res, RunFailure):
            failed += 1
            log.error("seed %d failed:\n%s", seed, res.error)
            rows.append((seed, sub, "failed"))
            continue
        io.emit_run(res, os.path.join(out, sub))
        rows.append((seed, sub, "ok"))
    io._write_csv(os.path.join(out, "batch.csv"), "batch", ["seed", "directory", "status"], rows)
    ok = [r for r in results if not isinstance(r, RunFailure)]
    if ok:
        metrics = analytics.collect_metrics(analytics.result_series(ok))
        io.emit_metrics(os.path.join(out, "metrics"), metrics)
    return EXIT_RUNTIME if failed else EXIT_OK


def _real_metrics(path: str, tickers=None):
    report = io.ingest_real(path)
    log.info("%s: %s", path, report.summary())
    if not report.series:
        raise UsageError(f"{path}: no ticker survived curation")
    return report, analytics.collect_metrics(io.real_series(report, tickers))


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    report = io.ingest_real(args.real)
    log.info("%s: %s", args.real, report.summary())
    if not report.series:
        raise UsageError(f"{args.real}: no ticker survived curation")
    train, test = calibration.split_tickers(report.series, args.split_seed)
    real_train = analytics.collect_metrics(io.real_series(report, train))
    real_test = analytics.collect_metrics(io.real_series(report, test)) if test else None
    if args.grid == "full":
        points = calibration.enumerate_grid()
    else:
        points = [calibration.GridPoint(cfg.agent_count, cfg.gesture_scalar,
                                        cfg.fundamental_amplitude, int(cfg.drawdown_threshold))]
    out = args.output
    if not args.resume:
        out = _outdir(out, args.force)
    os.makedirs(out, exist_ok=True)
    seeds = _seeds(cfg, args.runs if args.runs is not None else cfg.run_count, args.seed)
    ranked = calibration.sweep(points, real_train, cfg, seeds,
                               checkpoint=os.path.join(out, "checkpoint.csv"), resume=args.resume,
                               budget=args.budget, workers=args.workers, holdout=real_test)
    calibration.write_report(os.path.join(out, "sweep_report.csv"), ranked)
    if ranked:
        best = ranked[0]
        log.info("best point I=%d zeta=%g nu=%g L=%d score=%.4f", best.agent_count,
                 best.gesture_scalar, best.fundamental_amplitude, best.drawdown_threshold, best.score)
    return EXIT_OK


def _sim_metrics(path: str):
    series = []
    for d in io.run_dirs(path):
        series.extend(io.read_market(d))
    return analytics.collect_metrics(series)


def cmd_analyze(args) -> int:
    sim = _sim_metrics(args.input)
    out = _outdir(args.output, args.force)
    io.emit_metrics(out, sim)
    return EXIT_OK


def cmd_compare(args) -> int:
    sim = _sim_metrics(args.sim)
    _, real = _real_metrics(args.real)
    out = _outdir(args.output, args.force)
    cmp = analytics.compare_sets(sim, real)
    io.emit_metrics(out, sim, cmp, real)
    log.info("mean KS over families: %.4f", cmp.score())
    return EXIT_OK


def cmd_gen_fundamentals(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg = cfg.with_(master_seed=args.seed)
    validate_config(cfg)
    out = _outdir(args.output, args.force)
    values = np.array([
        generate_fundamental(cfg.step_count, cfg.fundamental_amplitude,
                             make_generator(cfg.master_seed, STREAM_FUNDAMENTAL, j)).values
        for j in range(cfg.stock_count)
    ])
    n_views = min(args.views, cfg.agent_count)
    views = np.empty((n_views, cfg.stock_count, cfg.step_count))
    for a in range(n_views):
        for j in range(cfg.stock_count):
            f = FundamentalSeries(values[j], np.empty(0, int), cfg.fundamental_amplitude)
            views[a, j] = approximate_fundamental(
                f, make_generator(cfg.master_seed, STREAM_VIEW, a, j)).values
    io.emit_fundamentals(values, out, views)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlmarket", description="Agent-based stock market simulator")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("-c", "--config", help="key = value config file (defaults if omitted)")
        sp.add_argument("-o", "--output", required=True, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    sp = sub.add_parser("run", help="simulate one market")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--noise", action="store_true", help="agents act uniformly at random")
    sp.add_argument("--trace", action="store_true", help="write per-decision trace tables")
    sp.add_argument("--book", action="store_true", help="write order book snapshots")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("batch", help="independent runs with consecutive seeds")
    common(sp)
    sp.add_argument("--runs", type=int, help="number of runs (default run_count)")
    sp.add_argument("--seed", type=int, help="first seed (default master_seed)")
    sp.add_argument("--noise", action="store_true")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_batch)

    sp = sub.add_parser("sweep", help="score grid points against reference data")
    common(sp)
    sp.add_argument("--real", required=True, help="CSV with date,ticker,close,volume")
    sp.add_argument("--grid", choices=("point", "full"), default="point",
                    help="the config's own point, or the full hyperparameter grid")
    sp.add_argument("--runs", type=int, help="seeds per point (default run_count)")
    sp.add_argument("--seed", type=int, help="first seed (default master_seed)")
    sp.add_argument("--budget", type=int, help="maximum number of runs")
    sp.add_argument("--split-seed", type=int, default=0, help="seed of the train/test ticker split")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("analyze", help="market statistics of a run or batch directory")
    sp.add_argument("-i", "--input", required=True)
    common(sp, config=False)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("compare", help="simulated vs reference statistics")
    sp.add_argument("--sim", required=True, help="run or batch directory")
    sp.add_argument("--real", required=True, help="CSV with date,ticker,close,volume")
    common(sp, config=False)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gen-fundamentals", help="write fundamental value series")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--views", type=int, default=3, help="agents whose biased views are exported")
    sp.set_defaults(func=cmd_gen_fundamentals)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; report it as a validation error
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, io.ConfigFileError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        log.debug("traceback", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
