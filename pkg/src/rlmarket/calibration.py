"""Hyperparameter grid, scoring of simulated statistics against reference
data, and a resumable sweep."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .analytics import FAMILIES, Comparison, MetricDistribution, collect_metrics, compare_sets, result_series
from .core import SimConfig
from .engine import RunFailure, run_batch

log = logging.getLogger(__name__)

AGENT_COUNTS = tuple(range(500, 5001, 500))
GESTURE_SCALARS = tuple(1.0 + 0.5 * k for k in range(5))
AMPLITUDES = tuple(round(0.1 + 0.2 * k, 10) for k in range(8))
DRAWDOWN_OFFSETS = tuple(range(-50, 31, 10))

CHECKPOINT_HEADER = "# rlmarket sweep checkpoint v1"
POINT_FIELDS = ("agent_count", "gesture_scalar", "fundamental_amplitude", "drawdown_threshold")


@dataclass
class GridPoint:
    agent_count: int
    gesture_scalar: float
    fundamental_amplitude: float
    drawdown_threshold: int
    score: float = math.nan
    # same statistic against the held-out half of the reference data
    holdout_score: float = math.nan
    distances: Dict[str, float] = field(default_factory=dict)
    note: str = ""

    @property
    def key(self) -> Tuple[int, float, float, int]:
        return (self.agent_count, self.gesture_scalar, self.fundamental_amplitude, self.drawdown_threshold)

    def apply(self, cfg: SimConfig) -> SimConfig:
        return cfg.with_(agent_count=self.agent_count, gesture_scalar=self.gesture_scalar,
                         fundamental_amplitude=self.fundamental_amplitude,
                         drawdown_threshold=float(self.drawdown_threshold))


def enumerate_grid() -> List[GridPoint]:
    return [GridPoint(i, z, n, d) for i, z, n, d in
            itertools.product(AGENT_COUNTS, GESTURE_SCALARS, AMPLITUDES, DRAWDOWN_OFFSETS)]


Scorer = Callable[[Comparison], float]


def default_scorer(cmp: Comparison) -> float:
    """Mean KS statistic over the metric families."""
    return cmp.score()


def score_point(p: GridPoint, real: List[MetricDistribution], cfg: SimConfig,
                seeds: Sequence[int], scorer: Scorer = default_scorer, workers: int = 1,
                holdout: Optional[List[MetricDistribution]] = None) -> GridPoint:
    out = GridPoint(*p.key)
    try:
        results = run_batch(p.apply(cfg), list(seeds), workers=workers)
    except Exception as exc:  # config errors and the like
        out.score, out.note = math.inf, f"{type(exc).__name__}: {exc}"
        return out
    failed = [r for r in results if isinstance(r, RunFailure)]
    if failed:
        out.score = math.inf
        out.note = f"seed {failed[0].seed} failed: {failed[0].error.strip().splitlines()[-1]}"
        return out
    # pooling is order-free, so the score does not depend on seed order
    sim = collect_metrics(result_series(results))
    cmp = compare_sets(sim, real)
    out.distances = cmp.family_scores()
    out.score = scorer(cmp)
    if holdout is not None:
        out.holdout_score = scorer(compare_sets(sim, holdout))
    return out


def _score_job(args) -> GridPoint:
    p, real, cfg, seeds, holdout = args
    return score_point(p, real, cfg, seeds, holdout=holdout)


def rank(points: Iterable[GridPoint]) -> List[GridPoint]:
    """Total order: score, then the grid coordinates."""
    return sorted(points, key=lambda p: (p.score if not math.isnan(p.score) else math.inf, p.key))


def _row(p: GridPoint) -> List[str]:
    return [str(p.agent_count), repr(p.gesture_scalar), repr(p.fundamental_amplitude),
            str(p.drawdown_threshold), repr(p.score), repr(p.holdout_score)] + [
        repr(p.distances.get(f, math.nan)) for f in FAMILIES] + [p.note]


def _columns() -> List[str]:
    return list(POINT_FIELDS) + ["score", "holdout_score"] + [f"ks_{f}" for f in FAMILIES] + ["note"]


def load_checkpoint(path: str) -> Dict[tuple, GridPoint]:
    """Completed points from a checkpoint; unreadable lines are skipped so
    their points are recomputed."""
    done: Dict[tuple, GridPoint] = {}
    if not os.path.exists(path):
        return done
    cols = _columns()
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            if lineno == 1 or line.startswith("#") or not line.strip():
                continue
            try:
                row = next(csv.reader([line]))
                if row == cols:
                    continue
                if len(row) != len(cols):
                    raise ValueError(f"expected {len(cols)} fields, got {len(row)}")
                p = GridPoint(int(row[0]), float(row[1]), float(row[2]), int(row[3]), float(row[4]),
                              float(row[5]))
                for f, v in zip(FAMILIES, row[6:6 + len(FAMILIES)]):
                    v = float(v)
                    if not math.isnan(v):
                        p.distances[f] = v
                p.note = row[-1]
            except (ValueError, StopIteration) as exc:
                log.warning("checkpoint %s line %d unreadable (%s); point will be recomputed",
                            path, lineno, exc)
                continue
            done[p.key] = p
    return done


def _append(path: str, p: GridPoint) -> None:
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    torn = False
    if not fresh:
        with open(path, "rb") as fh:
            fh.seek(-1, os.SEEK_END)
            torn = fh.read(1) != b"\n"
    with open(path, "a", newline="") as fh:
        if fresh:
            fh.write(CHECKPOINT_HEADER + "\n")
            csv.writer(fh).writerow(_columns())
        elif torn:
            # an interrupted write left a partial line; keep it on its own
            fh.write("\n")
        csv.writer(fh).writerow(_row(p))
        fh.flush()
        os.fsync(fh.fileno())


def sweep(points: Sequence[GridPoint], real: List[MetricDistribution], cfg: SimConfig,
          seeds: Sequence[int], checkpoint: Optional[str] = None, resume: bool = False,
          budget: Optional[int] = None, workers: int = 1,
          holdout: Optional[List[MetricDistribution]] = None) -> List[GridPoint]:
    """Score ``points`` (at most ``budget`` runs, i.e. points x seeds) and
    return them ranked. Finished points are appended to ``checkpoint``; with
    ``resume`` those already there are not recomputed."""
    points = list(points)
    if budget is not None:
        points = points[: max(0, budget // max(1, len(seeds)))]
    done: Dict[tuple, GridPoint] = {}
    if checkpoint and resume:
        done = load_checkpoint(checkpoint)
    elif checkpoint and os.path.exists(checkpoint):
        os.remove(checkpoint)
    todo = [p for p in points if p.key not in done]
    log.info("sweep: %d points, %d from checkpoint", len(points), len(points) - len(todo))
    jobs = [(p, real, cfg, list(seeds), holdout) for p in todo]
    if workers <= 1:
        scored = (_score_job(j) for j in jobs)
        for p in scored:
            done[p.key] = p
            if checkpoint:
                _append(checkpoint, p)
    else:
        # run-level parallelism lives here; each point runs its seeds serially
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for p in pool.map(_score_job, jobs):
                done[p.key] = p
                if checkpoint:
                    _append(checkpoint, p)
    return rank(done[p.key] for p in points)


def write_report(path: str, ranked: Sequence[GridPoint]) -> int:
    with open(path, "w", newline="") as fh:
        fh.write("# rlmarket sweep_report v1\n")
        w = csv.writer(fh)
        w.writerow(_columns() + ["rank"])
        for i, p in enumerate(ranked, 1):
            w.writerow(_row(p) + [str(i)])
    return len(ranked)


def split_tickers(tickers: Iterable[str], seed: int = 0) -> Tuple[List[str], List[str]]:
    """Deterministic random half split into (train, test)."""
    names = sorted(set(tickers))
    random.Random(seed).shuffle(names)
    half = (len(names) + 1) // 2
    return sorted(names[:half]), sorted(names[half:])
