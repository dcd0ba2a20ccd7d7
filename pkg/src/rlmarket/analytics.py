"""Market statistics computed from price and volume series alone, shared
histograms, distribution distances and the learning-curve comparison."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from .core import T_M, T_W, T_Y

# lag sets per metric family
VOL_LAGS = (2 * T_W, 3 * T_M, T_Y)
AUTOCORR_LAGS = (2 * T_W, 3 * T_M, T_Y)
VOL_AUTOCORR_LAG = 2 * T_W
SHIFTS_WEEK = (1, 2, 3, 4, 5)
SHIFTS_FORTNIGHT = (2, 4, 6, 8, 10)

FAMILIES = (
    "log_returns",
    "volatility",
    "return_autocorr",
    "volatility_autocorr",
    "volume_autocorr",
    "shifted_return_autocorr",
    "mean_shifted_autocorr_week",
    "mean_shifted_autocorr_fortnight",
    "run_lengths",
)

MAX_BINS = 512


# -- series transforms ------------------------------------------------------

def log_returns(prices) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    if p.size < 2:
        raise ValueError("need at least two prices")
    bad = np.flatnonzero(~(p > 0.0))
    if bad.size:
        raise ValueError(f"non-positive price {p[bad[0]]!r} at index {bad[0]}")
    return np.diff(np.log(p))


def volatility_series(prices, delta: int) -> np.ndarray:
    """sigma/P(t) with sigma the population s.d. of P over [t-delta, t], for t >= delta."""
    if delta < 2:
        raise ValueError("volatility lag must be at least 2")
    p = np.asarray(prices, dtype=float)
    if p.size <= delta:
        raise ValueError(f"series of length {p.size} too short for lag {delta}")
    windows = sliding_window_view(p, delta + 1)
    return windows.std(axis=1) / p[delta:]


def _paired_pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Pearson correlation; NaN where either row is flat."""
    da = a - a.mean(axis=1, keepdims=True)
    db = b - b.mean(axis=1, keepdims=True)
    va = (da * da).sum(axis=1)
    vb = (db * db).sum(axis=1)
    num = (da * db).sum(axis=1)
    den = np.sqrt(va * vb)
    # flat up to round-off relative to the window scale
    scale_a = np.abs(a).max(axis=1) ** 2 * a.shape[1]
    scale_b = np.abs(b).max(axis=1) ** 2 * b.shape[1]
    flat = (va <= 1e-24 * scale_a) | (vb <= 1e-24 * scale_b) | (den == 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(flat, np.nan, num / np.where(flat, 1.0, den))
    return np.clip(r, -1.0, 1.0)


def shifted_autocorr(series, length: int, shift: int) -> np.ndarray:
    """Correlation of [t-length, t] with [t-length-shift, t-shift] for every
    admissible t; flat windows give NaN."""
    if shift < 1:
        raise ValueError("shift must be at least 1")
    if length < 1:
        raise ValueError("window length must be at least 1")
    x = np.asarray(series, dtype=float)
    if x.size < length + shift + 1:
        raise ValueError(f"series of length {x.size} too short for window {length} and shift {shift}")
    w = sliding_window_view(x, length + 1)
    return _paired_pearson(w[shift:], w[:-shift])


def adjacent_autocorr(series, delta: int) -> np.ndarray:
    """Correlation of [t-delta, t] with [t-2delta, t-delta]."""
    return shifted_autocorr(series, delta, delta)


def blended_autocorr(series, length: int, shift: int) -> np.ndarray:
    return shifted_autocorr(series, length, shift)


def mean_autocorr_by_shift(series, length: int, shifts: Sequence[int]) -> Dict[int, float]:
    """Mean over t of the shifted autocorrelation for each shift (flat windows skipped)."""
    out = {}
    for d in shifts:
        r = shifted_autocorr(series, length, d)
        r = r[~np.isnan(r)]
        out[d] = float(r.mean()) if r.size else float("nan")
    return out


def run_list(prices) -> List[int]:
    """Signed lengths of maximal strictly rising (+) and falling (-) runs.
    Unchanged days end a run and belong to none."""
    p = np.asarray(prices, dtype=float)
    if p.size < 2:
        raise ValueError("need at least two prices")
    runs = []
    cur = 0
    for s in np.sign(np.diff(p)):
        if s == 0:
            if cur:
                runs.append(cur)
            cur = 0
        elif cur and (s > 0) == (cur > 0):
            cur += int(s)
        else:
            if cur:
                runs.append(cur)
            cur = int(s)
    if cur:
        runs.append(cur)
    return runs


def run_lengths(prices) -> Counter:
    return Counter(run_list(prices))


# -- distributions ----------------------------------------------------------

@dataclass
class MetricDistribution:
    family: str
    params: str
    values: np.ndarray
    edges: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    missing: int = 0

    @property
    def key(self) -> Tuple[str, str]:
        return self.family, self.params

    def with_histogram(self, edges: np.ndarray) -> "MetricDistribution":
        counts, _ = np.histogram(np.clip(self.values, edges[0], edges[-1]), bins=edges)
        return MetricDistribution(self.family, self.params, self.values, edges, counts, self.missing)


def shared_edges(*samples: np.ndarray) -> np.ndarray:
    """Freedman-Diaconis bin edges over the pooled samples."""
    pooled = np.concatenate([np.asarray(s, float) for s in samples])
    if pooled.size == 0:
        return np.array([0.0, 1.0])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi <= lo:
        return np.array([lo - 0.5, hi + 0.5])
    q75, q25 = np.percentile(pooled, [75, 25])
    width = 2.0 * (q75 - q25) * pooled.size ** (-1.0 / 3.0)
    if width <= 0.0:
        n = int(np.ceil(np.sqrt(pooled.size)))
    else:
        n = int(np.ceil((hi - lo) / width))
    n = min(max(n, 1), MAX_BINS)
    return np.linspace(lo, hi, n + 1)


@dataclass
class Distance:
    family: str
    params: str
    ks: float
    mean_diff: float
    var_diff: float
    n_sim: int
    n_real: int


def compare(sim: MetricDistribution, real: MetricDistribution) -> Distance:
    a, b = np.asarray(sim.values, float), np.asarray(real.values, float)
    if a.size == 0 or b.size == 0:
        raise ValueError(f"empty sample for {sim.family} {sim.params}")
    ks = float(stats.ks_2samp(a, b).statistic)
    return Distance(sim.family, sim.params, ks, float(a.mean() - b.mean()),
                    float(a.var() - b.var()), int(a.size), int(b.size))


def _finite(x: np.ndarray) -> Tuple[np.ndarray, int]:
    ok = ~np.isnan(x)
    return x[ok], int(x.size - ok.sum())


def series_metrics(prices, volumes=None) -> Dict[Tuple[str, str], Tuple[np.ndarray, int]]:
    """Every metric sample of one price (and volume) series, keyed by
    (family, params); each value is (finite samples, skipped count).
    Metrics whose lag exceeds the series are left out."""
    p = np.asarray(prices, dtype=float)
    r = log_returns(p)
    out: Dict[Tuple[str, str], Tuple[np.ndarray, int]] = {}
    out[("log_returns", "")] = (r, 0)
    for d in VOL_LAGS:
        if p.size > d:
            out[("volatility", f"delta={d}")] = (volatility_series(p, d), 0)
    for d in AUTOCORR_LAGS:
        if r.size >= 2 * d + 1:
            out[("return_autocorr", f"delta={d}")] = _finite(adjacent_autocorr(r, d))
    d = VOL_AUTOCORR_LAG
    if p.size > d:
        v = volatility_series(p, d)
        if v.size >= 2 * d + 1:
            out[("volatility_autocorr", f"delta={d}")] = _finite(adjacent_autocorr(v, d))
    if volumes is not None:
        vol = np.asarray(volumes, dtype=float)
        for d in AUTOCORR_LAGS:
            if vol.size >= 2 * d + 1:
                out[("volume_autocorr", f"delta={d}")] = _finite(adjacent_autocorr(vol, d))
    for d in SHIFTS_WEEK:
        if r.size >= T_W + d + 1:
            out[("shifted_return_autocorr", f"length={T_W},shift={d}")] = _finite(
                shifted_autocorr(r, T_W, d))
    for fam, length, shifts in (("mean_shifted_autocorr_week", T_W, SHIFTS_WEEK),
                                ("mean_shifted_autocorr_fortnight", 2 * T_W, SHIFTS_FORTNIGHT)):
        if r.size >= length + max(shifts) + 1:
            for d, m in mean_autocorr_by_shift(r, length, shifts).items():
                out[(fam, f"length={length},shift={d}")] = _finite(np.array([m]))
    out[("run_lengths", "")] = (np.array(run_list(p), dtype=float), 0)
    return out


def collect_metrics(series: Iterable[Tuple[Sequence[float], Optional[Sequence[float]]]]) -> List[MetricDistribution]:
    """Pool per-series samples over runs or tickers, in a canonical key order."""
    values: Dict[Tuple[str, str], List[np.ndarray]] = {}
    missing: Dict[Tuple[str, str], int] = {}
    for prices, volumes in series:
        for key, (x, skipped) in series_metrics(prices, volumes).items():
            values.setdefault(key, []).append(x)
            missing[key] = missing.get(key, 0) + skipped
    order = {f: i for i, f in enumerate(FAMILIES)}
    keys = sorted(values, key=lambda k: (order[k[0]], _param_sort(k[1])))
    return [MetricDistribution(k[0], k[1], np.concatenate(values[k]), missing=missing[k]) for k in keys]


def _param_sort(params: str):
    return tuple(int(v.split("=")[1]) for v in params.split(",")) if params else ()


def result_series(results) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(prices, volumes) pairs of every stock of every run."""
    out = []
    for res in results:
        for j in range(res.prices.shape[0]):
            out.append((res.prices[j], res.volumes[j]))
    return out


@dataclass
class Comparison:
    distances: List[Distance]
    histograms: List[Tuple[str, MetricDistribution]] = field(default_factory=list)

    def family_scores(self) -> Dict[str, float]:
        """Mean KS statistic per family over its lags or shifts."""
        acc: Dict[str, List[float]] = {}
        for d in self.distances:
            acc.setdefault(d.family, []).append(d.ks)
        return {f: float(np.mean(acc[f])) for f in FAMILIES if f in acc}

    def score(self) -> float:
        fam = self.family_scores()
        return float(np.mean(list(fam.values()))) if fam else float("inf")


def compare_sets(sim: List[MetricDistribution], real: List[MetricDistribution]) -> Comparison:
    """Distances and shared-edge histograms for every metric present in both sets."""
    real_by_key = {m.key: m for m in real}
    cmp = Comparison([])
    for s in sim:
        r = real_by_key.get(s.key)
        if r is None or s.values.size == 0 or r.values.size == 0:
            continue
        cmp.distances.append(compare(s, r))
        edges = shared_edges(s.values, r.values)
        cmp.histograms.append(("sim", s.with_histogram(edges)))
        cmp.histograms.append(("real", r.with_histogram(edges)))
    return cmp


# -- learning curves --------------------------------------------------------

@dataclass
class LearningCurves:
    steps: np.ndarray  # absolute step indices of the final tenth
    ytd: np.ndarray  # mean year-to-date return of the top decile per step
    sorted_annual: np.ndarray  # element-wise mean of each run's sorted annual returns

    @property
    def mean_ytd(self) -> float:
        return float(np.nanmean(self.ytd))


def top_decile(nav_row: np.ndarray) -> np.ndarray:
    n = max(1, nav_row.size // 10)
    # stable: ties resolve to the lower agent index
    return np.argsort(-nav_row, kind="stable")[:n]


def ytd_returns(nav: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """(len(steps), I) returns since the latest year boundary at or before each step."""
    starts = (steps // T_Y) * T_Y
    with np.errstate(divide="ignore", invalid="ignore"):
        return nav[steps] / nav[starts] - 1.0


def batch_curves(results) -> LearningCurves:
    ytds, annual = [], []
    steps = None
    for res in results:
        nav = res.nav
        T = nav.shape[0]
        t0 = int(0.9 * T)
        top = top_decile(nav[t0])
        steps = np.arange(t0, T)
        ytds.append(np.nanmean(ytd_returns(nav, steps)[:, top], axis=1))
        start = max(0, T - 1 - T_Y)
        with np.errstate(divide="ignore", invalid="ignore"):
            yr = nav[T - 1, top] / nav[start, top] - 1.0
        annual.append(np.sort(yr)[::-1])
    if steps is None:
        raise ValueError("empty batch")
    width = min(len(a) for a in annual)
    return LearningCurves(steps, np.mean(ytds, axis=0),
                          np.nanmean([a[:width] for a in annual], axis=0))


def learning_curves(results, baseline) -> Tuple[LearningCurves, LearningCurves]:
    """Top-decile curves of the learning batch and of the noise baseline."""
    rl, noise = batch_curves(results), batch_curves(baseline)
    if rl.steps.shape != noise.steps.shape:
        raise ValueError("batches differ in step count")
    return rl, noise
