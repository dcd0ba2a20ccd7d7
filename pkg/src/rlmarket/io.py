"""Config files, reference-data ingestion and CSV output with a checksummed
manifest."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field, fields
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .analytics import Comparison, MetricDistribution, shared_edges
from .core import SimConfig, config_problems
from .fundamentals import jump_statistics

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# short names accepted in config files
ALIASES = {
    "i": "agent_count",
    "j": "stock_count",
    "t": "step_count",
    "s": "run_count",
    "b": "broker_fee",
    "r": "annual_risk_free",
    "d": "annual_dividend",
    "zeta": "gesture_scalar",
    "ζ": "gesture_scalar",
    "nu": "fundamental_amplitude",
    "ν": "fundamental_amplitude",
    "l": "drawdown_threshold",
    "𝓛": "drawdown_threshold",
    "seed": "master_seed",
    "noise": "noise_agent_mode",
}

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


class ConfigFileError(ValueError):
    def __init__(self, path: str, problems: Sequence[Tuple[int, str]]):
        self.path = path
        self.problems = list(problems)
        super().__init__("; ".join(f"{path}:{n}: {msg}" for n, msg in self.problems))


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in TRUE_WORDS:
            return True
        if low in FALSE_WORDS:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        v = float(raw)
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(v)
    return float(raw)


def parse_config_text(text: str, path: str = "<config>") -> SimConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment. Keys are field
    names or their short aliases (I, J, T, S, b, R, D, zeta, nu, L, seed)."""
    defaults = SimConfig()
    names = set(SimConfig.field_names())
    values: Dict[str, object] = {}
    where: Dict[str, int] = {}
    problems: List[Tuple[int, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append((lineno, f"malformed line {line!r} (expected key = value)"))
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        name = key if key in names else ALIASES.get(key.lower(), ALIASES.get(key))
        if name is None:
            problems.append((lineno, f"unknown key {key!r}"))
            continue
        if name in values:
            problems.append((lineno, f"duplicate key {key!r} (first set on line {where[name]})"))
            continue
        try:
            values[name] = _coerce(raw, getattr(defaults, name))
        except ValueError as exc:
            problems.append((lineno, str(exc)))
            continue
        where[name] = lineno
        # bounds are checked one key at a time so errors point at their line
        for msg in config_problems(defaults.with_(**{name: values[name]})):
            if msg.startswith(name):
                problems.append((lineno, msg))
    if problems:
        raise ConfigFileError(path, problems)
    cfg = defaults.with_(**values)
    rest = config_problems(cfg)
    if rest:
        raise ConfigFileError(path, [(0, m) for m in rest])
    return cfg


def parse_config(path: str) -> SimConfig:
    if not os.path.exists(path):
        raise ConfigFileError(path, [(0, "file not found")])
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), path)


def format_config(cfg: SimConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))


# -- reference data ---------------------------------------------------------

@dataclass
class TickerSeries:
    ticker: str
    dates: List[dt.date]
    close: np.ndarray
    volume: np.ndarray
    splits: List[Tuple[dt.date, float]] = field(default_factory=list)


@dataclass
class IngestReport:
    series: Dict[str, TickerSeries]
    input_tickers: int
    dropped: Dict[str, str]
    rejected_rows: List[Tuple[int, str]]

    @property
    def retained(self) -> int:
        return len(self.series)

    def summary(self) -> str:
        n_splits = sum(len(s.splits) for s in self.series.values())
        return (f"{self.input_tickers} tickers read, {self.retained} retained, "
                f"{len(self.dropped)} dropped, {len(self.rejected_rows)} rows rejected, "
                f"{n_splits} splits adjusted")


SPLIT_FACTOR = 1.9
VOLUME_SPIKE = 1.5
VOLUME_LOOKBACK = 20


def _split_ratio(ratio: float) -> float:
    """Snap a price ratio to the nearest whole split ratio when close to one."""
    k = round(ratio)
    return float(k) if k >= 2 and abs(ratio - k) <= 0.1 * k else ratio


def adjust_splits(close: np.ndarray, volume: np.ndarray, factor: float = SPLIT_FACTOR,
                  spike: float = VOLUME_SPIKE) -> Tuple[np.ndarray, np.ndarray, List[Tuple[int, float]]]:
    """Back-adjust forward splits: a close-to-close drop by ``factor`` or more
    with volume at least ``spike`` times its recent median. Earlier closes are
    divided and earlier volumes multiplied by the split ratio."""
    close = close.astype(float).copy()
    volume = volume.astype(float).copy()
    found = []
    for t in range(1, close.size):
        ratio = close[t - 1] / close[t]
        if ratio < factor:
            continue
        base = np.median(volume[max(0, t - VOLUME_LOOKBACK):t])
        if base > 0 and volume[t] < spike * base:
            continue
        k = _split_ratio(ratio)
        close[:t] /= k
        volume[:t] *= k
        found.append((t, k))
    return close, volume, found


def ingest_rows(rows: Iterable[Tuple[int, Dict[str, str]]], factor: float = SPLIT_FACTOR,
                spike: float = VOLUME_SPIKE) -> IngestReport:
    per: Dict[str, Dict[dt.date, Tuple[float, float]]] = {}
    rejected: List[Tuple[int, str]] = []
    for lineno, row in rows:
        try:
            date = dt.date.fromisoformat(row["date"].strip())
            ticker = row["ticker"].strip()
            close = float(row["close"])
            volume = float(row["volume"])
        except (KeyError, ValueError, AttributeError, TypeError) as exc:
            rejected.append((lineno, f"unparseable row: {exc}"))
            continue
        if not ticker:
            rejected.append((lineno, "empty ticker"))
            continue
        if not (close > 0.0) or not math.isfinite(close):
            rejected.append((lineno, f"non-positive close {close!r}"))
            continue
        if volume < 0.0 or not math.isfinite(volume):
            rejected.append((lineno, f"invalid volume {volume!r}"))
            continue
        days = per.setdefault(ticker, {})
        if date in days:
            rejected.append((lineno, f"duplicate {ticker} row for {date}"))
            continue
        days[date] = (close, volume)
    calendar = sorted({d for days in per.values() for d in days})
    out: Dict[str, TickerSeries] = {}
    dropped: Dict[str, str] = {}
    for ticker in sorted(per):
        days = per[ticker]
        if len(days) != len(calendar):
            dropped[ticker] = f"{len(calendar) - len(days)} missing dates"
            continue
        if len(days) < 2:
            dropped[ticker] = "fewer than two dates"
            continue
        close = np.array([days[d][0] for d in calendar])
        volume = np.array([days[d][1] for d in calendar])
        close, volume, found = adjust_splits(close, volume, factor, spike)
        out[ticker] = TickerSeries(ticker, list(calendar), close, volume,
                                   [(calendar[t], k) for t, k in found])
    for lineno, msg in rejected:
        log.warning("row %d rejected: %s", lineno, msg)
    return IngestReport(out, len(per), dropped, rejected)


def ingest_real(path: str, factor: float = SPLIT_FACTOR, spike: float = VOLUME_SPIKE) -> IngestReport:
    """Read ``date,ticker,close,volume`` rows, keep tickers traded on every
    date of the file's calendar, and back-adjust splits."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = {"date", "ticker", "close", "volume"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: header lacks {sorted(missing)}")
        # the reader skips comment lines, so line numbers count data rows after the header
        rows = [(n + 2, row) for n, row in enumerate(reader)]
    return ingest_rows(rows, factor, spike)


def write_real(path: str, report: IngestReport) -> int:
    rows = []
    for s in report.series.values():
        for d, c, v in zip(s.dates, s.close, s.volume):
            rows.append((d.isoformat(), s.ticker, _num(c), _num(v)))
    return _write_csv(path, "real", ["date", "ticker", "close", "volume"], rows)


def real_series(report: IngestReport, tickers: Optional[Iterable[str]] = None):
    names = sorted(report.series) if tickers is None else sorted(tickers)
    return [(report.series[n].close, report.series[n].volume) for n in names]


# -- CSV output -------------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: str, kind: str, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    n = 0
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# rlmarket {kind} v{SCHEMA_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_num(v) for v in row])
                n += 1
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return n


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class Manifest:
    outdir: str
    entries: List[Tuple[str, int, str]] = field(default_factory=list)

    def add(self, name: str, rows: int) -> None:
        self.entries.append((name, rows, sha256_file(os.path.join(self.outdir, name))))

    def write(self) -> str:
        path = os.path.join(self.outdir, "manifest.csv")
        _write_csv(path, "manifest", ["file", "rows", "sha256"], self.entries)
        return path

    def checksums(self) -> Dict[str, str]:
        return {name: digest for name, _, digest in self.entries}


def read_manifest(path: str) -> Dict[str, Tuple[int, str]]:
    out = {}
    for row in _read_csv(path):
        out[row["file"]] = (int(row["rows"]), row["sha256"])
    return out


FORECAST_TRACE_COLUMNS = ["t", "agent", "stock", "state", "action", "forecast", "reward"]
TRADE_TRACE_COLUMNS = ["t", "agent", "stock", "state", "action", "side", "price", "quantity",
                       "gate", "reward"]


def _padded(rows, width):
    for r in rows:
        yield tuple(r) + ("",) * (width - len(r))


def emit_run(result, outdir: str) -> Manifest:
    """Write every table of one run and its manifest."""
    os.makedirs(outdir, exist_ok=True)
    m = Manifest(outdir)
    J, T = result.prices.shape

    def put(name, kind, header, rows):
        m.add(name, _write_csv(os.path.join(outdir, name), kind, header, rows))

    with open(os.path.join(outdir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(result.config))
    m.add("config.txt", len(fields(result.config)))
    put("prices.csv", "prices", ["t", "stock", "price", "volume", "spread"],
        ((t, j, result.prices[j, t], result.volumes[j, t], result.spreads[j, t])
         for t in range(T) for j in range(J)))
    put("fundamentals.csv", "fundamentals", ["t", "stock", "value"],
        ((t, j, result.fundamentals[j, t]) for t in range(T) for j in range(J)))
    bankrupt_at = {a: t for a, t in result.bankruptcies}
    params = result.agent_params
    pnames = list(params[0]) if params else []
    annual = result.annual_returns
    put("agents.csv", "agents",
        ["agent"] + pnames + ["final_bonds"] + [f"holdings_{j}" for j in range(J)]
        + ["final_nav", "bankrupt_at"] + [f"annual_return_{y}" for y in range(annual.shape[1])],
        ((i, *(p[k] for k in pnames), result.final_bonds[i], *result.final_holdings[i],
          result.nav[-1, i], bankrupt_at.get(i, -1), *annual[i]) for i, p in enumerate(params)))
    n_agents = result.nav.shape[1]
    put("nav.csv", "nav", ["t"] + [f"agent_{i}" for i in range(n_agents)],
        ((t, *result.nav[t]) for t in range(result.nav.shape[0])))
    put("bankruptcies.csv", "bankruptcies", ["agent", "t"], result.bankruptcies)
    led = result.ledger
    if led:
        put("ledger.csv", "ledger",
            ["t", "bonds_before", "interest", "dividends", "fees", "bonds_after"],
            ((t, led["bonds_before"][t], led["interest"][t], led["dividends"][t],
              led["fees"][t], led["bonds_after"][t]) for t in range(len(led["fees"]))))
    if result.forecast_trace:
        put("forecast_trace.csv", "forecast_trace", FORECAST_TRACE_COLUMNS,
            _padded(result.forecast_trace, len(FORECAST_TRACE_COLUMNS)))
    if result.trade_trace:
        put("trade_trace.csv", "trade_trace", TRADE_TRACE_COLUMNS,
            _padded(result.trade_trace, len(TRADE_TRACE_COLUMNS)))
    if result.book_rows:
        put("book.csv", "book", ["t", "stock", "side", "level", "price", "quantity"], result.book_rows)
    m.write()
    return m


def emit_fundamentals(values: np.ndarray, outdir: str, views: Optional[np.ndarray] = None) -> Manifest:
    """Fundamental series (J, T), optional agent views (A, J, T), and jump statistics.

    Without views each (t, stock) row leaves the agent columns empty."""
    os.makedirs(outdir, exist_ok=True)
    m = Manifest(outdir)
    J, T = values.shape

    def rows():
        for t in range(T):
            for j in range(J):
                if views is None or views.shape[0] == 0:
                    yield (t, j, values[j, t], "", "")
                    continue
                for a in range(views.shape[0]):
                    yield (t, j, values[j, t], a, views[a, j, t])

    m.add("fundamentals.csv", _write_csv(os.path.join(outdir, "fundamentals.csv"), "fundamentals",
                                         ["t", "stock", "true_value", "agent_id", "biased_value"], rows()))
    stats = [jump_statistics(values[j]) for j in range(J)]
    m.add("jump_stats.csv", _write_csv(os.path.join(outdir, "jump_stats.csv"), "jump_stats",
                                       ["stock", "annual_jumps", "mean_amplitude"],
                                       ((j, s.annual_jumps, s.mean_amplitude) for j, s in enumerate(stats))))
    m.write()
    return m


def _read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def read_market(rundir: str) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(prices, volumes) per stock from a run directory's prices.csv."""
    rows = _read_csv(os.path.join(rundir, "prices.csv"))
    by_stock: Dict[int, List[Tuple[int, float, float]]] = {}
    for r in rows:
        by_stock.setdefault(int(r["stock"]), []).append((int(r["t"]), float(r["price"]), float(r["volume"])))
    out = []
    for j in sorted(by_stock):
        seq = sorted(by_stock[j])
        out.append((np.array([s[1] for s in seq]), np.array([s[2] for s in seq])))
    return out


def run_dirs(path: str) -> List[str]:
    """``path`` itself if it holds a run, else its run_* subdirectories."""
    if os.path.exists(os.path.join(path, "prices.csv")):
        return [path]
    subs = sorted(d for d in os.listdir(path) if d.startswith("run_"))
    dirs = [os.path.join(path, d) for d in subs if os.path.exists(os.path.join(path, d, "prices.csv"))]
    if not dirs:
        raise FileNotFoundError(f"no prices.csv under {path}")
    return dirs


def metric_rows(source: str, metrics: Sequence[MetricDistribution]):
    for m in metrics:
        v = m.values
        yield (m.family, m.params, source, v.size, m.missing,
               float(v.mean()) if v.size else math.nan, float(v.var()) if v.size else math.nan)


METRIC_COLUMNS = ["family", "params", "source", "n", "missing", "mean", "variance"]
HISTOGRAM_COLUMNS = ["family", "params", "source", "bin", "left", "right", "count"]


def _hist_rows(pairs: Iterable[Tuple[str, MetricDistribution]]):
    for source, m in pairs:
        for k, c in enumerate(m.counts):
            yield (m.family, m.params, source, k, m.edges[k], m.edges[k + 1], int(c))


def emit_metrics(outdir: str, sim: Sequence[MetricDistribution],
                 comparison: Optional[Comparison] = None,
                 real: Optional[Sequence[MetricDistribution]] = None) -> Manifest:
    """metrics.csv and histograms.csv, plus distances.csv when comparing."""
    os.makedirs(outdir, exist_ok=True)
    m = Manifest(outdir)
    rows = list(metric_rows("sim", sim))
    if real is not None:
        rows += list(metric_rows("real", real))
    m.add("metrics.csv", _write_csv(os.path.join(outdir, "metrics.csv"), "metrics", METRIC_COLUMNS, rows))
    if comparison is None:
        pairs = [("sim", d.with_histogram(shared_edges(d.values))) for d in sim if d.values.size]
    else:
        pairs = comparison.histograms
    m.add("histograms.csv", _write_csv(os.path.join(outdir, "histograms.csv"), "histograms",
                                       HISTOGRAM_COLUMNS, _hist_rows(pairs)))
    if comparison is not None:
        m.add("distances.csv", _write_csv(
            os.path.join(outdir, "distances.csv"), "distances",
            ["family", "params", "ks", "mean_diff", "var_diff", "n_sim", "n_real"],
            ((d.family, d.params, d.ks, d.mean_diff, d.var_diff, d.n_sim, d.n_real)
             for d in comparison.distances)))
    m.write()
    return m
