"""End-to-end acceptance checks. Each test records a pass/fail line that
the terminal summary prints; the batch criteria share one RL and one noise
batch of full-size runs."""

import os
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE
from rlmarket import analytics, calibration, cli, io
from rlmarket.agents import forecast_interval
from rlmarket.core import NU_REF, T_M, T_W, T_Y, PolicyTable, SimConfig, make_generator
from rlmarket.engine import RunFailure, World, run_batch
from rlmarket.forecast import blend_forecast, technical_forecast
from rlmarket.fundamentals import approximate_fundamental, generate_fundamental, jump_statistics, view_bias
from rlmarket.orderbook import clear
from rlmarket.trading import ASK, BID, LimitOrder

SEEDS = list(range(1, 21))
WORKERS = os.cpu_count() or 1


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


@pytest.fixture(scope="session")
def rl_batch():
    out = run_batch(SimConfig(), SEEDS, workers=WORKERS)
    assert not [r for r in out if isinstance(r, RunFailure)]
    return out


@pytest.fixture(scope="session")
def noise_batch():
    out = run_batch(SimConfig(noise_agent_mode=True), SEEDS, workers=WORKERS)
    assert not [r for r in out if isinstance(r, RunFailure)]
    return out


def test_1_fundamental_statistics():
    t0 = time.perf_counter()
    jumps, amps, gaps = [], [], []
    for seed in range(20):
        f = generate_fundamental(2875, NU_REF, make_generator(seed, 3, 0))
        s = jump_statistics(f.values)
        jumps.append(s.annual_jumps)
        amps.append(s.mean_amplitude)
        gaps.append(view_bias(f.values, approximate_fundamental(f, make_generator(seed, 4, 0, 0)).values))
    dt = time.perf_counter() - t0
    j, a, g = np.mean(jumps), np.mean(amps), np.mean(gaps)
    ok = abs(j - 12.70) <= 1.85 and abs(a - 0.059) <= 0.0184 and abs(g - 0.0237) <= 0.0136 and dt < 10
    record(1, ok, f"jumps/yr {j:.2f}, amplitude {a:.4f}, |T-B|/T {g:.4f}, {dt:.1f}s")


def test_2_policy_simplex():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    tables = [PolicyTable(27, 27), PolicyTable(108, 9)]
    n = 100_000
    which = rng.integers(0, 2, n)
    rewards = rng.choice([-4, -2, -1, 1, 2, 4], n)
    betas = rng.uniform(0.05, 0.2, n)
    u = rng.random((n, 2))
    shapes = [(27, 27), (108, 9)]
    for k in range(n):
        n_states, n_actions = shapes[which[k]]
        tables[which[k]].update(int(u[k, 0] * n_states), int(u[k, 1] * n_actions),
                                int(rewards[k]), float(betas[k]))
    dt = time.perf_counter() - t0
    worst = max(float(np.abs(t.as_array().sum(axis=1) - 1).max()) for t in tables)
    low = min(float(t.as_array().min()) for t in tables)
    record(2, worst <= 1e-9 and low >= 0 and dt < 5, f"max |row sum - 1| {worst:.1e}, min entry {low:.1e}, {dt:.1f}s")


@pytest.mark.slow
def test_3_conservation(rl_batch, noise_batch):
    share_breaks = cash_breaks = 0
    worst = 0.0
    for r in rl_batch + noise_batch:
        led = r.ledger
        share_breaks += int(np.any(led["shares"] != led["shares"][:, :1]))
        lhs = led["bonds_after"] - led["bonds_before"]
        rhs = led["interest"] + led["dividends"] - led["fees"]
        rel = np.abs(lhs - rhs) / np.maximum(np.abs(led["bonds_after"]), 1.0)
        worst = max(worst, float(rel.max()))
        cash_breaks += int(np.sum(rel > 1e-9))
    record(3, share_breaks == 0 and cash_breaks == 0,
           f"{len(rl_batch) + len(noise_batch)} full runs, share breaks {share_breaks}, "
           f"cash breaks {cash_breaks}, worst relative gap {worst:.1e}")


def reference_clear(bids, asks, prev):
    bu = [k for k in sorted(range(len(bids)), key=lambda k: -bids[k].price) for _ in range(bids[k].quantity)]
    au = [k for k in sorted(range(len(asks)), key=lambda k: asks[k].price) for _ in range(asks[k].quantity)]
    pairs, last = Counter(), None
    for b, a in zip(bu, au):
        if bids[b].price < asks[a].price:
            break
        pairs[(b, a)] += 1
        last = 0.5 * (bids[b].price + asks[a].price)
    spread = 0.0
    if bids and asks:
        spread = abs(np.mean([o.price for o in bids]) - np.mean([o.price for o in asks]))
    return pairs, prev if last is None else last, sum(pairs.values()), spread


def test_4_orderbook_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(10_000):
        nb, na = rng.integers(0, 11, size=2)
        bids = [LimitOrder(k, 0, BID, float(p), int(q)) for k, (p, q) in
                enumerate(zip(rng.integers(90, 111, nb) + rng.choice([0, 0.5], nb), rng.integers(1, 30, nb)))]
        asks = [LimitOrder(50 + k, 0, ASK, float(p), int(q)) for k, (p, q) in
                enumerate(zip(rng.integers(90, 111, na) + rng.choice([0, 0.5], na), rng.integers(1, 30, na)))]
        f = clear(bids, asks, 100.0)
        got = Counter()
        for t in f.trades:
            got[(t.bid_ref, t.ask_ref)] += t.quantity
        pairs, p, v, s = reference_clear(bids, asks, 100.0)
        bad += int(got != pairs or f.next_price != p or f.next_volume != v or abs(f.next_spread - s) > 1e-9)
    dt = time.perf_counter() - t0
    record(4, bad == 0 and dt < 10, f"{bad} mismatches in 10000 books, {dt:.1f}s")


def forecast_errors(info):
    p = np.asarray(info["prices"])
    out = []
    for a in range(27):
        tech = technical_forecast(p, a // 9, forecast_interval((a // 3) % 3, info["horizon"]))
        out.append(abs(blend_forecast(tech, info["fundamental"], info["reflexivity"], a % 3) - info["price_now"]))
    return out


def trade_cashflows(ctx, p_now):
    out = []
    for a in range(9):
        a0, a1 = divmod(a, 3)
        shift = ctx.gesture * ctx.spread * (1 - a1)
        bid = max(min(ctx.forecast, ctx.price) + shift, 0.01)
        ask = max(max(ctx.forecast, ctx.price) - shift, 0.01)
        if a0 == 0 and ctx.holdings > 0:
            out.append(-ctx.holdings * (p_now - ask))
        elif a0 == 2 and ctx.bonds > 0 and int(ctx.bonds // (ask * ctx.stock_count)) > 0:
            out.append(int(ctx.bonds // (ask * ctx.stock_count)) * (p_now - bid))
        else:
            out.append(0.0)
    return out


def test_5_hindsight_optimality():
    calls, violations = Counter(), []

    def hook(kind, info, best):
        calls[kind] += 1
        if kind == "F":
            errs = forecast_errors(info)
            tol = 1e-9 * info["price_now"]
            if errs[best] > min(errs) + tol or any(e < errs[best] - tol for e in errs[:best]):
                violations.append((kind, info["t"], best))
        else:
            cash = trade_cashflows(info["context"], info["price_now"])
            tol = 1e-9 * max(1.0, max(abs(c) for c in cash))
            if cash[best] < max(cash) - tol or any(c > cash[best] + tol for c in cash[:best]):
                violations.append((kind, best))

    World(SimConfig(step_count=500, master_seed=5), hindsight_hook=hook).run()
    record(5, calls["F"] > 0 and calls["T"] > 0 and not violations,
           f"{calls['F']} forecast and {calls['T']} trade hindsight calls, {len(violations)} violations")


@pytest.mark.slow
def test_6_learning_beats_noise(rl_batch, noise_batch):
    rl, noise = analytics.learning_curves(rl_batch, noise_batch)
    record(6, rl.mean_ytd > noise.mean_ytd,
           f"top-decile mean YTD over final tenth: RL {rl.mean_ytd:+.4f} vs noise {noise.mean_ytd:+.4f} "
           f"(S={len(rl_batch)})")


@pytest.mark.slow
def test_7_stylized_facts(rl_batch):
    series = analytics.result_series(rl_batch)
    r = np.concatenate([analytics.log_returns(p) for p, _ in series])
    kurt = float(stats.kurtosis(r))
    means = {}
    for d in (3 * T_M, T_Y):
        x = np.concatenate([analytics.adjacent_autocorr(analytics.log_returns(p), d) for p, _ in series])
        means[d] = float(np.nanmean(x))
    vol = np.concatenate([analytics.adjacent_autocorr(analytics.volatility_series(p, 2 * T_W), 2 * T_W)
                          for p, _ in series])
    vmean = float(np.nanmean(vol))
    ok = kurt > 0 and all(abs(m) < 0.1 for m in means.values()) and vmean > 0
    record(7, ok, f"excess kurtosis {kurt:.2f}, return autocorr mean "
                  f"{means[3 * T_M]:+.4f} (63d) {means[T_Y]:+.4f} (252d), volatility autocorr mean {vmean:+.4f}")


def test_8_grid():
    g = calibration.enumerate_grid()
    ok = len(g) == 3600 and g[0].key == (500, 1.0, 0.1, -50) and g[-1].key == (5000, 3.0, 1.5, 30)
    record(8, ok, f"{len(g)} points, first {g[0].key}, last {g[-1].key}")


def test_9_determinism(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("I = 200\nT = 800\nseed = 9\n")
    sums = []
    for name in ("a", "b"):
        assert cli.main(["run", "-c", str(cfg), "-o", str(tmp_path / name), "--trace"]) == 0
        sums.append(io.read_manifest(str(tmp_path / name / "manifest.csv")))
    for w in (1, 2):
        out = tmp_path / f"batch{w}"
        assert cli.main(["batch", "-c", str(cfg), "-o", str(out), "--runs", "2", "--workers", str(w)]) == 0
        sums.append({d: io.read_manifest(str(out / d / "manifest.csv"))
                     for d in sorted(os.listdir(out)) if d.startswith("run_")})
    same_run = (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()
    record(9, same_run and sums[0] == sums[1] and sums[2] == sums[3],
           f"{len(sums[0])} files per run identical: {same_run}; batch workers 1 vs 2 identical: {sums[2] == sums[3]}")
