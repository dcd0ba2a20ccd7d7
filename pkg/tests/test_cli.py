import datetime as dt
import os

import numpy as np
import pytest

from rlmarket import cli, io


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text("I = 20\nT = 200\nseed = 4\n")
    return str(path)


@pytest.fixture
def real_file(tmp_path):
    rng = np.random.default_rng(0)
    start = dt.date(2020, 1, 1)
    path = tmp_path / "real.csv"
    with open(path, "w") as fh:
        fh.write("date,ticker,close,volume\n")
        for t in ("A", "B", "C", "D"):
            close = 30 * np.exp(np.cumsum(rng.standard_normal(200) * 0.01))
            for k in range(200):
                fh.write(f"{start + dt.timedelta(days=k)},{t},{float(close[k])!r},{rng.integers(100, 900)}\n")
    return str(path)


def test_run_then_analyze(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert cli.main(["run", "-c", cfg_file, "-o", str(out)]) == cli.EXIT_OK
    man = io.read_manifest(str(out / "manifest.csv"))
    assert man["prices.csv"][0] == 200
    assert cli.main(["analyze", "-i", str(out), "-o", str(tmp_path / "an")]) == cli.EXIT_OK
    assert (tmp_path / "an" / "metrics.csv").exists()


def test_refuses_overwrite(tmp_path, cfg_file):
    out = tmp_path / "run"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert cli.main(["run", "-c", cfg_file, "-o", str(out)]) == cli.EXIT_INVALID
    assert (out / "keep.txt").exists()
    assert cli.main(["run", "-c", cfg_file, "-o", str(out), "--force"]) == cli.EXIT_OK
    assert not (out / "keep.txt").exists()


def test_validation_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("I = -3\n")
    assert cli.main(["run", "-c", str(bad), "-o", str(tmp_path / "o")]) == cli.EXIT_INVALID
    assert cli.main(["run", "-c", str(tmp_path / "none.cfg"), "-o", str(tmp_path / "o")]) == cli.EXIT_INVALID
    assert cli.main(["frobnicate"]) == cli.EXIT_INVALID
    assert cli.main(["run"]) == cli.EXIT_INVALID
    assert cli.main(["analyze", "-i", str(tmp_path / "nothing"), "-o", str(tmp_path / "o2")]) == cli.EXIT_INVALID


def test_runtime_error_exit_code(tmp_path, cfg_file, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("disk on fire")
    monkeypatch.setattr(io, "emit_run", boom)
    assert cli.main(["run", "-c", cfg_file, "-o", str(tmp_path / "o")]) == cli.EXIT_RUNTIME


def test_batch_and_compare(tmp_path, cfg_file, real_file):
    out = tmp_path / "batch"
    assert cli.main(["batch", "-c", cfg_file, "-o", str(out), "--runs", "2"]) == cli.EXIT_OK
    assert sorted(d for d in os.listdir(out) if d.startswith("run_")) == ["run_000004", "run_000005"]
    cmp = tmp_path / "cmp"
    assert cli.main(["compare", "--sim", str(out), "--real", real_file, "-o", str(cmp)]) == cli.EXIT_OK
    assert (cmp / "distances.csv").exists()


def test_sweep_point_and_resume(tmp_path, cfg_file, real_file):
    out = tmp_path / "sweep"
    args = ["sweep", "-c", cfg_file, "--real", real_file, "-o", str(out), "--runs", "1"]
    assert cli.main(args) == cli.EXIT_OK
    first = (out / "sweep_report.csv").read_text()
    assert cli.main(args + ["--resume"]) == cli.EXIT_OK
    assert (out / "sweep_report.csv").read_text() == first


def test_gen_fundamentals(tmp_path, cfg_file):
    out = tmp_path / "f"
    assert cli.main(["gen-fundamentals", "-c", cfg_file, "-o", str(out), "--views", "2"]) == cli.EXIT_OK
    man = io.read_manifest(str(out / "manifest.csv"))
    assert man["fundamentals.csv"][0] == 200 * 2


def test_noise_run_differs(tmp_path, cfg_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "-c", cfg_file, "-o", str(a)]) == cli.EXIT_OK
    assert cli.main(["run", "-c", cfg_file, "-o", str(b), "--noise"]) == cli.EXIT_OK
    assert (a / "prices.csv").read_bytes() != (b / "prices.csv").read_bytes()
