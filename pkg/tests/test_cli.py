import numpy as np
import pytest

from streamtt.cli import (SUMMARY_HEADER, cmd_fit, cmd_generate, cmd_predict, cmd_sweep, main,
                          read_summary, write_summary)
from streamtt.config import RunConfig, load_grid, load_run_config, parse_value
from streamtt.data import TensorDataError
from streamtt.metrics import ErrorLog
from streamtt.posterior import load_checkpoint, predict_mean, predictive_moments

SMALL = RunConfig(dims=(10, 10, 10), true_rank=2, rank=2, observe_fraction=1.0,
                  test_fraction=0.1, batch_size=512, max_inner_iters=10, record_time=False)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    p = tmp_path_factory.mktemp("data") / "small.coo"
    cmd_generate(SMALL, p)
    return p


def test_generate_tiny_and_reproducible(tmp_path):
    cfg = RunConfig(dims=(4, 4), observe_fraction=1.0, true_rank=2)
    a, b = tmp_path / "a.coo", tmp_path / "b.coo"
    assert len(cmd_generate(cfg, a)) == 16
    cmd_generate(cfg, b)
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 16


def test_generate_large_grid(tmp_path):
    p = tmp_path / "large.coo"
    assert len(cmd_generate(RunConfig(), p)) == 24000
    assert len(p.read_text().splitlines()) == 24000


def test_fit_two_batches(tmp_path, small_data):
    row = cmd_fit(SMALL, small_data, tmp_path / "fit")
    log = ErrorLog.read_csv(tmp_path / "fit" / "repeat_0" / "errors.csv")
    # 1000 entries -> 900 train -> chunks of 512 and 388
    assert [r[0] for r in log.rows] == [1, 2]
    assert all(r[2] == 0.0 for r in log.rows)
    assert row["repeats"] == 1
    state = load_checkpoint(tmp_path / "fit" / "repeat_0" / "checkpoint.bin")
    assert state.noise.alpha == pytest.approx(1e-3 + 450, abs=1e-12)
    text = (tmp_path / "fit" / "config.txt").read_text()
    assert "batch_size = 512" in text and "inner_tolerance" in text


def test_fit_repeats_aggregate(tmp_path, small_data):
    cfg = SMALL.replace(repeat_count=5, max_inner_iters=3)
    row = cmd_fit(cfg, small_data, tmp_path / "fit")
    finals = [ErrorLog.read_csv(tmp_path / "fit" / f"repeat_{i}" / "errors.csv").final_error
              for i in range(5)]
    assert len(set(finals)) > 1
    [summary] = read_summary(tmp_path / "fit" / "summary.csv")
    assert summary["final_errors"] == finals
    assert summary["mean_error"] == pytest.approx(np.mean(finals), rel=1e-15)
    assert summary["std_error"] == pytest.approx(np.std(finals), rel=1e-12)
    assert row["repeats"] == summary["repeats"] == 5


def test_fit_rerun_identical(tmp_path, small_data):
    for name in ("a", "b"):
        cmd_fit(SMALL, small_data, tmp_path / name)
    for f in ("errors.csv", "checkpoint.bin"):
        assert ((tmp_path / "a" / "repeat_0" / f).read_bytes()
                == (tmp_path / "b" / "repeat_0" / f).read_bytes())


def test_fit_shape_mismatch(tmp_path, small_data):
    with pytest.raises(TensorDataError):
        cmd_fit(SMALL.replace(dims=(10, 10, 11)), small_data, tmp_path / "f", {"dims"})
    bare = tmp_path / "bare.coo"
    bare.write_bytes(small_data.read_bytes())
    with pytest.raises(TensorDataError):
        cmd_fit(SMALL.replace(dims=(5, 5, 5)), bare, tmp_path / "g")


def test_predict_matches_library(tmp_path):
    cfg = RunConfig(dims=(3, 3, 3), true_rank=2, rank=2, observe_fraction=1.0,
                    test_fraction=0.2, batch_size=8, max_inner_iters=5, record_time=False)
    data = tmp_path / "d.coo"
    cmd_generate(cfg, data)
    cmd_fit(cfg, data, tmp_path / "fit")
    ck = tmp_path / "fit" / "repeat_0" / "checkpoint.bin"
    state = load_checkpoint(ck)
    req = tmp_path / "idx.txt"
    # first line of the data file is an observed training or test entry
    req.write_text(data.read_text().splitlines()[0] + "\n3 3 3\n1 2 3\n")
    out = tmp_path / "pred.txt"
    cmd_predict(ck, req, out)
    lines = [l.split() for l in out.read_text().splitlines()]
    assert len(lines) == 3
    for parts in lines:
        idx = tuple(int(p) - 1 for p in parts[:3])
        mean, var = float(parts[3]), float(parts[4])
        assert np.isfinite(mean) and var >= 0
        assert mean == pytest.approx(predict_mean(state, idx), rel=1e-13)
        m, s2 = predictive_moments(state, idx)
        assert var == pytest.approx(s2 - m * m, rel=1e-10, abs=1e-14)


def test_predict_empty_and_invalid(tmp_path, small_data):
    cmd_fit(SMALL.replace(max_inner_iters=1), small_data, tmp_path / "fit")
    ck = tmp_path / "fit" / "repeat_0" / "checkpoint.bin"
    empty, out = tmp_path / "empty.txt", tmp_path / "out.txt"
    empty.write_text("")
    assert cmd_predict(ck, empty, out).shape == (0, 2)
    assert out.read_text() == ""
    bad = tmp_path / "bad.txt"
    bad.write_text("11 1 1\n")
    with pytest.raises(TensorDataError):
        cmd_predict(ck, bad, out)
    assert main(["predict", "--checkpoint", str(ck), "-i", str(bad), "-o", str(out)]) == 2


@pytest.mark.parametrize("key, values", [("batch_size", [64, 128, 256, 512]),
                                         ("snr_db", [15.0, 20.0, 25.0, 30.0])])
def test_sweep_four_rows(tmp_path, key, values):
    base = RunConfig(dims=(6, 6, 6), true_rank=2, rank=2, observe_fraction=0.5,
                     max_inner_iters=2, record_time=False)
    grid = {"batch_size": [64], "rank": [2], "snr_db": [20.0]}
    grid[key] = values
    rows = cmd_sweep(base, grid, tmp_path / "sw")
    assert len(rows) == 4
    back = read_summary(tmp_path / "sw" / "summary.csv")
    assert [r[key] for r in back] == values


def test_single_cell_sweep_equals_fit(tmp_path):
    base = RunConfig(dims=(6, 6, 6), true_rank=2, rank=2, observe_fraction=0.5,
                     max_inner_iters=3, repeat_count=2, record_time=False)
    [row] = cmd_sweep(base, {"batch_size": [32], "rank": [2], "snr_db": [20.0]}, tmp_path / "sw")
    data = tmp_path / "d.coo"
    cell = base.replace(batch_size=32)
    cmd_generate(cell, data)
    assert cmd_fit(cell, data, tmp_path / "fit") == row


def test_summary_round_trip(tmp_path):
    row = {"batch_size": 256, "rank": 3, "snr_db": repr(20.0), "repeats": 2,
           "mean_error": repr(0.1), "std_error": repr(0.02), "final_errors": "0.08;0.12"}
    p = tmp_path / "s.csv"
    write_summary(p, [row])
    assert p.read_text().splitlines()[0] == ",".join(SUMMARY_HEADER)
    [back] = read_summary(p)
    assert back == {"batch_size": 256, "rank": 3, "snr_db": 20.0, "repeats": 2,
                    "mean_error": 0.1, "std_error": 0.02, "final_errors": [0.08, 0.12]}


def test_config_parsing(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\ndims = 8x8x8\nrank = 4  # trailing\nrecord_time = off\n")
    cfg, explicit = load_run_config(p, ["snr_db=25"])
    assert cfg.dims == (8, 8, 8) and cfg.rank == 4 and cfg.snr_db == 25.0
    assert cfg.record_time is False and explicit == {"dims", "rank", "record_time", "snr_db"}
    assert cfg.ranks == (1, 4, 4, 1)
    back, _ = load_run_config(None, [f"{k}={v}" for k, v in
                                     (l.split(" = ") for l in cfg.to_text().splitlines())])
    assert back == cfg
    with pytest.raises(ValueError):
        parse_value("nonsense", "1")
    with pytest.raises(ValueError):
        RunConfig(batch_size=0)
    with pytest.raises(ValueError):
        RunConfig(test_fraction=1.0)


def test_grid_parsing():
    cfg, grid, _ = load_grid(None, ["batch_size=256,512", "snr_db=15,30", "dims=5,5"])
    assert grid == {"batch_size": [256, 512], "rank": [3], "snr_db": [15.0, 30.0]}
    assert cfg.dims == (5, 5)


def test_main_end_to_end(tmp_path, capsys):
    data = tmp_path / "d.coo"
    assert main(["generate", "-o", str(data), "-s", "dims=5,5,5", "-s", "observe_fraction=0.5",
                 "-s", "true_rank=2"]) == 0
    assert main(["fit", "-d", str(data), "-o", str(tmp_path / "fit"), "-s", "rank=2",
                 "-s", "batch_size=16", "-s", "max_inner_iters=3"]) == 0
    assert "mean_error" in capsys.readouterr().out
    assert main(["fit", "-d", str(tmp_path / "missing.coo"), "-o", str(tmp_path / "x")]) == 2
    assert main(["fit", "-d", str(data), "-o", str(tmp_path / "y"), "-s", "bogus=1"]) == 2
    assert main(["generate", "-o", str(tmp_path / "z.coo"), "-s", "observe_fraction=2"]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])
