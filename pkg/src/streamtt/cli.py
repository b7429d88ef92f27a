"""Command-line front end: ``generate``, ``fit``, ``predict`` and ``sweep``."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import synthetic
from .config import RunConfig, load_grid, load_run_config
from .data import (ObservationBatch, TensorDataError, load_coo, partition_stream,
                   split_train_test)
from .engine import run_stream
from .metrics import ErrorLog, evaluate_on_test
from .posterior import (CheckpointError, init_state, load_checkpoint,
                        predictive_moments_batch, save_checkpoint)

log = logging.getLogger("streamtt")

SUMMARY_HEADER = ["batch_size", "rank", "snr_db", "repeats", "mean_error", "std_error",
                  "final_errors"]


def cmd_generate(cfg: RunConfig, out) -> ObservationBatch:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    obs = synthetic.write_dataset(out, cfg.dims, cfg.true_ranks, cfg.snr_db,
                                  cfg.observe_fraction, cfg.data_seed)
    log.info("wrote %d observations to %s", len(obs.batch), out)
    return obs.batch


def _resolve_shape(cfg: RunConfig, explicit: set[str], data) -> tuple[int, ...]:
    meta = synthetic.meta_path(data)
    if meta.exists():
        meta_shape = tuple(json.loads(meta.read_text())["shape"])
        if "dims" not in explicit:
            return meta_shape
        if meta_shape != tuple(cfg.dims):
            raise TensorDataError(
                f"config dims {cfg.dims} do not match dataset shape {meta_shape}")
    return tuple(cfg.dims)


def fit_once(cfg: RunConfig, batch: ObservationBatch, gt, repeat: int, out_dir):
    """One split/stream/fit run; writes ``errors.csv`` and ``checkpoint.bin``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = split_train_test(batch, cfg.test_fraction, cfg.split_seed + repeat)
    if len(split.test) == 0:
        raise TensorDataError("test split is empty; raise test_fraction or add data")
    truth = None
    if gt is not None and cfg.eval_truth == "auto":
        truth = synthetic.true_values(gt, split.test.indices)
    batches = partition_stream(split.train, cfg.batch_size, cfg.stream_seed + repeat)
    state = init_state(batch.shape, cfg.ranks, cfg.prior(repeat))
    errors = ErrorLog()
    clock = [time.perf_counter()]

    def on_batch(t, st, info):
        seconds = time.perf_counter() - clock[0] if cfg.record_time else 0.0
        errors.append(t, evaluate_on_test(st, split.test, truth), seconds)
        log.debug("repeat %d batch %d/%d err %.5f sweeps %d", repeat, t, len(batches),
                  errors.rows[-1][1], info.sweeps)
        clock[0] = time.perf_counter()

    state = run_stream(state, batches, cfg.engine(), on_batch)
    errors.write_csv(out_dir / "errors.csv")
    save_checkpoint(state, out_dir / "checkpoint.bin")
    return state, errors


def summary_row(cfg: RunConfig, finals) -> dict:
    finals = np.asarray(finals, dtype=np.float64)
    return {"batch_size": cfg.batch_size, "rank": cfg.rank, "snr_db": repr(cfg.snr_db),
            "repeats": len(finals), "mean_error": repr(float(finals.mean())),
            "std_error": repr(float(finals.std())),
            "final_errors": ";".join(repr(float(e)) for e in finals)}


def write_summary(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{"batch_size": int(r["batch_size"]), "rank": int(r["rank"]),
                 "snr_db": float(r["snr_db"]), "repeats": int(r["repeats"]),
                 "mean_error": float(r["mean_error"]), "std_error": float(r["std_error"]),
                 "final_errors": [float(e) for e in r["final_errors"].split(";")]}
                for r in reader]


def cmd_fit(cfg: RunConfig, data, out_dir, explicit: set[str] = frozenset()) -> dict:
    """Fit ``repeat_count`` independent streams to the COO file ``data``.

    Repeat ``i`` offsets the split, stream and init seeds by ``i``.  Writes
    ``config.txt``, ``summary.csv`` and ``repeat_<i>/{errors.csv,checkpoint.bin}``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = _resolve_shape(cfg, explicit, data)
    cfg = cfg.replace(dims=shape)
    batch = load_coo(data, shape)
    gt = synthetic.ground_truth_from_meta(data)
    (out_dir / "config.txt").write_text(cfg.to_text())
    finals = []
    for i in range(cfg.repeat_count):
        _, errors = fit_once(cfg, batch, gt, i, out_dir / f"repeat_{i}")
        finals.append(errors.final_error)
        log.info("repeat %d final relative error %.5f", i, errors.final_error)
    row = summary_row(cfg, finals)
    write_summary(out_dir / "summary.csv", [row])
    return row


def read_index_file(path, order: int) -> np.ndarray:
    """1-based index tuples, one per line; extra columns (e.g. a value) are ignored."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) < order:
            raise TensorDataError(f"{path}:{lineno}: expected {order} indices")
        try:
            rows.append([int(p) for p in parts[:order]])
        except ValueError as exc:
            raise TensorDataError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=np.int64).reshape(-1, order) - 1


def cmd_predict(checkpoint, indices_path, out) -> np.ndarray:
    """Write ``j_1 .. j_D mean variance`` per requested index."""
    state = load_checkpoint(checkpoint)
    idx = read_index_file(indices_path, state.order)
    bad = (idx < 0) | (idx >= np.array(state.shape))
    if bad.any():
        row = int(np.flatnonzero(bad.any(axis=1))[0])
        raise TensorDataError(f"index {tuple(idx[row] + 1)} out of range for shape "
                              f"{state.shape}")
    mean, second = predictive_moments_batch(state, idx)
    var = np.maximum(second - mean ** 2, 0.0)
    lines = [" ".join(map(str, j)) + f" {m!r} {v!r}"
             for j, m, v in zip((idx + 1).tolist(), mean.tolist(), var.tolist())]
    Path(out).write_text("".join(line + "\n" for line in lines))
    return np.stack([mean, var], axis=1) if len(lines) else np.zeros((0, 2))


def cmd_sweep(cfg: RunConfig, grid: dict[str, list], out_dir) -> list[dict]:
    """Generate and fit every (batch_size, rank, snr_db) cell; one summary row per cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for S, R, snr in itertools.product(grid["batch_size"], grid["rank"], grid["snr_db"]):
        cell = cfg.replace(batch_size=S, rank=R, snr_db=snr)
        cell_dir = out_dir / f"S{S}_R{R}_snr{snr:g}"
        data = cell_dir / "data.coo"
        cmd_generate(cell, data)
        rows.append(cmd_fit(cell, data, cell_dir / "fit", {"dims"}))
        write_summary(out_dir / "summary.csv", rows)
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamtt", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", help="key = value config file")
        sp.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")

    g = sub.add_parser("generate", help="write a synthetic COO dataset")
    common(g)
    g.add_argument("-o", "--out", required=True)

    f = sub.add_parser("fit", help="stream a COO dataset through the model")
    common(f)
    f.add_argument("-d", "--data", required=True)
    f.add_argument("-o", "--out-dir", required=True)

    pr = sub.add_parser("predict", help="predict entries from a checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("-i", "--indices", required=True)
    pr.add_argument("-o", "--out", required=True)

    sw = sub.add_parser("sweep", help="grid over batch_size, rank and snr_db")
    common(sw)
    sw.add_argument("-o", "--out-dir", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            cfg, _ = load_run_config(args.config, args.set)
            cmd_generate(cfg, args.out)
        elif args.command == "fit":
            cfg, explicit = load_run_config(args.config, args.set)
            row = cmd_fit(cfg, args.data, args.out_dir, explicit)
            print(f"mean_error {row['mean_error']} std_error {row['std_error']}")
        elif args.command == "predict":
            cmd_predict(args.checkpoint, args.indices, args.out)
        elif args.command == "sweep":
            cfg, grid, _ = load_grid(args.config, args.set)
            for row in cmd_sweep(cfg, grid, args.out_dir):
                print(row["batch_size"], row["rank"], row["snr_db"], row["mean_error"],
                      row["std_error"])
    except (TensorDataError, CheckpointError, ValueError, OSError) as exc:
        print(f"streamtt: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
