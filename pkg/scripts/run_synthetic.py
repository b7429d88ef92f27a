"""Synthetic 20x20x20x20 grids: batch size, rank and noise level.

Each grid varies one knob around the base setting (S=512, R=3, SNR=20 dB,
15% observed, 5 repeats) and writes ``<out>/<grid>/summary.csv`` plus per-run
running-error CSVs.

    python scripts/run_synthetic.py -o results/synthetic
    python scripts/run_synthetic.py -o results/quick --grid batch --repeats 1
"""
import argparse
import logging
from pathlib import Path

from streamtt.cli import cmd_sweep
from streamtt.config import RunConfig

GRIDS = {
    "batch": {"batch_size": [256, 512, 1024, 2048], "rank": [3], "snr_db": [20.0]},
    "rank": {"batch_size": [512], "rank": [3, 4, 5, 6], "snr_db": [20.0]},
    "snr": {"batch_size": [512], "rank": [3], "snr_db": [15.0, 20.0, 25.0, 30.0]},
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("-o", "--out-dir", default="results/synthetic")
    p.add_argument("--grid", choices=sorted(GRIDS), action="append")
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = RunConfig(repeat_count=args.repeats)
    for name in args.grid or sorted(GRIDS):
        rows = cmd_sweep(base, GRIDS[name], Path(args.out_dir) / name)
        print(f"== {name}")
        print("batch_size rank snr_db mean_error std_error")
        for r in rows:
            print(r["batch_size"], r["rank"], r["snr_db"], f"{float(r['mean_error']):.4f}",
                  f"{float(r['std_error']):.4f}")


if __name__ == "__main__":
    main()
