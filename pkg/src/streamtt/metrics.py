"""Reconstruction error, running-error logs and a Monte-Carlo moment oracle."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import ObservationBatch
from .posterior import ModelState, predict_means


def relative_error(predicted, truth) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape or truth.ndim != 1 or truth.size == 0:
        raise ValueError("predicted and truth must be nonempty vectors of equal length")
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise ValueError("truth has zero norm")
    return float(np.linalg.norm(predicted - truth) / denom)


def evaluate_on_test(state: ModelState, test: ObservationBatch, truth=None) -> float:
    """Relative error of posterior-mean predictions on ``test``.

    ``truth`` replaces the observed test values when given (noiseless
    ground truth for synthetic data).
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    target = test.values if truth is None else np.asarray(truth, dtype=np.float64)
    return relative_error(predict_means(state, test.indices), target)


def mc_second_moment_oracle(state: ModelState, index, num_samples: int, seed: int,
                            chunk: int = 200_000) -> tuple[float, float]:
    """Sample every core element from its posterior and average (prod_d G_jd)^2.

    Returns (estimate, standard error).
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    rng = np.random.default_rng(seed)
    index = tuple(int(j) for j in index)
    total = total_sq = 0.0
    done = 0
    while done < num_samples:
        m = min(chunk, num_samples - done)
        prod = np.ones((m, 1, 1))
        for core, j in zip(state.cores, index):
            mu = core.mean[:, j, :]
            sd = np.sqrt(core.variance[:, j, :])
            prod = prod @ (mu + sd * rng.standard_normal((m,) + mu.shape))
        sq = prod[:, 0, 0] ** 2
        total += sq.sum()
        total_sq += (sq ** 2).sum()
        done += m
    est = total / num_samples
    var = max(total_sq / num_samples - est ** 2, 0.0)
    return float(est), float(np.sqrt(var / num_samples))


@dataclass
class ErrorLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def append(self, batch: int, rel_error: float, seconds: float) -> None:
        if self.rows and batch <= self.rows[-1][0]:
            raise ValueError("batch indices must increase")
        self.rows.append((int(batch), float(rel_error), float(seconds)))

    @property
    def final_error(self) -> float:
        return self.rows[-1][1] if self.rows else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["batch", "rel_error", "seconds"])
            for b, e, s in self.rows:
                w.writerow([b, repr(e), repr(s)])

    @classmethod
    def read_csv(cls, path) -> "ErrorLog":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["batch", "rel_error", "seconds"]:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            out = cls()
            for row in reader:
                out.append(int(row["batch"]), float(row["rel_error"]), float(row["seconds"]))
        return out
