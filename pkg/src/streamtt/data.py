"""Sparse observation batches, COO text I/O, splitting and stream batching.

Indices are 0-based in memory and 1-based on disk.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TensorDataError(ValueError):
    pass


def check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(n) for n in shape)
    if len(shape) < 1:
        raise TensorDataError("tensor order must be at least 1")
    if any(n < 1 for n in shape):
        raise TensorDataError(f"mode lengths must be positive, got {shape}")
    return shape


@dataclass(frozen=True)
class ObservationBatch:
    """A set of observed entries of a sparse tensor.

    ``indices`` is an (n, D) integer array of 0-based coordinates and
    ``values`` the matching length-n float array.  Repeated indices are
    allowed and treated as independent measurements.
    """

    shape: tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        shape = check_shape(self.shape)
        idx = np.asarray(self.indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if idx.ndim == 1 and idx.size == 0:
            idx = idx.reshape(0, len(shape))
        if idx.ndim != 2 or idx.shape[1] != len(shape):
            raise TensorDataError(
                f"indices must have shape (n, {len(shape)}), got {idx.shape}")
        if vals.shape != (idx.shape[0],):
            raise TensorDataError("values must be a vector matching indices")
        if idx.size and ((idx < 0).any() or (idx >= np.array(shape)).any()):
            raise TensorDataError(f"index out of range for shape {shape}")
        if not np.isfinite(vals).all():
            raise TensorDataError("observed values must be finite")
        idx = idx.copy()
        vals = vals.copy()
        idx.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    @property
    def order(self) -> int:
        return len(self.shape)

    def __len__(self) -> int:
        return self.values.shape[0]

    def take(self, rows) -> "ObservationBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return ObservationBatch(self.shape, self.indices[rows], self.values[rows])

    @classmethod
    def empty(cls, shape) -> "ObservationBatch":
        shape = check_shape(shape)
        return cls(shape, np.zeros((0, len(shape)), np.int64), np.zeros(0))


@dataclass(frozen=True)
class SplitDataset:
    train: ObservationBatch
    test: ObservationBatch


def load_coo(path, shape) -> ObservationBatch:
    """Read a whitespace-separated COO file: D 1-based indices then a value.

    Blank lines and lines starting with ``#`` are skipped.  Errors name the
    offending line number.
    """
    shape = check_shape(shape)
    order = len(shape)
    rows, vals = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != order + 1:
                raise TensorDataError(
                    f"{path}:{lineno}: expected {order} indices and a value, "
                    f"got {len(parts)} fields")
            try:
                coords = [int(p) for p in parts[:order]]
                value = float(parts[order])
            except ValueError as exc:
                raise TensorDataError(f"{path}:{lineno}: {exc}") from None
            for d, (c, n) in enumerate(zip(coords, shape)):
                if not 1 <= c <= n:
                    raise TensorDataError(
                        f"{path}:{lineno}: index {c} out of range 1..{n} "
                        f"in mode {d + 1}")
            if not np.isfinite(value):
                raise TensorDataError(f"{path}:{lineno}: non-finite value")
            rows.append(coords)
            vals.append(value)
    idx = np.array(rows, dtype=np.int64).reshape(-1, order) - 1
    return ObservationBatch(shape, idx, np.array(vals, dtype=np.float64))


def save_coo(path, batch: ObservationBatch, header: str | None = None) -> None:
    # repr() of a Python float is the shortest exact round-trip form
    lines = []
    if header:
        lines.extend("# " + h for h in header.splitlines())
    for coords, v in zip((batch.indices + 1).tolist(), batch.values.tolist()):
        lines.append(" ".join(map(str, coords)) + " " + repr(v))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_train_test(batch: ObservationBatch, test_fraction: float,
                     seed: int) -> SplitDataset:
    """Hold out ``round(test_fraction * n)`` uniformly chosen entries."""
    n = len(batch)
    if n == 0:
        raise TensorDataError("cannot split an empty batch")
    if not 0.0 < test_fraction < 1.0:
        raise TensorDataError("test_fraction must lie in (0, 1)")
    n_test = _round_half_up(test_fraction * n)
    perm = np.random.default_rng(seed).permutation(n)
    test_rows = np.sort(perm[:n_test])
    train_rows = np.sort(perm[n_test:])
    return SplitDataset(train=batch.take(train_rows), test=batch.take(test_rows))


def partition_stream(batch: ObservationBatch, batch_size: int,
                     seed: int) -> list[ObservationBatch]:
    """Shuffle entries and cut them into consecutive chunks of ``batch_size``.

    The last chunk keeps the remainder instead of being dropped.
    """
    if batch_size < 1:
        raise TensorDataError("batch_size must be >= 1")
    n = len(batch)
    perm = np.random.default_rng(seed).permutation(n)
    return [batch.take(perm[i:i + batch_size]) for i in range(0, n, batch_size)]


def group_by_mode_index(batch: ObservationBatch, mode: int) -> dict[int, ObservationBatch]:
    """Map every slice index of ``mode`` (0-based) to the entries hitting it."""
    if not 0 <= mode < batch.order:
        raise TensorDataError(f"mode must be in 0..{batch.order - 1}, got {mode}")
    col = batch.indices[:, mode]
    order = np.argsort(col, kind="stable")
    bounds = np.searchsorted(col[order], np.arange(batch.shape[mode] + 1))
    return {j: batch.take(order[bounds[j]:bounds[j + 1]])
            for j in range(batch.shape[mode])}
