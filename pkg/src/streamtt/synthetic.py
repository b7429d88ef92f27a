"""Ground-truth TT tensors, SNR-controlled Gaussian corruption and observation sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ObservationBatch, check_shape, save_coo
from .posterior import check_ranks

# entries enumerated at once when computing the tensor variance
DENSE_BUDGET = 1 << 22


@dataclass(frozen=True)
class GroundTruth:
    cores: tuple[np.ndarray, ...]
    shape: tuple[int, ...]
    ranks: tuple[int, ...]


def sample_ground_truth(shape, ranks, seed: int) -> GroundTruth:
    shape = check_shape(shape)
    ranks = check_ranks(shape, ranks)
    rng = np.random.default_rng(seed)
    cores = tuple(rng.random((ranks[d], n, ranks[d + 1])) for d, n in enumerate(shape))
    return GroundTruth(cores, shape, ranks)


def true_values(gt: GroundTruth, indices: np.ndarray) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, len(gt.shape))
    if indices.size and ((indices < 0).any() or (indices >= np.array(gt.shape)).any()):
        raise IndexError(f"index out of range for shape {gt.shape}")
    vec = np.ones((indices.shape[0], 1))
    for d, core in enumerate(gt.cores):
        vec = np.einsum("nk,knl->nl", vec, core[:, indices[:, d], :])
    return vec[:, 0]


def true_value(gt: GroundTruth, index) -> float:
    return float(true_values(gt, [tuple(index)])[0])


def dense(gt: GroundTruth) -> np.ndarray:
    """Full tensor; only sensible for small shapes."""
    out = gt.cores[0]
    for core in gt.cores[1:]:
        out = np.tensordot(out, core, axes=([-1], [0]))
    return out.reshape(gt.shape)


def tensor_variance(gt: GroundTruth, budget: int = DENSE_BUDGET) -> float:
    """Population variance of all tensor entries.

    Small tensors are materialized; larger ones are enumerated in chunks of
    at most ``budget`` entries and merged with the pairwise (Chan) update.
    """
    total = int(np.prod(gt.shape))
    if total <= budget:
        return float(np.var(dense(gt)))
    count, mean, m2 = 0, 0.0, 0.0
    for start in range(0, total, budget):
        flat = np.arange(start, min(start + budget, total))
        vals = true_values(gt, np.stack(np.unravel_index(flat, gt.shape), axis=1))
        n_b, mean_b = vals.size, float(vals.mean())
        m2_b = float(((vals - mean_b) ** 2).sum())
        delta = mean_b - mean
        new = count + n_b
        mean += delta * n_b / new
        m2 += m2_b + delta * delta * count * n_b / new
        count = new
    return m2 / count


def noise_variance(signal_variance: float, snr_db: float) -> float:
    return signal_variance / 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True)
class Observed:
    batch: ObservationBatch
    truth: np.ndarray
    sigma2: float


def corrupt_and_observe(gt: GroundTruth, snr_db: float, observe_fraction: float,
                        seed: int) -> Observed:
    """Pick distinct entries uniformly and add N(0, sigma2) noise to each.

    ``sigma2 = var(A) / 10**(snr_db / 10)`` with var(A) over the whole tensor.
    """
    if not 0.0 < observe_fraction <= 1.0:
        raise ValueError("observe_fraction must lie in (0, 1]")
    total = int(np.prod(gt.shape))
    m = int(np.floor(observe_fraction * total + 0.5))
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=m, replace=False)
    idx = np.stack(np.unravel_index(flat, gt.shape), axis=1)
    truth = true_values(gt, idx)
    sigma2 = noise_variance(tensor_variance(gt), snr_db)
    values = truth + rng.normal(0.0, np.sqrt(sigma2), size=m)
    return Observed(ObservationBatch(gt.shape, idx, values), truth, sigma2)


def data_seeds(seed: int) -> tuple[int, int]:
    """Independent (ground-truth, observation) seeds derived from one data seed."""
    a, b = np.random.SeedSequence(seed).generate_state(2)
    return int(a), int(b)


def write_dataset(path, shape, ranks, snr_db: float, observe_fraction: float,
                  seed: int) -> Observed:
    """Generate a synthetic dataset, write it as COO plus a ``.meta.json`` sidecar."""
    gt_seed, obs_seed = data_seeds(seed)
    gt = sample_ground_truth(shape, ranks, gt_seed)
    obs = corrupt_and_observe(gt, snr_db, observe_fraction, obs_seed)
    save_coo(path, obs.batch)
    meta = {"shape": list(gt.shape), "ranks": list(gt.ranks), "snr_db": snr_db,
            "observe_fraction": observe_fraction, "seed": seed, "sigma2": obs.sigma2}
    Path(meta_path(path)).write_text(json.dumps(meta, indent=1) + "\n")
    return obs


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def ground_truth_from_meta(path) -> GroundTruth | None:
    """Rebuild the noiseless truth for a generated COO file, if its sidecar exists."""
    mp = meta_path(path)
    if not mp.exists():
        return None
    meta = json.loads(mp.read_text())
    return sample_ground_truth(meta["shape"], meta["ranks"], data_seeds(meta["seed"])[0])
