"""Mean-field Gaussian posterior over TT-core elements and Gamma noise posterior."""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import check_shape


class CheckpointError(ValueError):
    pass


def tt_ranks(order: int, rank: int) -> tuple[int, ...]:
    """Uniform internal ranks ``(1, R, ..., R, 1)`` for an order-``order`` tensor."""
    return (1,) + (int(rank),) * (order - 1) + (1,)


def check_ranks(shape, ranks) -> tuple[int, ...]:
    shape = check_shape(shape)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(shape) + 1:
        raise ValueError(f"need {len(shape) + 1} TT-ranks for order {len(shape)}, "
                         f"got {len(ranks)}")
    if ranks[0] != 1 or ranks[-1] != 1:
        raise ValueError(f"boundary TT-ranks must be 1, got {ranks}")
    if any(r < 1 for r in ranks):
        raise ValueError(f"TT-ranks must be positive, got {ranks}")
    return ranks


@dataclass
class CorePosterior:
    """Elementwise Gaussian posterior of one core, arrays of shape (r_prev, N, r_next).

    Zero variances are accepted (a deterministic core); states produced by
    the engine always have strictly positive variances.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.variance = np.asarray(self.variance, dtype=np.float64)
        if self.mean.ndim != 3 or self.mean.shape != self.variance.shape:
            raise ValueError("core mean and variance must be matching 3-way arrays")
        if not (self.variance >= 0).all():
            raise ValueError("core variances must be nonnegative")

    def copy(self) -> "CorePosterior":
        return CorePosterior(self.mean.copy(), self.variance.copy())


@dataclass(frozen=True)
class NoisePosterior:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Gamma parameters must be positive, got {self.alpha}, {self.beta}")

    @property
    def expected_precision(self) -> float:
        return self.alpha / self.beta


@dataclass(frozen=True)
class PriorConfig:
    # prior/initial element variance; 1 gives the unit-covariance initialization
    prior_variance: float = 1.0
    alpha0: float = 1e-3
    beta0: float = 1e-3
    init_seed: int = 0

    def __post_init__(self):
        if min(self.prior_variance, self.alpha0, self.beta0) <= 0:
            raise ValueError("prior parameters must be positive")


@dataclass
class ModelState:
    shape: tuple[int, ...]
    ranks: tuple[int, ...]
    cores: list[CorePosterior]
    noise: NoisePosterior
    batches_seen: int = 0
    # number of variances clamped at the underflow floor
    clamp_count: int = 0

    def __post_init__(self):
        self.shape = check_shape(self.shape)
        self.ranks = check_ranks(self.shape, self.ranks)
        if len(self.cores) != len(self.shape):
            raise ValueError("need one core per mode")
        for d, core in enumerate(self.cores):
            want = (self.ranks[d], self.shape[d], self.ranks[d + 1])
            if core.mean.shape != want:
                raise ValueError(f"core {d} has shape {core.mean.shape}, expected {want}")

    @property
    def order(self) -> int:
        return len(self.shape)

    def copy(self) -> "ModelState":
        return ModelState(self.shape, self.ranks, [c.copy() for c in self.cores],
                          self.noise, self.batches_seen, self.clamp_count)


def init_state(shape, ranks, prior: PriorConfig = PriorConfig()) -> ModelState:
    """Means i.i.d. U(0, 1) from ``prior.init_seed``, variances ``prior.prior_variance``."""
    shape = check_shape(shape)
    ranks = check_ranks(shape, ranks)
    rng = np.random.default_rng(prior.init_seed)
    cores = []
    for d, n in enumerate(shape):
        dims = (ranks[d], n, ranks[d + 1])
        cores.append(CorePosterior(rng.random(dims), np.full(dims, prior.prior_variance)))
    return ModelState(shape, ranks, cores, NoisePosterior(prior.alpha0, prior.beta0))


def _check_index(state: ModelState, index) -> tuple[int, ...]:
    index = tuple(int(j) for j in index)
    if len(index) != state.order:
        raise IndexError(f"index has {len(index)} coordinates, tensor order is {state.order}")
    for j, n in zip(index, state.shape):
        if not 0 <= j < n:
            raise IndexError(f"index {index} out of range for shape {state.shape}")
    return index


def predict_mean(state: ModelState, index) -> float:
    index = _check_index(state, index)
    out = np.ones((1, 1))
    for core, j in zip(state.cores, index):
        out = out @ core.mean[:, j, :]
    return float(out[0, 0])


def predict_means(state: ModelState, indices: np.ndarray) -> np.ndarray:
    """Vectorized :func:`predict_mean` over an (n, D) index array."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, state.order)
    vec = np.ones((indices.shape[0], 1))
    for d, core in enumerate(state.cores):
        vec = np.einsum("nk,knl->nl", vec, core.mean[:, indices[:, d], :])
    return vec[:, 0]


def kron_second_moments(mean: np.ndarray, variance: np.ndarray) -> np.ndarray:
    """E[G ⊗ G] for a stack of slices.

    ``mean``/``variance`` have shape (..., r0, r1); the result has shape
    (..., r0*r0, r1*r1) with entry ``[k*r0 + k', l*r1 + l'] = E[G_kl G_k'l']``.
    The variance only lands on the diagonal positions ``k' = k, l' = l``.
    """
    r0, r1 = mean.shape[-2:]
    lead = mean.shape[:-2]
    outer = np.einsum("...kl,...mn->...kmln", mean, mean)
    k, l = np.meshgrid(np.arange(r0), np.arange(r1), indexing="ij")
    outer[..., k, k, l, l] += variance
    return outer.reshape(lead + (r0 * r0, r1 * r1))


def slice_second_moment(core: CorePosterior, j: int) -> np.ndarray:
    if not 0 <= j < core.mean.shape[1]:
        raise IndexError(f"slice index {j} out of range")
    return kron_second_moments(core.mean[:, j, :], core.variance[:, j, :])


def predictive_moments(state: ModelState, index) -> tuple[float, float]:
    """Posterior mean and second moment of the TT element at ``index``."""
    index = _check_index(state, index)
    mean = predict_mean(state, index)
    second = np.ones((1, 1))
    for core, j in zip(state.cores, index):
        second = second @ slice_second_moment(core, j)
    return mean, float(second[0, 0])


def predictive_moments_batch(state: ModelState, indices: np.ndarray):
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, state.order)
    n = indices.shape[0]
    mvec = np.ones((n, 1))
    svec = np.ones((n, 1))
    for d, core in enumerate(state.cores):
        m = core.mean[:, indices[:, d], :].transpose(1, 0, 2)
        v = core.variance[:, indices[:, d], :].transpose(1, 0, 2)
        mvec = np.einsum("nk,nkl->nl", mvec, m)
        svec = np.einsum("nk,nkl->nl", svec, kron_second_moments(m, v))
    return mvec[:, 0], svec[:, 0]


# Checkpoint layout (little-endian):
#   magic(8) version(u32) order(u32) dims(u64*D) ranks(u64*(D+1))
#   batches_seen(u64) clamp_count(u64)
#   per core: mean then variance as f64, C order
#   alpha(f64) beta(f64) crc32-of-everything-before(u32)
_MAGIC = b"STTCKPT\0"
_VERSION = 1


def save_checkpoint(state: ModelState, path) -> None:
    D = state.order
    parts = [_MAGIC, struct.pack("<II", _VERSION, D),
             struct.pack(f"<{D}Q", *state.shape),
             struct.pack(f"<{D + 1}Q", *state.ranks),
             struct.pack("<QQ", state.batches_seen, state.clamp_count)]
    for core in state.cores:
        parts.append(core.mean.astype("<f8").tobytes(order="C"))
        parts.append(core.variance.astype("<f8").tobytes(order="C"))
    parts.append(struct.pack("<dd", state.noise.alpha, state.noise.beta))
    blob = b"".join(parts)
    Path(path).write_bytes(blob + struct.pack("<I", zlib.crc32(blob)))


def load_checkpoint(path, expected_shape=None) -> ModelState:
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, D = struct.unpack_from("<II", blob, 8)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    try:
        shape = struct.unpack_from(f"<{D}Q", blob, pos)
        pos += 8 * D
        ranks = struct.unpack_from(f"<{D + 1}Q", blob, pos)
        pos += 8 * (D + 1)
        batches_seen, clamp_count = struct.unpack_from("<QQ", blob, pos)
        pos += 16
    except struct.error:
        raise CheckpointError(f"{path}: truncated header") from None
    n_floats = sum(2 * ranks[d] * shape[d] * ranks[d + 1] for d in range(D)) + 2
    if len(body) != pos + 8 * n_floats:
        raise CheckpointError(f"{path}: truncated or corrupt (size mismatch)")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    if expected_shape is not None and tuple(expected_shape) != tuple(shape):
        raise CheckpointError(
            f"{path}: checkpoint shape {tuple(shape)} != expected {tuple(expected_shape)}")
    cores = []
    for d in range(D):
        dims = (ranks[d], shape[d], ranks[d + 1])
        size = int(np.prod(dims))
        mean = np.frombuffer(blob, "<f8", size, pos).reshape(dims).astype(np.float64)
        pos += 8 * size
        var = np.frombuffer(blob, "<f8", size, pos).reshape(dims).astype(np.float64)
        pos += 8 * size
        cores.append(CorePosterior(mean, var))
    alpha, beta = struct.unpack_from("<dd", blob, pos)
    return ModelState(tuple(shape), tuple(ranks), cores, NoisePosterior(alpha, beta),
                      int(batches_seen), int(clamp_count))
