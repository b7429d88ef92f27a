"""Streaming variational Bayes updates for the probabilistic TT model.

Each incoming batch is absorbed with the posterior from the previous batch
acting as the prior.  Within a batch the cores are swept in ascending order
until the posterior means stop moving (or ``max_inner_iters`` is reached);
the noise posterior is refreshed after every core.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .data import ObservationBatch, TensorDataError
from .posterior import (CorePosterior, ModelState, NoisePosterior,
                        kron_second_moments, slice_second_moment)

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-300


@dataclass(frozen=True)
class EngineConfig:
    max_inner_iters: int = 100
    inner_tolerance: float = 1e-4
    # "per_core": refresh tau after every core update (inside the d-loop)
    # "per_sweep": once after each full sweep
    # "fixed": never; E[tau] stays at the incoming value
    noise_update: str = "per_core"
    # source of the other same-slice element means in the mean update:
    # "frozen" = posterior before the batch, "current" = latest values
    cross_terms: str = "current"

    def __post_init__(self):
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")
        if self.inner_tolerance < 0:
            raise ValueError("inner_tolerance must be nonnegative")
        if self.noise_update not in ("per_core", "per_sweep", "fixed"):
            raise ValueError(f"unknown noise_update {self.noise_update!r}")
        if self.cross_terms not in ("frozen", "current"):
            raise ValueError(f"unknown cross_terms {self.cross_terms!r}")


@dataclass
class EnvMoments:
    e_left: np.ndarray
    e_right: np.ndarray
    b_left: np.ndarray
    b_right: np.ndarray


@dataclass
class BatchInfo:
    sweeps: int
    converged: bool
    max_changes: list[float] = field(default_factory=list)
    beta_increments: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# scalar reference operations


def compute_envs(state: ModelState, index, d: int) -> EnvMoments:
    """Left/right products of mean slices and of slice second moments around mode ``d``."""
    if not 0 <= d < state.order:
        raise ValueError(f"mode {d} out of range for order {state.order}")
    index = tuple(int(j) for j in index)
    if len(index) != state.order or any(not 0 <= j < n for j, n in zip(index, state.shape)):
        raise IndexError(f"invalid index {index} for shape {state.shape}")
    e_left = np.ones((1, 1))
    b_left = np.ones((1, 1))
    for i in range(d):
        e_left = e_left @ state.cores[i].mean[:, index[i], :]
        b_left = b_left @ slice_second_moment(state.cores[i], index[i])
    e_right = np.ones((1, 1))
    b_right = np.ones((1, 1))
    for i in reversed(range(d + 1, state.order)):
        e_right = state.cores[i].mean[:, index[i], :] @ e_right
        b_right = slice_second_moment(state.cores[i], index[i]) @ b_right
    return EnvMoments(e_left.ravel(), e_right.ravel(), b_left.ravel(), b_right.ravel())


def update_core_element_variance(prev_variance: float, expected_tau: float,
                                 moment_sum: float) -> float:
    if prev_variance <= 0 or expected_tau <= 0:
        raise ValueError("prev_variance and expected_tau must be positive")
    if moment_sum < 0:
        raise ValueError("moment_sum must be nonnegative")
    if moment_sum == 0:
        return float(prev_variance)
    new = 1.0 / (1.0 / prev_variance + expected_tau * moment_sum)
    return float(min(max(new, VARIANCE_FLOOR), prev_variance))


def element_moment_sum(state: ModelState, d: int, k: int, l: int,
                       sub_batch: ObservationBatch) -> float:
    r0, r1 = state.ranks[d], state.ranks[d + 1]
    total = 0.0
    for index in sub_batch.indices:
        env = compute_envs(state, index, d)
        total += env.b_left[k * r0 + k] * env.b_right[l * r1 + l]
    return total


def update_core_element_mean(state: ModelState, prior_core: CorePosterior, d: int,
                             k: int, j: int, l: int, sub_batch: ObservationBatch,
                             new_variance: float, expected_tau: float,
                             cross_terms: str = "current") -> float:
    """Posterior mean of element ``(k, j, l)`` of core ``d``.

    ``sub_batch`` must hold exactly the batch entries whose mode-``d``
    coordinate is ``j``.  ``prior_core`` is the core posterior before the
    batch; with ``cross_terms="current"`` the other elements of the slice
    are read from ``state`` instead.
    """
    if len(sub_batch) and (sub_batch.indices[:, d] != j).any():
        raise ValueError(f"sub_batch contains entries outside slice {j} of mode {d}")
    mu0 = prior_core.mean[k, j, l]
    nu0 = prior_core.variance[k, j, l]
    if len(sub_batch) == 0:
        return float(mu0)
    r0, r1 = state.ranks[d], state.ranks[d + 1]
    slice_means = (prior_core.mean if cross_terms == "frozen"
                   else state.cores[d].mean)[:, j, :]
    acc = 0.0
    for index, x in zip(sub_batch.indices, sub_batch.values):
        env = compute_envs(state, index, d)
        bl = env.b_left.reshape(r0, r0)
        br = env.b_right.reshape(r1, r1)
        acc += x * env.e_left[k] * env.e_right[l]
        acc -= bl[k] @ slice_means @ br[l]
        acc += bl[k, k] * br[l, l] * slice_means[k, l]
    return float(new_variance * mu0 / nu0 + new_variance * expected_tau * acc)


def expected_squared_error(state: ModelState, batch: ObservationBatch) -> float:
    """E[sum_j (x_j - prod_d G_jd)^2] under the current factorized posterior."""
    from .posterior import predictive_moments_batch
    if len(batch) == 0:
        return 0.0
    pred, second = predictive_moments_batch(state, batch.indices)
    x = batch.values
    return float(x @ x - 2.0 * (x @ pred) + second.sum())


def update_noise(state: ModelState, batch: ObservationBatch,
                 prior: NoisePosterior | None = None) -> NoisePosterior:
    """Gamma posterior of the noise precision after seeing ``batch``.

    ``prior`` is the noise posterior before the batch (defaults to
    ``state.noise``); the expected error uses the cores in ``state``.
    """
    prior = state.noise if prior is None else prior
    incr = _checked_increment(expected_squared_error(state, batch), batch.values)
    return NoisePosterior(prior.alpha + 0.5 * len(batch), prior.beta + 0.5 * incr)


def _checked_increment(incr: float, x: np.ndarray) -> float:
    scale = 1.0 + float(x @ x)
    if incr < -1e-9 * scale:
        raise FloatingPointError(f"negative expected squared error {incr}")
    return max(incr, 0.0)


# ---------------------------------------------------------------------------
# vectorized batch update


def _gather(core: CorePosterior, col: np.ndarray):
    """Mean slices (r0, r1, n) and Kronecker second moments (r0^2, r1^2, n).

    The observation axis is kept last so every kernel below is a vectorized
    loop over observations.
    """
    r0, _, r1 = core.mean.shape
    m = np.take(np.ascontiguousarray(core.mean.transpose(0, 2, 1)), col, axis=2)
    v = np.take(np.ascontiguousarray(core.variance.transpose(0, 2, 1)), col, axis=2)
    s = np.einsum("kln,mpn->kmlpn", m, m).reshape(r0 * r0 * r1 * r1, -1)
    s[_diag_rows(r0, r1)] += v.reshape(r0 * r1, -1)
    return m, s.reshape(r0 * r0, r1 * r1, -1)


def _diag_rows(r0: int, r1: int) -> np.ndarray:
    # flat row of (k, k, l, l) in a (r0, r0, r1, r1) layout, (k, l) row-major
    k, l = np.meshgrid(np.arange(r0), np.arange(r1), indexing="ij")
    return (((k * r0 + k) * r1 + l) * r1 + l).ravel()


def _scatter(col: np.ndarray, n_slices: int, vals: np.ndarray) -> np.ndarray:
    """Sum per-observation (r0, r1, n) terms into per-slice (r0, N, r1) totals."""
    r0, r1, n = vals.shape
    slot = (np.arange(r0 * r1)[:, None] * n_slices + col[None, :]).ravel()
    out = np.bincount(slot, weights=vals.reshape(-1), minlength=r0 * r1 * n_slices)
    return out.reshape(r0, r1, n_slices).transpose(0, 2, 1)


def _update_core(cur: ModelState, prior_core: CorePosterior, d: int,
                 batch: ObservationBatch, e_left, e_right, b_left, b_right,
                 tau: float, cross_terms: str) -> None:
    core = cur.cores[d]
    r0, n_slices, r1 = core.mean.shape
    n = len(batch)
    col = batch.indices[:, d]
    x = batch.values
    bl = b_left.reshape(r0, r0, n)
    br = b_right.reshape(r1, r1, n)
    bl_diag = bl[np.arange(r0), np.arange(r0)]
    br_diag = br[np.arange(r1), np.arange(r1)]
    diag = bl_diag[:, None, :] * br_diag[None, :, :]

    moment_sum = _scatter(col, n_slices, diag)
    hit = np.zeros(n_slices, dtype=bool)
    hit[col] = True
    prec0 = 1.0 / prior_core.variance
    var = np.where(hit[None, :, None], 1.0 / (prec0 + tau * moment_sum),
                   prior_core.variance)
    low = var < VARIANCE_FLOOR
    if low.any():
        cur.clamp_count += int(low.sum())
        log.warning("clamped %d core variances at %g", int(low.sum()), VARIANCE_FLOOR)
        var = np.maximum(var, VARIANCE_FLOOR)
    # guards 1/(1/v + tiny) rounding above v
    var = np.minimum(var, prior_core.variance)

    data = x * e_left[:, None, :] * e_right[None, :, :]
    prior_term = prior_core.mean * prec0
    if cross_terms == "frozen":
        m0 = np.take(np.ascontiguousarray(prior_core.mean.transpose(0, 2, 1)), col, axis=2)
        cross = np.einsum("kpn,pqn,lqn->kln", bl, m0, br)
        acc = _scatter(col, n_slices, data - cross + diag * m0)
        mean = var * (prior_term + tau * acc)
        core.mean = np.where(hit[None, :, None], mean, prior_core.mean)
    else:
        # sequential over (k, l) in row-major order, each element seeing
        # the latest values of the rest of its slice
        mean = core.mean.transpose(0, 2, 1).copy()
        mean[:, :, ~hit] = prior_core.mean.transpose(0, 2, 1)[:, :, ~hit]
        hit_cols = np.flatnonzero(hit)
        for k in range(r0):
            for l in range(r1):
                mc = np.take(mean, col, axis=2)
                cross = np.einsum("pn,pqn,qn->n", bl[k], mc, br[l])
                w = data[k, l] - cross + diag[k, l] * mc[k, l]
                acc = np.bincount(col, weights=w, minlength=n_slices)
                new = var[k, :, l] * (prior_term[k, :, l] + tau * acc)
                mean[k, l, hit_cols] = new[hit_cols]
        core.mean = np.ascontiguousarray(mean.transpose(0, 2, 1))
    core.variance = var


def _noise_from(prior: NoisePosterior, x, pred, second) -> tuple[NoisePosterior, float]:
    incr = _checked_increment(float(x @ x - 2.0 * (x @ pred) + second.sum()), x)
    return NoisePosterior(prior.alpha + 0.5 * x.shape[0], prior.beta + 0.5 * incr), incr


def _sweep(cur: ModelState, prior: ModelState, batch: ObservationBatch,
           config: EngineConfig, info: BatchInfo) -> float:
    D = cur.order
    n = len(batch)
    idx = batch.indices
    means, seconds = zip(*(_gather(c, idx[:, d]) for d, c in enumerate(cur.cores)))
    means, seconds = list(means), list(seconds)

    # right environments from cores not yet touched in this sweep
    e_suf = [None] * (D + 1)
    b_suf = [None] * (D + 1)
    e_suf[D] = np.ones((1, n))
    b_suf[D] = np.ones((1, n))
    for d in reversed(range(D)):
        e_suf[d] = np.einsum("kln,ln->kn", means[d], e_suf[d + 1])
        b_suf[d] = np.einsum("pqn,qn->pn", seconds[d], b_suf[d + 1])

    e_pre = np.ones((1, n))
    b_pre = np.ones((1, n))
    change = 0.0
    for d in range(D):
        old = cur.cores[d].mean
        _update_core(cur, prior.cores[d], d, batch, e_pre, e_suf[d + 1], b_pre,
                     b_suf[d + 1], cur.noise.expected_precision, config.cross_terms)
        change = max(change, float(np.abs(cur.cores[d].mean - old).max()))
        means[d], seconds[d] = _gather(cur.cores[d], idx[:, d])
        e_pre = np.einsum("kn,kln->ln", e_pre, means[d])
        b_pre = np.einsum("pn,pqn->qn", b_pre, seconds[d])
        if config.noise_update == "per_core":
            pred = np.einsum("kn,kn->n", e_pre, e_suf[d + 1])
            second = np.einsum("kn,kn->n", b_pre, b_suf[d + 1])
            cur.noise, incr = _noise_from(prior.noise, batch.values, pred, second)
            info.beta_increments.append(incr)
    if config.noise_update == "per_sweep":
        cur.noise, incr = _noise_from(prior.noise, batch.values, e_pre[0], b_pre[0])
        info.beta_increments.append(incr)
    return change


def fit_batch(state: ModelState, batch: ObservationBatch,
              config: EngineConfig = EngineConfig()) -> tuple[ModelState, BatchInfo]:
    """Absorb one batch; returns the new state and sweep diagnostics."""
    if batch.shape != state.shape:
        raise TensorDataError(f"batch shape {batch.shape} != model shape {state.shape}")
    if any((c.variance <= 0).any() for c in state.cores):
        raise ValueError("engine requires strictly positive core variances")
    cur = state.copy()
    info = BatchInfo(sweeps=0, converged=False)
    if len(batch) > 0:
        for _ in range(config.max_inner_iters):
            change = _sweep(cur, state, batch, config, info)
            info.sweeps += 1
            info.max_changes.append(change)
            if change < config.inner_tolerance:
                info.converged = True
                break
    else:
        info.converged = True
    cur.batches_seen = state.batches_seen + 1
    return cur, info


def process_batch(state: ModelState, batch: ObservationBatch,
                  config: EngineConfig = EngineConfig()) -> ModelState:
    return fit_batch(state, batch, config)[0]


def run_stream(state: ModelState, batches: Iterable[ObservationBatch],
               config: EngineConfig = EngineConfig(),
               callback: Callable[[int, ModelState, BatchInfo], None] | None = None
               ) -> ModelState:
    """Feed ``batches`` in order, calling ``callback(t, state, info)`` after each (t from 1)."""
    for t, batch in enumerate(batches, start=1):
        if batch.shape != state.shape:
            raise TensorDataError(
                f"batch {t}: shape {batch.shape} != model shape {state.shape}")
        state, info = fit_batch(state, batch, config)
        if callback is not None:
            callback(t, state, info)
    return state
