import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamtt.data import ObservationBatch
from streamtt.metrics import ErrorLog, evaluate_on_test, mc_second_moment_oracle, relative_error
from streamtt.posterior import (CorePosterior, ModelState, NoisePosterior, predict_mean,
                                predictive_moments)
from streamtt.synthetic import sample_ground_truth, true_values


def test_relative_error_examples():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([0.0, 0.0], [1.0, 2.0]) == 1.0
    assert relative_error([3.0, 0.0], [3.0, 4.0]) == pytest.approx(0.8, rel=1e-15)


@pytest.mark.parametrize("p, t", [([1.0], [1.0, 2.0]), ([], []), ([1.0, 1.0], [0.0, 0.0])])
def test_relative_error_rejects(p, t):
    with pytest.raises(ValueError):
        relative_error(p, t)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 20),
       st.floats(1e-3, 1e3).flatmap(lambda c: st.sampled_from([c, -c])))
def test_relative_error_scale_covariant(seed, n, c):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=n), rng.normal(size=n) + 0.1
    assert relative_error(c * p, c * t) == pytest.approx(relative_error(p, t), rel=1e-12)


def state_from_truth(gt, var=0.1):
    cores = [CorePosterior(c.copy(), np.full(c.shape, var)) for c in gt.cores]
    return ModelState(gt.shape, gt.ranks, cores, NoisePosterior(1.0, 1.0))


def all_indices(shape):
    return np.array(list(itertools.product(*map(range, shape))))


def test_evaluate_exact_state_and_zero_state():
    gt = sample_ground_truth((3, 3, 3), (1, 2, 2, 1), seed=0)
    idx = all_indices(gt.shape)
    test = ObservationBatch(gt.shape, idx, true_values(gt, idx))
    s = state_from_truth(gt)
    assert evaluate_on_test(s, test) == pytest.approx(0.0, abs=1e-15)
    for c in s.cores:
        c.mean[:] = 0.0
    assert evaluate_on_test(s, test) == 1.0


def test_evaluate_matches_loop_and_uses_truth(make_state):
    s = make_state((3, 3, 3), (1, 2, 2, 1), seed=8)
    idx = all_indices((3, 3, 3))
    rng = np.random.default_rng(0)
    vals, clean = rng.normal(size=len(idx)), rng.normal(size=len(idx))
    test = ObservationBatch((3, 3, 3), idx, vals)
    loop = np.array([predict_mean(s, t) for t in idx])
    want = np.linalg.norm(loop - vals) / np.linalg.norm(vals)
    assert evaluate_on_test(s, test) == pytest.approx(want, rel=1e-13)
    want_clean = np.linalg.norm(loop - clean) / np.linalg.norm(clean)
    assert evaluate_on_test(s, test, truth=clean) == pytest.approx(want_clean, rel=1e-13)
    with pytest.raises(ValueError):
        evaluate_on_test(s, ObservationBatch.empty((3, 3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(12))))
def test_evaluate_order_invariant(perm):
    gt = sample_ground_truth((3, 4), (1, 2, 1), seed=1)
    idx = all_indices((3, 4))
    vals = true_values(gt, idx) + 0.3
    s = state_from_truth(gt)
    base = evaluate_on_test(s, ObservationBatch((3, 4), idx, vals))
    shuffled = evaluate_on_test(s, ObservationBatch((3, 4), idx[perm], vals[perm]))
    assert shuffled == pytest.approx(base, rel=1e-14)


def test_oracle_zero_variance(make_state):
    s = make_state((3, 3), (1, 2, 1), seed=2)
    for c in s.cores:
        c.variance[:] = 0.0
    for n in (1, 7, 1000):
        est, se = mc_second_moment_oracle(s, (1, 2), n, seed=n)
        assert est == pytest.approx(predict_mean(s, (1, 2)) ** 2, rel=1e-13)
        assert se == pytest.approx(0.0, abs=1e-12)


def test_oracle_scalar_moment():
    s = ModelState((1,), (1, 1), [CorePosterior(np.full((1, 1, 1), 0.8),
                                                np.full((1, 1, 1), 0.3))],
                   NoisePosterior(1.0, 1.0))
    est, se = mc_second_moment_oracle(s, (0,), 1_000_000, seed=0)
    assert abs(est - (0.8 ** 2 + 0.3)) <= 4 * se


def test_oracle_agrees_and_shrinks(make_state):
    s = make_state((3, 3, 3), (1, 2, 2, 1), seed=5)
    _, s2 = predictive_moments(s, (0, 1, 2))
    est, se = mc_second_moment_oracle(s, (0, 1, 2), 1_000_000, seed=1)
    assert abs(est - s2) <= 3 * se
    _, se_small = mc_second_moment_oracle(s, (0, 1, 2), 40_000, seed=1)
    _, se_big = mc_second_moment_oracle(s, (0, 1, 2), 160_000, seed=1)
    assert se_big < se_small
    assert se_big / se_small == pytest.approx(0.5, rel=0.3)
    with pytest.raises(ValueError):
        mc_second_moment_oracle(s, (0, 0, 0), 0, seed=0)


def test_error_log_round_trip(tmp_path):
    log = ErrorLog()
    log.append(1, 0.5, 0.01)
    log.append(2, 1 / 3, 0.02)
    assert log.final_error == 1 / 3
    with pytest.raises(ValueError):
        log.append(2, 0.1, 0.0)
    p = tmp_path / "e.csv"
    log.write_csv(p)
    assert p.read_text().splitlines()[0] == "batch,rel_error,seconds"
    assert ErrorLog.read_csv(p).rows == log.rows
    assert np.isnan(ErrorLog().final_error)
