import numpy as np
import pytest

from streamtt.posterior import CorePosterior, ModelState, NoisePosterior

_CRITERIA: list[str] = []


@pytest.fixture
def criterion_log():
    """Acceptance tests append one PASS/FAIL line each; printed in the summary."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


def random_state(shape, ranks, seed, var_range=(0.05, 0.5), mean_scale=1.0,
                 alpha=2.0, beta=1.0) -> ModelState:
    rng = np.random.default_rng(seed)
    cores = []
    for d, n in enumerate(shape):
        dims = (ranks[d], n, ranks[d + 1])
        cores.append(CorePosterior(mean_scale * rng.normal(size=dims),
                                   rng.uniform(*var_range, size=dims)))
    return ModelState(tuple(shape), tuple(ranks), cores, NoisePosterior(alpha, beta))


@pytest.fixture
def make_state():
    return random_state
