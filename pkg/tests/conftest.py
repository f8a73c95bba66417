import numpy as np
import pytest

from tadt import tensor as T


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, *shape, dtype=np.float64):
    return T.Tensor(rng.standard_normal(shape), requires_grad=True, dtype=dtype)


def weighted_sum(out, seed=7):
    """Random linear functional so every output entry carries gradient."""
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return T.tsum(out * T.Tensor(w, dtype=out.dtype))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
