import numpy as np
import pytest

from proda.numerics import Module, Parameter


class Holder(Module):
    """Wraps loose arrays as parameters so grad_check can perturb them."""

    def __init__(self, **arrays):
        super().__init__()
        for name, arr in arrays.items():
            setattr(self, name, Parameter(np.array(arr, dtype=np.float64)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def signed_weights(rng, shape):
    """Random weights bounded away from zero, so no gradient entry is tiny."""
    return rng.uniform(0.5, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
