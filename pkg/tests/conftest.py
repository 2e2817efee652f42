import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from autoqd.config import RunConfig

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Print and keep one acceptance line; they are repeated in the session summary."""
    def _record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_config():
    return RunConfig().replace(seed=7, iterations=6, checkpoint_every=2, **{
        "descriptor.k": 2, "descriptor.schedule": (2, 4), "qd.batch_size": 8,
        "qd.episodes_per_eval": 2, "embedding.dim": 20, "env.horizon": 15})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
