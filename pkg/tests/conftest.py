import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from evla import _accel  # noqa: E402
from evla.events import SensorGeometry, validate_stream  # noqa: E402

import oracles  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geometry():
    return SensorGeometry(12, 9)


@pytest.fixture
def make_stream():
    def make(rng, n, geometry=None, **kw):
        g = geometry or SensorGeometry(12, 9)
        rows = oracles.random_events(rng, n, g.width, g.height, **kw)
        return rows, validate_stream(rows, g)
    return make


@pytest.fixture(params=[b for b in _accel.BACKENDS if b == "numpy" or _accel.HAS_NUMBA])
def backend(request):
    with _accel.use_backend(request.param):
        yield request.param


# -- acceptance reporting ----------------------------------------------------

_VERDICTS = []


class Criterion:
    def __init__(self, title):
        self.title = title
        self.line = f"FAIL  {title}: did not complete"

    def check(self, ok, detail):
        self.line = f"{'PASS' if ok else 'FAIL'}  {self.title}: {detail}"
        print(self.line)
        assert ok, self.line


@pytest.fixture
def criterion():
    made = []

    def make(title):
        made.append(Criterion(title))
        return made[-1]

    yield make
    _VERDICTS.extend(c.line for c in made)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
