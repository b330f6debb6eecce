from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)


@st.composite
def quats(draw, unit=True):
    q = draw(arrays(np.float64, 4, elements=finite))
    n = np.linalg.norm(q)
    if unit:
        if n < 1e-3:
            q = np.array([1.0, 0.0, 0.0, 0.0])
        else:
            q = q / n
    return q


@st.composite
def vec3s(draw):
    return draw(arrays(np.float64, 3, elements=finite))


def random_unit(rng, size):
    q = rng.standard_normal((size, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sphere_path():
    return DATA / "sphere200.g2o"


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
