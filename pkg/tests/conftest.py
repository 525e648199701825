import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from mrrobust.summary_data import SummaryData

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    if passed is None:
        status = "SKIP"
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_diagonal_data(rng, L, n_exposure=None, n_outcome=None):
    g = rng.normal(0.0, 1.0, L)
    G = rng.normal(0.0, 1.0, L)
    se_g = rng.uniform(0.2, 2.0, L)
    se_G = rng.uniform(0.2, 2.0, L)
    return SummaryData.from_standard_errors(g, se_g, G, se_G, n_exposure=n_exposure, n_outcome=n_outcome)


def random_spd(rng, L, cond=50.0):
    q, _ = np.linalg.qr(rng.normal(size=(L, L)))
    w = np.exp(rng.uniform(0.0, np.log(cond), L))
    return (q * w) @ q.T


@st.composite
def diagonal_data(draw, min_L=1, max_L=8):
    L = draw(st.integers(min_L, max_L))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_diagonal_data(np.random.default_rng(seed), L)


def fixture_path():
    env = os.environ.get("MR_ROBUST_FIXTURE")
    path = Path(env) if env else Path(__file__).parent / "data" / "bmi_sbp.csv"
    return path if path.exists() else None


@pytest.fixture
def l2_data():
    return SummaryData.from_standard_errors([0.2, 0.1], [0.1, 0.1], [0.3, 0.1], [0.1, 0.1])


@pytest.fixture
def scalar_data():
    return SummaryData.from_standard_errors([1.0], [1.0], [2.0], [1.0])
