import numpy as np
import pytest

from egnncd.data import Dataset
from egnncd.synth import SynthSpec, gen_dina


@pytest.fixture
def tiny_ds():
    """3 students, 4 exercises, 3 concepts, 10 logs with both outcomes."""
    q = np.array([[1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]], dtype=float)
    s = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2]
    e = [0, 1, 2, 0, 2, 3, 0, 1, 2, 3]
    y = [1, 0, 1, 0, 1, 1, 1, 1, 0, 0]
    return Dataset(3, 4, 3, np.array(s), np.array(e), np.array(y, dtype=float), q)


@pytest.fixture(scope="session")
def small_dina():
    return gen_dina(SynthSpec(n_students=60, n_exercises=12, n_concepts=4, seed=3))


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# -- acceptance criteria report ------------------------------------------------------
# test_acceptance.py records one line per criterion here; the lines are printed
# at the end of the run whatever the capture mode.

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
