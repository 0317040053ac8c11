from pathlib import Path

import numpy as np
import pytest

from oracles import ACCEPTANCE_LINES
from polypwsi.evaluation import load_confusion

DATA = Path(__file__).parent / "data"


@pytest.fixture
def reference_matrix_path():
    return DATA / "reference_confusion.tsv"


@pytest.fixture
def reference_matrix(reference_matrix_path):
    return load_confusion(reference_matrix_path)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def read_reference_metrics():
    """(metric, class code or 'Total', value, lower, upper) rows, in percent."""
    rows = []
    with open(DATA / "reference_metrics.tsv", encoding="utf-8") as fh:
        lines = [l for l in fh if l.strip() and not l.startswith("#")]
    for line in lines[1:]:
        metric, cls, *nums = line.rstrip("\n").split("\t")
        rows.append((metric, cls, *map(float, nums)))
    return rows


@pytest.fixture
def reference_metrics():
    return read_reference_metrics()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
