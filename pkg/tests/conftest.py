import numpy as np
import pytest

from capreg.core import Dataset

CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERIA:
        terminalreporter.write_line(line)


@pytest.fixture
def criterion(capsys):
    """Record and print one pass/fail line, then assert."""
    def check(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return check


def random_convex_model(rng, k, p, n=0):
    from capreg.core import PartitionModel, induced_partition
    a = rng.normal(size=k)
    b = rng.normal(size=(k, p))
    model = PartitionModel(a, b, ())
    if n:
        x = rng.normal(size=(n, p))
        parts = induced_partition(model, Dataset(x, np.zeros(n)))
        return PartitionModel(a, b, tuple(parts)), x
    return model
