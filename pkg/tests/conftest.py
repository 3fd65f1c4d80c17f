import numpy as np
import pytest

from sealgraph._alloc import tune_malloc
from sealgraph.graph import GraphInstance, HierarchicalGraph
from sealgraph.numerics import make_rng

tune_malloc()


def random_instance(rng, n, phi=3, label=None, p=0.4, id="g"):
    a = np.triu((rng.random((n, n)) < p).astype(np.uint8), 1)
    return GraphInstance(id, a + a.T, rng.random((n, phi)), label)


def random_hierarchy(rng, count, c=3, sizes=(5, 12), phi=3, p_theta=0.3, labeled=None):
    insts = [
        random_instance(rng, int(rng.integers(*sizes)), phi, int(rng.integers(c)), id=f"g{i}")
        for i in range(count)
    ]
    theta = np.triu((rng.random((count, count)) < p_theta).astype(np.int8), 1)
    return HierarchicalGraph(insts, theta + theta.T, c, labeled_ids=labeled)


@pytest.fixture
def rng():
    return make_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
