import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from knnmerge.core import KnnGraph, Neighbor, NeighborList

settings.register_profile("ci", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def quadratic_knn(data, targets, k, exclude_self):
    """Independent exhaustive k-NN: plain Python loops, float64, ties by ascending id."""
    data = np.asarray(data, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    out = []
    for t in range(targets.shape[0]):
        scored = []
        for j in range(data.shape[0]):
            if exclude_self and j == t:
                continue
            diff = targets[t] - data[j]
            scored.append((float(np.float32(np.dot(diff, diff))), j))
        scored.sort()
        out.append([j for _, j in scored[:k]])
    return np.array(out, dtype=np.int64)


def graph_from_rows(rows, k):
    """rows: list of lists of (id, dist) per element."""
    return KnnGraph.from_lists([NeighborList(i, k, [Neighbor(j, d) for j, d in r]) for i, r in enumerate(rows)], k)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    report = getattr(mod, "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for name in sorted(report):
            terminalreporter.write_line(report[name])
