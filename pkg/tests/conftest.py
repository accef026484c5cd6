import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from structleak.cli import tune_allocator
from structleak.graph import Graph, NodeLabels

tune_allocator()

SESSION_START = time.perf_counter()
ACCEPTANCE_LINES: list[str] = []

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_graph(n, p, seed, feature_dim=3):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    hit = rng.random(len(iu)) < p
    return Graph.from_edges(n, np.stack([iu[hit], ju[hit]], 1), rng.normal(size=(n, feature_dim)))


def random_labels(n, classes, known_fraction, seed):
    rng = np.random.default_rng(seed)
    lab = np.arange(n) % classes
    rng.shuffle(lab)
    known = rng.random(n) < known_fraction
    for c in range(classes):
        known[np.flatnonzero(lab == c)[0]] = True
    return NodeLabels(lab, known, classes)


@pytest.fixture
def small_graph():
    return random_graph(12, 0.35, 3)


@pytest.fixture
def small_labels():
    return random_labels(12, 2, 0.5, 3)


def pytest_collection_modifyitems(config, items):
    # acceptance criteria run last so the runtime criterion sees the whole suite
    items.sort(key=lambda item: item.module.__name__ == "test_acceptance")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
