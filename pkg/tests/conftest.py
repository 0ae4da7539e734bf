import numpy as np
import pytest

from dimscale.model import ItemPartition, ModelParameters


def random_parameters(rng, n_classes, partition, spread=2.0):
    """Admissible parameters: anchored first class, reference gamma 1."""
    s = partition.n_groups
    theta = np.zeros((n_classes, s))
    theta[1:] = rng.normal(0.0, spread, size=(n_classes - 1, s))
    beta = rng.normal(0.0, 1.0, size=partition.n_items)
    gamma = rng.uniform(0.5, 2.0, size=partition.n_items)
    gamma[list(partition.reference_items)] = 1.0
    pi = rng.dirichlet(np.ones(n_classes) * 2.0)
    return ModelParameters(pi, theta, beta, gamma)


def random_partition(rng, n_items, n_groups):
    labels = list(range(n_groups)) + list(rng.integers(0, n_groups, size=n_items - n_groups))
    rng.shuffle(labels)
    return ItemPartition.from_labels(labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
