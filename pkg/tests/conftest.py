import numpy as np
import pytest

from maxfl_sim.client import ClientProfile, warmup
from maxfl_sim.core import RngStream
from maxfl_sim.data import PartitionSpec, Scheme, make_mean_estimation, make_synthetic_classification, partition
from maxfl_sim.models import ModelSpec


def quadratic_profiles(theta, nu2=1.0, n=50, seed=0, warm=100, eta=0.05):
    """Scalar mean-estimation clients, warmed up."""
    data, _ = make_mean_estimation(theta, nu2, n, RngStream(seed))
    spec = ModelSpec.scalar_quadratic()
    profiles = [ClientProfile(k, d) for k, d in enumerate(data)]
    for p in profiles:
        warmup(p, spec, warm, eta, None, RngStream(seed))
    return spec, profiles


def blob_profiles(M=10, seed=0, flip=0.0, warm=20, eta=0.05):
    from maxfl_sim.data import flip_labels

    pool = make_synthetic_classification(200 * M, 10, 10, 3.0, RngStream(seed, purpose="pool"))
    spec_p = PartitionSpec(Scheme.CLUSTER_LABELS, n_clients=M, min_samples=20)
    data = flip_labels(partition(pool, spec_p, RngStream(seed)), flip, RngStream(seed))
    spec = ModelSpec.softmax_regression(10, 10)
    profiles = [ClientProfile(k, d) for k, d in enumerate(data)]
    for p in profiles:
        warmup(p, spec, warm, eta, 16, RngStream(seed))
    return spec, profiles


@pytest.fixture
def quad():
    return quadratic_profiles(np.linspace(-1.0, 1.0, 6))


@pytest.fixture
def blobs10():
    return blob_profiles()


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash[ACCEPTANCE]
    seen = []

    def check(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        seen.append(line)
        lines.append(line)
        print(line)
        assert ok, line

    yield check
    if not seen:
        number = request.node.get_closest_marker("criterion").args[0]
        lines.append(f"criterion {number}: FAIL  raised before reaching its check")
