import functools

import numpy as np
import pytest

from unsupinf.datakit import ClusterSpec, Dataset, circle_centers, generate_clusters, six_cluster_spec
from unsupinf.neuralvae import TrainConfig, VAEArch, train

# Toy recipe for the six-cluster experiments: small tanh MLPs and a low KL
# weight so the 2-D posterior does not collapse.
TOY_ARCH = VAEArch(2, 2, (32, 32), (32, 32))
TOY_BETA = 0.1


def toy_config(seed, steps=10000):
    return TrainConfig(beta=TOY_BETA, learning_rate=0.03, batch_size=64, total_steps=steps, checkpoint_every=steps // 20, seed=seed)


@functools.lru_cache(maxsize=None)
def toy_run(seed):
    """Six-cluster data and the 20 checkpoints of a model trained on it."""
    data = generate_clusters(six_cluster_spec(seed))
    return data, tuple(train(data, TOY_ARCH, toy_config(seed)))


@functools.lru_cache(maxsize=None)
def tiny_run(seed=0):
    """A quick model for plumbing tests."""
    data = generate_clusters(six_cluster_spec(seed))
    arch = VAEArch(2, 2, (8,), (8,))
    cfg = TrainConfig(beta=0.5, learning_rate=0.02, batch_size=32, total_steps=300, checkpoint_every=100, seed=seed)
    return data, tuple(train(data, arch, cfg))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_labeled():
    r = np.random.default_rng(3)
    a = r.normal([0.0, 0.0], 0.5, size=(12, 2))
    b = r.normal([20.0, 0.0], 0.7, size=(9, 2))
    return Dataset(np.vstack([a, b]), np.r_[np.zeros(12, int), np.ones(9, int)])


def sixty_point_set(seed):
    return generate_clusters(ClusterSpec([20, 20, 20], [0.5] * 3, circle_centers(3, 5.0), seed))


SIXTY_ARCH = VAEArch(2, 2, (16, 16), (16, 16))


def sixty_config(seed):
    # full batch, so a leave-one-out run differs from the full run only by the removed row
    return TrainConfig(beta=0.1, learning_rate=0.03, batch_size=60, total_steps=500, checkpoint_every=25, seed=seed)


@functools.lru_cache(maxsize=None)
def loo_models(seed, removed):
    """Full run plus one leave-one-out run per index in ``removed`` on the 60-point set."""
    data = sixty_point_set(seed)
    cfg = sixty_config(seed)
    full = tuple(train(data, SIXTY_ARCH, cfg))
    ids = np.arange(data.n)
    loo = {}
    for i in removed:
        keep = np.delete(ids, i)
        loo[i] = train(data.subset(keep), SIXTY_ARCH, cfg, sample_ids=keep)[-1]
    return data, full, loo


# one summary line per acceptance criterion, collected while the tests run
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
