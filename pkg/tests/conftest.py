import numpy as np
import pytest

from selftransfer.data import (
    Dataset,
    PROVENANCE_REAL,
    PROVENANCE_UNLABELED,
    ROLE_TARGET,
    ROLE_UNLABELED,
    TimeSeriesSample,
    fit_normalization,
)


def make_labeled(n: int, length: int = 16, seed: int = 0, dt: float = 0.1) -> Dataset:
    """Small labeled dataset with smooth random series (output = 2 * cumsum trick)."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        u = np.cumsum(rng.normal(size=length)) * 0.1
        y = 2.0 * u + 0.05 * rng.normal(size=length)
        samples.append(TimeSeriesSample(f"s{i:03d}", u, y, PROVENANCE_REAL))
    return Dataset(samples=tuple(samples), role=ROLE_TARGET, dt=dt)


def make_unlabeled(n: int, length: int = 16, seed: int = 1, dt: float = 0.1) -> Dataset:
    rng = np.random.default_rng(seed)
    samples = [
        TimeSeriesSample(f"u{i:03d}", np.cumsum(rng.normal(size=length)) * 0.1, None,
                         PROVENANCE_UNLABELED)
        for i in range(n)
    ]
    return Dataset(samples=tuple(samples), role=ROLE_UNLABELED, dt=dt)


@pytest.fixture
def labeled_ds() -> Dataset:
    return make_labeled(6)


@pytest.fixture
def normalized_labeled_ds() -> Dataset:
    ds = make_labeled(6)
    return ds.with_norm(fit_normalization(ds))
