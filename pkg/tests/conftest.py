import os

import numpy as np
import pytest

from mdpsae import kernels
from mdpsae.io import demo_path, load_dataset
from mdpsae.model import Atom, ClusterState, Dataset, HyperConfig, ModelState


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MDPSAE_NIGHTLY") == "1":
        return
    skip = pytest.mark.skip(reason="nightly only; set MDPSAE_NIGHTLY=1")
    for item in items:
        if "nightly" in item.keywords:
            item.add_marker(skip)


def small_dataset(I=4, S=2, M=1, D=2, p=2, n=10, A=2, seed=0, y=None) -> Dataset:
    """Every county has every domain; y drawn at p=0.4 unless given."""
    r = kernels.rng_stream(seed, 99)
    county, domain, X = [], [], []
    for i in range(I):
        z = r.standard_normal(p)
        for d in range(D):
            county.append(i + 1)
            domain.append(d + 1)
            X.append(z)
    cells = I * D
    nn = np.full(cells, n)
    yy = r.binomial(nn, 0.4) if y is None else np.asarray(y)
    return Dataset(
        D=D,
        county_table={i + 1: (i % S + 1, i % A + 1) for i in range(I)},
        stratum_table={s + 1: s % M + 1 for s in range(S)},
        county=county, domain=domain, y=yy, n=nn, N_pop=np.full(cells, 20 * n), X=np.array(X),
    )


def simple_state(ds: Dataset, b=None, beta=None, nu=None, alpha=1.0) -> ModelState:
    lay = ds.layout
    D = ds.D
    return ModelState(
        b=np.zeros(ds.p) if b is None else np.asarray(b, dtype=float),
        beta=np.zeros((lay.I, D)) if beta is None else np.asarray(beta, dtype=float),
        nu=np.zeros(lay.S) if nu is None else np.asarray(nu, dtype=float),
        delta_sq=np.full(lay.M, 0.2),
        clusters=ClusterState(np.zeros(lay.I, dtype=np.int64), {0: Atom.from_cov(np.zeros(D), np.eye(D))}, 1),
        m=np.zeros(D), B=np.eye(D), S=np.eye(D), alpha=alpha,
    )


@pytest.fixture
def demo_dataset():
    return load_dataset(demo_path())


@pytest.fixture
def small():
    return small_dataset()


@pytest.fixture
def small_config():
    return HyperConfig.default(2, 2, iterations=60, burn_in=10)
