"""Shared fixtures: a tiny deterministic dataset and a small config."""

import numpy as np
import pytest

from mmrec import synth
from mmrec.harness import ExperimentConfig
from mmrec.numerics import make_rng


@pytest.fixture(scope="session")
def tiny_ds():
    return synth.planted_categories(
        n_users=12, n_items=40, n_categories=4,
        interactions_per_user=8, seed=7,
    )


@pytest.fixture()
def tiny_config():
    return ExperimentConfig(
        d=8, d_k=4, epochs=1, seed=3, max_prefixes_per_user=2,
        retrieval_k=2,
    )


@pytest.fixture()
def rng():
    return make_rng(0)


@pytest.fixture(scope="session")
def rng_session():
    return make_rng(12345)


def numeric_vs_analytic(f, theta, analytic, h=1e-4, floor=1e-3):
    """Helper: max relative error between analytic grad and central
    differences of f at theta."""
    from mmrec.numerics import finite_diff_grad, rel_error

    num = finite_diff_grad(f, np.asarray(theta, dtype=np.float64), h=h)
    return rel_error(analytic, num, floor=floor)
