import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_state(rng, n=3, d=2, q_scale=1.0, p_scale=1.0):
    from stochland.dynamics import PhaseState

    return PhaseState(q=rng.normal(size=(n, d)) * q_scale,
                      p=rng.normal(size=(n, d)) * p_scale)


def random_eulerian(rng, j=4, d=2, family="gaussian", lam_scale=0.5):
    from stochland.noise import EulerianNoise

    return EulerianNoise(
        family=family,
        centers=rng.normal(size=(j, d)),
        lams=rng.normal(size=(j, d)) * lam_scale,
        scales=0.5 + np.abs(rng.normal(size=j)),
    )
