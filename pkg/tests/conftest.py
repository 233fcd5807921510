import numpy as np
import pytest

from risbl import ScenarioConfig


def crandn(rng, *shape):
    """i.i.d. CN(0, 1) array."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_hpd(rng, n, shift=1.0):
    """Random Hermitian positive-definite matrix M M^H + shift*I."""
    m = crandn(rng, n, n)
    return m @ m.conj().T + shift * np.eye(n)


def random_system(rng, rows, nk, m=1, sigma2=0.3, gamma_range=(0.05, 2.0)):
    """Random sensing matrix, measurements and prior variances."""
    theta = crandn(rng, rows, nk) / np.sqrt(rows)
    y = crandn(rng, rows, m)
    gamma = rng.uniform(*gamma_range, size=(nk, m))
    return theta, (y[:, 0] if m == 1 else y), (gamma[:, 0] if m == 1 else gamma), sigma2


@pytest.fixture
def desk_cfg():
    """The desk-scale scenario used throughout the statistical tests."""
    return ScenarioConfig(
        m1=4, m2=4, n1=8, n2=4, k=2, q=40, l_c=3, l_r_k=4, l_r=2,
        snr_db=10.0, seed=1234, t_max=60,
    )


@pytest.fixture
def tiny_cfg():
    """A minimal fast scenario for loop-level behavior tests."""
    return ScenarioConfig(
        m1=2, m2=2, n1=4, n2=2, k=2, q=12, l_c=2, l_r_k=2, l_r=1,
        snr_db=10.0, seed=99, t_max=30,
    )
