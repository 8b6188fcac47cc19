import math

import numpy as np
import pytest

from loopsim.fock_core import make_unitary
from loopsim.simulate import haar_unitary, make_rng


@pytest.fixture(scope="session")
def bs5050():
    return make_unitary("5050")


@pytest.fixture(scope="session")
def identity():
    return make_unitary("identity")


@pytest.fixture(scope="session")
def haar_set():
    return [haar_unitary(make_rng(11, i)) for i in range(50)]


def swap_unitary():
    return make_unitary([[0, 1], [1, 0]])


def ks_uniform_pvalue(samples):
    from scipy.stats import kstest

    return kstest(samples, "uniform").pvalue
