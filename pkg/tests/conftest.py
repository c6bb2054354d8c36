"""Shared fixtures: small spaces, modules and seeded generators."""

import numpy as np
import pytest

from coarse_lab.coarse_modules import LFCMSpace, make_module, uniform_module
from coarse_lab.coarse_space import Space
from coarse_lab.state import LabState


@pytest.fixture
def z6():
    """The interval 0..5 with d(i, j) = |i - j|."""
    return Space.interval(6)


@pytest.fixture
def z6_lfcm(z6):
    return LFCMSpace.singletons(z6)


@pytest.fixture
def two_z3():
    """Two copies of Z3 (points 0..2 and 3..5) at infinite distance."""
    return Space.disjoint_union(Space.interval(3), Space.interval(3, offset=3))


@pytest.fixture
def two_z3_lfcm(two_z3):
    return LFCMSpace.singletons(two_z3)


@pytest.fixture
def paired_z6(z6):
    """Z6 cut into the blocks {0,1}, {2,3}, {4,5}."""
    return LFCMSpace(z6, ((0, 1), (2, 3), (4, 5)))


@pytest.fixture
def uniform_z6(z6_lfcm):
    return uniform_module(z6_lfcm)


@pytest.fixture
def z3_module():
    """Dimensions (2, 0, 3) over singleton-blocked Z3."""
    return make_module(LFCMSpace.singletons(Space.interval(3)), [2, 0, 3])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def clean_store():
    """Each test starts with an empty object store."""
    LabState.clear()
    yield
    LabState.clear()
