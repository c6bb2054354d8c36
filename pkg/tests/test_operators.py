"""Tests for block operators: norms, supports, propagation and approximation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarse_lab.coarse_modules import LFCMSpace, make_module
from coarse_lab.coarse_space import Space, rel_compose, rel_transpose
from coarse_lab.operators import (
    Operator,
    approx_profile,
    block_norms,
    coarse_like_profile,
    inverse,
    is_approximable,
    is_coarsely_full,
    is_controlled,
    is_unitary,
    op_arith,
    operator_norm,
    propagation,
    random_band_operator,
    random_controlled_unitary,
    support,
    truncate,
    unitarity_defect,
)
from coarse_lab.utils import NumericalError, SpaceMismatchError

seeds = st.integers(min_value=0, max_value=2**32 - 1)
bands = st.integers(min_value=0, max_value=3)


def tridiagonal(size):
    return np.eye(size) + np.eye(size, k=1) + np.eye(size, k=-1)


class TestOperatorNorm:
    """Test the deterministic operator norm."""

    @pytest.mark.parametrize(
        "matrix, expected",
        [
            ([[3, 0], [0, 4]], 4.0),
            ([[0, 1], [0, 0]], 1.0),
            ([[1, 1], [1, 1]], 2.0),
        ],
    )
    def test_small_matrices(self, matrix, expected):
        assert operator_norm(np.array(matrix)) == pytest.approx(expected, abs=1e-12)

    def test_zero_and_empty(self):
        assert operator_norm(np.zeros((4, 4))) == 0.0
        assert operator_norm(np.zeros((0, 3))) == 0.0

    def test_lanczos_matches_svd(self, rng):
        matrix = rng.standard_normal((12, 9)) + 1j * rng.standard_normal((12, 9))
        assert operator_norm(matrix) == pytest.approx(np.linalg.norm(matrix, 2), rel=1e-9)

    def test_near_degenerate_top_singular_values(self, rng):
        """Test that two top singular values 1e-7 apart still give the largest to 1e-9."""
        for size in (6, 12):
            left, _ = np.linalg.qr(rng.standard_normal((size, size)))
            right, _ = np.linalg.qr(rng.standard_normal((size, size)))
            values = np.linspace(0.5, 0.1, size)
            values[:2] = (1.0, 1.0 - 1e-7)
            matrix = left @ np.diag(values) @ right.T
            assert operator_norm(matrix) == pytest.approx(1.0, rel=1e-9)

    @given(seeds, seeds)
    @settings(max_examples=30, deadline=None)
    def test_submultiplicative_and_subadditive(self, first, second):
        C = make_module(LFCMSpace.singletons(Space.interval(7)), [1, 2, 1, 0, 3, 1, 1])
        s = random_band_operator(C, 6, first)
        t = random_band_operator(C, 6, second)
        assert (s @ t).norm <= s.norm * t.norm * (1 + 1e-9)
        assert (s + t).norm <= (s.norm + t.norm) * (1 + 1e-9)

    def test_deterministic(self, rng):
        matrix = rng.standard_normal((10, 10))
        assert operator_norm(matrix) == operator_norm(matrix)


class TestArithmetic:
    """Test operator algebra and module checks."""

    def test_composition_checks_modules(self, uniform_z6, z3_module):
        t = Operator.identity(uniform_z6)
        s = Operator.identity(z3_module)
        with pytest.raises(SpaceMismatchError):
            s @ t
        with pytest.raises(SpaceMismatchError):
            t + Operator.zero(uniform_z6, z3_module)

    def test_op_arith(self, uniform_z6):
        t = random_band_operator(uniform_z6, 1, seed=3)
        assert op_arith("compose", t, Operator.identity(uniform_z6)) == t
        assert op_arith("adjoint", op_arith("adjoint", t)) == t
        assert op_arith("add", t, -t).allclose(Operator.zero(uniform_z6, uniform_z6))
        assert op_arith("scalar", 2, t).allclose(t + t)

    def test_wrong_shape(self, uniform_z6):
        with pytest.raises(ValueError, match="shape"):
            Operator(uniform_z6, uniform_z6, np.eye(5))


class TestSupportAndPropagation:
    """Test block norms, supports and propagation."""

    def test_diagonal_and_tridiagonal(self, uniform_z6):
        assert propagation(Operator(uniform_z6, uniform_z6, np.diag(np.arange(1, 7)))) == 0
        assert propagation(Operator(uniform_z6, uniform_z6, tridiagonal(6))) == 1
        assert is_controlled(Operator(uniform_z6, uniform_z6, tridiagonal(6)), 1)
        assert not is_controlled(Operator(uniform_z6, uniform_z6, tridiagonal(6)), 0)
        assert is_controlled(Operator(uniform_z6, uniform_z6, tridiagonal(6)), "inf")

    def test_far_corner(self, uniform_z6):
        """Test that a small corner entry still counts and truncation removes it."""
        matrix = np.eye(6)
        matrix[5, 0] = 0.3
        t = Operator(uniform_z6, uniform_z6, matrix)
        assert propagation(t) == 5
        assert truncate(t, 4) == Operator.identity(uniform_z6)
        assert (5, 0) in support(t)

    def test_block_norms_use_the_operator_norm(self, paired_z6):
        C = make_module(paired_z6, [2, 2, 2])
        matrix = np.zeros((6, 6))
        matrix[0:2, 0:2] = np.eye(2)
        norms = block_norms(Operator(C, C, matrix))
        assert norms[0, 0] == pytest.approx(1.0)
        assert norms[1, 0] == 0

    def test_blocks_propagate_by_their_farthest_points(self, paired_z6):
        C = make_module(paired_z6, [1, 1, 1])
        t = Operator(C, C, tridiagonal(3))
        assert propagation(t) == 3

    def test_propagation_needs_one_space(self, uniform_z6, z3_module):
        with pytest.raises(SpaceMismatchError):
            propagation(Operator.zero(uniform_z6, z3_module))

    @given(seeds, bands)
    @settings(max_examples=30, deadline=None)
    def test_random_band_propagation(self, seed, n):
        C = make_module(LFCMSpace.singletons(Space.interval(8)), [1, 2, 0, 1, 1, 3, 1, 1])
        assert propagation(random_band_operator(C, n, seed)) <= n

    @given(seeds, seeds)
    @settings(max_examples=30, deadline=None)
    def test_support_laws(self, first, second):
        C = make_module(LFCMSpace.singletons(Space.interval(7)), [1, 2, 1, 0, 1, 2, 1])
        s = random_band_operator(C, 1, first, density=0.4)
        t = random_band_operator(C, 2, second, density=0.4)
        assert support(t.adjoint, tol=0) == rel_transpose(support(t, tol=0))
        assert support(s + t, tol=0).issubset(support(s, tol=0).union(support(t, tol=0)))
        assert support(s @ t, tol=0).issubset(
            rel_compose(support(s, tol=0), support(t, tol=0))
        )


class TestApproximation:
    """Test the approximation profile bracket and coarse fullness."""

    def test_band_operator_is_exact_at_its_band(self, uniform_z6):
        t = random_band_operator(uniform_z6, 2, seed=7)
        profile = approx_profile(t)
        assert profile.upper(2) == 0
        assert profile.lower(2) == 0
        assert profile.upper(1) >= profile.lower(1) > 0
        assert is_approximable(t, 1e-12, 2)
        assert not is_approximable(t, 1e-12, 1)

    def test_bracket_is_ordered(self, rng):
        C = make_module(LFCMSpace.singletons(Space.interval(9)), [1, 2, 1, 1, 0, 1, 2, 1, 1])
        t = Operator(C, C, rng.standard_normal((C.dim, C.dim)))
        profile = approx_profile(t)
        for (_, upper), (_, lower) in zip(profile.upper.items(), profile.lower.items()):
            assert lower <= upper

    def test_identity_is_coarsely_full(self, uniform_z6):
        assert is_coarsely_full(Operator.identity(uniform_z6)) == (True, 0)

    def test_zero_is_not_coarsely_full(self, uniform_z6):
        full, witness = is_coarsely_full(Operator.zero(uniform_z6, uniform_z6))
        assert not full
        assert witness == float("inf")


class TestControlledConjugation:
    """Test propagation and approximation bounds under products and conjugation."""

    @given(seeds, seeds, st.integers(min_value=1, max_value=3), bands)
    @settings(max_examples=30, deadline=None)
    def test_conjugation_bound(self, first, second, n, p):
        """Test that ``U t U*`` has propagation at most ``n + 2p + 2 disc``."""
        X = LFCMSpace(Space.interval(8), ((0, 1), (2,), (3, 4), (5,), (6, 7)))
        C = make_module(X, [2, 1, 3, 0, 2])
        U = random_controlled_unitary(C, p, first)
        t = random_band_operator(C, n, second)
        assert propagation(U @ t @ U.adjoint) <= n + 2 * p + 2 * X.disc_gauge_scale

    @given(seeds, seeds, bands, bands)
    @settings(max_examples=30, deadline=None)
    def test_approximation_survives_sums_and_products(self, first, second, n_s, n_t):
        C = make_module(LFCMSpace.singletons(Space.interval(7)), [1, 2, 1, 1, 0, 2, 1])
        s = random_band_operator(C, 6, first)
        t = random_band_operator(C, 6, second)
        upper_s, upper_t = approx_profile(s).upper(n_s), approx_profile(t).upper(n_t)
        slack = 1e-9 * (1 + s.norm) * (1 + t.norm)
        # lower(n) bounds the distance to every propagation-n operator from below
        assert approx_profile(s + t).lower(max(n_s, n_t)) <= upper_s + upper_t + slack
        product_bound = (s.norm + upper_s) * upper_t + upper_s * t.norm
        assert approx_profile(s @ t).lower(n_s + n_t) <= product_bound + slack

    @pytest.mark.parametrize("p", [1, 2])
    def test_controlled_unitary_is_coarse_like(self, uniform_z6, p):
        U = random_controlled_unitary(uniform_z6, p, seed=17)
        profile = coarse_like_profile(U, 3, samples=2)
        assert profile.scales == (0, 1, 2, 3)
        for n, m in profile.items():
            assert m <= n + 2 * p


class TestUnitaries:
    """Test unitary generation, inversion and coarse-likeness."""

    def test_controlled_unitary(self, z3_module):
        U = random_controlled_unitary(z3_module, 1, seed=11)
        assert is_unitary(U)
        assert unitarity_defect(U) < 1e-10
        assert propagation(U) <= 1

    def test_controlled_unitary_is_deterministic(self, uniform_z6):
        assert random_controlled_unitary(uniform_z6, 2, 5) == random_controlled_unitary(
            uniform_z6, 2, 5
        )

    def test_inverse(self, uniform_z6):
        U = random_controlled_unitary(uniform_z6, 1, seed=2)
        inv, condition = inverse(U)
        assert (inv @ U).allclose(Operator.identity(uniform_z6), atol=1e-10)
        assert condition == pytest.approx(1.0)

    def test_singular_operator(self, uniform_z6):
        with pytest.raises(NumericalError, match="singular"):
            inverse(Operator.zero(uniform_z6, uniform_z6))

    def test_identity_is_coarse_like_with_the_identity_profile(self, uniform_z6):
        profile = coarse_like_profile(Operator.identity(uniform_z6), 5, samples=2)
        assert profile.values == profile.scales == (0, 1, 2, 3, 4, 5)
