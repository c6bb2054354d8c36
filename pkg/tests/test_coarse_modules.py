"""Tests for LFCM spaces, modules, domains and discretization."""

import numpy as np
import pytest

from coarse_lab.coarse_modules import (
    LFCMSpace,
    MeasurableMap,
    Module,
    bounded_module,
    components_of,
    direct_sum,
    discretize,
    domain,
    domains_asymptotic,
    is_ample,
    is_faithful,
    make_module,
    module_summary,
    pushforward,
    rank,
    restrict_to_domain,
    uniform_module,
)
from coarse_lab.coarse_space import Space, closeness
from coarse_lab.utils import INF, InvalidInputError, SpaceMismatchError


class TestLFCMSpace:
    """Test block partitions and their scales."""

    def test_singletons_have_diagonal_gauge(self, z6_lfcm, z6):
        assert z6_lfcm.n_blocks == 6
        assert z6_lfcm.disc_gauge_scale == 0
        assert z6_lfcm.disc_relation() == z6.identity()

    def test_paired_blocks(self, paired_z6):
        """Test block scales on Z6 cut into pairs."""
        assert paired_z6.disc_gauge_scale == 1
        assert paired_z6.block_scale[0, 1] == 3
        assert paired_z6.block_min_distance[0, 1] == 1
        assert paired_z6.points_of({0, 2}) == {0, 1, 4, 5}

    def test_overlapping_blocks_rejected(self, z6):
        with pytest.raises(InvalidInputError, match="two blocks"):
            LFCMSpace(z6, ((0, 1), (1, 2), (3, 4, 5)))

    def test_uncovered_point_rejected(self, z6):
        with pytest.raises(InvalidInputError, match="not covered"):
            LFCMSpace(z6, ((0, 1), (2, 3)))

    def test_block_across_components_rejected(self, two_z3):
        with pytest.raises(InvalidInputError, match="finite diameter"):
            LFCMSpace(two_z3, ((0, 3), (1,), (2,), (4,), (5,)))

    def test_blocks_of_measurable_set(self, paired_z6):
        assert paired_z6.blocks_of({2, 3}) == {1}
        with pytest.raises(InvalidInputError, match="not measurable"):
            paired_z6.blocks_of({2})

    def test_components_of_blocks(self, two_z3_lfcm):
        assert components_of(two_z3_lfcm) == {0: 0, 1: 0, 2: 0, 3: 3, 4: 3, 5: 3}


class TestModules:
    """Test dimension vectors, ranks and direct sums."""

    def test_dimension_vector(self, z3_module):
        assert z3_module.dim == 5
        assert z3_module.dims.tolist() == [2, 0, 3]
        assert rank(z3_module, blocks={1}) == 0
        assert rank(z3_module, points={0, 2}) == 5
        assert rank(z3_module) == 5

    def test_dimension_mapping(self, z6_lfcm):
        C = make_module(z6_lfcm, {0: 1, 1: 0, 2: 2, 3: 0, 4: 0, 5: 1})
        assert C.dims.tolist() == [1, 0, 2, 0, 0, 1]

    def test_bad_dimension_vectors(self, z6_lfcm):
        with pytest.raises(InvalidInputError, match="entries"):
            make_module(z6_lfcm, [1, 1])
        with pytest.raises(InvalidInputError, match="nonnegative"):
            make_module(z6_lfcm, [1, 1, 1, 1, 1, -1])
        with pytest.raises(InvalidInputError, match="misses"):
            make_module(z6_lfcm, {0: 1})

    def test_projection_is_idempotent(self, z3_module):
        p = z3_module.projection({0})
        assert np.allclose(p.matrix @ p.matrix, p.matrix)
        assert np.trace(p.matrix).real == 2

    def test_direct_sum(self):
        """Test that (1, 1) ⊕ (0, 2) has dims (1, 3) and biproduct identities."""
        X = LFCMSpace.singletons(Space.interval(2))
        C0, C1 = make_module(X, [1, 1]), make_module(X, [0, 2])
        ds = direct_sum(C0, C1)
        assert ds.module.dims.tolist() == [1, 3]
        assert np.allclose((ds.p0 @ ds.i0).matrix, np.eye(2))
        assert np.allclose((ds.p1 @ ds.i1).matrix, np.eye(2))
        assert np.allclose((ds.p0 @ ds.i1).matrix, 0)
        total = (ds.i0 @ ds.p0).matrix + (ds.i1 @ ds.p1).matrix
        assert np.allclose(total, np.eye(4))

    def test_direct_sum_needs_one_space(self, z3_module, uniform_z6):
        with pytest.raises(SpaceMismatchError):
            direct_sum(z3_module, uniform_z6)

    def test_unknown_block_in_module(self, z6_lfcm):
        with pytest.raises(InvalidInputError, match="unknown block"):
            Module(z6_lfcm, [0, 9])


class TestDomains:
    """Test κ-domains, faithfulness and ampleness."""

    def test_domains_of_dimension_vector(self, z3_module):
        assert domain(z3_module, 1).blocks == {0, 2}
        assert domain(z3_module, 3).blocks == {2}
        assert domain(z3_module, 4).blocks == frozenset()
        assert domain(z3_module, 1).faithful_scale == 1
        assert domain(z3_module, 3).faithful_scale == 2
        assert domain(z3_module, 4).faithful_scale == INF

    def test_bounded_module_on_z6(self, z6_lfcm):
        C = bounded_module(z6_lfcm, 0)
        assert domain(C, 1).faithful_scale == 5
        assert is_faithful(C)
        assert not is_ample(C, 2)

    def test_faithfulness_fails_on_an_empty_component(self, two_z3_lfcm):
        C = make_module(two_z3_lfcm, [1, 1, 1, 0, 0, 0])
        assert not is_faithful(C)
        assert domain(C, 1).faithful_scale == INF

    def test_kappa_must_be_positive(self, z3_module):
        with pytest.raises(InvalidInputError):
            domain(z3_module, 0)

    def test_domains_asymptotic(self, z6_lfcm):
        """Test that C_x and C_x ⊕ C_y have asymptotic 1-domains."""
        Cx = bounded_module(z6_lfcm, 0)
        Cxy = make_module(z6_lfcm, [1, 0, 0, 0, 0, 1])
        assert domains_asymptotic(Cx, Cxy, 1) == 5
        assert domains_asymptotic(Cx, Cx, 1) == 0
        assert Cx.dim != Cxy.dim

    def test_restrict_to_domain(self, z3_module):
        restricted, inclusion = restrict_to_domain(z3_module, 3)
        assert restricted.dims.tolist() == [0, 0, 3]
        assert np.allclose(inclusion.adjoint.matrix @ inclusion.matrix, np.eye(3))

    def test_restrict_to_empty_domain(self, z3_module):
        with pytest.raises(InvalidInputError, match="empty"):
            restrict_to_domain(z3_module, 4)

    def test_summary(self, z3_module):
        assert module_summary(z3_module) == {"dim": 5, "dims": [2, 0, 3], "faithful_scale": 1}


class TestMeasurableMaps:
    """Test pushforwards and discretization."""

    def test_collapse_to_one_block(self, z6, uniform_z6):
        """Test that pushing the uniform module onto one block gives dims [6]."""
        single = LFCMSpace(z6, (tuple(z6.points),))
        f = MeasurableMap.from_mapping(uniform_z6.space, single, lambda i: i)
        assert pushforward(f, uniform_z6).dims.tolist() == [6]

    def test_pushforward_projections(self, z6_lfcm, uniform_z6):
        reversal = MeasurableMap.from_mapping(z6_lfcm, z6_lfcm, lambda i: 5 - i)
        pushed = pushforward(reversal, uniform_z6)
        assert pushed.dim == uniform_z6.dim
        assert np.array_equal(
            pushed.coord_mask({0}), uniform_z6.coord_mask({5})
        )

    def test_split_block_is_not_measurable(self, paired_z6, z6_lfcm):
        with pytest.raises(InvalidInputError, match="not measurable"):
            MeasurableMap.from_mapping(paired_z6, z6_lfcm, lambda i: i)

    def test_pushforward_needs_matching_source(self, paired_z6, uniform_z6):
        f = MeasurableMap.identity(paired_z6)
        with pytest.raises(SpaceMismatchError):
            pushforward(f, uniform_z6)

    def test_discretize_pairs(self, paired_z6):
        """Test the collapsed distances after shortest-path closure."""
        collapsed, projection, section = discretize(paired_z6)
        assert collapsed.base.dist[0, 1] == 1
        assert paired_z6.block_min_distance[0][2] == 3
        assert collapsed.base.dist[0, 2] == 2
        back = section.compose(projection)
        assert closeness(back.map, MeasurableMap.identity(paired_z6).map) <= (
            paired_z6.disc_gauge_scale
        )

    def test_discretize_keeps_components_apart(self, two_z3_lfcm):
        collapsed, _, _ = discretize(two_z3_lfcm)
        assert collapsed.base.dist[0, 3] == INF
        assert collapsed.base.dist[0, 2] == 2

    def test_uniform_module_of_discretization(self, paired_z6):
        collapsed, _, _ = discretize(paired_z6)
        assert uniform_module(collapsed).dims.tolist() == [1, 1, 1]
