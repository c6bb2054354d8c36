"""Tests for approximate relations, central unitaries and extraction."""

import math

import numpy as np
import pytest

from coarse_lab.coarse_modules import (
    LFCMSpace,
    MeasurableMap,
    domain,
    make_module,
    pushforward,
    uniform_module,
)
from coarse_lab.coarse_space import CoarseMap, Space, relation_closeness
from coarse_lab.config import ExtractionThresholds
from coarse_lab.harness import build_scrambled_unitary, gen_space, transport_permutation
from coarse_lab.operators import Operator, random_band_operator, random_controlled_unitary
from coarse_lab.rigidity import (
    ApproxParams,
    CentralUnitary,
    approximate_relation,
    central_invariance_check,
    default_schedule,
    domain_invariance_check,
    extract_embedding,
    make_central_unitary,
    parameter_join,
)
from coarse_lab.utils import BoundViolation, InvalidInputError, NumericalError


@pytest.fixture
def reversal_unitary():
    """The permutation unitary of i -> 9 - i on uniform Z10."""
    X = gen_space("interval", 10)
    C = uniform_module(X)
    r = MeasurableMap(X, X, CoarseMap(X.base, X.base, np.arange(10)[::-1]))
    return r, transport_permutation(r, C, C)


class TestApproxParams:
    """Test parameter validation and joins."""

    def test_join(self):
        joined = parameter_join(ApproxParams(0.3, 2, 1), ApproxParams(0.1, 1, 4))
        assert (joined.delta, joined.F_scale, joined.E_scale) == (0.1, 2, 4)

    def test_join_needs_one_mode(self):
        with pytest.raises(InvalidInputError, match="modes"):
            parameter_join(ApproxParams(0.3, 2, 1), ApproxParams(0.1, 1, 4, "windows"))

    @pytest.mark.parametrize("delta", [0, 1, -0.5, 1.5])
    def test_delta_range(self, delta):
        with pytest.raises(InvalidInputError, match="delta"):
            ApproxParams(delta, 0, 0)

    def test_unknown_mode(self):
        with pytest.raises(InvalidInputError, match="mode"):
            ApproxParams(0.1, 0, 0, "balls")

    def test_scales_accept_inf(self):
        assert ApproxParams(0.1, "inf", 2).F_scale == math.inf


class TestApproximateRelation:
    """Test f^T for simple operators."""

    def test_identity_gives_the_diagonal(self, uniform_z6, z6):
        relation = approximate_relation(Operator.identity(uniform_z6), ApproxParams(0.1, 0, 0))
        assert relation == z6.identity()

    def test_threshold_filters_small_entries(self, uniform_z6):
        matrix = np.eye(6)
        matrix[3, 0] = 0.05
        relation = approximate_relation(
            Operator(uniform_z6, uniform_z6, matrix), ApproxParams(0.1, 0, 0)
        )
        assert (3, 0) not in relation
        assert len(relation) == 6

    def test_scales_below_the_gauge(self, paired_z6):
        C = uniform_module(paired_z6)
        with pytest.raises(InvalidInputError, match="discreteness"):
            approximate_relation(Operator.identity(C), ApproxParams(0.1, 0, 1))

    def test_windows_thicken_the_relation(self, uniform_z6):
        identity = Operator.identity(uniform_z6)
        blocks = approximate_relation(identity, ApproxParams(0.1, 1, 1))
        windows = approximate_relation(identity, ApproxParams(0.1, 1, 1, "windows"))
        assert blocks.issubset(windows)
        assert (1, 0) in windows
        assert (1, 0) not in blocks

    def test_joined_parameters_give_a_larger_relation(self, uniform_z6):
        t = random_band_operator(uniform_z6, 1, seed=4)
        p1, p2 = ApproxParams(0.5, 1, 0, "windows"), ApproxParams(0.2, 0, 1, "windows")
        joined = approximate_relation(t, parameter_join(p1, p2))
        assert approximate_relation(t, p1).issubset(joined)
        assert approximate_relation(t, p2).issubset(joined)


class TestCentralUnitaries:
    """Test per-component phases."""

    def test_invariance(self, two_z3_lfcm):
        C = make_module(two_z3_lfcm, [1, 2, 1, 1, 0, 2])
        t = random_band_operator(C, 1, seed=9)
        u = make_central_unitary(two_z3_lfcm, {0: 0.7, 3: 2.1})
        v = make_central_unitary(two_z3_lfcm, {0: -1.3, 3: 0.4})
        assert central_invariance_check(t, u, v, ApproxParams(0.1, 0, 0))

    def test_non_central_phases_still_commute_with_blocks(self, uniform_z6):
        """Test that varying phases inside one component leave every block norm alone."""
        t = random_band_operator(uniform_z6, 2, seed=13)
        phases = Operator(uniform_z6, uniform_z6, np.diag(np.exp(1j * np.arange(6))))
        assert central_invariance_check(t, phases, phases.adjoint, ApproxParams(0.1, 0, 0))

    def test_unitary_moving_between_blocks_changes_the_relation(self, uniform_z6):
        swap = np.eye(6)
        swap[[0, 1]] = swap[[1, 0]]
        u = Operator(uniform_z6, uniform_z6, swap)
        identity = CentralUnitary.identity(uniform_z6.space)
        T = Operator.identity(uniform_z6)
        assert not central_invariance_check(T, u, identity, ApproxParams(0.1, 0, 0))
        assert central_invariance_check(T, identity, identity, ApproxParams(0.1, 0, 0))

    def test_operator_is_diagonal(self, two_z3_lfcm):
        C = uniform_module(two_z3_lfcm)
        u = CentralUnitary(two_z3_lfcm, {0: 1j, 3: -1})
        assert np.allclose(np.diag(u.operator(C).matrix), [1j, 1j, 1j, -1, -1, -1])
        assert np.allclose((u @ u.conj()).operator(C).matrix, np.eye(6))

    def test_missing_component(self, two_z3_lfcm):
        with pytest.raises(InvalidInputError, match="No scalar"):
            CentralUnitary(two_z3_lfcm, {0: 1})

    def test_not_unimodular(self, two_z3_lfcm):
        with pytest.raises(InvalidInputError, match="unimodular"):
            CentralUnitary(two_z3_lfcm, {0: 1, 3: 2})


class TestExtraction:
    """Test recovery of coarse equivalences from unitaries."""

    def test_default_schedule(self, z6_lfcm, paired_z6):
        assert default_schedule(z6_lfcm, z6_lfcm) == [(0, 0), (1, 1), (2, 2), (4, 4), (8, 8)]
        assert default_schedule(paired_z6, paired_z6)[0] == (1, 1)

    def test_empty_schedule_runs_the_default(self, reversal_unitary):
        _, U = reversal_unitary
        assert extract_embedding(U, schedule=[]).as_dict() == extract_embedding(U).as_dict()

    def test_permutation_gives_the_graph(self, reversal_unitary):
        r, U = reversal_unitary
        result = extract_embedding(U, schedule=[(0, 0)])
        assert result.success
        assert result.accepted_step == 0
        assert result.relation == r.map.graph()
        assert result.inverse_radius == 0
        assert result.report.coarse_equivalence

    def test_windows_mode(self, reversal_unitary):
        r, U = reversal_unitary
        result = extract_embedding(U, schedule=[(0, 0)], mode="windows")
        assert result.relation == r.map.graph()

    def test_threads_agree(self, reversal_unitary):
        _, U = reversal_unitary
        serial = extract_embedding(U)
        parallel = extract_embedding(U, threads=3)
        assert serial.relation == parallel.relation
        assert serial.accepted_step == parallel.accepted_step
        assert len(parallel.diagnostics) >= len(serial.diagnostics)

    def test_scrambled_unitary_is_recovered_near_identity(self, uniform_z6):
        U = random_controlled_unitary(uniform_z6, 1, seed=21)
        result = extract_embedding(U, delta=0.1)
        assert result.success
        assert result.relation.issubset(uniform_z6.space.base.entourage(1))

    def test_module_with_empty_blocks(self):
        """Test recovery on dims (1, 0, 2) repeated, where dom_1 skips every third point."""
        X = LFCMSpace.singletons(Space.interval(30))
        C = make_module(X, [1, 0, 2] * 10)
        r = MeasurableMap.from_mapping(X, X, lambda i: 29 - i)
        D = make_module(X, pushforward(r, C).dims.tolist())
        U = build_scrambled_unitary(r, C, D, 1, seed=7)
        result = extract_embedding(U)
        covered = X.points_of(domain(C, 1).blocks)
        assert len(covered) == 20
        assert result.success
        assert relation_closeness(result.relation, r.map, covered) <= 2

    def test_bounded_module(self, z6_lfcm):
        C = make_module(z6_lfcm, [0, 0, 0, 2, 0, 0])
        U = random_controlled_unitary(C, 0, seed=3)
        result = extract_embedding(U)
        assert result.success
        assert result.relation.sorted_pairs() == [(3, 3)]

    def test_tight_thresholds_reject_every_step(self, reversal_unitary):
        _, U = reversal_unitary
        thresholds = ExtractionThresholds(max_expansion=0)
        result = extract_embedding(U, schedule=[(0, 0), (1, 1)], thresholds=thresholds)
        assert not result.success
        assert result.accepted_step is None
        assert [d["verdict"] for d in result.diagnostics] == ["rejected", "rejected"]
        assert "expansion witness" in result.failures[0]

    def test_not_unitary(self, uniform_z6):
        with pytest.raises(InvalidInputError, match="unitary"):
            extract_embedding(2 * Operator.identity(uniform_z6))

    def test_decreasing_schedule(self, reversal_unitary):
        _, U = reversal_unitary
        with pytest.raises(InvalidInputError, match="nondecreasing"):
            extract_embedding(U, schedule=[(2, 2), (1, 1)])

    def test_as_dict(self, reversal_unitary):
        _, U = reversal_unitary
        payload = extract_embedding(U, schedule=[(0, 0)]).as_dict()
        assert payload["success"] is True
        assert payload["relation_size"] == 10
        assert payload["diagnostics"][0]["witness_scales"]["inverse_radius"] == 0


class TestDomainInvariance:
    """Test κ-domain comparison along invertible controlled operators."""

    @pytest.fixture
    def moved(self):
        """A permutation from dims (1,1,1,1) to (2,1,0,1) on Z4 moving coordinates by 1."""
        X = LFCMSpace.singletons(Space.interval(4))
        C, D = make_module(X, [1, 1, 1, 1]), make_module(X, [2, 1, 0, 1])
        return Operator(C, D, np.eye(4))

    def test_first_domain_within_bound(self, moved):
        result = domain_invariance_check(moved, kappas=(1, 2))
        assert result.witnesses[1] == 1
        assert result.bound == 1
        assert result.within_bound(1)
        assert result.witnesses[2] == math.inf

    def test_asserting_higher_kappa_raises(self, moved):
        with pytest.raises(BoundViolation) as info:
            domain_invariance_check(moved, kappas=(1, 2), asserted=(1, 2))
        assert info.value.bound == 1

    def test_endomorphism_keeps_every_domain(self, z3_module):
        band = random_band_operator(z3_module, 1, seed=5)
        t = band + (band.norm + 1) * Operator.identity(z3_module)
        result = domain_invariance_check(t, asserted=(1, 2, 3))
        assert all(witness == 0 for witness in result.witnesses.values())

    def test_singular(self, uniform_z6):
        with pytest.raises(NumericalError):
            domain_invariance_check(Operator.zero(uniform_z6, uniform_z6))
