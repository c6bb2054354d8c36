"""Tests for the sampled law suites."""

import pytest

from coarse_lab.laws import (
    DEFAULT_COUNTS,
    SUITES,
    LawReport,
    random_lfcm,
    random_module,
    verify_laws,
)
from coarse_lab.utils import CoarseLabError, rng_for

QUICK_COUNTS = {
    "support": 10,
    "approx-relation": 10,
    "domain": 10,
    "category": 3,
    "pushforward": 3,
    "heatmap": 1,
    "bracket": 10,
}


class TestSuites:
    """Test that each suite passes on a small sample."""

    @pytest.mark.parametrize("suite", sorted(QUICK_COUNTS))
    def test_small_sample_passes(self, suite):
        report = verify_laws(suite, count=QUICK_COUNTS[suite], seed=1)
        assert report.passed, report.failures
        assert report.checked == QUICK_COUNTS[suite]

    def test_every_suite_has_a_default_count(self):
        assert set(DEFAULT_COUNTS) == set(SUITES)

    def test_unknown_suite(self):
        with pytest.raises(CoarseLabError, match="Unknown suite"):
            verify_laws("associativity")

    def test_same_seed_same_report(self):
        assert verify_laws("bracket", 5, seed=3) == verify_laws("bracket", 5, seed=3)


class TestLawReport:
    """Test pass/fail accounting."""

    def test_tolerated_failures(self):
        assert LawReport("rigidity", 100, ["miss"] * 5, tolerated=5).passed
        assert not LawReport("rigidity", 100, ["miss"] * 6, tolerated=5).passed

    def test_as_dict_truncates_failures(self):
        payload = LawReport("support", 80, [f"f{k}" for k in range(60)]).as_dict()
        assert payload["failure_count"] == 60
        assert len(payload["failures"]) == 50
        assert payload["passed"] is False


class TestGenerators:
    """Test the random spaces and modules the suites draw from."""

    def test_random_lfcm_blocks_are_small(self):
        rng = rng_for(11)
        for _ in range(20):
            space = random_lfcm(rng, max_points=12)
            assert all(1 <= len(block) <= 3 for block in space.blocks)
            assert space.base.size <= 12

    def test_random_module_dimensions(self):
        rng = rng_for(2)
        space = random_lfcm(rng)
        C = random_module(space, rng, max_dim=2)
        assert C.dims.max(initial=0) <= 2
        assert len(C.dims) == space.n_blocks
