"""Tests for scales, seeding and hashing helpers."""

import logging
import math

import numpy as np
import pytest
from rich.logging import RichHandler

from coarse_lab.utils import (
    INF,
    BoundViolation,
    CoarseLabError,
    InvalidInputError,
    as_scale,
    configure_logging,
    content_hash,
    max_scale,
    min_plus,
    rng_for,
    scale_to_json,
    spawn_seeds,
)


class TestScales:
    """Test normalisation and encoding of scales."""

    @pytest.mark.parametrize("value", [None, "inf", "INF", "∞", math.inf])
    def test_infinite(self, value):
        assert as_scale(value) == INF

    @pytest.mark.parametrize("value, expected", [(0, 0), (3.0, 3), ("7", 7), (np.int64(2), 2)])
    def test_finite(self, value, expected):
        scale = as_scale(value)
        assert scale == expected
        assert isinstance(scale, int)

    @pytest.mark.parametrize("value", [-1, 1.5, "near", -math.inf])
    def test_rejected(self, value):
        with pytest.raises(InvalidInputError):
            as_scale(value)

    def test_json(self):
        assert scale_to_json(INF) == "inf"
        assert scale_to_json(np.float64(4.0)) == 4

    def test_max_scale(self):
        assert max_scale([]) == 0
        assert max_scale([1, 3.0, 2]) == 3
        assert max_scale([1, np.inf]) == INF

    def test_min_plus(self):
        a = np.array([[0, 1], [np.inf, 0]])
        b = np.array([[0, 5], [2, 0]])
        assert np.array_equal(min_plus(a, b), [[0, 1], [2, 0]])
        assert np.isinf(min_plus(np.zeros((2, 0)), np.zeros((0, 3)))).all()


class TestErrors:
    """Test the error hierarchy."""

    def test_everything_is_a_value_error(self):
        assert issubclass(InvalidInputError, CoarseLabError)
        assert issubclass(CoarseLabError, ValueError)

    def test_bound_violation_carries_values(self):
        error = BoundViolation("too far", observed=5, bound=3)
        assert (error.observed, error.bound, str(error)) == (5, 3, "too far")


class TestSeedingAndHashing:
    """Test deterministic generators and canonical hashes."""

    def test_spawned_seeds_are_reproducible(self):
        first = [rng_for(s).integers(1000) for s in spawn_seeds(7, 3)]
        second = [rng_for(s).integers(1000) for s in spawn_seeds(7, 3)]
        assert first == second
        assert len(set(first)) > 1

    def test_hash_ignores_key_order(self):
        assert content_hash({"a": 1, "b": [2]}) == content_hash({"b": [2], "a": 1})
        assert content_hash({"a": 1}) != content_hash({"a": 2})


class TestLogging:
    """Test the rich logging setup."""

    def test_rich_handler_installed(self):
        configure_logging("DEBUG")
        root = logging.getLogger()
        assert root.level == logging.DEBUG
        assert any(isinstance(h, RichHandler) for h in root.handlers)
