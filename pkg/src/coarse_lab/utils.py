import hashlib
import json
import logging
import math
import os
from typing import Any, Iterable, Union

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

LOG_LEVEL = os.getenv("COARSE_LAB_LOG_LEVEL", "INFO")

INF = math.inf
"""The infinite scale. Distances and witnesses are either naturals or ``INF``."""

Scale = Union[int, float]


class CoarseLabError(ValueError):
    """Base class for every error raised by the laboratory."""


class SpaceMismatchError(CoarseLabError):
    """Operands live over different spaces or modules."""


class InvalidInputError(CoarseLabError):
    """Malformed metric, unknown id, bad parameter or non-measurable map."""


class NumericalError(CoarseLabError):
    """A numerical precondition (such as invertibility) does not hold."""


class BoundViolation(CoarseLabError):
    """A quantitative guarantee asserted by a check was exceeded.

    Args:
        message: Human-readable description
        observed: The value that was measured
        bound: The bound it should not exceed
    """

    def __init__(self, message: str, observed: Any = None, bound: Any = None):
        super().__init__(message)
        self.observed = observed
        self.bound = bound


def configure_logging(level: Union[str, int, None] = None) -> None:
    """Install the rich stderr handler used by the CLI and the MCP server.

    Args:
        level: Logging level; defaults to ``COARSE_LAB_LOG_LEVEL``
    """
    handlers = [RichHandler(console=Console(stderr=True), rich_tracebacks=True)]
    logging.basicConfig(
        level=level or LOG_LEVEL,
        format="%(message)s",
        handlers=handlers,
        force=True,
    )


def as_scale(value: Any) -> Scale:
    """Normalise a user supplied scale to a natural number or ``INF``.

    Args:
        value: An integer, an integral float, ``math.inf``, ``None`` or ``"inf"``

    Returns
    -------
        Scale: ``int`` for finite values, ``INF`` otherwise

    Raises
    ------
        InvalidInputError: If the value is negative or not integral
    """
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "∞")):
        return INF
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise InvalidInputError(f"Not a scale: {value!r}")
    if math.isinf(number) and number > 0:
        return INF
    if number < 0 or not float(number).is_integer():
        raise InvalidInputError(f"Scales are naturals or inf, got {value!r}")
    return int(number)


def scale_to_json(value: Scale) -> Union[int, str]:
    """Encode a scale for JSON output (``INF`` becomes ``"inf"``)."""
    return "inf" if math.isinf(value) else int(value)


def max_scale(values: Iterable[float]) -> Scale:
    """Maximum of a collection of scales, ``0`` when empty."""
    best = 0.0
    for value in values:
        if value > best:
            best = value
    return as_scale(best)


def min_plus(a: np.ndarray, b: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Tropical (min, +) matrix product ``c[i, j] = min_k a[i, k] + b[k, j]``.

    Rows are processed in chunks to keep the broadcast intermediate small.
    Empty inner dimensions yield ``inf``.
    """
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.full((rows, cols), np.inf)
    if inner == 0:
        return out
    for start in range(0, rows, chunk):
        block = a[start : start + chunk, :, None] + b[None, :, :]
        out[start : start + chunk] = block.min(axis=1)
    return out


def rng_for(seed: Union[int, np.random.SeedSequence, None]) -> np.random.Generator:
    """Deterministic generator for an integer seed or a spawned seed sequence."""
    return np.random.default_rng(seed)


def spawn_seeds(seed: int, count: int) -> list:
    """Independent child seed sequences; the same seed always gives the same children."""
    return np.random.SeedSequence(seed).spawn(count)


def content_hash(payload: Any) -> str:
    """SHA-256 of the canonical JSON rendering of a payload."""
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
