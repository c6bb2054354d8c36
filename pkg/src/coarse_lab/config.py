import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

from .utils import InvalidInputError

logger = logging.getLogger(__name__)

THREADS = int(os.getenv("COARSE_LAB_THREADS", "1"))
KAPPA_AMPLE = int(os.getenv("COARSE_LAB_KAPPA_AMPLE", "2"))

SUPPORT_RTOL = 1e-12
NORM_TOL = 1e-12
NORM_MAX_ITER = 500
UNITARY_TOL = 1e-10
SINGULAR_CONDITION = 1e12


@dataclass(frozen=True)
class ExtractionThresholds:
    """Largest witness scales an extraction step may report and still count as a
    coarse equivalence. Profiles are read at ``expansion_probe``."""

    expansion_probe: int = 1
    max_expansion: int = 32
    max_co_expansion: int = 32
    max_density: int = 8
    max_surjectivity: int = 8
    max_inverse_radius: int = 16


@dataclass(frozen=True)
class LabConfig:
    threads: int = THREADS
    kappa_ample: int = KAPPA_AMPLE
    recovery_slack: int = 2
    thresholds: ExtractionThresholds = field(default_factory=ExtractionThresholds)

    def __post_init__(self):
        if self.threads < 1:
            raise InvalidInputError(f"threads must be at least 1, got {self.threads}")
        if self.kappa_ample < 1:
            raise InvalidInputError(
                f"kappa_ample must be at least 1, got {self.kappa_ample}"
            )
        if self.recovery_slack < 0:
            raise InvalidInputError("recovery_slack must be nonnegative")

    @classmethod
    def from_env(cls) -> "LabConfig":
        """Read the configuration from ``COARSE_LAB_*`` environment variables."""
        return cls(
            threads=int(os.getenv("COARSE_LAB_THREADS", str(THREADS))),
            kappa_ample=int(os.getenv("COARSE_LAB_KAPPA_AMPLE", str(KAPPA_AMPLE))),
        )

    def with_overrides(self, overrides: dict) -> "LabConfig":
        """Return a copy with fields replaced from a (possibly nested) dict.

        Raises
        ------
            InvalidInputError: On unknown keys
        """
        known = {f.name for f in fields(self)}
        threshold_names = {f.name for f in fields(ExtractionThresholds)}
        updates = {}
        for key, value in overrides.items():
            if key == "thresholds":
                unknown = set(value) - threshold_names
                if unknown:
                    raise InvalidInputError(f"Unknown threshold(s): {sorted(unknown)}")
                updates[key] = replace(self.thresholds, **value)
            elif key in known:
                updates[key] = value
            else:
                raise InvalidInputError(f"Unknown config key: {key}")
        return replace(self, **updates)


def load_config(path: Optional[Union[str, Path]] = None) -> LabConfig:
    """Environment defaults, overridden by a JSON file when one is given."""
    config = LabConfig.from_env()
    if path is None:
        return config
    logger.info(f"Loading configuration overrides from {path}")
    try:
        overrides = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"Cannot read config file {path}: {e}")
    return config.with_overrides(overrides)
