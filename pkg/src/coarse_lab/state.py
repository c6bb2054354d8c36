import logging
from typing import Any, Dict, Tuple

import numpy as np

from .coarse_modules import LFCMSpace, Module
from .serialization import lfcm_to_json, matrix_to_json, module_to_json
from .utils import InvalidInputError, content_hash

# Setup logger
logger = logging.getLogger(__name__)

KINDS = ("space", "module", "matrix")


class LabState:
    """Content-addressed store of the objects a client has handed to the lab.

    This class provides class methods for:
    - Storing spaces, modules and matrices under the SHA-256 of their canonical JSON.
    - Resolving a reference that is either a stored hash or an inline object.
    - Listing and clearing stored objects.

    Storing the same object twice returns the same hash; FunctorSpec JSON
    refers to stored matrices by these hashes.

    Raises
    ------
        InvalidInputError: When a hash is unknown or of the wrong kind
    """

    objects: Dict[str, Tuple[str, Any]] = {}

    @classmethod
    def _payload(cls, kind: str, obj: Any) -> dict:
        if kind == "space":
            return lfcm_to_json(obj)
        if kind == "module":
            return {
                "space": cls.put("space", obj.space),
                "module": module_to_json(obj),
            }
        if kind == "matrix":
            return {"matrix": matrix_to_json(np.asarray(obj, dtype=complex))}
        raise InvalidInputError(f"Unknown object kind {kind!r}; choose from {KINDS}")

    @classmethod
    def put(cls, kind: str, obj: Any) -> str:
        """Store an object and return its content hash.

        Args:
            kind: One of ``space``, ``module`` or ``matrix``
            obj: An :class:`LFCMSpace`, :class:`Module` or 2-d array

        Returns
        -------
            str: SHA-256 of the canonical JSON of the object
        """
        key = content_hash({"kind": kind, **cls._payload(kind, obj)})
        if key not in cls.objects:
            logger.info(f"Stored {kind} {key[:12]}")
        cls.objects[key] = (kind, obj)
        return key

    @classmethod
    def get(cls, key: str, kind: str = None) -> Any:
        if key not in cls.objects:
            raise InvalidInputError(f"No stored object with hash {key!r}")
        stored_kind, obj = cls.objects[key]
        if kind is not None and stored_kind != kind:
            raise InvalidInputError(f"Object {key[:12]} is a {stored_kind}, not a {kind}")
        return obj

    @classmethod
    def resolve(cls, key: str) -> Any:
        """Look up any stored object by hash (for FunctorSpec references)."""
        return cls.get(key)

    @classmethod
    def listing(cls) -> list:
        rows = []
        for key, (kind, obj) in sorted(cls.objects.items()):
            if isinstance(obj, LFCMSpace):
                shape = f"{obj.base.size} points, {obj.n_blocks} blocks"
            elif isinstance(obj, Module):
                shape = f"dim {obj.dim}"
            else:
                shape = "x".join(str(n) for n in np.shape(obj))
            rows.append({"hash": key, "kind": kind, "shape": shape})
        return rows

    @classmethod
    def clear(cls):
        logger.info(f"Clearing {len(cls.objects)} stored object(s)")
        cls.objects = {}

