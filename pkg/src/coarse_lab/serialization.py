"""JSON and binary encodings of laboratory objects.

``INF`` is written as the string ``"inf"``; complex entries as ``[re, im]``.
:func:`dumps` sorts keys so equal objects give identical bytes.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np

from .coarse_modules import LFCMSpace, MeasurableMap, Module, make_module
from .coarse_space import CoarseMap, Relation, Space
from .operators import Operator
from .rigidity import ApproxParams, CentralUnitary
from .utils import InvalidInputError, as_scale, scale_to_json

logger = logging.getLogger(__name__)

MAGIC = b"CRLB"
HEADER = struct.Struct("<4sIIB")


def dumps(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_default)


def _default(value):
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return scale_to_json(value) if np.isinf(value) else float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def _point_id(value):
    return tuple(_point_id(v) for v in value) if isinstance(value, list) else value


def _encode_point(point):
    return [_encode_point(p) for p in point] if isinstance(point, tuple) else point


def _read_distance(value) -> float:
    scale = as_scale(value)
    return float(scale)


def space_to_json(X: Space) -> dict:
    return {
        "points": [_encode_point(p) for p in X.points],
        "dist": [[scale_to_json(d) for d in row] for row in X.dist],
    }


def space_from_json(data: dict) -> Space:
    try:
        points = [_point_id(p) for p in data["points"]]
        dist = [[_read_distance(d) for d in row] for row in data["dist"]]
    except (KeyError, TypeError) as e:
        raise InvalidInputError(f"Malformed space JSON: {e}")
    return Space(tuple(points), np.array(dist, dtype=float).reshape(len(points), len(points)))


def relation_to_json(R: Relation) -> dict:
    return {"pairs": [[_encode_point(y), _encode_point(x)] for y, x in R.sorted_pairs()]}


def relation_from_json(data: dict, source: Space, target: Space) -> Relation:
    try:
        pairs = [(_point_id(y), _point_id(x)) for y, x in data["pairs"]]
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed relation JSON: {e}")
    return Relation.from_pairs(source, target, pairs)


def map_to_json(f: CoarseMap) -> dict:
    return {
        "mapping": [[_encode_point(x), _encode_point(f(x))] for x in f.source.points]
    }


def map_from_json(data: dict, source: Space, target: Space) -> CoarseMap:
    try:
        mapping = {_point_id(x): _point_id(y) for x, y in data["mapping"]}
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed map JSON: {e}")
    return CoarseMap.from_mapping(source, target, mapping)


def lfcm_to_json(space: LFCMSpace) -> dict:
    return {
        "space": space_to_json(space.base),
        "blocks": [[_encode_point(p) for p in block] for block in space.blocks],
    }


def lfcm_from_json(data: dict) -> LFCMSpace:
    if "blocks" not in data:
        # a bare space gets singleton blocks
        return LFCMSpace.singletons(space_from_json(data))
    base = space_from_json(data["space"])
    return LFCMSpace(base, tuple(tuple(_point_id(p) for p in block) for block in data["blocks"]))


def measurable_map_from_json(data: dict, source: LFCMSpace, target: LFCMSpace) -> MeasurableMap:
    return MeasurableMap(source, target, map_from_json(data, source.base, target.base))


def module_to_json(C: Module, space_ref: Optional[str] = None) -> dict:
    """Dimension vector keyed by block id, plus the coordinate layout."""
    payload = {
        "dims": {str(b): int(d) for b, d in enumerate(C.dims)},
        "block_of": C.block_of.tolist(),
    }
    if space_ref is not None:
        payload["space_ref"] = space_ref
    return payload


def dims_from_json(data: Union[dict, list]) -> Union[dict, list]:
    if isinstance(data, dict):
        return {int(b): int(d) for b, d in data.items()}
    return [int(d) for d in data]


def module_from_json(data: dict, space: LFCMSpace) -> Module:
    if "block_of" in data:
        return Module(space, np.array(data["block_of"], dtype=int))
    if "dims" not in data:
        raise InvalidInputError("Module JSON needs 'dims' or 'block_of'")
    return make_module(space, dims_from_json(data["dims"]))


def matrix_to_json(matrix: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in matrix]


def matrix_from_json(data: list) -> np.ndarray:
    try:
        array = np.array(data, dtype=float)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed matrix JSON: {e}")
    if array.size == 0:
        return np.zeros((len(data), 0), dtype=complex)
    if array.ndim != 3 or array.shape[2] != 2:
        raise InvalidInputError("Matrix JSON must be nested [re, im] pairs")
    return array[..., 0] + 1j * array[..., 1]


def operator_to_json(t: Operator) -> dict:
    return {"matrix": matrix_to_json(t.matrix)}


def operator_from_json(data: dict, source: Module, target: Module) -> Operator:
    matrix = matrix_from_json(data["matrix"])
    if matrix.size == 0:
        matrix = np.zeros((target.dim, source.dim), dtype=complex)
    return Operator(source, target, matrix)


def params_from_json(data: dict) -> ApproxParams:
    return ApproxParams(
        float(data.get("delta", 0.1)),
        as_scale(data.get("F_scale", 0)),
        as_scale(data.get("E_scale", 0)),
        data.get("mode", "blocks"),
    )


def central_unitary_to_json(u: CentralUnitary) -> dict:
    return {
        "scalars": [
            [_encode_point(label), [value.real, value.imag]]
            for label, value in sorted(u.scalars.items(), key=lambda item: repr(item[0]))
        ]
    }


def central_unitary_from_json(data: dict, space: LFCMSpace) -> CentralUnitary:
    return CentralUnitary(
        space, {_point_id(label): complex(re, im) for label, (re, im) in data["scalars"]}
    )


def functor_to_json(name: str, entries) -> dict:
    """``entries`` are ``(source_ref, target_ref, unitary_ref)`` content hashes."""
    return {"name": name, "objects": [list(entry) for entry in entries]}


def functor_from_json(data: dict, resolve: Callable[[str], Any]):
    """Rebuild a :class:`~coarse_lab.category.FunctorSpec` from stored references.

    Args:
        data: ``{"name": ..., "objects": [[source_ref, target_ref, unitary_ref]]}``
        resolve: Maps a content hash to the stored module or matrix
    """
    from .category import functor_from_unitaries

    objects: Dict[Module, Module] = {}
    unitaries: Dict[Module, Operator] = {}
    for source_ref, target_ref, unitary_ref in data["objects"]:
        C, D = resolve(source_ref), resolve(target_ref)
        matrix = resolve(unitary_ref)
        objects[C] = D
        unitaries[C] = Operator(C, D, matrix)
    return functor_from_unitaries(objects, unitaries, name=data.get("name", "functor"))


def write_matrix_binary(
    matrix: np.ndarray, path: Union[str, Path], row_major: bool = False
) -> None:
    """Write the CRLB format: magic, uint32 rows, uint32 cols, uint8 row-major
    flag, then float64 ``(re, im)`` pairs in the flagged order."""
    matrix = np.asarray(matrix, dtype="<c16")
    rows, cols = matrix.shape
    ordered = matrix if row_major else matrix.T
    payload = HEADER.pack(MAGIC, rows, cols, int(row_major)) + np.ascontiguousarray(
        ordered
    ).tobytes()
    Path(path).write_bytes(payload)
    logger.debug(f"Wrote {rows}x{cols} matrix to {path}")


def read_matrix_binary(path: Union[str, Path]) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise InvalidInputError("Truncated CRLB header")
    magic, rows, cols, row_major = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidInputError(f"Bad magic {magic!r}, expected {MAGIC!r}")
    body = np.frombuffer(data, dtype="<c16", offset=HEADER.size)
    if body.size != rows * cols:
        raise InvalidInputError(
            f"CRLB body holds {body.size} entries, header says {rows}x{cols}"
        )
    if row_major:
        return body.reshape(rows, cols).astype(complex)
    return body.reshape(cols, rows).T.astype(complex)
