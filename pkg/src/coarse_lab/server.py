import logging
from functools import wraps
from typing import Optional, Union

from mcp.server.fastmcp import FastMCP
from mcp.shared.exceptions import McpError
from mcp.types import INTERNAL_ERROR, INVALID_PARAMS, ErrorData

from .coarse_modules import LFCMSpace, Module, domain, module_summary
from .coarse_space import classify_relation
from .config import load_config
from .harness import ExperimentConfig, run_experiment
from .operators import Operator, approx_profile, propagation
from .rigidity import approximate_relation
from .serialization import (
    lfcm_from_json,
    matrix_from_json,
    module_from_json,
    params_from_json,
    relation_from_json,
    relation_to_json,
)
from .state import LabState
from .utils import CoarseLabError, InvalidInputError, scale_to_json

# Initialize FastMCP server with default settings
# This ensures tools are available when module is imported
mcp = FastMCP("coarse-lab")

logger = logging.getLogger(__name__)

QUERY_TYPES = (
    "classify_relation",
    "domain",
    "propagation",
    "approx_profile",
    "approximate_relation",
    "stored_objects",
)

Ref = Union[str, dict, list, None]


def lab_errors(func):
    """Translate laboratory errors into MCP protocol errors.

    ``CoarseLabError`` becomes ``INVALID_PARAMS``; anything else unexpected
    becomes ``INTERNAL_ERROR``.
    """

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except McpError:
            raise
        except CoarseLabError as e:
            logger.warning(f"[{func.__name__}] rejected input: {e}")
            raise McpError(ErrorData(code=INVALID_PARAMS, message=str(e)))
        except Exception as e:
            logger.exception(f"[{func.__name__}] failed")
            raise McpError(
                ErrorData(code=INTERNAL_ERROR, message=f"{type(e).__name__}: {e}")
            )

    return wrapper


def _space(ref: Ref) -> LFCMSpace:
    if ref is None:
        raise InvalidInputError("A space (hash or inline JSON) is required")
    if isinstance(ref, str):
        return LabState.get(ref, "space")
    return lfcm_from_json(ref)


def _module(ref: Ref) -> Module:
    """A stored module hash, or inline ``{"space": <ref>, "dims"|"block_of": ...}``."""
    if ref is None:
        raise InvalidInputError("A module (hash or inline JSON) is required")
    if isinstance(ref, str):
        return LabState.get(ref, "module")
    return module_from_json(ref, _space(ref.get("space")))


def _operator(ref: Ref, source: Module, target: Optional[Module] = None) -> Operator:
    if ref is None:
        raise InvalidInputError("An operator matrix (hash or inline JSON) is required")
    matrix = LabState.get(ref, "matrix") if isinstance(ref, str) else matrix_from_json(ref)
    return Operator(source, target or source, matrix)


@mcp.tool()
@lab_errors
def store_object(kind: str, data: Union[dict, list], space: Ref = None) -> dict:
    """Store a space, module or matrix and return its content hash.

    Hashes are stable: storing the same object again returns the same hash, and
    every other tool accepts the hash wherever it accepts inline JSON.

    Args:
        kind: 'space', 'module' or 'matrix'
        data: Inline JSON of the object
            - space: {"space": {"points": [...], "dist": [[...]]}, "blocks": [[...]]}
              or a bare {"points", "dist"} object (singleton blocks)
            - module: {"dims": {"0": 1, ...}} or {"block_of": [...]}
            - matrix: nested [re, im] pairs, rows first
        space: (For module) hash or inline JSON of the space it lives over

    Returns
    -------
        dict: {"hash": str, "kind": str}
    """
    if kind == "space":
        obj = lfcm_from_json(data)
    elif kind == "module":
        obj = module_from_json(data, _space(space if space is not None else data.get("space")))
    elif kind == "matrix":
        obj = matrix_from_json(data)
    else:
        raise InvalidInputError(f"Invalid kind: {kind}. Must be one of: space, module, matrix")
    return {"hash": LabState.put(kind, obj), "kind": kind}


@mcp.tool()
@lab_errors
def query_lab(
    query_type: str,
    space: Ref = None,
    target_space: Ref = None,
    relation: dict = None,
    module: Ref = None,
    target_module: Ref = None,
    operator: Ref = None,
    kappa: int = 1,
    params: dict = None,
) -> Union[dict, list, int, str]:
    """Read-only computations on coarse spaces, modules and operators.

    Every object argument is either a hash returned by store_object or inline JSON.

    Args:
        query_type: Type of query to perform. Options:
            - 'classify_relation': witness scales and predicates of a relation
            - 'domain': κ-domain of a module and its faithfulness scale
            - 'propagation': propagation of an endogenous operator
            - 'approx_profile': upper/lower distance to band operators per scale
            - 'approximate_relation': the block relation f^T_{δ,F,E} of an operator
            - 'stored_objects': list stored hashes
        space: (classify_relation) Source space of the relation
        target_space: (classify_relation) Target space; defaults to ``space``
        relation: (classify_relation) {"pairs": [[y, x], ...]}
        module: Module of the operator (its source for approximate_relation)
        target_module: (approximate_relation) Target module; defaults to ``module``
        operator: Matrix of the operator, nested [re, im] pairs
        kappa: (domain) Rank threshold, a positive integer
        params: (approximate_relation) {"delta", "F_scale", "E_scale", "mode"}

    Returns
    -------
        Union[dict, list, int, str]: Scales are integers or the string "inf"

    Examples
    --------
        query_lab("domain", module={"space": space_hash, "dims": [1, 0, 2]}, kappa=2)
        query_lab("propagation", module=module_hash, operator=matrix_hash)
    """
    if query_type == "classify_relation":
        source = _space(space)
        target = _space(target_space) if target_space is not None else source
        if relation is None:
            raise InvalidInputError("classify_relation needs a relation")
        R = relation_from_json(relation, source.base, target.base)
        return classify_relation(R).as_dict()
    elif query_type == "domain":
        C = _module(module)
        found = domain(C, kappa)
        return {
            "kappa": kappa,
            "blocks": sorted(found.blocks),
            "faithful_scale": scale_to_json(found.faithful_scale),
            "module": module_summary(C),
        }
    elif query_type == "propagation":
        return scale_to_json(propagation(_operator(operator, _module(module))))
    elif query_type == "approx_profile":
        profile = approx_profile(_operator(operator, _module(module)))
        return {"upper": profile.upper.as_list(), "lower": profile.lower.as_list()}
    elif query_type == "approximate_relation":
        C = _module(module)
        D = _module(target_module) if target_module is not None else C
        R = approximate_relation(_operator(operator, C, D), params_from_json(params or {}))
        return relation_to_json(R)
    elif query_type == "stored_objects":
        return LabState.listing()
    else:
        raise InvalidInputError(
            f"Invalid query_type: {query_type}. Must be one of: {', '.join(QUERY_TYPES)}"
        )


@mcp.tool()
@lab_errors
def run_lab_experiment(
    kind: str = "interval",
    size: int = 10,
    components: int = 1,
    distortion: int = 1,
    scramble: int = 0,
    delta: float = 0.1,
    seed: int = 0,
    mode: str = "blocks",
    schedule: list = None,
    dims: list = None,
    config_path: str = None,
) -> dict:
    """Run one rigidity recovery experiment and return its JSON report.

    A ground-truth coarse equivalence with distortion ``distortion`` is hidden in
    a unitary scrambled by controlled unitaries of propagation ``scramble``;
    the lab extracts a relation from the unitary and compares it to the truth.

    Args:
        kind: 'interval', 'grid2d', 'random_geometric' or 'multi_component'
        size: Number of points (side length for grid2d, part size for multi_component)
        components: (multi_component) Number of parts
        distortion: Distortion bound D >= 1 of the hidden equivalence
        scramble: Propagation p >= 0 of the scrambling unitaries
        delta: Block-norm threshold in (0, 1)
        seed: Experiment seed; equal seeds give identical reports
        mode: 'blocks' or 'windows'
        schedule: Optional [[F, E], ...] parameter schedule
        dims: Optional dimension vector of the source module
        config_path: Optional JSON file with LabConfig overrides

    Returns
    -------
        dict: The report, including "verdict", "closeness" and "bound"
    """
    cfg = ExperimentConfig(
        kind=kind,
        size=size,
        components=components,
        distortion=distortion,
        scramble=scramble,
        delta=delta,
        schedule=tuple(tuple(step) for step in schedule) if schedule else None,
        seed=seed,
        mode=mode,
        dims=tuple(dims) if dims is not None else None,
    )
    return run_experiment(cfg, load_config(config_path)).to_json()


def create_server(
    host: str = "127.0.0.1", port: int = 8000, stateless_http: bool = False
) -> FastMCP:
    """Create and configure the FastMCP server instance.

    Args:
        host: Server host address
        port: Server port number
        stateless_http: If True, enables stateless HTTP mode (no session persistence)
    """
    global mcp
    # If custom settings are provided, recreate the server with those settings
    if host != "127.0.0.1" or port != 8000 or stateless_http:
        mcp = FastMCP("coarse-lab", host=host, port=port, stateless_http=stateless_http)

        # Re-register all the tools
        mcp.tool()(store_object)
        mcp.tool()(query_lab)
        mcp.tool()(run_lab_experiment)

    return mcp
