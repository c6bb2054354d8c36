"""Experiment generators and the recovery pipeline.

``run_experiment`` builds a space, a ground-truth coarse equivalence ``f``, a
unitary ``U = W_Y P_f W_X`` scrambled by random controlled unitaries, extracts a
relation from ``U`` and measures how far it is from the graph of ``f``.
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .coarse_modules import (
    LFCMSpace,
    MeasurableMap,
    Module,
    domain,
    make_module,
    pushforward,
    uniform_module,
)
from .coarse_space import CoarseMap, Space, map_expansion, relation_closeness, relations_closeness
from .config import LabConfig
from .operators import Operator, block_norms, random_controlled_unitary
from .rigidity import extract_embedding
from .utils import (
    BoundViolation,
    InvalidInputError,
    Scale,
    SpaceMismatchError,
    rng_for,
    scale_to_json,
    spawn_seeds,
)

logger = logging.getLogger(__name__)

KINDS = ("interval", "grid2d", "random_geometric", "multi_component")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    size: int
    components: int = 1
    distortion: int = 1
    scramble: int = 0
    delta: float = 0.1
    schedule: Optional[Tuple[Tuple[int, int], ...]] = None
    seed: int = 0
    mode: str = "blocks"
    dims: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"Unknown space kind {self.kind!r}; choose from {KINDS}")
        if self.size < 1:
            raise InvalidInputError(f"size must be at least 1, got {self.size}")
        if self.components < 1:
            raise InvalidInputError("components must be at least 1")
        if self.distortion < 1:
            raise InvalidInputError(f"distortion must be at least 1, got {self.distortion}")
        if self.scramble < 0:
            raise InvalidInputError(f"scramble must be nonnegative, got {self.scramble}")
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if self.schedule is not None:
            object.__setattr__(
                self, "schedule", tuple((int(F), int(E)) for F, E in self.schedule)
            )
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def as_dict(self) -> dict:
        payload = asdict(self)
        payload["schedule"] = [list(step) for step in self.schedule] if self.schedule else None
        payload["dims"] = list(self.dims) if self.dims is not None else None
        return payload


def _hop_metric(adjacency: np.ndarray) -> np.ndarray:
    return shortest_path(csr_matrix(adjacency), directed=False, unweighted=True)


def _random_geometric(size: int, rng: np.random.Generator) -> Space:
    coords = rng.random((size, 2))
    gaps = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    radius = 1.5 * np.sqrt(np.log(size) / (np.pi * size)) if size > 1 else 1.0
    adjacency = (gaps <= radius) & ~np.eye(size, dtype=bool)
    # join components through their closest pairs until connected
    while True:
        count, labels = connected_components(csr_matrix(adjacency), directed=False)
        if count <= 1:
            break
        inside = labels == labels[0]
        across = np.where(inside[:, None] & ~inside[None, :], gaps, np.inf)
        i, j = np.unravel_index(np.argmin(across), across.shape)
        adjacency[i, j] = adjacency[j, i] = True
    return Space(tuple(range(size)), _hop_metric(adjacency))


def gen_space(
    kind: str,
    size: Union[int, Sequence[int]],
    seed=0,
    components: int = 2,
) -> LFCMSpace:
    """Experiment space with singleton blocks, deterministic per seed.

    ``multi_component`` takes either a tuple of part sizes or ``size`` and
    ``components``; parts are intervals at infinite distance.
    """
    if kind == "multi_component":
        sizes = list(size) if isinstance(size, (tuple, list)) else [size] * components
        if not sizes or min(sizes) < 1:
            raise InvalidInputError(f"Invalid component sizes {sizes}")
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        parts = [Space.interval(n, int(offset)) for n, offset in zip(sizes, offsets)]
        return LFCMSpace.singletons(Space.disjoint_union(*parts))
    if not isinstance(size, (int, np.integer)) or size < 1:
        raise InvalidInputError(f"Invalid size {size!r}")
    if kind == "interval":
        base = Space.interval(size)
    elif kind == "grid2d":
        ids = [(i, j) for i in range(size) for j in range(size)]
        grid = np.array(ids)
        base = Space(tuple(ids), np.abs(grid[:, None, :] - grid[None, :, :]).sum(axis=-1))
    elif kind == "random_geometric":
        base = _random_geometric(size, rng_for(seed))
    else:
        raise InvalidInputError(f"Unknown space kind {kind!r}; choose from {KINDS}")
    logger.debug(f"Generated {kind} space with {base.size} points")
    return LFCMSpace.singletons(base)


class Equivalence(NamedTuple):
    forward: MeasurableMap
    inverse: MeasurableMap


def _isometric_reversal(dist: np.ndarray, members: np.ndarray) -> bool:
    reversed_members = members[::-1]
    return np.array_equal(
        dist[np.ix_(members, members)], dist[np.ix_(reversed_members, reversed_members)]
    )


def gen_equivalence(X: LFCMSpace, D: int, seed=0) -> Equivalence:
    """Random component-preserving bijection with expansion at most ``D·n + D``.

    Each component is reversed when reversal is an isometry; then a random
    matching of points at distance ``<= D // 2`` is swapped, which moves every
    distance by at most ``2·(D // 2)``.

    Raises
    ------
        BoundViolation: If the expansion bound fails (it cannot for valid input)
    """
    if D < 1:
        raise InvalidInputError(f"Distortion bound must be at least 1, got {D}")
    base = X.base
    rng = rng_for(seed)
    images = np.arange(base.size)
    for label in np.unique(base.component_index):
        members = np.flatnonzero(base.component_index == label)
        if _isometric_reversal(base.dist, members):
            images[members] = members[::-1]

    reach = D // 2
    swap = np.arange(base.size)
    if reach:
        matched = np.zeros(base.size, dtype=bool)
        for i in rng.permutation(base.size):
            if matched[i]:
                continue
            near = np.flatnonzero((base.dist[i] <= reach) & ~matched)
            near = near[near != i]
            if len(near):
                j = rng.choice(near)
                matched[[i, j]] = True
                swap[i], swap[j] = j, i

    forward = CoarseMap(base, base, images[swap])
    for f in (forward, forward.inverse()):
        for scale, value in map_expansion(f).items():
            limit = D * scale + D
            if np.isfinite(scale) and value > limit:
                raise BoundViolation(
                    f"Expansion {value} at scale {scale} exceeds {limit}",
                    observed=value,
                    bound=limit,
                )
    return Equivalence(MeasurableMap(X, X, forward), MeasurableMap(X, X, forward.inverse()))


def transport_permutation(f: MeasurableMap, C_X: Module, C_Y: Module) -> Operator:
    """The permutation ``P_f: C_X -> C_Y`` sending coordinates of block ``A`` to
    coordinates of block ``f(A)``, in order.

    Raises
    ------
        InvalidInputError: If ``f_* C_X`` and ``C_Y`` have different dimension vectors
    """
    if C_X.space != f.source or C_Y.space != f.target:
        raise SpaceMismatchError("Modules do not match the map")
    moved = pushforward(f, C_X)
    if not np.array_equal(moved.dims, C_Y.dims):
        raise InvalidInputError(
            f"Dimension mismatch: f_* C_X has dims {moved.dims.tolist()}, "
            f"C_Y has {C_Y.dims.tolist()}"
        )
    matrix = np.zeros((C_Y.dim, C_X.dim), dtype=complex)
    for b, rows in enumerate(C_Y.block_coords):
        cols = np.flatnonzero(moved.block_of == b)
        matrix[rows, cols] = 1
    return Operator(C_X, C_Y, matrix)


def build_scrambled_unitary(
    f: MeasurableMap, C_X: Module, C_Y: Module, p: Scale, seed=0
) -> Operator:
    """``U = W_Y P_f W_X`` with ``W`` random controlled unitaries of propagation ``p``."""
    left, right = spawn_seeds(seed, 2) if isinstance(seed, int) else seed.spawn(2)
    P = transport_permutation(f, C_X, C_Y)
    W_X = random_controlled_unitary(C_X, p, right)
    W_Y = random_controlled_unitary(C_Y, p, left)
    return W_Y @ P @ W_X


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    relation_size: int
    closeness: Scale
    bound: int
    success: bool
    accepted_step: Optional[int]
    diagnostics: List[dict] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def verdict(self) -> str:
        return "recovered" if np.isfinite(self.closeness) else "not_recovered"

    @property
    def within_bound(self) -> bool:
        return self.closeness <= self.bound

    def to_json(self, include_timing: bool = False) -> dict:
        payload = {
            "config": self.config.as_dict(),
            "relation_size": self.relation_size,
            "closeness": scale_to_json(self.closeness),
            "bound": self.bound,
            "within_bound": self.within_bound,
            "verdict": self.verdict,
            "extraction_success": self.success,
            "accepted_step": self.accepted_step,
            "diagnostics": self.diagnostics,
        }
        if include_timing:
            payload["wall_time"] = self.wall_time
        return payload


def experiment_modules(X: LFCMSpace, f: MeasurableMap, dims=None) -> Tuple[Module, Module]:
    """Source module (uniform unless ``dims`` given) and its transport along ``f``."""
    C_X = uniform_module(X) if dims is None else make_module(X, dims)
    C_Y = make_module(f.target, pushforward(f, C_X).dims)
    return C_X, C_Y


def run_experiment(cfg: ExperimentConfig, config: Optional[LabConfig] = None) -> ExperimentResult:
    """Generate, scramble, extract and compare; deterministic per ``cfg.seed``."""
    config = config or LabConfig()
    start = time.perf_counter()
    space_seed, map_seed, unitary_seed, _ = spawn_seeds(cfg.seed, 4)
    logger.info(
        f"Experiment {cfg.kind}(size={cfg.size}) D={cfg.distortion} p={cfg.scramble} "
        f"seed={cfg.seed}"
    )
    try:
        X = gen_space(cfg.kind, cfg.size, space_seed, cfg.components)
        f = gen_equivalence(X, cfg.distortion, map_seed).forward
        C_X, C_Y = experiment_modules(X, f, cfg.dims)
        U = build_scrambled_unitary(f, C_X, C_Y, cfg.scramble, unitary_seed)
        extraction = extract_embedding(
            U,
            delta=cfg.delta,
            schedule=cfg.schedule,
            mode=cfg.mode,
            thresholds=config.thresholds,
        )
    except InvalidInputError as e:
        raise InvalidInputError(f"Experiment seed {cfg.seed}: {e}") from e
    covered = X.points_of(domain(C_X, 1).blocks)
    closeness = relation_closeness(extraction.relation, f.map, covered)
    result = ExperimentResult(
        config=cfg,
        relation_size=len(extraction.relation),
        closeness=closeness,
        bound=cfg.distortion + 2 * cfg.scramble + config.recovery_slack,
        success=extraction.success,
        accepted_step=extraction.accepted_step,
        diagnostics=extraction.diagnostics,
        wall_time=time.perf_counter() - start,
    )
    logger.info(f"Seed {cfg.seed}: {result.verdict}, closeness {scale_to_json(closeness)}")
    return result


def sweep(
    base: ExperimentConfig, seeds: Sequence[int], threads: int = 1, config: Optional[LabConfig] = None
) -> List[ExperimentResult]:
    """Run ``base`` for every seed; results come back in seed order."""
    configs = [ExperimentConfig(**{**asdict(base), "seed": s}) for s in sorted(seeds)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda c: run_experiment(c, config), configs))
    return [run_experiment(c, config) for c in configs]


CSV_FIELDS = ("seed", "kind", "size", "distortion", "scramble", "delta", "closeness", "bound", "within_bound", "verdict")


def write_csv(results: Sequence[ExperimentResult], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in results:
            writer.writerow(
                {
                    "seed": r.config.seed,
                    "kind": r.config.kind,
                    "size": r.config.size,
                    "distortion": r.config.distortion,
                    "scramble": r.config.scramble,
                    "delta": r.config.delta,
                    "closeness": scale_to_json(r.closeness),
                    "bound": r.bound,
                    "within_bound": r.within_bound,
                    "verdict": r.verdict,
                }
            )


def assembly_negative_check(size: int = 10, slack: int = 2) -> dict:
    """Assemble one functor from a shift on one module and a reversal on another.

    The relations extracted per object disagree, so the unitaries do not come
    from one coarse map.
    """
    from .category import assemble_functor

    X = gen_space("interval", size)
    single = uniform_module(X)
    double = make_module(X, [2] * size)
    shift = MeasurableMap(X, X, CoarseMap(X.base, X.base, (np.arange(size) + 1) % size))
    reversal = MeasurableMap(X, X, CoarseMap(X.base, X.base, np.arange(size)[::-1]))
    F = assemble_functor(
        [
            (single, single, transport_permutation(shift, single, single)),
            (double, double, transport_permutation(reversal, double, double)),
        ],
        fallback=MeasurableMap.identity(X),
    )
    schedule = [(0, 0)]
    first = extract_embedding(F.unitary_for(single), schedule=schedule).relation
    second = extract_embedding(F.unitary_for(double), schedule=schedule).relation
    gap = relations_closeness(first, second)
    bound = 1 + slack
    return {"closeness": scale_to_json(gap), "bound": bound, "close": gap <= bound}


def render_heatmap(t: Operator, path: Union[str, Path]) -> Path:
    """Binary PGM (P5) of block norms; rows are target blocks, brightest = 255."""
    if not t.is_endogenous:
        raise SpaceMismatchError("Heatmaps need an endogenous operator")
    norms = block_norms(t)
    peak = norms.max() if norms.size else 0.0
    pixels = np.zeros(norms.shape, dtype=np.uint8)
    if peak > 0:
        pixels = np.rint(norms / peak * 255).astype(np.uint8)
    height, width = pixels.shape
    path = Path(path)
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode() + pixels.tobytes())
    logger.info(f"Wrote {width}x{height} heatmap to {path}")
    return path


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Pixels of a P5 file written by :func:`render_heatmap`."""
    data = Path(path).read_bytes()
    magic, size, maxval, body = data.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise InvalidInputError(f"{path} is not an 8-bit P5 image")
    width, height = (int(v) for v in size.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)
