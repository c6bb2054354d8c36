"""LFCM spaces and coarse modules.

An LFCM space is a :class:`~coarse_lab.coarse_space.Space` together with a
partition into blocks of finite diameter; the measurable sets are the unions of
blocks. A coarse module is presented in block-diagonal form: every coordinate of
the underlying Hilbert space belongs to one block, and ``1_A`` is the coordinate
projection onto the coordinates whose block lies in ``A``.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import (
    Dict,
    FrozenSet,
    Hashable,
    Iterable,
    Mapping,
    NamedTuple,
    Optional,
    TYPE_CHECKING,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from scipy.sparse.csgraph import csgraph_from_dense, shortest_path

from .coarse_space import CoarseMap, PointId, Relation, Space, _subordination_scale
from .utils import (
    InvalidInputError,
    Scale,
    SpaceMismatchError,
    max_scale,
    scale_to_json,
)

if TYPE_CHECKING:
    from .operators import Operator

logger = logging.getLogger(__name__)

BlockId = int
DimensionVector = Union[Sequence[int], Mapping[BlockId, int]]


def _reduce_blocks(matrix: np.ndarray, order: np.ndarray, starts: np.ndarray, ufunc):
    """Reduce a point x point matrix to block x block with ``ufunc``."""
    permuted = matrix[np.ix_(order, order)]
    rows = ufunc.reduceat(permuted, starts, axis=0)
    return ufunc.reduceat(rows, starts, axis=1)


@dataclass(frozen=True, eq=False)
class LFCMSpace:
    """A space with a locally finite controlled partition into blocks.

    Block ids are the positions ``0 .. n_blocks - 1`` in ``blocks``.

    Args:
        base: The underlying extended metric space
        blocks: Partition of the point ids into nonempty blocks

    Raises
    ------
        InvalidInputError: If ``blocks`` is not a partition or a block has
            infinite diameter
    """

    base: Space
    blocks: Tuple[Tuple[PointId, ...], ...]

    def __post_init__(self):
        blocks = tuple(tuple(block) for block in self.blocks)
        block_of_point = np.full(self.base.size, -1, dtype=int)
        for b, block in enumerate(blocks):
            if not block:
                raise InvalidInputError(f"Block {b} is empty")
            for point in block:
                index = self.base.index(point)
                if block_of_point[index] >= 0:
                    raise InvalidInputError(f"Point {point!r} lies in two blocks")
                block_of_point[index] = b
        if np.any(block_of_point < 0):
            missing = self.base.points[int(np.flatnonzero(block_of_point < 0)[0])]
            raise InvalidInputError(f"Point {missing!r} is not covered by any block")
        block_of_point.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "block_of_point", block_of_point)
        if not np.isfinite(self.block_scale.diagonal()).all():
            raise InvalidInputError("Blocks must have finite diameter")

    @classmethod
    def singletons(cls, base: Space) -> "LFCMSpace":
        """The partition into points; ``E_disc`` is the diagonal."""
        return cls(base, tuple((p,) for p in base.points))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @cached_property
    def _layout(self):
        order = np.argsort(self.block_of_point, kind="stable")
        starts = np.searchsorted(self.block_of_point[order], np.arange(self.n_blocks))
        return order, starts

    @cached_property
    def block_scale(self) -> np.ndarray:
        """``block_scale[B, A]`` is the largest distance between points of B and A.

        A block pair lies inside ``E_n`` exactly when this is ``<= n``.
        """
        if self.n_blocks == 0:
            return np.zeros((0, 0))
        scale = _reduce_blocks(self.base.dist, *self._layout, np.maximum)
        scale.setflags(write=False)
        return scale

    @cached_property
    def block_min_distance(self) -> np.ndarray:
        if self.n_blocks == 0:
            return np.zeros((0, 0))
        gap = _reduce_blocks(self.base.dist, *self._layout, np.minimum)
        gap.setflags(write=False)
        return gap

    @property
    def disc_gauge_scale(self) -> Scale:
        """Largest block diameter; the scale of ``E_disc``."""
        return max_scale(np.diag(self.block_scale))

    @cached_property
    def membership(self) -> np.ndarray:
        """Boolean ``(n_blocks, n_points)`` incidence matrix."""
        member = np.zeros((self.n_blocks, self.base.size), dtype=bool)
        member[self.block_of_point, np.arange(self.base.size)] = True
        return member

    def disc_relation(self) -> Relation:
        """The discreteness gauge ``E_disc``, the disjoint union of ``A_i x A_i``."""
        same = self.block_of_point[:, None] == self.block_of_point[None, :]
        return Relation(self.base, self.base, same)

    def check_block(self, block: BlockId) -> BlockId:
        if not isinstance(block, (int, np.integer)) or not 0 <= block < self.n_blocks:
            raise InvalidInputError(f"Unknown block id {block!r}")
        return int(block)

    def block_points(self, block: BlockId) -> Tuple[PointId, ...]:
        return self.blocks[self.check_block(block)]

    def points_of(self, blocks: Iterable[BlockId]) -> FrozenSet[PointId]:
        return frozenset(p for b in blocks for p in self.block_points(b))

    def point_mask(self, blocks: Iterable[BlockId]) -> np.ndarray:
        chosen = np.zeros(self.n_blocks, dtype=bool)
        for b in blocks:
            chosen[self.check_block(b)] = True
        return chosen[self.block_of_point]

    def blocks_of(self, points: Iterable[PointId]) -> FrozenSet[BlockId]:
        """Blocks making up a measurable point set.

        Raises
        ------
            InvalidInputError: If the set is not a union of blocks
        """
        mask = self.base.mask_of(points)
        blocks = frozenset(int(b) for b in np.unique(self.block_of_point[mask]))
        if not np.array_equal(self.point_mask(blocks), mask):
            raise InvalidInputError("Point set is not measurable (not a union of blocks)")
        return blocks

    @cached_property
    def block_component(self) -> np.ndarray:
        """Component label (first point position of the component) per block."""
        firsts = np.array([self.base.index(block[0]) for block in self.blocks], dtype=int)
        return self.base.component_index[firsts] if len(firsts) else firsts

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, LFCMSpace):
            return NotImplemented
        return self.base == other.base and self.blocks == other.blocks

    def __hash__(self):
        return hash((self.base, self.blocks))

    def __repr__(self):
        return (
            f"LFCMSpace(points={self.base.size}, blocks={self.n_blocks}, "
            f"disc={self.disc_gauge_scale})"
        )


def components_of(space: LFCMSpace) -> Dict[BlockId, PointId]:
    """Component label of each block; components are unions of blocks."""
    return {b: space.base.points[c] for b, c in enumerate(space.block_component)}


@dataclass(frozen=True, eq=False)
class Module:
    """A coarse module presented in block-diagonal form.

    Args:
        space: The LFCM space the module lives over
        block_of: Block id of every coordinate
    """

    space: LFCMSpace
    block_of: np.ndarray

    def __post_init__(self):
        block_of = np.array(self.block_of, dtype=int).reshape(-1)
        if len(block_of) and (block_of.min() < 0 or block_of.max() >= self.space.n_blocks):
            raise InvalidInputError("Module coordinate assigned to an unknown block")
        block_of.setflags(write=False)
        object.__setattr__(self, "block_of", block_of)

    @property
    def dim(self) -> int:
        return len(self.block_of)

    @cached_property
    def dims(self) -> np.ndarray:
        """Rank of ``1_{A_i}`` per block."""
        dims = np.bincount(self.block_of, minlength=self.space.n_blocks)
        dims.setflags(write=False)
        return dims

    def coord_mask(self, blocks: Iterable[BlockId]) -> np.ndarray:
        chosen = np.zeros(self.space.n_blocks, dtype=bool)
        for b in blocks:
            chosen[self.space.check_block(b)] = True
        return chosen[self.block_of]

    def coords(self, blocks: Iterable[BlockId]) -> np.ndarray:
        """Coordinates spanned by ``1_A`` for ``A`` the union of ``blocks``."""
        return np.flatnonzero(self.coord_mask(blocks))

    @cached_property
    def block_coords(self) -> Tuple[np.ndarray, ...]:
        """Coordinate indices of every block, in block-id order."""
        return tuple(
            np.flatnonzero(self.block_of == b) for b in range(self.space.n_blocks)
        )

    def projection(self, blocks: Iterable[BlockId]):
        """The projection ``1_A`` as an operator on this module."""
        from .operators import Operator

        return Operator(self, self, np.diag(self.coord_mask(blocks).astype(complex)))

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Module):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.block_of, other.block_of)

    def __hash__(self):
        return hash((self.space, self.block_of.tobytes()))

    def __repr__(self):
        return f"Module(dim={self.dim}, dims={self.dims.tolist()})"


def _dims_array(space: LFCMSpace, dims: DimensionVector) -> np.ndarray:
    if isinstance(dims, Mapping):
        values = np.zeros(space.n_blocks, dtype=int)
        for block, d in dims.items():
            values[space.check_block(int(block))] = d
        missing = set(range(space.n_blocks)) - {int(b) for b in dims}
        if missing:
            raise InvalidInputError(f"Dimension vector misses blocks {sorted(missing)}")
    else:
        values = np.array(list(dims), dtype=int)
        if values.shape != (space.n_blocks,):
            raise InvalidInputError(
                f"Dimension vector has {values.size} entries for {space.n_blocks} blocks"
            )
    if np.any(values < 0):
        raise InvalidInputError("Block dimensions must be nonnegative")
    return values


def make_module(space: LFCMSpace, dims: DimensionVector) -> Module:
    """Module with a contiguous coordinate layout in block-id order."""
    values = _dims_array(space, dims)
    return Module(space, np.repeat(np.arange(space.n_blocks), values))


def uniform_module(space: LFCMSpace) -> Module:
    """One coordinate per block."""
    return make_module(space, np.ones(space.n_blocks, dtype=int))


def bounded_module(space: LFCMSpace, block: BlockId, d: int = 1) -> Module:
    """A ``d``-dimensional module concentrated on a single block."""
    space.check_block(block)
    if d < 1:
        raise InvalidInputError(f"Bounded module needs d >= 1, got {d}")
    dims = np.zeros(space.n_blocks, dtype=int)
    dims[block] = d
    return make_module(space, dims)


def rank(
    C: Module,
    blocks: Optional[Iterable[BlockId]] = None,
    points: Optional[Iterable[PointId]] = None,
) -> int:
    """Rank of ``1_A`` for ``A`` given by blocks or by a measurable point set."""
    if points is not None:
        blocks = C.space.blocks_of(points)
    if blocks is None:
        return C.dim
    return int(C.coord_mask(blocks).sum())


class DirectSum(NamedTuple):
    module: Module
    i0: "Operator"
    i1: "Operator"
    p0: "Operator"
    p1: "Operator"


def direct_sum(C0: Module, C1: Module) -> DirectSum:
    """Blockwise direct sum with its biproduct inclusions and projections.

    Inside each block the coordinates of ``C0`` come first.
    """
    from .operators import Operator

    if C0.space != C1.space:
        raise SpaceMismatchError("Direct sums need modules over the same LFCM space")
    module = make_module(C0.space, C0.dims + C1.dims)
    starts = np.concatenate([[0], np.cumsum(module.dims)[:-1]]).astype(int)
    i0 = np.zeros((module.dim, C0.dim), dtype=complex)
    i1 = np.zeros((module.dim, C1.dim), dtype=complex)
    for b in range(C0.space.n_blocks):
        first = C0.block_coords[b]
        second = C1.block_coords[b]
        i0[starts[b] + np.arange(len(first)), first] = 1
        i1[starts[b] + len(first) + np.arange(len(second)), second] = 1
    return DirectSum(
        module,
        Operator(C0, module, i0),
        Operator(C1, module, i1),
        Operator(module, C0, i0.T),
        Operator(module, C1, i1.T),
    )


@dataclass(frozen=True, eq=False)
class MeasurableMap:
    """A point map between LFCM spaces sending every block into a single block.

    Raises
    ------
        InvalidInputError: If some source block is split across target blocks
    """

    source: LFCMSpace
    target: LFCMSpace
    map: CoarseMap

    def __post_init__(self):
        if self.map.source != self.source.base or self.map.target != self.target.base:
            raise SpaceMismatchError("Point map does not match the LFCM spaces")
        image_blocks = self.target.block_of_point[self.map.images]
        block_map = np.zeros(self.source.n_blocks, dtype=int)
        for b in range(self.source.n_blocks):
            hit = np.unique(image_blocks[self.source.block_of_point == b])
            if len(hit) != 1:
                raise InvalidInputError(
                    f"Map is not measurable: block {b} is split across target blocks "
                    f"{hit.tolist()}"
                )
            block_map[b] = hit[0]
        block_map.setflags(write=False)
        object.__setattr__(self, "block_map", block_map)

    @classmethod
    def from_mapping(cls, source: LFCMSpace, target: LFCMSpace, mapping) -> "MeasurableMap":
        return cls(source, target, CoarseMap.from_mapping(source.base, target.base, mapping))

    @classmethod
    def identity(cls, space: LFCMSpace) -> "MeasurableMap":
        return cls(space, space, CoarseMap.identity(space.base))

    def compose(self, first: "MeasurableMap") -> "MeasurableMap":
        """``self ∘ first``."""
        return MeasurableMap(first.source, self.target, self.map.compose(first.map))

    def __eq__(self, other):
        if not isinstance(other, MeasurableMap):
            return NotImplemented
        return (
            self.source == other.source
            and self.target == other.target
            and self.map == other.map
        )

    __hash__ = None


def pushforward(f: MeasurableMap, C: Module) -> Module:
    """``f_* C``: same Hilbert space, coordinates relabelled by the target block
    of their image, so that ``1_A^{f_*C} = 1_{f^{-1}(A)}^C``."""
    if C.space != f.source:
        raise SpaceMismatchError("Module does not live over the map's source")
    return Module(f.target, f.block_map[C.block_of])


class Domain(NamedTuple):
    blocks: FrozenSet[BlockId]
    faithful_scale: Scale


def domain(C: Module, kappa: int) -> Domain:
    """The ``κ``-domain: blocks where ``1_{A_i}`` has rank at least ``κ``.

    ``faithful_scale`` is the smallest ``n`` with ``X ⊆ E_n[dom_κ]``; it is
    finite iff the module is faithful (``κ = 1``) or ``κ``-ample.
    """
    if kappa < 1:
        raise InvalidInputError(f"kappa must be a positive integer, got {kappa}")
    chosen = C.dims >= kappa
    blocks = frozenset(int(b) for b in np.flatnonzero(chosen))
    space = C.space
    scale = _subordination_scale(
        space.base.dist, np.ones(space.base.size, dtype=bool), chosen[space.block_of_point]
    )
    return Domain(blocks, scale)


def is_faithful(C: Module) -> bool:
    return bool(np.isfinite(domain(C, 1).faithful_scale))


def is_ample(C: Module, kappa_ample: int) -> bool:
    return bool(np.isfinite(domain(C, kappa_ample).faithful_scale))


def domains_asymptotic(C0: Module, C1: Module, kappa: int) -> Scale:
    """Witness for ``dom_κ(C0) ≍ dom_κ(C1)``; ``INF`` when they are not asymptotic.

    Asymptotic domains do not make modules isomorphic: ``C_x`` and ``C_x ⊕ C_y``
    over one component have asymptotic 1-domains but different dimensions.
    """
    if C0.space != C1.space:
        raise SpaceMismatchError("Modules live over different LFCM spaces")
    space = C0.space
    first = space.point_mask(domain(C0, kappa).blocks)
    second = space.point_mask(domain(C1, kappa).blocks)
    dist = space.base.dist
    return max(
        _subordination_scale(dist, first, second),
        _subordination_scale(dist, second, first),
    )


def restrict_to_domain(C: Module, kappa: int):
    """The module ``C_κ`` on ``1_{dom_κ(C)} H_C`` and its inclusion isometry into ``C``.

    Raises
    ------
        InvalidInputError: If the domain is empty
    """
    from .operators import Operator

    blocks = domain(C, kappa).blocks
    if not blocks:
        raise InvalidInputError(f"The {kappa}-domain of the module is empty")
    keep = np.flatnonzero(C.coord_mask(blocks))
    restricted = Module(C.space, C.block_of[keep])
    inclusion = np.zeros((C.dim, len(keep)), dtype=complex)
    inclusion[keep, np.arange(len(keep))] = 1
    return restricted, Operator(restricted, C, inclusion)


class Discretization(NamedTuple):
    space: LFCMSpace
    projection: MeasurableMap
    section: MeasurableMap


def discretize(space: LFCMSpace) -> Discretization:
    """Collapse every block to a point.

    Distances start from the smallest point distance between blocks and are
    closed under shortest paths so that the result satisfies the triangle
    inequality; the collapsed distance of two blocks can therefore be smaller
    than the smallest point distance between them. The projection and the
    section (first point of each block) are mutually inverse up to closeness
    ``disc_gauge_scale``.
    """
    gap = np.array(space.block_min_distance, dtype=float)
    if space.n_blocks:
        graph = csgraph_from_dense(gap, null_value=np.inf)
        gap = shortest_path(graph, method="D", directed=False)
    ids = tuple(range(space.n_blocks))
    collapsed = LFCMSpace.singletons(Space(ids, gap))
    projection = MeasurableMap(
        space, collapsed, CoarseMap(space.base, collapsed.base, space.block_of_point)
    )
    firsts = [space.base.index(block[0]) for block in space.blocks]
    section = MeasurableMap(collapsed, space, CoarseMap(collapsed.base, space.base, firsts))
    logger.debug(f"Discretized {space.base.size} points into {space.n_blocks} blocks")
    return Discretization(collapsed, projection, section)


def module_summary(C: Module) -> dict:
    """Dimensions and domain sizes, for reports."""
    return {
        "dim": C.dim,
        "dims": C.dims.tolist(),
        "faithful_scale": scale_to_json(domain(C, 1).faithful_scale),
    }
