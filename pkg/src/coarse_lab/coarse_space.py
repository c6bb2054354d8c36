"""Finite truncations of countably generated coarse spaces.

A countably generated coarse structure is the same thing as an extended metric,
so a :class:`Space` is a finite point set with a symmetric distance matrix whose
entries are naturals or ``INF``. The entourages are the relations of finite scale
and ``E_n`` is the relation ``{(x, y) | d(x, y) <= n}``.

Every asymptotic notion (subordination, controlledness, closeness, density) is
returned as a witness scale rather than a boolean: on a finite space everything
bounded is coarse, so the quantitative answer is the only informative one.
Relations are stored as boolean masks with rows indexed by the target and columns
by the source, matching the ``Y x X`` convention.
"""

import logging
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from typing import (
    Callable,
    Dict,
    FrozenSet,
    Hashable,
    Iterable,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .utils import (
    INF,
    InvalidInputError,
    Scale,
    SpaceMismatchError,
    as_scale,
    max_scale,
    min_plus,
    scale_to_json,
)

logger = logging.getLogger(__name__)

PointId = Hashable


@dataclass(frozen=True, eq=False)
class Space:
    """A finite extended metric space.

    Args:
        points: Ordered point ids (unique, hashable)
        dist: Square matrix of distances; naturals or ``inf``

    Raises
    ------
        InvalidInputError: If the matrix is not an extended metric. The triangle
            inequality is checked, never repaired.
    """

    points: Tuple[PointId, ...]
    dist: np.ndarray

    def __post_init__(self):
        points = tuple(self.points)
        dist = np.array(self.dist, dtype=float)
        n = len(points)
        if len(set(points)) != n:
            raise InvalidInputError("Point ids must be unique")
        if dist.shape != (n, n):
            raise InvalidInputError(
                f"Distance matrix has shape {dist.shape}, expected {(n, n)}"
            )
        if np.isnan(dist).any() or (dist < 0).any():
            raise InvalidInputError("Distances must be naturals or inf")
        finite = np.isfinite(dist)
        if not np.array_equal(dist[finite], np.round(dist[finite])):
            raise InvalidInputError("Distances must be naturals or inf")
        if np.any(np.diag(dist) != 0):
            raise InvalidInputError("dist(x, x) must be 0")
        if not np.array_equal(dist, dist.T):
            raise InvalidInputError("Distance matrix must be symmetric")
        for k in range(n):
            violated = dist > dist[:, k : k + 1] + dist[k : k + 1, :]
            if violated.any():
                i, j = np.argwhere(violated)[0]
                raise InvalidInputError(
                    "Triangle inequality fails for "
                    f"({points[i]!r}, {points[k]!r}, {points[j]!r})"
                )
        dist.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "dist", dist)

    @classmethod
    def interval(cls, n: int, offset: int = 0) -> "Space":
        """The path ``offset, ..., offset + n - 1`` with ``d(i, j) = |i - j|``."""
        if n < 1:
            raise InvalidInputError(f"Interval size must be positive, got {n}")
        ids = np.arange(n)
        return cls(
            tuple(range(offset, offset + n)), np.abs(ids[:, None] - ids[None, :])
        )

    @classmethod
    def disjoint_union(cls, *parts: "Space") -> "Space":
        """Place spaces side by side at infinite distance from each other."""
        points = tuple(p for part in parts for p in part.points)
        size = len(points)
        dist = np.full((size, size), np.inf)
        start = 0
        for part in parts:
            stop = start + part.size
            dist[start:stop, start:stop] = part.dist
            start = stop
        return cls(points, dist)

    @property
    def size(self) -> int:
        return len(self.points)

    @cached_property
    def _index(self) -> Dict[PointId, int]:
        return {p: i for i, p in enumerate(self.points)}

    def index(self, point: PointId) -> int:
        """Position of a point id, raising on unknown ids."""
        try:
            return self._index[point]
        except (KeyError, TypeError):
            raise InvalidInputError(f"Unknown point id {point!r}")

    def indices(self, points: Iterable[PointId]) -> np.ndarray:
        return np.array([self.index(p) for p in points], dtype=int)

    def mask_of(self, points: Iterable[PointId]) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[self.indices(points)] = True
        return mask

    def ids_of(self, mask: np.ndarray) -> FrozenSet[PointId]:
        return frozenset(self.points[i] for i in np.flatnonzero(mask))

    @cached_property
    def breakpoints(self) -> Tuple[Scale, ...]:
        """Scales at which ``E_n`` changes: 0, each realised finite distance, and
        ``INF`` when the space has several components."""
        finite = self.dist[np.isfinite(self.dist)]
        scales = [0] + [int(s) for s in np.unique(finite) if s > 0]
        if not np.isfinite(self.dist).all():
            scales.append(INF)
        return tuple(scales)

    @property
    def diameter(self) -> Scale:
        """Largest finite distance."""
        return max_scale(self.dist[np.isfinite(self.dist)])

    @cached_property
    def component_index(self) -> np.ndarray:
        """For each point, the position of the first point of its component."""
        if self.size == 0:
            return np.zeros(0, dtype=int)
        _, labels = connected_components(
            csr_matrix(np.isfinite(self.dist)), directed=False
        )
        first = {}
        for i, label in enumerate(labels):
            first.setdefault(label, i)
        return np.array([first[label] for label in labels], dtype=int)

    def entourage(self, n: Scale) -> "Relation":
        """The generating entourage ``E_n``."""
        return Relation(self, self, self.dist <= as_scale(n))

    def identity(self) -> "Relation":
        """The diagonal ``Δ_X``."""
        return Relation(self, self, np.eye(self.size, dtype=bool))

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Space):
            return NotImplemented
        return self.points == other.points and np.array_equal(self.dist, other.dist)

    def __hash__(self):
        return hash((self.points, self.dist.tobytes()))

    def __repr__(self):
        return f"Space(size={self.size}, diameter={self.diameter})"


@dataclass(frozen=True, eq=False)
class Relation:
    """A relation from ``source`` to ``target``: a subset of ``target x source``.

    Args:
        source: The space ``X``
        target: The space ``Y``
        mask: Boolean matrix of shape ``(|Y|, |X|)``; ``mask[y, x]`` marks ``(y, x)``
    """

    source: Space
    target: Space
    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != (self.target.size, self.source.size):
            raise InvalidInputError(
                f"Relation mask has shape {mask.shape}, expected "
                f"{(self.target.size, self.source.size)}"
            )
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_pairs(
        cls, source: Space, target: Space, pairs: Iterable[Tuple[PointId, PointId]]
    ) -> "Relation":
        """Build a relation from ``(y, x)`` pairs of point ids."""
        mask = np.zeros((target.size, source.size), dtype=bool)
        for y, x in pairs:
            mask[target.index(y), source.index(x)] = True
        return cls(source, target, mask)

    @classmethod
    def product(cls, source: Space, target: Space) -> "Relation":
        """The full relation ``Y x X``."""
        return cls(source, target, np.ones((target.size, source.size), dtype=bool))

    @property
    def pairs(self) -> FrozenSet[Tuple[PointId, PointId]]:
        return frozenset(self.sorted_pairs())

    def sorted_pairs(self) -> list:
        """Pairs ``(y, x)`` in index order, for deterministic output."""
        return [
            (self.target.points[i], self.source.points[j])
            for i, j in np.argwhere(self.mask)
        ]

    @property
    def is_endogenous(self) -> bool:
        return self.source == self.target

    def domain_mask(self) -> np.ndarray:
        return self.mask.any(axis=0)

    def image_mask(self) -> np.ndarray:
        return self.mask.any(axis=1)

    def domain(self) -> FrozenSet[PointId]:
        """The projection ``π_X(R)``."""
        return self.source.ids_of(self.domain_mask())

    def image(self) -> FrozenSet[PointId]:
        """The projection ``π_Y(R)``."""
        return self.target.ids_of(self.image_mask())

    def restrict(
        self,
        domain: Optional[Iterable[PointId]] = None,
        codomain: Optional[Iterable[PointId]] = None,
    ) -> "Relation":
        """Keep only pairs with source in ``domain`` and target in ``codomain``."""
        mask = self.mask.copy()
        if domain is not None:
            mask &= self.source.mask_of(domain)[None, :]
        if codomain is not None:
            mask &= self.target.mask_of(codomain)[:, None]
        return Relation(self.source, self.target, mask)

    def _check_same_spaces(self, other: "Relation"):
        if self.source != other.source or self.target != other.target:
            raise SpaceMismatchError("Relations live over different spaces")

    def issubset(self, other: "Relation") -> bool:
        self._check_same_spaces(other)
        return bool(np.all(other.mask[self.mask]))

    def union(self, other: "Relation") -> "Relation":
        self._check_same_spaces(other)
        return Relation(self.source, self.target, self.mask | other.mask)

    def intersection(self, other: "Relation") -> "Relation":
        self._check_same_spaces(other)
        return Relation(self.source, self.target, self.mask & other.mask)

    def __len__(self):
        return int(self.mask.sum())

    def __contains__(self, pair):
        y, x = pair
        return bool(self.mask[self.target.index(y), self.source.index(x)])

    def __eq__(self, other):
        if not isinstance(other, Relation):
            return NotImplemented
        return (
            self.source == other.source
            and self.target == other.target
            and np.array_equal(self.mask, other.mask)
        )

    __hash__ = None

    def __repr__(self):
        return f"Relation({len(self)} pairs, {self.target.size}x{self.source.size})"


@dataclass(frozen=True)
class ScaleProfile:
    """A nondecreasing or nonincreasing step function of the scale.

    ``profile(n)`` is the value recorded at the largest breakpoint ``<= n``.
    """

    scales: Tuple[Scale, ...]
    values: Tuple[float, ...]

    def __call__(self, n: Scale) -> float:
        index = bisect_right(self.scales, as_scale(n)) - 1
        return self.values[max(index, 0)]

    @property
    def controlled(self) -> bool:
        """True when every value at a finite scale is finite."""
        return all(
            np.isfinite(v) for s, v in zip(self.scales, self.values) if np.isfinite(s)
        )

    def items(self):
        return list(zip(self.scales, self.values))

    def as_list(self, infinite_label: str = "inf") -> list:
        def encode(value):
            if isinstance(value, float) and np.isinf(value):
                return infinite_label
            return value

        return [[scale_to_json(s), encode(v)] for s, v in self.items()]


def _threshold_profile(
    keys: np.ndarray, values: np.ndarray, breakpoints: Sequence[Scale]
) -> Tuple[Scale, ...]:
    """For each breakpoint ``b``: max of ``values`` over entries with ``key <= b``."""
    keys = keys.ravel()
    values = values.ravel()
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    running = np.maximum.accumulate(values[order]) if len(order) else values
    result = []
    for b in breakpoints:
        count = np.searchsorted(sorted_keys, b, side="right")
        result.append(as_scale(running[count - 1]) if count > 0 else 0)
    return tuple(result)


def rel_compose(S: Relation, R: Relation) -> Relation:
    """Composition ``S ∘ R = {(z, x) | ∃y: (z, y) ∈ S, (y, x) ∈ R}``.

    Raises
    ------
        SpaceMismatchError: If ``R.target`` is not ``S.source``
    """
    if R.target != S.source:
        raise SpaceMismatchError("Cannot compose: R.target differs from S.source")
    product = S.mask.astype(np.float32) @ R.mask.astype(np.float32)
    return Relation(R.source, S.target, product > 0)


def rel_transpose(R: Relation) -> Relation:
    """The transpose ``R^T``; an involution."""
    return Relation(R.target, R.source, R.mask.T)


def _require_endogenous(E: Relation, what: str):
    if not E.is_endogenous:
        raise SpaceMismatchError(f"{what} needs a relation on a single space")


def neighborhood(E: Relation, A: Iterable[PointId]) -> FrozenSet[PointId]:
    """The ``E``-neighbourhood ``E[A] = {x | ∃a ∈ A: (x, a) ∈ E}``."""
    _require_endogenous(E, "neighborhood")
    columns = E.source.indices(A)
    return E.target.ids_of(E.mask[:, columns].any(axis=1))


def entourage_scale(E: Relation) -> Scale:
    """Smallest ``n`` with ``E ⊆ E_n`` (0 for the empty relation)."""
    _require_endogenous(E, "entourage_scale")
    return max_scale(E.source.dist[E.mask])


def _subordination_scale(dist: np.ndarray, a: np.ndarray, b: np.ndarray) -> Scale:
    """Smallest ``n`` with ``A ⊆ E_n[B]`` for boolean masks ``a``, ``b``."""
    if not a.any():
        return 0
    if not b.any():
        return INF
    return as_scale(dist[np.ix_(a, b)].min(axis=1).max())


def subordination(
    A: Iterable[PointId], B: Iterable[PointId], X: Space
) -> Tuple[Scale, Scale]:
    """Witness scales for ``A ≺ B`` and ``B ≺ A``; ``A ≍ B`` iff both are finite."""
    a = X.mask_of(A)
    b = X.mask_of(B)
    return _subordination_scale(X.dist, a, b), _subordination_scale(X.dist, b, a)


def asymptotic_scale(A: Iterable[PointId], B: Iterable[PointId], X: Space) -> Scale:
    """Single witness for ``A ≍ B``: the larger of the two subordination scales."""
    return max(subordination(A, B, X))


def components(X: Space) -> Dict[PointId, PointId]:
    """Label every point with the first point (in point order) of its component."""
    return {p: X.points[i] for p, i in zip(X.points, X.component_index)}


@dataclass(frozen=True, eq=False)
class CoarseMap:
    """A point map ``f: X -> Y`` between finite spaces.

    Args:
        source: Domain space
        target: Codomain space
        images: For each source index, the target index of its image
    """

    source: Space
    target: Space
    images: np.ndarray

    def __post_init__(self):
        images = np.array(self.images, dtype=int)
        if images.shape != (self.source.size,):
            raise InvalidInputError("A point map must be total on the source")
        if len(images) and (images.min() < 0 or images.max() >= self.target.size):
            raise InvalidInputError("Map images fall outside the target space")
        images.setflags(write=False)
        object.__setattr__(self, "images", images)

    @classmethod
    def from_mapping(
        cls,
        source: Space,
        target: Space,
        mapping: Union[Mapping[PointId, PointId], Callable[[PointId], PointId]],
    ) -> "CoarseMap":
        """Build from a dict of point ids or a callable on point ids."""
        lookup = mapping.__getitem__ if isinstance(mapping, Mapping) else mapping
        try:
            images = [target.index(lookup(p)) for p in source.points]
        except KeyError as e:
            raise InvalidInputError(f"Map is not defined at {e.args[0]!r}")
        return cls(source, target, images)

    @classmethod
    def identity(cls, space: Space) -> "CoarseMap":
        return cls(space, space, np.arange(space.size))

    def __call__(self, point: PointId) -> PointId:
        return self.target.points[self.images[self.source.index(point)]]

    def as_dict(self) -> Dict[PointId, PointId]:
        return {p: self.target.points[i] for p, i in zip(self.source.points, self.images)}

    def compose(self, first: "CoarseMap") -> "CoarseMap":
        """``self ∘ first``."""
        if first.target != self.source:
            raise SpaceMismatchError("Cannot compose maps over different spaces")
        return CoarseMap(first.source, self.target, self.images[first.images])

    @property
    def is_bijective(self) -> bool:
        return self.source.size == self.target.size and len(
            np.unique(self.images)
        ) == len(self.images)

    def inverse(self) -> "CoarseMap":
        if not self.is_bijective:
            raise InvalidInputError("Only bijections have an inverse")
        inverse = np.empty_like(self.images)
        inverse[self.images] = np.arange(len(self.images))
        return CoarseMap(self.target, self.source, inverse)

    def graph(self) -> Relation:
        """The graph ``{(f(x), x)}``."""
        mask = np.zeros((self.target.size, self.source.size), dtype=bool)
        mask[self.images, np.arange(self.source.size)] = True
        return Relation(self.source, self.target, mask)

    def __eq__(self, other):
        if not isinstance(other, CoarseMap):
            return NotImplemented
        return (
            self.source == other.source
            and self.target == other.target
            and np.array_equal(self.images, other.images)
        )

    __hash__ = None


def map_expansion(f: CoarseMap) -> ScaleProfile:
    """Expansion profile ``ρ(n) = max d_Y(f(x), f(y))`` over ``d_X(x, y) <= n``.

    ``f`` is a coarse map iff the profile is finite at every finite scale.
    """
    pulled = f.target.dist[np.ix_(f.images, f.images)]
    breakpoints = f.source.breakpoints
    return ScaleProfile(
        breakpoints, _threshold_profile(f.source.dist, pulled, breakpoints)
    )


def closeness(f: CoarseMap, g: CoarseMap) -> Scale:
    """Displacement witness ``max_x d_Y(f(x), g(x))``; ``f ∼ g`` iff finite."""
    if f.source != g.source or f.target != g.target:
        raise SpaceMismatchError("Closeness needs maps with the same domain and codomain")
    return max_scale(f.target.dist[f.images, g.images])


@dataclass(frozen=True)
class RelationReport:
    """Quantitative classification of a relation along the map/relation dictionary.

    ==========================  ===============================================
    map notion                  relation notion
    ==========================  ===============================================
    partial coarse map          controlled relation
    coarse map                  densely defined controlled relation
    partial coarse embedding    controlled relation with controlled transpose
    coarse embedding            densely defined partial coarse embedding
    coarse equivalence          coarsely surjective coarse embedding
    ==========================  ===============================================
    """

    expansion_profile: ScaleProfile
    co_expansion_profile: ScaleProfile
    densely_defined_scale: Scale
    coarsely_surjective_scale: Scale

    @property
    def controlled(self) -> bool:
        return self.expansion_profile.controlled

    @property
    def co_controlled(self) -> bool:
        return self.co_expansion_profile.controlled

    @property
    def densely_defined(self) -> bool:
        return bool(np.isfinite(self.densely_defined_scale))

    @property
    def coarsely_surjective(self) -> bool:
        return bool(np.isfinite(self.coarsely_surjective_scale))

    @property
    def partial_coarse_map(self) -> bool:
        return self.controlled

    @property
    def coarse_map(self) -> bool:
        return self.controlled and self.densely_defined

    @property
    def partial_coarse_embedding(self) -> bool:
        return self.controlled and self.co_controlled

    @property
    def coarse_embedding(self) -> bool:
        return self.partial_coarse_embedding and self.densely_defined

    @property
    def coarse_equivalence(self) -> bool:
        return self.coarse_embedding and self.coarsely_surjective

    def witness_scales(self, probe: Scale = 1, co_probe: Optional[Scale] = None) -> dict:
        """Flat dictionary of witness scales, profiles read at ``probe``."""
        return {
            "expansion": self.expansion_profile(probe),
            "co_expansion": self.co_expansion_profile(
                probe if co_probe is None else co_probe
            ),
            "densely_defined": self.densely_defined_scale,
            "coarsely_surjective": self.coarsely_surjective_scale,
        }

    def as_dict(self) -> dict:
        return {
            "expansion_profile": self.expansion_profile.as_list(),
            "co_expansion_profile": self.co_expansion_profile.as_list("uncontrolled"),
            "densely_defined_scale": scale_to_json(self.densely_defined_scale),
            "coarsely_surjective_scale": scale_to_json(self.coarsely_surjective_scale),
            "coarse_equivalence": self.coarse_equivalence,
            "coarse_embedding": self.coarse_embedding,
            "partial_coarse_embedding": self.partial_coarse_embedding,
            "coarse_map": self.coarse_map,
        }


def _conjugation_reach(mask: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """``m[y1, y2] = min d(x1, x2)`` over ``(y1, x1), (y2, x2)`` in the relation.

    ``(y1, y2) ∈ R ∘ E_n ∘ R^T`` exactly when ``m[y1, y2] <= n``.
    """
    gate = np.where(mask, 0.0, np.inf)
    return min_plus(gate, min_plus(dist, gate.T))


def classify_relation(
    R: Relation,
    domain: Optional[Iterable[PointId]] = None,
    codomain: Optional[Iterable[PointId]] = None,
) -> RelationReport:
    """Classify ``R`` along the map/relation dictionary.

    Args:
        R: The relation from ``X`` to ``Y``
        domain: Points of ``X`` that must be covered (defaults to all of ``X``)
        codomain: Points of ``Y`` that must be reached (defaults to all of ``Y``)

    Returns
    -------
        RelationReport: Expansion of ``R ∘ E_n ∘ R^T``, co-expansion via ``R^T``,
        and density/surjectivity witness scales.
    """
    X, Y = R.source, R.target
    reach = _conjugation_reach(R.mask, X.dist)
    expansion = ScaleProfile(
        X.breakpoints, _threshold_profile(reach, Y.dist, X.breakpoints)
    )
    co_reach = _conjugation_reach(R.mask.T, Y.dist)
    co_expansion = ScaleProfile(
        Y.breakpoints, _threshold_profile(co_reach, X.dist, Y.breakpoints)
    )
    domain_mask = np.ones(X.size, bool) if domain is None else X.mask_of(domain)
    codomain_mask = np.ones(Y.size, bool) if codomain is None else Y.mask_of(codomain)
    return RelationReport(
        expansion_profile=expansion,
        co_expansion_profile=co_expansion,
        densely_defined_scale=_subordination_scale(
            X.dist, domain_mask, R.domain_mask()
        ),
        coarsely_surjective_scale=_subordination_scale(
            Y.dist, codomain_mask, R.image_mask()
        ),
    )


def relation_subordination(R1: Relation, R2: Relation, chunk: int = 256) -> Scale:
    """Smallest ``n`` with ``R1`` inside the ``n``-neighbourhood of ``R2`` in ``Y x X``.

    The product carries the max-metric ``max(d_Y, d_X)``.
    """
    R1._check_same_spaces(R2)
    first = np.argwhere(R1.mask)
    second = np.argwhere(R2.mask)
    if len(first) == 0:
        return 0
    if len(second) == 0:
        return INF
    worst = 0.0
    Y, X = R1.target.dist, R1.source.dist
    for start in range(0, len(first), chunk):
        rows = first[start : start + chunk]
        gap = np.maximum(
            Y[np.ix_(rows[:, 0], second[:, 0])], X[np.ix_(rows[:, 1], second[:, 1])]
        )
        worst = max(worst, gap.min(axis=1).max())
    return as_scale(worst)


def asymptotic_from_inclusion(R1: Relation, R2: Relation) -> Scale:
    """Witness scale for ``R1 ≍ R2`` given ``R1 ≺ R2`` and ``π_X(R2) ≺ π_X(R1)``.

    Raises
    ------
        InvalidInputError: If a precondition fails; the message names the side
    """
    inclusion = relation_subordination(R1, R2)
    if not np.isfinite(inclusion):
        raise InvalidInputError(
            "Precondition fails on the inclusion side: R1 is not subordinate to R2"
        )
    projection = _subordination_scale(
        R1.source.dist, R2.domain_mask(), R1.domain_mask()
    )
    if not np.isfinite(projection):
        raise InvalidInputError(
            "Precondition fails on the projection side: π_X(R2) is not "
            "subordinate to π_X(R1)"
        )
    return max(inclusion, relation_subordination(R2, R1))


def relations_closeness(R1: Relation, R2: Relation) -> Scale:
    """Scale of ``R1 ∘ R2^T``: how far apart the two relations send common points."""
    R1._check_same_spaces(R2)
    return entourage_scale(rel_compose(R1, rel_transpose(R2)))


def relation_closeness(
    R: Relation, f: CoarseMap, domain: Optional[Iterable[PointId]] = None
) -> Scale:
    """Distance of a relation from the graph of ``f``.

    ``INF`` when ``R`` is undefined at some point of ``domain`` (all of the source by
    default); otherwise ``max d_Y(y, f(x))`` over ``(y, x) ∈ R``.
    """
    required = np.ones(R.source.size, bool) if domain is None else R.source.mask_of(domain)
    if np.any(required & ~R.domain_mask()):
        return INF
    return relations_closeness(R, f.graph())
