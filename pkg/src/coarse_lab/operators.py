"""Block-structured bounded operators between coarse modules.

Supports, propagation and approximability all reduce to the matrix of block
norms ``‖1_B t 1_A‖``; :func:`block_norms` is the shared primitive.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from numbers import Number
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .coarse_modules import Module
from .coarse_space import Relation, ScaleProfile, _subordination_scale
from .config import NORM_MAX_ITER, NORM_TOL, SINGULAR_CONDITION, SUPPORT_RTOL, UNITARY_TOL
from .utils import (
    INF,
    InvalidInputError,
    NumericalError,
    Scale,
    SpaceMismatchError,
    as_scale,
    max_scale,
    rng_for,
    spawn_seeds,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Operator:
    """A bounded operator ``C_X -> C_Y`` stored as a dense complex matrix.

    Args:
        source: Domain module
        target: Codomain module
        matrix: Array of shape ``(target.dim, source.dim)``
    """

    source: Module
    target: Module
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape != (self.target.dim, self.source.dim):
            raise InvalidInputError(
                f"Matrix has shape {matrix.shape}, expected "
                f"{(self.target.dim, self.source.dim)}"
            )
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, C: Module) -> "Operator":
        return cls(C, C, np.eye(C.dim, dtype=complex))

    @classmethod
    def zero(cls, C: Module, D: Module) -> "Operator":
        return cls(C, D, np.zeros((D.dim, C.dim), dtype=complex))

    @cached_property
    def norm(self) -> float:
        return operator_norm(self)

    @property
    def adjoint(self) -> "Operator":
        return Operator(self.target, self.source, self.matrix.conj().T)

    @property
    def is_endogenous(self) -> bool:
        return self.source.space == self.target.space

    def __matmul__(self, other: "Operator") -> "Operator":
        if not isinstance(other, Operator):
            return NotImplemented
        if other.target != self.source:
            raise SpaceMismatchError("Cannot compose: modules do not match")
        return Operator(other.source, self.target, self.matrix @ other.matrix)

    def _check_parallel(self, other: "Operator"):
        if self.source != other.source or self.target != other.target:
            raise SpaceMismatchError("Operators act between different modules")

    def __add__(self, other: "Operator") -> "Operator":
        if not isinstance(other, Operator):
            return NotImplemented
        self._check_parallel(other)
        return Operator(self.source, self.target, self.matrix + other.matrix)

    def __sub__(self, other: "Operator") -> "Operator":
        if not isinstance(other, Operator):
            return NotImplemented
        self._check_parallel(other)
        return Operator(self.source, self.target, self.matrix - other.matrix)

    def __neg__(self) -> "Operator":
        return Operator(self.source, self.target, -self.matrix)

    def __mul__(self, scalar: Number) -> "Operator":
        if not isinstance(scalar, Number):
            return NotImplemented
        return Operator(self.source, self.target, scalar * self.matrix)

    __rmul__ = __mul__

    def allclose(self, other: "Operator", atol: float = 1e-12) -> bool:
        self._check_parallel(other)
        return bool(np.allclose(self.matrix, other.matrix, rtol=0, atol=atol))

    def __eq__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        return (
            self.source == other.source
            and self.target == other.target
            and np.array_equal(self.matrix, other.matrix)
        )

    __hash__ = None

    def __repr__(self):
        return f"Operator({self.target.dim}x{self.source.dim})"


def identity(C: Module) -> Operator:
    return Operator.identity(C)


def zero(C: Module, D: Module) -> Operator:
    return Operator.zero(C, D)


def op_arith(kind: str, *args) -> Operator:
    """Dispatch ``compose`` (s, t), ``add`` (t1, t2), ``adjoint`` (t) and
    ``scalar`` (c, t)."""
    if kind == "compose":
        s, t = args
        return s @ t
    if kind == "add":
        first, second = args
        return first + second
    if kind == "adjoint":
        (t,) = args
        return t.adjoint
    if kind == "scalar":
        c, t = args
        return c * t
    raise InvalidInputError(f"Unknown operation kind: {kind}")


def _matrix_norm(matrix: np.ndarray, tol: float, max_iter: int) -> float:
    rows, cols = matrix.shape
    if rows == 0 or cols == 0 or not np.any(matrix):
        return 0.0
    if rows == 1 or cols == 1:
        return float(np.linalg.norm(matrix))
    # Gram matrix on the smaller side
    gram = matrix @ matrix.conj().T if rows <= cols else matrix.conj().T @ matrix
    if gram.shape[0] <= 3:
        return float(np.sqrt(max(np.linalg.eigvalsh(gram)[-1], 0.0)))

    # ARPACK tol is the relative accuracy of the Ritz value
    start = rng_for(0).standard_normal(gram.shape[0]).astype(gram.dtype)
    try:
        top = eigsh(
            gram, k=1, which="LM", v0=start, tol=tol, maxiter=max_iter, return_eigenvectors=False
        )
    except ArpackNoConvergence:
        logger.warning(f"Lanczos did not converge in {max_iter} restarts, falling back to SVD")
        return float(np.linalg.norm(matrix, 2))
    return float(np.sqrt(max(float(np.real(top[0])), 0.0)))


def operator_norm(
    t: Union[Operator, np.ndarray], tol: float = NORM_TOL, max_iter: int = NORM_MAX_ITER
) -> float:
    """Largest singular value to relative accuracy ``tol``.

    Implicitly restarted Lanczos on the Gram matrix from a fixed start vector,
    with exact closed forms when the smaller dimension is at most 3 and an SVD
    fallback when the restart cap is reached. Deterministic across runs.
    """
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    matrix = t.matrix if isinstance(t, Operator) else np.asarray(t, dtype=complex)
    return _matrix_norm(matrix, tol, max_iter)


def _coordinate_membership(C: Module) -> np.ndarray:
    member = np.zeros((C.space.n_blocks, C.dim))
    member[C.block_of, np.arange(C.dim)] = 1.0
    return member


def block_norms(t: Operator) -> np.ndarray:
    """Matrix of ``‖1_B t 1_A‖`` with rows indexed by target blocks."""
    S, T = t.source, t.target
    squared = np.abs(t.matrix) ** 2
    norms = np.sqrt(_coordinate_membership(T) @ squared @ _coordinate_membership(S).T)
    # Frobenius is exact for row and column blocks only
    for b in np.flatnonzero(T.dims >= 2):
        for a in np.flatnonzero(S.dims >= 2):
            if norms[b, a] > 0:
                block = t.matrix[np.ix_(T.block_coords[b], S.block_coords[a])]
                norms[b, a] = _matrix_norm(block, NORM_TOL, NORM_MAX_ITER)
    return norms


def _default_tol(t: Operator, tol: Optional[float]) -> float:
    if tol is None:
        return SUPPORT_RTOL * t.norm
    if tol < 0:
        raise InvalidInputError("tol must be nonnegative")
    return tol


def support(t: Operator, tol: Optional[float] = None) -> Relation:
    """Union of the block rectangles ``B x A`` with ``‖1_B t 1_A‖ > tol``.

    ``tol`` defaults to ``1e-12 * ‖t‖``.
    """
    live = block_norms(t) > _default_tol(t, tol)
    Y, X = t.target.space, t.source.space
    mask = live[np.ix_(Y.block_of_point, X.block_of_point)]
    return Relation(X.base, Y.base, mask)


def _require_same_space(t: Operator, what: str):
    if not t.is_endogenous:
        raise SpaceMismatchError(
            f"{what} needs source and target over the same LFCM space; "
            "use classify_relation on the support instead"
        )


def propagation(t: Operator, tol: Optional[float] = None) -> Scale:
    """Scale of the support."""
    _require_same_space(t, "propagation")
    live = block_norms(t) > _default_tol(t, tol)
    return max_scale(t.source.space.block_scale[live])


def is_controlled(t: Operator, n: Scale, tol: Optional[float] = None) -> bool:
    return propagation(t, tol) <= as_scale(n)


def _band_mask(t: Operator, n: Scale) -> np.ndarray:
    scale = t.source.space.block_scale
    return scale[np.ix_(t.target.block_of, t.source.block_of)] <= as_scale(n)


def truncate(t: Operator, n: Scale) -> Operator:
    """Zero out every block pair farther apart than ``n``."""
    _require_same_space(t, "truncate")
    return Operator(t.source, t.target, np.where(_band_mask(t, n), t.matrix, 0))


class ApproxProfile(NamedTuple):
    upper: ScaleProfile
    lower: ScaleProfile


def _profile_scales(t: Operator) -> Tuple[Scale, ...]:
    scale = t.source.space.block_scale
    finite = np.unique(scale[np.isfinite(scale)])
    scales = [0] + [int(s) for s in finite if s > 0]
    if not np.isfinite(scale).all():
        scales.append(INF)
    return tuple(scales)


def approx_profile(t: Operator) -> ApproxProfile:
    """Distance from the band operators, bracketed.

    ``upper(n) = ‖t - truncate(t, n)‖`` certifies approximability; ``lower(n)``
    is the largest block norm beyond ``n``, which every propagation-``n``
    operator leaves untouched, so ``‖t - s‖ >= lower(n)`` for all such ``s``.
    """
    _require_same_space(t, "approx_profile")
    scales = _profile_scales(t)
    norms = block_norms(t)
    block_scale = t.source.space.block_scale
    upper, lower = [], []
    for n in scales:
        off_band = norms[block_scale > n]
        low = float(off_band.max()) if off_band.size else 0.0
        residual = np.where(_band_mask(t, n), 0, t.matrix)
        # the norm dominates every compressed block
        upper.append(max(_matrix_norm(residual, NORM_TOL, NORM_MAX_ITER), low))
        lower.append(low)
    return ApproxProfile(ScaleProfile(scales, tuple(upper)), ScaleProfile(scales, tuple(lower)))


def is_approximable(t: Operator, eps: float, n: Scale) -> bool:
    """Whether ``t`` is within ``eps`` of an operator of propagation ``<= n``."""
    _require_same_space(t, "is_approximable")
    residual = np.where(_band_mask(t, n), 0, t.matrix)
    return _matrix_norm(residual, NORM_TOL, NORM_MAX_ITER) <= eps


def is_coarsely_full(t: Operator, tol: Optional[float] = None) -> Tuple[bool, Scale]:
    """Asymptotic witness between the image of the support and ``dom_1`` of the
    target; the operator is coarsely full when it is finite."""
    image = support(t, tol).image_mask()
    Y = t.target.space
    faithful = (t.target.dims >= 1)[Y.block_of_point]
    dist = Y.base.dist
    witness = max(
        _subordination_scale(dist, image, faithful),
        _subordination_scale(dist, faithful, image),
    )
    return bool(np.isfinite(witness)), witness


def is_unitary(t: Operator, tol: float = UNITARY_TOL) -> bool:
    if t.source.dim != t.target.dim:
        return False
    eye = np.eye(t.source.dim)
    m = t.matrix
    if m.size == 0:
        return True
    return bool(
        np.abs(m.conj().T @ m - eye).max() <= tol and np.abs(m @ m.conj().T - eye).max() <= tol
    )


def unitarity_defect(t: Operator) -> float:
    """Largest entry of ``t* t - 1``."""
    if t.matrix.size == 0:
        return 0.0
    return float(np.abs(t.matrix.conj().T @ t.matrix - np.eye(t.source.dim)).max())


def inverse(t: Operator) -> Tuple[Operator, float]:
    """Inverse with its condition number.

    Raises
    ------
        NumericalError: If ``t`` is not square or its condition exceeds 1e12
    """
    if t.source.dim != t.target.dim:
        raise NumericalError("Only square operators are invertible")
    if t.source.dim == 0:
        return Operator(t.target, t.source, t.matrix.T), 1.0
    condition = float(np.linalg.cond(t.matrix))
    if not np.isfinite(condition) or condition > SINGULAR_CONDITION:
        raise NumericalError(f"Operator is numerically singular (condition {condition:.3g})")
    return Operator(t.target, t.source, np.linalg.inv(t.matrix)), condition


def haar_unitary(size: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR with the phase of ``R`` divided out."""
    sample = (rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))) / np.sqrt(2)
    q, r = np.linalg.qr(sample)
    return q @ np.diag(np.exp(-1j * np.angle(np.diag(r))))


def random_controlled_unitary(C: Module, n: Scale, seed) -> Operator:
    """Random unitary of propagation ``<= max(n, disc_gauge_scale)``.

    Random phases, Haar unitaries inside blocks, then one layer of Haar 2x2
    rotations on a random matching of coordinate pairs whose blocks are at
    most ``n`` apart. Deterministic per seed.
    """
    n = as_scale(n)
    rng = rng_for(seed)
    matrix = np.diag(np.exp(2j * np.pi * rng.random(C.dim)))
    for coords in C.block_coords:
        if len(coords) >= 2:
            matrix[np.ix_(coords, coords)] = haar_unitary(len(coords), rng) @ matrix[
                np.ix_(coords, coords)
            ]

    allowed = C.space.block_scale[np.ix_(C.block_of, C.block_of)] <= n
    np.fill_diagonal(allowed, False)
    rotation = np.eye(C.dim, dtype=complex)
    matched = np.zeros(C.dim, dtype=bool)
    for i in rng.permutation(C.dim):
        if matched[i]:
            continue
        partners = np.flatnonzero(allowed[i] & ~matched)
        if not len(partners):
            continue
        j = rng.choice(partners)
        matched[[i, j]] = True
        rotation[np.ix_([i, j], [i, j])] = haar_unitary(2, rng)
    return Operator(C, C, rotation @ matrix)


def random_band_operator(C: Module, n: Scale, seed, density: float = 1.0) -> Operator:
    """Complex Gaussian operator on ``C`` supported on blocks at most ``n`` apart."""
    if not 0 < density <= 1:
        raise InvalidInputError(f"density must lie in (0, 1], got {density}")
    rng = rng_for(seed)
    shape = (C.dim, C.dim)
    values = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    keep = C.space.block_scale[np.ix_(C.block_of, C.block_of)] <= as_scale(n)
    if density < 1:
        keep &= rng.random(shape) < density
    return Operator(C, C, np.where(keep, values, 0))


def random_contraction(C: Module, n: Scale, seed) -> Operator:
    """A band operator of propagation ``<= n`` scaled to norm one."""
    t = random_band_operator(C, n, seed)
    norm = t.norm
    return t if norm == 0 else Operator(C, C, t.matrix / norm)


def coarse_like_profile(
    U: Operator, n_max: Scale, samples: int = 8, eps: float = 1e-6, seed: int = 0
) -> ScaleProfile:
    """Empirical profile ``n -> m``: conjugating sampled propagation-``n``
    contractions by ``U`` lands within ``eps`` of propagation ``m``.

    Samples use independent child seeds, so the profile is reproducible.
    The result measures coarse-likeness; it never certifies it.
    """
    X = U.source.space
    if U.target.space.n_blocks == 0 or X.n_blocks == 0:
        return ScaleProfile((0,), (0,))
    n_max = as_scale(n_max)
    scales = tuple(s for s in X.base.breakpoints if s <= n_max)
    seeds = spawn_seeds(seed, len(scales) * samples)
    values = []
    for k, n in enumerate(scales):
        worst = 0
        for seq in seeds[k * samples : (k + 1) * samples]:
            t = random_contraction(U.source, n, seq)
            conjugated = U @ t @ U.adjoint
            upper = approx_profile(conjugated).upper
            reached = [m for m, value in upper.items() if value <= eps]
            worst = max(worst, reached[0] if reached else INF)
        values.append(worst)
        logger.debug(f"coarse-like profile at n={n}: m={worst}")
    return ScaleProfile(scales, tuple(values))
