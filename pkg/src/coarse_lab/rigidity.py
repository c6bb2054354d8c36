"""Approximate relations and the extraction of coarse embeddings from unitaries.

The approximate relation ``f^T_{δ,F,E}`` collects the pairs of measurable sets
``B x A`` on which ``T`` has norm above ``δ``. For a unitary ``U`` conjugating
approximable operators into approximable operators, ``f^U`` is a coarse
equivalence with inverse ``f^{U*}``; :func:`extract_embedding` walks a parameter
schedule and certifies this at finite scale.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .coarse_modules import LFCMSpace, Module, components_of, domain, domains_asymptotic
from .coarse_space import (
    Relation,
    RelationReport,
    classify_relation,
    rel_transpose,
    relation_subordination,
)
from .config import NORM_MAX_ITER, NORM_TOL, ExtractionThresholds
from .operators import (
    Operator,
    _matrix_norm,
    block_norms,
    inverse,
    is_unitary,
    propagation,
)
from .utils import (
    BoundViolation,
    InvalidInputError,
    Scale,
    SpaceMismatchError,
    as_scale,
    scale_to_json,
)

logger = logging.getLogger(__name__)

MODES = ("blocks", "windows")


@dataclass(frozen=True)
class ApproxParams:
    """Parameters ``(δ, F, E)`` of an approximate relation.

    ``F_scale`` bounds target sets and ``E_scale`` source sets. In ``blocks``
    mode only single partition blocks are tested; ``windows`` mode also tests the
    union of blocks within ``F_scale`` (resp. ``E_scale``) of each block.
    """

    delta: float
    F_scale: Scale
    E_scale: Scale
    mode: str = "blocks"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "F_scale", as_scale(self.F_scale))
        object.__setattr__(self, "E_scale", as_scale(self.E_scale))

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "F_scale": scale_to_json(self.F_scale),
            "E_scale": scale_to_json(self.E_scale),
            "mode": self.mode,
        }


def parameter_join(p1: ApproxParams, p2: ApproxParams) -> ApproxParams:
    """Smallest δ and largest scales: the joined relation contains both."""
    if p1.mode != p2.mode:
        raise InvalidInputError("Cannot join parameters of different modes")
    return ApproxParams(
        min(p1.delta, p2.delta),
        max(p1.F_scale, p2.F_scale),
        max(p1.E_scale, p2.E_scale),
        p1.mode,
    )


def _windows(space: LFCMSpace, radius: Scale) -> np.ndarray:
    """``windows[b, b']`` marks the blocks ``b'`` within ``radius`` of ``b``."""
    return space.block_scale <= radius


def _block_relation(T: Operator, p: ApproxParams, norms: np.ndarray) -> np.ndarray:
    live = norms > p.delta
    if p.mode == "blocks":
        return live
    target_windows = _windows(T.target.space, p.F_scale)
    source_windows = _windows(T.source.space, p.E_scale)
    result = np.zeros_like(live)
    squared = np.abs(T.matrix) ** 2
    for b in range(live.shape[0]):
        rows = T.target.coord_mask(np.flatnonzero(target_windows[b]))
        for a in range(live.shape[1]):
            B, A = target_windows[b], source_windows[a]
            if live[np.ix_(B, A)].any():
                result[np.ix_(B, A)] = True
                continue
            cols = T.source.coord_mask(np.flatnonzero(A))
            # Frobenius bounds the operator norm from above
            if np.sqrt(squared[np.ix_(rows, cols)].sum()) <= p.delta:
                continue
            if _matrix_norm(T.matrix[np.ix_(rows, cols)], NORM_TOL, NORM_MAX_ITER) > p.delta:
                result[np.ix_(B, A)] = True
    return result


def _check_scales(T: Operator, p: ApproxParams):
    disc_Y = T.target.space.disc_gauge_scale
    disc_X = T.source.space.disc_gauge_scale
    if p.F_scale < disc_Y or p.E_scale < disc_X:
        raise InvalidInputError(
            f"Scales ({p.F_scale}, {p.E_scale}) are below the discreteness gauges "
            f"({disc_Y}, {disc_X})"
        )


def _approximate_relation(
    T: Operator, p: ApproxParams, norms: Optional[np.ndarray] = None
) -> Relation:
    _check_scales(T, p)
    if norms is None:
        norms = block_norms(T)
    live = _block_relation(T, p, norms)
    Y, X = T.target.space, T.source.space
    return Relation(X.base, Y.base, live[np.ix_(Y.block_of_point, X.block_of_point)])


def approximate_relation(T: Operator, p: ApproxParams) -> Relation:
    """``f^T_{δ,F,E}``: the union of ``B x A`` with ``‖1_B T 1_A‖ > δ``.

    Raises
    ------
        InvalidInputError: If a scale is below the discreteness gauge of its side
    """
    return _approximate_relation(T, p)


@dataclass(frozen=True)
class CentralUnitary:
    """A unimodular scalar per coarsely connected component.

    Args:
        space: The LFCM space
        scalars: Component label (first point of the component) to scalar
    """

    space: LFCMSpace
    scalars: Mapping

    def __post_init__(self):
        labels = set(components_of(self.space).values())
        missing = labels - set(self.scalars)
        if missing:
            raise InvalidInputError(f"No scalar for component(s) {sorted(missing, key=repr)}")
        extra = set(self.scalars) - labels
        if extra:
            raise InvalidInputError(f"Unknown component label(s) {sorted(extra, key=repr)}")
        scalars = {k: complex(v) for k, v in self.scalars.items()}
        for label, value in scalars.items():
            if abs(abs(value) - 1) > 1e-12:
                raise InvalidInputError(f"Scalar for component {label!r} is not unimodular")
        object.__setattr__(self, "scalars", scalars)

    @classmethod
    def identity(cls, space: LFCMSpace) -> "CentralUnitary":
        return cls(space, {label: 1 for label in set(components_of(space).values())})

    def diagonal(self, C: Module) -> np.ndarray:
        if C.space != self.space:
            raise SpaceMismatchError("Central unitary lives over a different space")
        labels = components_of(self.space)
        per_block = np.array(
            [self.scalars[labels[b]] for b in range(self.space.n_blocks)], dtype=complex
        )
        return per_block[C.block_of] if C.dim else np.zeros(0, dtype=complex)

    def operator(self, C: Module) -> Operator:
        """The diagonal operator of this central unitary on ``C``."""
        return Operator(C, C, np.diag(self.diagonal(C)))

    def conj(self) -> "CentralUnitary":
        return CentralUnitary(self.space, {k: v.conjugate() for k, v in self.scalars.items()})

    def __matmul__(self, other: "CentralUnitary") -> "CentralUnitary":
        if other.space != self.space:
            raise SpaceMismatchError("Central unitaries over different spaces")
        return CentralUnitary(
            self.space, {k: v * other.scalars[k] for k, v in self.scalars.items()}
        )


def make_central_unitary(space: LFCMSpace, phases: Mapping) -> CentralUnitary:
    """Central unitary multiplying component ``k`` by ``exp(i θ_k)``."""
    return CentralUnitary(space, {k: np.exp(1j * theta) for k, theta in phases.items()})


def central_invariance_check(
    T: Operator,
    u: Union[CentralUnitary, Operator],
    v: Union[CentralUnitary, Operator],
    p: ApproxParams,
) -> bool:
    """Whether ``f^{vTu} = f^T``.

    Central unitaries always pass. ``u`` and ``v`` may also be arbitrary unitaries
    on ``T.source`` and ``T.target``; every unitary that commutes with the block
    projections passes too, and one that moves coordinates between blocks
    generally does not.
    """
    U = u.operator(T.source) if isinstance(u, CentralUnitary) else u
    V = v.operator(T.target) if isinstance(v, CentralUnitary) else v
    if U.target.space != T.source.space or V.source.space != T.target.space:
        raise SpaceMismatchError("u must act on the source space and v on the target")
    twisted = V @ T @ U
    return approximate_relation(twisted, p) == approximate_relation(T, p)


def default_schedule(X: LFCMSpace, Y: LFCMSpace) -> List[Tuple[Scale, Scale]]:
    """``(F, E)`` steps: the discreteness gauges, then doubling up to the diameter.

    :func:`extract_embedding` falls back to this schedule when given none or an
    empty one.
    """
    disc_Y, disc_X = Y.disc_gauge_scale, X.disc_gauge_scale
    schedule = [(disc_Y, disc_X)]
    limit = max(X.base.diameter, Y.base.diameter)
    d = max(1, disc_Y, disc_X)
    while True:
        step = (max(d, disc_Y), max(d, disc_X))
        if step != schedule[-1]:
            schedule.append(step)
        if d >= limit:
            return schedule
        d *= 2


def _check_schedule(schedule: Sequence[Tuple[Scale, Scale]]) -> List[Tuple[Scale, Scale]]:
    steps = [(as_scale(F), as_scale(E)) for F, E in schedule]
    for (F0, E0), (F1, E1) in zip(steps, steps[1:]):
        if F1 < F0 or E1 < E0:
            raise InvalidInputError("Extraction schedule scales must be nondecreasing")
    return steps


@dataclass
class StepOutcome:
    index: int
    params: ApproxParams
    relation: Relation
    inverse: Relation
    report: RelationReport
    inverse_radius: Scale
    failures: List[str]

    def diagnostic(self, probe: Scale, co_probe: Scale) -> dict:
        witnesses = self.report.witness_scales(probe, co_probe)
        witnesses["inverse_radius"] = self.inverse_radius
        return {
            "step": self.index,
            **self.params.as_dict(),
            "relation_size": len(self.relation),
            "witness_scales": {k: scale_to_json(v) for k, v in witnesses.items()},
            "verdict": "coarse_equivalence" if not self.failures else "rejected",
            "failures": list(self.failures),
        }


@dataclass
class ExtractionResult:
    """Outcome of :func:`extract_embedding`.

    ``relation`` is the accepted ``f^U`` or, when every step was rejected, the
    attempt with the fewest failures.
    """

    relation: Relation
    report: RelationReport
    inverse: Relation
    inverse_radius: Scale
    success: bool
    accepted_step: Optional[int]
    failures: List[str]
    diagnostics: List[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "success": self.success,
            "accepted_step": self.accepted_step,
            "relation_size": len(self.relation),
            "inverse_radius": scale_to_json(self.inverse_radius),
            "failures": list(self.failures),
            "report": self.report.as_dict(),
            "diagnostics": self.diagnostics,
        }


def _failures(
    report: RelationReport,
    inverse_radius: Scale,
    thresholds: ExtractionThresholds,
    probe: Scale,
    co_probe: Scale,
) -> List[str]:
    checks = [
        ("expansion", report.expansion_profile(probe), thresholds.max_expansion),
        ("co_expansion", report.co_expansion_profile(co_probe), thresholds.max_co_expansion),
        ("densely_defined", report.densely_defined_scale, thresholds.max_density),
        (
            "coarsely_surjective",
            report.coarsely_surjective_scale,
            thresholds.max_surjectivity,
        ),
        ("inverse_radius", inverse_radius, thresholds.max_inverse_radius),
    ]
    return [
        f"{name} witness {scale_to_json(value)} exceeds {limit}"
        for name, value, limit in checks
        if value > limit
    ]


def extract_embedding(
    U: Operator,
    delta: float = 0.1,
    schedule: Optional[Sequence[Tuple[Scale, Scale]]] = None,
    mode: str = "blocks",
    thresholds: Optional[ExtractionThresholds] = None,
    threads: int = 1,
) -> ExtractionResult:
    """Recover a coarse equivalence ``dom_1(C_X) -> dom_1(C_Y)`` from a unitary.

    Each schedule step ``(F, E)`` computes ``f^U_{δ,F,E}`` and
    ``f^{U*}_{δ,E,F}``, both restricted to the faithfulness domains, classifies
    the first and measures how far the second strays from the transpose of the
    first. The first step whose witnesses all stay within ``thresholds`` is
    accepted. Steps are independent; with ``threads > 1`` they are evaluated
    concurrently and merged in step order.

    Args:
        U: Unitary ``C_X -> C_Y``
        delta: Norm threshold in ``(0, 1)``
        schedule: Nondecreasing ``(F_scale, E_scale)`` steps. ``None`` and an empty
            sequence both select :func:`default_schedule`
        mode: ``blocks`` or ``windows``
        thresholds: Largest admissible witness scales
        threads: Worker threads

    Returns
    -------
        ExtractionResult: The accepted relation or the best attempt, with
        per-step diagnostics

    Raises
    ------
        InvalidInputError: If ``U`` is not unitary or the schedule is invalid
    """
    if not is_unitary(U):
        raise InvalidInputError("extract_embedding needs a unitary operator")
    thresholds = thresholds or ExtractionThresholds()
    X, Y = U.source.space, U.target.space
    steps = _check_schedule(schedule or default_schedule(X, Y))
    source_points = X.points_of(domain(U.source, 1).blocks)
    target_points = Y.points_of(domain(U.target, 1).blocks)
    probe = max(thresholds.expansion_probe, X.disc_gauge_scale)
    co_probe = max(thresholds.expansion_probe, Y.disc_gauge_scale)

    adjoint = U.adjoint
    norms = block_norms(U)
    adjoint_norms = norms.T

    def evaluate(index: int) -> StepOutcome:
        F, E = steps[index]
        params = ApproxParams(delta, F, E, mode)
        relation = _approximate_relation(U, params, norms).restrict(
            source_points, target_points
        )
        inverse_relation = _approximate_relation(
            adjoint, ApproxParams(delta, E, F, mode), adjoint_norms
        ).restrict(target_points, source_points)
        report = classify_relation(relation, source_points, target_points)
        radius = relation_subordination(inverse_relation, rel_transpose(relation))
        failures = _failures(report, radius, thresholds, probe, co_probe)
        logger.info(
            f"Extraction step {index} (F={F}, E={E}, mode={mode}): "
            f"{'accepted' if not failures else f'{len(failures)} failure(s)'}"
        )
        return StepOutcome(index, params, relation, inverse_relation, report, radius, failures)

    outcomes: List[StepOutcome] = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(evaluate, range(len(steps))))
    else:
        for index in range(len(steps)):
            outcomes.append(evaluate(index))
            if not outcomes[-1].failures:
                break

    diagnostics = [o.diagnostic(probe, co_probe) for o in outcomes]
    accepted = next((o for o in outcomes if not o.failures), None)
    chosen = accepted or min(outcomes, key=lambda o: (len(o.failures), o.index))
    if accepted is None:
        logger.warning(
            f"Extraction schedule exhausted after {len(steps)} step(s); "
            f"best attempt is step {chosen.index}"
        )
    return ExtractionResult(
        relation=chosen.relation,
        report=chosen.report,
        inverse=chosen.inverse,
        inverse_radius=chosen.inverse_radius,
        success=accepted is not None,
        accepted_step=accepted.index if accepted else None,
        failures=list(chosen.failures),
        diagnostics=diagnostics,
    )


@dataclass
class DomainInvarianceResult:
    """Per-``κ`` asymptotic witnesses between the domains of source and target.

    The bound is guaranteed for ``κ = 1``. For finite ``κ > 1`` domains depend on
    the block gauge, so larger ``κ`` are reported but only asserted when asked.
    """

    witnesses: Dict[int, Scale]
    bound: Scale
    condition: float
    asserted: Tuple[int, ...]

    def within_bound(self, kappa: int) -> bool:
        return self.witnesses[kappa] <= self.bound

    def as_dict(self) -> dict:
        return {
            "witnesses": {str(k): scale_to_json(v) for k, v in self.witnesses.items()},
            "bound": scale_to_json(self.bound),
            "condition": self.condition,
            "asserted": list(self.asserted),
        }


def domain_invariance_check(
    t: Operator, kappas: Iterable[int] = (1, 2, 3), asserted: Iterable[int] = (1,)
) -> DomainInvarianceResult:
    """Compare ``dom_κ`` of source and target of an invertible controlled operator.

    Raises
    ------
        NumericalError: If ``t`` is numerically singular
        BoundViolation: If an asserted ``κ`` exceeds
            ``max(prop(t), prop(t⁻¹)) + 2·disc``
    """
    if not t.is_endogenous:
        raise SpaceMismatchError("domain_invariance_check needs an endogenous operator")
    t_inverse, condition = inverse(t)
    disc = t.source.space.disc_gauge_scale
    bound = max(propagation(t), propagation(t_inverse)) + 2 * disc
    asserted = tuple(asserted)
    witnesses = {}
    for kappa in kappas:
        witness = domains_asymptotic(t.source, t.target, kappa)
        witnesses[kappa] = witness
        if kappa in asserted and witness > bound:
            raise BoundViolation(
                f"{kappa}-domain witness {scale_to_json(witness)} exceeds bound "
                f"{scale_to_json(bound)}",
                observed=witness,
                bound=bound,
            )
    logger.debug(f"Domain witnesses {witnesses} against bound {bound}")
    return DomainInvarianceResult(witnesses, bound, condition, asserted)
