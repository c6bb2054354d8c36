"""Functors on the approximable category in conjugation normal form.

A full and faithful ``*``-functor is, up to central unitaries, an object map
together with a unitary ``U(C): C -> F(C)`` per object acting on morphisms by
``F(t) = U(D) t U(C)*``. :class:`FunctorSpec` stores exactly that.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .coarse_modules import MeasurableMap, Module, direct_sum, pushforward
from .coarse_space import entourage_scale
from .config import UNITARY_TOL
from .operators import Operator, support, unitarity_defect
from .rigidity import CentralUnitary
from .utils import (
    BoundViolation,
    InvalidInputError,
    Scale,
    SpaceMismatchError,
    max_scale,
)

logger = logging.getLogger(__name__)

ObjectMap = Union[Mapping[Module, Module], Callable[[Module], Module]]
UnitaryMap = Union[Mapping[Module, Operator], Callable[[Module], Operator]]


def _as_callable(mapping, what: str):
    if callable(mapping) and not isinstance(mapping, Mapping):
        return mapping

    def lookup(C):
        try:
            return mapping[C]
        except KeyError:
            raise InvalidInputError(f"{what} is not defined on {C!r}")

    return lookup


def _check_unitary(U: Operator, C: Module, image: Module) -> Operator:
    if U.source != C or U.target != image:
        raise SpaceMismatchError("Unitary does not map the object to its image")
    defect = unitarity_defect(U)
    if U.source.dim != U.target.dim or defect > UNITARY_TOL:
        raise InvalidInputError(f"Not a unitary (defect {defect:.3g})")
    return U


@dataclass(frozen=True)
class FunctorSpec:
    """A ``*``-functor ``F(t) = U(D) t U(C)*``.

    Args:
        object_map: Module to image module
        unitary: Module ``C`` to a unitary ``C -> object_map(C)``
        name: Label used in reports
    """

    object_map: Callable[[Module], Module]
    unitary: Callable[[Module], Operator]
    name: str = "functor"

    def obj(self, C: Module) -> Module:
        return self.object_map(C)

    def unitary_for(self, C: Module) -> Operator:
        return _check_unitary(self.unitary(C), C, self.obj(C))

    def apply(self, t: Operator) -> Operator:
        return self.unitary_for(t.target) @ t @ self.unitary_for(t.source).adjoint

    __call__ = apply


def apply(F: FunctorSpec, t: Operator) -> Operator:
    return F.apply(t)


def _identity_between(C: Module, D: Module) -> Operator:
    return Operator(C, D, np.eye(C.dim, dtype=complex))


def pushforward_functor(f: MeasurableMap) -> FunctorSpec:
    """``f_*``: relabel blocks, act on morphisms by the identity matrix."""
    return FunctorSpec(
        object_map=lambda C: pushforward(f, C),
        unitary=lambda C: _identity_between(C, pushforward(f, C)),
        name="pushforward",
    )


def functor_from_unitaries(
    object_map: ObjectMap, unitaries: UnitaryMap, name: str = "conjugation"
) -> FunctorSpec:
    """Functor from a family of unitaries; dict inputs are validated eagerly.

    Raises
    ------
        InvalidInputError: If some unitary has defect above ``1e-10``
    """
    objects = _as_callable(object_map, "Object map")
    unitary = _as_callable(unitaries, "Unitary family")
    if isinstance(unitaries, Mapping):
        for C, U in unitaries.items():
            _check_unitary(U, C, objects(C))
    return FunctorSpec(objects, unitary, name)


def identity_functor() -> FunctorSpec:
    return FunctorSpec(lambda C: C, Operator.identity, name="identity")


def compose_functors(G: FunctorSpec, F: FunctorSpec) -> FunctorSpec:
    """``G ∘ F`` with unitaries ``U_G(F(C)) U_F(C)``."""
    return FunctorSpec(
        object_map=lambda C: G.obj(F.obj(C)),
        unitary=lambda C: G.unitary_for(F.obj(C)) @ F.unitary_for(C),
        name=f"{G.name}∘{F.name}",
    )


def oplus(s: Operator, t: Operator) -> Operator:
    """``s ⊕ t`` between the blockwise direct sums."""
    source = direct_sum(s.source, t.source)
    target = direct_sum(s.target, t.target)
    return target.i0 @ s @ source.p0 + target.i1 @ t @ source.p1


def additivity_iso(F: FunctorSpec, C: Module, D: Module) -> Operator:
    """``α_{C,D} = F(i_C) π_{F(C)} + F(i_D) π_{F(D)}: F(C) ⊕ F(D) -> F(C ⊕ D)``.

    Unitary, and natural in ``C`` and ``D``; it need not have controlled
    propagation even when every ``U(C)`` has.
    """
    split = direct_sum(C, D)
    images = direct_sum(F.obj(C), F.obj(D))
    return F.apply(split.i0) @ images.p0 + F.apply(split.i1) @ images.p1


@dataclass(frozen=True)
class CongruenceWitness:
    """Central unitaries with ``t ≈ v s u``; ``residual = ‖t - v s u‖``."""

    u: CentralUnitary
    v: CentralUnitary
    residual: float

    def apply(self, s: Operator) -> Operator:
        return self.v.operator(s.target) @ s @ self.u.operator(s.source)


def _component_coords(C: Module) -> Dict:
    """Component label to the coordinates of ``C`` lying in that component."""
    labels = C.space.base.points
    per_coord = C.space.block_component[C.block_of]
    return {
        labels[c]: np.flatnonzero(per_coord == c) for c in np.unique(per_coord)
    }


def _all_labels(C: Module) -> List:
    points = C.space.base.points
    return [points[c] for c in np.unique(C.space.block_component)]


def cong_mod_central(
    t: Operator, s: Operator, tol: float = 1e-9
) -> Optional[CongruenceWitness]:
    """Look for central unitaries ``u``, ``v`` with ``t = v s u``.

    Component phases are synchronised along a spanning forest of the bipartite
    graph of (target component, source component) pairs where ``s`` or ``t`` is
    nonzero; each tree is rooted at a source component with ``u = 1``. Returns
    the witness when ``‖t - v s u‖ <= tol·‖t‖``, else ``None``.
    """
    if t.source != s.source or t.target != s.target:
        raise SpaceMismatchError("Congruence needs operators between the same modules")
    sources = _component_coords(t.source)
    targets = _component_coords(t.target)
    blocks = {}
    for k, rows in targets.items():
        for j, cols in sources.items():
            s_kj = s.matrix[np.ix_(rows, cols)]
            t_kj = t.matrix[np.ix_(rows, cols)]
            if np.any(s_kj) or np.any(t_kj):
                blocks[k, j] = (s_kj, t_kj)

    def phase(z: complex) -> complex:
        return z / abs(z) if abs(z) > 0 else 1.0

    u: Dict = {}
    v: Dict = {}
    for root in sources:
        if root in u:
            continue
        u[root] = 1.0
        queue = deque([("source", root)])
        while queue:
            side, node = queue.popleft()
            for (k, j), (s_kj, t_kj) in blocks.items():
                if side == "source" and j == node and k not in v:
                    v[k] = phase(np.vdot(s_kj * u[j], t_kj))
                    queue.append(("target", k))
                elif side == "target" and k == node and j not in u:
                    u[j] = phase(np.vdot(v[k] * s_kj, t_kj))
                    queue.append(("source", j))

    u_full = {label: u.get(label, 1.0) for label in _all_labels(t.source)}
    v_full = {label: v.get(label, 1.0) for label in _all_labels(t.target)}
    witness_u = CentralUnitary(t.source.space, u_full)
    witness_v = CentralUnitary(t.target.space, v_full)
    residual = (t - witness_v.operator(t.target) @ s @ witness_u.operator(t.source)).norm
    if residual <= tol * t.norm:
        return CongruenceWitness(witness_u, witness_v, residual)
    logger.debug(f"No congruence: residual {residual:.3g} against norm {t.norm:.3g}")
    return None


def _transport(w: CentralUnitary, s: Operator, tol: float = 1e-9) -> Optional[CentralUnitary]:
    """The central unitary ``w'`` on the target with ``s w = w' s``, if any."""
    sources = _component_coords(s.source)
    targets = _component_coords(s.target)
    scalars = {}
    for k, rows in targets.items():
        seen = [
            w.scalars[j]
            for j, cols in sources.items()
            if np.any(np.abs(s.matrix[np.ix_(rows, cols)]) > 0)
        ]
        if seen and any(abs(z - seen[0]) > tol for z in seen):
            return None
        scalars[k] = seen[0] if seen else 1.0
    for label in _all_labels(s.target):
        scalars.setdefault(label, 1.0)
    return CentralUnitary(s.target.space, scalars)


def compose_witnesses(
    outer: CongruenceWitness,
    inner: CongruenceWitness,
    s1: Operator,
    t1: Operator,
    s2: Operator,
    t2: Operator,
) -> Optional[CongruenceWitness]:
    """From ``s1 = v_o s2 u_o`` and ``t1 = v_i t2 u_i`` build a witness for
    ``s1 t1 ≅ s2 t2``.

    The middle factor ``u_o v_i`` is moved through ``s2``; this fails (``None``)
    only when ``s2`` merges components carrying different phases.
    """
    middle = outer.u @ inner.v
    moved = _transport(middle, s2)
    if moved is None:
        return None
    v = outer.v @ moved
    u = inner.u
    left = s1 @ t1
    right = s2 @ t2
    residual = (left - v.operator(left.target) @ right @ u.operator(left.source)).norm
    return CongruenceWitness(u, v, residual)


@dataclass
class NaturalityVerdict:
    passed: bool
    failures: List[str]
    residuals: List[float]

    def as_dict(self) -> dict:
        return {"passed": self.passed, "failures": self.failures, "residuals": self.residuals}


def natural_iso_mod_central_check(
    F: FunctorSpec,
    G: FunctorSpec,
    eta: Callable[[Module], Operator],
    test_morphisms: Iterable[Operator],
    tol: float = 1e-9,
) -> NaturalityVerdict:
    """Check ``G(t) η(C) ≅ η(D) F(t)`` modulo central unitaries on samples."""
    failures, residuals = [], []
    for index, t in enumerate(test_morphisms):
        C, D = t.source, t.target
        eta_C, eta_D = eta(C), eta(D)
        for name, component, obj in (("C", eta_C, C), ("D", eta_D, D)):
            if component.source != F.obj(obj) or component.target != G.obj(obj):
                raise SpaceMismatchError(f"eta({name}) does not map F({name}) to G({name})")
        lhs = G.apply(t) @ eta_C
        rhs = eta_D @ F.apply(t)
        witness = cong_mod_central(lhs, rhs, tol)
        if witness is None:
            residuals.append((lhs - rhs).norm)
            failures.append(f"morphism {index}: square does not commute mod central unitaries")
        else:
            residuals.append(witness.residual)
    return NaturalityVerdict(not failures, failures, residuals)


def assemble_functor(
    pairs: Sequence[Tuple[Module, Module, Operator]], fallback: MeasurableMap
) -> FunctorSpec:
    """Functor sending each ``C_i`` to ``D_i`` via ``U_i`` and every other module
    to its pushforward along ``fallback``.

    Raises
    ------
        InvalidInputError: On a module listed twice with different images
    """
    chosen: Dict[Module, Tuple[Module, Operator]] = {}
    for C, D, U in pairs:
        _check_unitary(U, C, D)
        if C in chosen:
            D0, U0 = chosen[C]
            if D0 != D or U0 != U:
                raise InvalidInputError("Module listed twice with conflicting images")
        chosen[C] = (D, U)

    def object_map(C: Module) -> Module:
        return chosen[C][0] if C in chosen else pushforward(fallback, C)

    def unitary(C: Module) -> Operator:
        if C in chosen:
            return chosen[C][1]
        return _identity_between(C, pushforward(fallback, C))

    return FunctorSpec(object_map, unitary, name="assembled")


def closeness_from_functor_congruence(
    f: MeasurableMap, g: MeasurableMap, modules: Iterable[Module]
) -> Scale:
    """Scale of ``(g x f)(E_disc)`` saturated to target blocks.

    For each module ``C`` with every block occupied, this equals the scale of the
    support of ``ν_C = U_g(C) U_f(C)*``; a mismatch raises
    :class:`BoundViolation`. ``INF`` exactly when ``f`` and ``g`` are not close.
    """
    if f.source != g.source or f.target != g.target:
        raise SpaceMismatchError("f and g must share source and target")
    Y = f.target
    scale = max_scale(Y.block_scale[g.block_map, f.block_map])
    for C in modules:
        if C.space != f.source:
            raise SpaceMismatchError("Module does not live over the maps' source")
        if np.any(C.dims == 0):
            raise InvalidInputError("closeness_from_functor_congruence needs full-support modules")
        nu = _identity_between(pushforward(f, C), pushforward(g, C))
        observed = entourage_scale(support(nu, tol=0.0))
        if observed != scale:
            raise BoundViolation(
                f"Support of ν_C has scale {observed}, expected {scale}",
                observed=observed,
                bound=scale,
            )
    return scale


def is_full_and_faithful(
    F: FunctorSpec, samples: Iterable[Operator], rtol: float = 1e-9
) -> bool:
    """Sampled check that ``F`` preserves norms and adjoints."""
    for t in samples:
        image = F.apply(t)
        if abs(image.norm - t.norm) > rtol * max(t.norm, 1.0):
            return False
        if not F.apply(t.adjoint).allclose(image.adjoint, atol=rtol * max(t.norm, 1.0)):
            return False
    return True
