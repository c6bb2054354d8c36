"""Sampled verification of the structural laws behind the laboratory.

Each suite draws ``count`` seeded random instances and records every violated
law as a failure message; a suite passes when none was recorded.
"""

import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from .category import (
    additivity_iso,
    closeness_from_functor_congruence,
    compose_witnesses,
    cong_mod_central,
    functor_from_unitaries,
    natural_iso_mod_central_check,
    oplus,
    pushforward_functor,
)
from .coarse_modules import (
    LFCMSpace,
    MeasurableMap,
    Module,
    components_of,
    direct_sum,
    make_module,
    pushforward,
    uniform_module,
)
from .coarse_space import CoarseMap, Space, closeness, rel_compose, rel_transpose
from .harness import (
    ExperimentConfig,
    gen_equivalence,
    gen_space,
    read_pgm,
    render_heatmap,
    run_experiment,
    transport_permutation,
)
from .operators import (
    Operator,
    approx_profile,
    operator_norm,
    propagation,
    random_band_operator,
    random_controlled_unitary,
    support,
)
from .rigidity import (
    ApproxParams,
    approximate_relation,
    central_invariance_check,
    domain_invariance_check,
    make_central_unitary,
    parameter_join,
)
from .utils import BoundViolation, CoarseLabError, Scale, rng_for, spawn_seeds

logger = logging.getLogger(__name__)

DEFAULT_COUNTS = {
    "support": 1000,
    "approx-relation": 500,
    "rigidity": 100,
    "domain": 200,
    "category": 200,
    "pushforward": 100,
    "heatmap": 1,
    "bracket": 500,
}

# recovery is probabilistic: up to 5% of rigidity runs may miss the bound
TOLERATED_FRACTION = {"rigidity": 0.05}


@dataclass
class LawReport:
    suite: str
    checked: int
    failures: List[str] = field(default_factory=list)
    tolerated: int = 0

    @property
    def passed(self) -> bool:
        return len(self.failures) <= self.tolerated

    def as_dict(self) -> dict:
        return {
            "suite": self.suite,
            "checked": self.checked,
            "passed": self.passed,
            "failures": self.failures[:50],
            "failure_count": len(self.failures),
            "tolerated": self.tolerated,
        }


def random_lfcm(rng: np.random.Generator, max_points: int = 30) -> LFCMSpace:
    """One or two intervals cut into consecutive blocks of 1 to 3 points."""
    sizes = [int(rng.integers(1, max_points // 2 + 1))]
    if rng.random() < 0.4:
        sizes.append(int(rng.integers(1, max_points // 2 + 1)))
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    base = Space.disjoint_union(
        *(Space.interval(n, int(offset)) for n, offset in zip(sizes, offsets))
    )
    blocks = []
    for n, offset in zip(sizes, offsets):
        start = int(offset)
        stop = start + n
        while start < stop:
            width = int(rng.integers(1, 4))
            blocks.append(tuple(range(start, min(start + width, stop))))
            start += width
    return LFCMSpace(base, tuple(blocks))


def random_module(space: LFCMSpace, rng: np.random.Generator, max_dim: int = 3) -> Module:
    return make_module(space, rng.integers(0, max_dim + 1, size=space.n_blocks))


def _random_operator(C: Module, rng: np.random.Generator) -> Operator:
    n = int(rng.integers(0, 4))
    return random_band_operator(C, n, rng.integers(2**32), density=0.5)


def _tol(op: Operator) -> float:
    return 1e-10 * op.norm


def _support_suite(count: int, seed: int) -> List[str]:
    failures = []
    for k, seq in enumerate(spawn_seeds(seed, count)):
        rng = rng_for(seq)
        space = random_lfcm(rng)
        C = random_module(space, rng)
        s, t, t2 = (_random_operator(C, rng) for _ in range(3))
        if support(t.adjoint, _tol(t)) != rel_transpose(support(t, _tol(t))):
            failures.append(f"instance {k}: Supp(t*) differs from Supp(t)^T")
        total = t + t2
        if not support(total, _tol(total)).issubset(
            support(t, 0.0).union(support(t2, 0.0))
        ):
            failures.append(f"instance {k}: Supp(t1 + t2) escapes the union")
        product = s @ t
        bound = rel_compose(
            support(s, 0.0), rel_compose(space.disc_relation(), support(t, 0.0))
        )
        if not support(product, _tol(product)).issubset(bound):
            failures.append(f"instance {k}: Supp(st) escapes Supp(s) E_disc Supp(t)")
        if product.norm > s.norm * t.norm * (1 + 1e-9):
            failures.append(f"instance {k}: ‖st‖ exceeds ‖s‖‖t‖")
        if total.norm > (t.norm + t2.norm) * (1 + 1e-9):
            failures.append(f"instance {k}: ‖t1 + t2‖ exceeds ‖t1‖ + ‖t2‖")
        p = int(rng.integers(0, 3))
        U = random_controlled_unitary(C, p, rng.integers(2**32))
        limit = propagation(t, 0.0) + 2 * p + 2 * space.disc_gauge_scale
        if propagation(U @ t @ U.adjoint, 0.0) > limit:
            failures.append(f"instance {k}: UtU* has propagation above {limit}")
    return failures


def _random_params(rng: np.random.Generator, space: LFCMSpace) -> ApproxParams:
    disc = space.disc_gauge_scale
    return ApproxParams(
        float(rng.uniform(0.05, 0.9)),
        disc + int(rng.integers(0, 3)),
        disc + int(rng.integers(0, 3)),
        "windows" if rng.random() < 0.3 else "blocks",
    )


def _approx_relation_suite(count: int, seed: int) -> List[str]:
    failures = []
    for k, seq in enumerate(spawn_seeds(seed, count)):
        rng = rng_for(seq)
        space = random_lfcm(rng, max_points=16)
        C = random_module(space, rng)
        t = _random_operator(C, rng)
        t = t if t.norm == 0 else Operator(C, C, t.matrix / t.norm)
        p1 = _random_params(rng, space)
        p2 = _random_params(rng, space)
        if p1.mode != p2.mode:
            p2 = ApproxParams(p2.delta, p2.F_scale, p2.E_scale, p1.mode)
        joined = approximate_relation(t, parameter_join(p1, p2))
        for name, p in (("p1", p1), ("p2", p2)):
            if not approximate_relation(t, p).issubset(joined):
                failures.append(f"instance {k}: f^T_{name} not inside the joined relation")
        labels = set(components_of(space).values())
        u = make_central_unitary(space, {c: rng.uniform(0, 2 * np.pi) for c in labels})
        v = make_central_unitary(space, {c: rng.uniform(0, 2 * np.pi) for c in labels})
        if not central_invariance_check(t, u, v, p1):
            failures.append(f"instance {k}: central unitaries changed the relation")
    return failures


def _rigidity_suite(count: int, seed: int) -> List[str]:
    failures = []
    rng = rng_for(seed)
    for k in range(count):
        cfg = ExperimentConfig(
            kind="random_geometric",
            size=int(rng.integers(50, 201)),
            distortion=int(rng.integers(1, 4)),
            scramble=int(rng.integers(0, 3)),
            delta=0.1,
            seed=seed + k,
        )
        result = run_experiment(cfg)
        if not result.within_bound:
            failures.append(
                f"seed {cfg.seed}: closeness {result.closeness} exceeds {result.bound}"
            )
    return failures


def _domain_suite(count: int, seed: int) -> List[str]:
    failures = []
    for k, seq in enumerate(spawn_seeds(seed, count)):
        rng = rng_for(seq)
        space = gen_space("interval", int(rng.integers(4, 21)))
        C = make_module(space, rng.integers(0, 4, size=space.n_blocks))
        if C.dim == 0:
            continue
        band = random_band_operator(C, int(rng.integers(0, 3)), rng.integers(2**32))
        t = band + (band.norm + 1.0) * Operator.identity(C)
        # local moves of coordinates change the domains of the target
        moved = np.clip(C.block_of + rng.integers(-1, 2, size=C.dim), 0, space.n_blocks - 1)
        D = Module(space, moved)
        relabel = Operator(C, D, np.eye(C.dim))
        s = random_controlled_unitary(D, 1, rng.integers(2**32)) @ relabel
        # swapping neighbouring blocks carries every κ-domain along with the coordinates
        order = np.arange(space.n_blocks)
        for i in range(0, space.n_blocks - 1, 2):
            if rng.random() < 0.5:
                order[[i, i + 1]] = order[[i + 1, i]]
        f = MeasurableMap(space, space, CoarseMap(space.base, space.base, order))
        shuffled = pushforward(f, C)
        carried = random_controlled_unitary(shuffled, 1, rng.integers(2**32)) @ (
            transport_permutation(f, C, shuffled)
        )
        try:
            domain_invariance_check(t, (1, 2, 3), asserted=(1, 2, 3))
            domain_invariance_check(s, (1,), asserted=(1,))
            domain_invariance_check(carried, (1, 2, 3), asserted=(1, 2, 3))
        except BoundViolation as e:
            failures.append(f"instance {k}: {e}")
    return failures


def additivity_negative_control(size: int = 10) -> Scale:
    """Propagation of ``α_{C,C}`` for a functor whose unitary on ``C ⊕ C`` reverses
    the interval while it is the identity on ``C``."""
    X = gen_space("interval", size)
    C = uniform_module(X)
    S = direct_sum(C, C).module
    reversal = MeasurableMap(X, X, CoarseMap(X.base, X.base, np.arange(size)[::-1]))
    F = functor_from_unitaries(
        {C: C, S: S},
        {C: Operator.identity(C), S: transport_permutation(reversal, S, S)},
        name="reversing",
    )
    return propagation(additivity_iso(F, C, C))


def _category_suite(count: int, seed: int) -> List[str]:
    failures = []
    diameter = gen_space("interval", 10).base.diameter
    alpha_scale = additivity_negative_control(10)
    if not alpha_scale >= diameter / 2:
        failures.append(f"negative control: α has propagation {alpha_scale} < {diameter / 2}")
    for k, seq in enumerate(spawn_seeds(seed, count)):
        rng = rng_for(seq)
        space = random_lfcm(rng, max_points=12)
        C, D = random_module(space, rng, 2), random_module(space, rng, 2)
        C = C if C.dim else uniform_module(space)
        D = D if D.dim else uniform_module(space)
        S = direct_sum(C, D)
        objects = [C, D, S.module]
        unitaries = {M: random_controlled_unitary(M, 1, rng.integers(2**32)) for M in objects}
        F = functor_from_unitaries({M: M for M in objects}, unitaries)
        s = _random_operator(C, rng)
        t = Operator(C, C, rng.standard_normal((C.dim, C.dim)))
        h = _random_operator(D, rng)
        atol = 1e-9 * (1 + s.norm * t.norm)
        if not F.apply(Operator.identity(C)).allclose(Operator.identity(C), 1e-9):
            failures.append(f"instance {k}: F(1) != 1")
        if not F.apply(s @ t).allclose(F.apply(s) @ F.apply(t), atol):
            failures.append(f"instance {k}: F(st) != F(s)F(t)")
        if not F.apply(t.adjoint).allclose(F.apply(t).adjoint, atol):
            failures.append(f"instance {k}: F(t*) != F(t)*")
        bound = propagation(s, 0.0) + 2 + 2 * space.disc_gauge_scale
        if propagation(F.apply(s), 0.0) > bound:
            failures.append(f"instance {k}: F(s) has propagation above {bound}")
        if not (S.p0 @ S.i0).allclose(Operator.identity(C)) or not (
            S.i0 @ S.p0 + S.i1 @ S.p1
        ).allclose(Operator.identity(S.module)):
            failures.append(f"instance {k}: biproduct laws fail")
        alpha = additivity_iso(F, C, D)
        lhs = F.apply(oplus(t, h)) @ alpha
        rhs = alpha @ oplus(F.apply(t), F.apply(h))
        if not lhs.allclose(rhs, 1e-9 * (1 + t.norm + h.norm)):
            failures.append(f"instance {k}: additivity square does not commute")
        phases = {c: rng.uniform(0, 2 * np.pi) for c in set(components_of(space).values())}
        w1, w2 = make_central_unitary(space, phases), make_central_unitary(space, phases)
        s2, t2 = w1.operator(C) @ s, t @ w2.operator(C)
        outer = cong_mod_central(s2, s)
        inner = cong_mod_central(t2, t)
        if outer is None or inner is None:
            failures.append(f"instance {k}: congruent pair not recognised")
            continue
        composed = compose_witnesses(outer, inner, s2, t2, s, t)
        if composed is None or composed.residual > 1e-8 * (1 + (s2 @ t2).norm):
            failures.append(f"instance {k}: congruence witnesses do not compose")
    return failures


def _pushforward_suite(count: int, seed: int) -> List[str]:
    failures = []
    close_count = max(1, count)
    far_count = max(1, count // 5)
    for k, seq in enumerate(spawn_seeds(seed, close_count)):
        rng = rng_for(seq)
        X = gen_space("interval", int(rng.integers(3, 16)))
        f = gen_equivalence(X, int(rng.integers(1, 4)), rng.integers(2**32)).forward
        g = gen_equivalence(X, 2, rng.integers(2**32)).forward.compose(f)
        C = make_module(X, rng.integers(1, 3, size=X.n_blocks))
        F, G = pushforward_functor(f), pushforward_functor(g)

        def eta(M, F=F, G=G):
            return G.unitary_for(M) @ F.unitary_for(M).adjoint

        sample = [Operator.identity(C), random_band_operator(C, 1, rng.integers(2**32))]
        verdict = natural_iso_mod_central_check(F, G, eta, sample)
        if not verdict.passed:
            failures.extend(f"close pair {k}: {msg}" for msg in verdict.failures)
        try:
            scale = closeness_from_functor_congruence(f, g, [C])
        except BoundViolation as e:
            failures.append(f"close pair {k}: {e}")
            continue
        if not np.isfinite(scale) or scale < closeness(f.map, g.map):
            failures.append(f"close pair {k}: scale {scale} does not witness closeness")
    for k in range(far_count):
        size = 3 + k % 5
        X = gen_space("multi_component", (size, size))
        swap = CoarseMap(X.base, X.base, (np.arange(2 * size) + size) % (2 * size))
        f, g = MeasurableMap.identity(X), MeasurableMap(X, X, swap)
        scale = closeness_from_functor_congruence(f, g, [uniform_module(X)])
        if np.isfinite(scale):
            failures.append(f"far pair {k}: expected infinite scale, got {scale}")
    return failures


def _heatmap_suite(count: int, seed: int) -> List[str]:
    failures = []
    X = gen_space("interval", 20)
    C = uniform_module(X)
    with tempfile.TemporaryDirectory() as tmp:
        for k, seq in enumerate(spawn_seeds(seed, max(count, 1))):
            t = random_band_operator(C, 1, seq)
            pixels = read_pgm(render_heatmap(t, Path(tmp) / f"band_{k}.pgm"))
            rows, cols = np.indices(pixels.shape)
            if np.any(pixels[np.abs(rows - cols) > 1]):
                failures.append(f"instance {k}: intensity outside the first off-diagonals")
    return failures


def _bracket_suite(count: int, seed: int) -> List[str]:
    failures = []
    for k, seq in enumerate(spawn_seeds(seed, count)):
        rng = rng_for(seq)
        space = random_lfcm(rng, max_points=16)
        C = random_module(space, rng)
        t = Operator(C, C, rng.standard_normal((C.dim, C.dim)))
        t = t if rng.random() < 0.5 else _random_operator(C, rng)
        profile = approx_profile(t)
        exact_propagation = propagation(t, tol=0.0)
        for n, upper in profile.upper.items():
            if profile.lower(n) > upper:
                failures.append(f"instance {k}: lower({n}) > upper({n})")
            if (upper == 0) != (exact_propagation <= n):
                failures.append(f"instance {k}: upper({n}) = 0 disagrees with propagation")
        size = int(rng.integers(1, 4))
        m = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
        if abs(operator_norm(m) - np.linalg.norm(m, 2)) > 1e-9:
            failures.append(f"instance {k}: operator_norm disagrees on a {size}x{size} sample")
        # approximable operators are closed under sums and products
        other = Operator(C, C, rng.standard_normal((C.dim, C.dim)))
        n_t, n_o = int(rng.integers(0, 4)), int(rng.integers(0, 4))
        a, b = profile.upper(n_t), approx_profile(other).upper(n_o)
        slack = 1e-9 * (1 + t.norm) * (1 + other.norm)
        if approx_profile(t + other).lower(max(n_t, n_o)) > a + b + slack:
            failures.append(f"instance {k}: t + t2 breaks the sum bound")
        product_bound = (t.norm + a) * b + a * other.norm
        if approx_profile(t @ other).lower(n_t + n_o) > product_bound + slack:
            failures.append(f"instance {k}: t t2 breaks the product bound")
    return failures


SUITES: Dict[str, Callable[[int, int], List[str]]] = {
    "support": _support_suite,
    "approx-relation": _approx_relation_suite,
    "rigidity": _rigidity_suite,
    "domain": _domain_suite,
    "category": _category_suite,
    "pushforward": _pushforward_suite,
    "heatmap": _heatmap_suite,
    "bracket": _bracket_suite,
}


def verify_laws(suite: str, count: int = None, seed: int = 0) -> LawReport:
    """Run one suite; ``count`` defaults to its acceptance sample size."""
    if suite not in SUITES:
        raise CoarseLabError(f"Unknown suite {suite!r}; choose from {sorted(SUITES)}")
    count = DEFAULT_COUNTS[suite] if count is None else count
    logger.info(f"Verifying {suite} laws on {count} instance(s)")
    failures = SUITES[suite](count, seed)
    tolerated = int(TOLERATED_FRACTION.get(suite, 0.0) * count)
    report = LawReport(suite, count, failures, tolerated)
    logger.info(f"Suite {suite}: {'passed' if report.passed else f'{len(failures)} failure(s)'}")
    return report
