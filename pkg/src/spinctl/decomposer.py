"""
Pre/post error-term decomposition of simulated pulses.

A pulse is represented as ``U ~ U_post @ U_ideal @ U_pre`` where ``U_pre``
and ``U_post`` are products of ``exp(-i a Z_k)`` and ``exp(-i b Z_j Z_k)``.
The angles come from simulations of single blocks of spins and of pairs of
blocks, so the cost grows quadratically with the number of blocks instead of
exponentially with the number of spins.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.optimize

from .spinsys import (
    PulseShape,
    SpinSystem,
    hs_fidelity,
    operator_on,
    restrict_to_subsystem,
    simulate,
    z_diagonal,
)

log = logging.getLogger(__name__)

FIT_FLOOR = 0.995
N_STARTS = 8

Pair = tuple[str, str]


def wrap(angle):
    """Map angles onto (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(angle, dtype=float), 2 * math.pi)


# ---------------------------------------------------------------------------
# ideal gates


@dataclass(frozen=True)
class IdealGate:
    """Intended action as a product of factors on disjoint spin groups.

    Each factor is ``(targets, unitary)`` with the unitary in the targets'
    own order.  Spins not named by any factor are left alone.
    """

    factors: tuple[tuple[tuple[str, ...], np.ndarray], ...] = ()
    label: str = "identity"

    def __post_init__(self):
        seen: set[str] = set()
        factors = []
        for targets, u in self.factors:
            targets = tuple(targets)
            u = np.asarray(u, dtype=complex)
            if u.shape != (2 ** len(targets),) * 2:
                raise ValueError(f"factor on {targets} has shape {u.shape}")
            if seen & set(targets):
                raise ValueError("ideal gate factors overlap")
            seen |= set(targets)
            factors.append((targets, u))
        object.__setattr__(self, "factors", tuple(factors))

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(t for ts, _ in self.factors for t in ts)

    def on(self, names: Sequence[str]) -> np.ndarray:
        """Matrix on ``names`` (system order); factors must lie inside ``names``."""
        names = list(names)
        n = len(names)
        out = np.eye(2 ** n, dtype=complex)
        for targets, u in self.factors:
            inside = [t in names for t in targets]
            if not any(inside):
                continue
            if not all(inside):
                raise ValueError(f"ideal factor on {targets} straddles {names}")
            out = operator_on(u, [names.index(t) for t in targets], n) @ out
        return out

    def touches(self, names: Iterable[str]) -> bool:
        names = set(names)
        return any(
            names & set(ts) and not np.allclose(u, u[0, 0] * np.eye(len(u)))
            for ts, u in self.factors
        )


# ---------------------------------------------------------------------------
# error terms


@dataclass
class ErrorTerms:
    """Angles (radians) of ``exp(-i a Z)`` and ``exp(-i b ZZ)`` before and after the ideal."""

    ideal: IdealGate
    z_pre: dict[str, float] = field(default_factory=dict)
    z_post: dict[str, float] = field(default_factory=dict)
    zz_pre: dict[Pair, float] = field(default_factory=dict)
    zz_post: dict[Pair, float] = field(default_factory=dict)
    fit_fidelity: float = 1.0
    representation_fidelity: float | None = None
    duration: float = 0.0

    def reconstruct(self, sys: SpinSystem) -> np.ndarray:
        """``U_post @ U_ideal @ U_pre`` on the full system."""
        pre = phase_diagonal(sys.names, self.z_pre, self.zz_pre)
        post = phase_diagonal(sys.names, self.z_post, self.zz_post)
        return post[:, None] * self.ideal.on(sys.names) * pre[None, :]

    def total_z(self, spin: str) -> float:
        return self.z_pre.get(spin, 0.0) + self.z_post.get(spin, 0.0)

    def total_zz(self, a: str, b: str) -> float:
        key = (a, b) if (a, b) in self.zz_pre or (a, b) in self.zz_post else (b, a)
        return self.zz_pre.get(key, 0.0) + self.zz_post.get(key, 0.0)


def phase_diagonal(
    names: Sequence[str], z: Mapping[str, float], zz: Mapping[Pair, float]
) -> np.ndarray:
    names = list(names)
    n = len(names)
    phase = np.zeros(2 ** n)
    for k, a in z.items():
        phase += a * z_diagonal(names.index(k), n)
    for (p, q), b in zz.items():
        phase += b * z_diagonal(names.index(p), n) * z_diagonal(names.index(q), n)
    return np.exp(-1j * phase)


def bloch_siegert_shift(terms: ErrorTerms, spin: str, offset: float) -> float:
    """Extra precession (degrees, rotation-angle convention) beyond free evolution.

    ``exp(-i a Z)`` is a rotation by ``2a``; free evolution at ``offset`` Hz
    for the pulse duration rotates by ``2*pi*offset*T``.
    """
    extra = 2 * terms.total_z(spin) - 2 * math.pi * offset * terms.duration
    return math.degrees(float(wrap(extra)))


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitResult:
    z_pre: dict[str, float]
    z_post: dict[str, float]
    zz_pre: dict[Pair, float]
    zz_post: dict[Pair, float]
    fitness: float


def _terms_matrix(names: Sequence[str], z_spins, pairs) -> np.ndarray:
    n = len(names)
    cols = [z_diagonal(names.index(k), n) for k in z_spins]
    cols += [
        z_diagonal(names.index(a), n) * z_diagonal(names.index(b), n) for a, b in pairs
    ]
    return np.array(cols, dtype=float).T.reshape(2 ** n, len(cols))


def fit_error_terms(
    u_sim: np.ndarray,
    ideal: np.ndarray,
    names: Sequence[str],
    z_spins: Sequence[str] | None = None,
    pairs: Sequence[Pair] = (),
    fixed: FitResult | None = None,
    seeds: Sequence[FitResult] = (),
    n_starts: int = N_STARTS,
    seed: int = 0,
    floor: float = FIT_FLOOR,
) -> FitResult:
    """Maximize ``Re tr(U_sim^dag U_post U_ideal U_pre) / N`` over the free angles.

    ``z_spins`` and ``pairs`` select the free Z and ZZ terms (each with a
    pre and a post angle).  Terms in ``fixed`` that are not free are held at
    their values.  Starts are the origin, each of ``seeds`` and random points
    on the torus, up to ``n_starts`` in total; BFGS with analytic gradients
    polishes each.  Angles are returned canonicalized with the gauge rules of
    :func:`canonicalize`.
    """
    names = list(names)
    z_spins = list(names if z_spins is None else z_spins)
    pairs = [tuple(p) for p in pairs]
    n_dim = 2 ** len(names)
    if u_sim.shape != (n_dim, n_dim) or ideal.shape != (n_dim, n_dim):
        raise ValueError("U_sim and ideal must both act on the simulated spins")
    d = _terms_matrix(names, z_spins, pairs)
    k = d.shape[1]
    fixed_pre = np.zeros(n_dim)
    fixed_post = np.zeros(n_dim)
    if fixed is not None:
        for spin, a in fixed.z_pre.items():
            if spin not in z_spins and spin in names:
                fixed_pre += a * z_diagonal(names.index(spin), len(names))
        for spin, a in fixed.z_post.items():
            if spin not in z_spins and spin in names:
                fixed_post += a * z_diagonal(names.index(spin), len(names))
        for pr, b in fixed.zz_pre.items():
            if pr not in pairs and set(pr) <= set(names):
                fixed_pre += b * _terms_matrix(names, [], [pr])[:, 0]
        for pr, b in fixed.zz_post.items():
            if pr not in pairs and set(pr) <= set(names):
                fixed_post += b * _terms_matrix(names, [], [pr])[:, 0]
    c = u_sim.conj().T.T * ideal  # C_ab = (U_sim^dag)_ba * I_ab

    def neg(theta):
        pre, post = theta[:k], theta[k:]
        p = np.exp(-1j * (d @ post + fixed_post))
        q = np.exp(-1j * (d @ pre + fixed_pre))
        cq = c @ q
        pc = p @ c
        f = np.real(p @ cq) / n_dim
        g_post = np.real(-1j * (p * cq) @ d) / n_dim
        g_pre = np.real(-1j * (pc * q) @ d) / n_dim
        return -f, -np.concatenate([g_pre, g_post])

    def vec(fr: FitResult) -> np.ndarray:
        pre = [fr.z_pre.get(s, 0.0) for s in z_spins] + [fr.zz_pre.get(p, 0.0) for p in pairs]
        post = [fr.z_post.get(s, 0.0) for s in z_spins] + [fr.zz_post.get(p, 0.0) for p in pairs]
        return np.array(pre + post)

    starts = [np.zeros(2 * k)] + [vec(s) for s in seeds]
    rng = np.random.default_rng(seed)
    while len(starts) < n_starts:
        starts.append(rng.uniform(-math.pi, math.pi, 2 * k))
    best = None
    for x0 in starts:
        if k == 0:
            res_x, res_f = x0, neg(x0)[0]
        else:
            res = scipy.optimize.minimize(
                neg, x0, jac=True, method="BFGS", options={"gtol": 1e-12}
            )
            res_x, res_f = res.x, res.fun
        theta = wrap(res_x)
        key = (round(float(res_f), 11), float(np.sum(theta ** 2)))
        if best is None or key < best[0]:
            best = (key, theta, -float(res_f))
    theta, fitness = best[1], best[2]
    out = FitResult(
        {s: float(theta[i]) for i, s in enumerate(z_spins)},
        {s: float(theta[k + i]) for i, s in enumerate(z_spins)},
        {p: float(theta[len(z_spins) + i]) for i, p in enumerate(pairs)},
        {p: float(theta[k + len(z_spins) + i]) for i, p in enumerate(pairs)},
        fitness,
    )
    n = len(names)

    def gauge(spins):
        diag = np.prod([z_diagonal(names.index(t), n) for t in spins], axis=0)
        return _matrix_gauge(ideal, diag)

    out = canonicalize(out, gauge)
    if out.fitness < floor:
        log.warning(
            "error-term fit fitness %.6f below %.3f: representation breaks down",
            out.fitness, floor,
        )
    return out


def _matrix_gauge(ideal: np.ndarray, diag: np.ndarray) -> int:
    """+1 if the ideal commutes with diag(d), -1 if it anticommutes, else 0."""
    mapped = ideal @ np.diag(diag) @ ideal.conj().T
    if np.allclose(mapped, np.diag(diag), atol=1e-9):
        return 1
    if np.allclose(mapped, -np.diag(diag), atol=1e-9):
        return -1
    return 0


def gate_gauge(gate: IdealGate, spins: Sequence[str]) -> int:
    """Gauge class of the Z string on ``spins`` under ``gate``, from its factors only."""
    sign = 1
    for targets, u in gate.factors:
        inside = [t for t in spins if t in targets]
        if not inside:
            continue
        diag = np.ones(2 ** len(targets))
        for t in inside:
            diag = diag * z_diagonal(targets.index(t), len(targets))
        kind = _matrix_gauge(u, diag)
        if kind == 0:
            return 0
        sign *= kind
    return sign


def canonicalize(fr: FitResult, gauge) -> FitResult:
    """Remove the pre/post gauge freedom.

    ``gauge`` maps the spins of a Z string to +1 (the ideal commutes with
    it), -1 (anticommutes) or 0.  For +1 only ``pre + post`` matters and the
    split is made symmetric; for -1 only ``pre - post`` matters and
    ``pre = -post`` is chosen.
    """
    z_pre, z_post = dict(fr.z_pre), dict(fr.z_post)
    zz_pre, zz_post = dict(fr.zz_pre), dict(fr.zz_post)
    items = [(z_pre, z_post, s, (s,)) for s in fr.z_pre]
    items += [(zz_pre, zz_post, p, p) for p in fr.zz_pre]
    for pre, post, key, spins in items:
        kind = gauge(spins)
        if kind == 1:
            half = (pre[key] + post[key]) / 2
            pre[key] = post[key] = float(wrap(half))
        elif kind == -1:
            half = (pre[key] - post[key]) / 2
            pre[key], post[key] = float(wrap(half)), float(wrap(-half))
    return FitResult(z_pre, z_post, zz_pre, zz_post, fr.fitness)


# ---------------------------------------------------------------------------
# plans and block simulations


@dataclass(frozen=True)
class DecompositionPlan:
    blocks: tuple[tuple[str, ...], ...]
    pulse: PulseShape
    ideal: IdealGate

    def __post_init__(self):
        blocks = tuple(tuple(b) for b in self.blocks)
        flat = [s for b in blocks for s in b]
        if len(flat) != len(set(flat)):
            raise ValueError("decomposition blocks overlap")
        if any(not b for b in blocks):
            raise ValueError("decomposition blocks must be nonempty")
        for targets, _ in self.ideal.factors:
            if not any(set(targets) <= set(b) for b in blocks):
                raise ValueError(f"ideal factor on {targets} is split across blocks")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def singletons(cls, sys: SpinSystem, pulse: PulseShape, ideal: IdealGate):
        return cls(tuple((s,) for s in sys.names), pulse, ideal)

    def validate(self, sys: SpinSystem):
        flat = sorted(s for b in self.blocks for s in b)
        if flat != sorted(sys.names):
            raise ValueError("decomposition blocks must cover every spin exactly once")


def block_simulation(sys: SpinSystem, pulse: PulseShape, spins: Sequence[str]) -> np.ndarray:
    """Propagator of ``pulse`` on the spins ``spins`` in isolation."""
    return simulate(restrict_to_subsystem(sys, spins), pulse)


def _ordered(sys: SpinSystem, spins: Iterable[str]) -> list[str]:
    spins = set(spins)
    return [s for s in sys.names if s in spins]


def single_block_sim(sys: SpinSystem, plan: DecompositionPlan, block) -> np.ndarray:
    if tuple(block) not in plan.blocks:
        raise ValueError(f"{block} is not a block of the plan")
    return block_simulation(sys, plan.pulse, _ordered(sys, block))


def pair_block_sim(sys: SpinSystem, plan: DecompositionPlan, block_a, block_b) -> np.ndarray:
    if tuple(block_a) == tuple(block_b):
        raise ValueError("pair simulation needs two distinct blocks")
    for b in (block_a, block_b):
        if tuple(b) not in plan.blocks:
            raise ValueError(f"{b} is not a block of the plan")
    return block_simulation(sys, plan.pulse, _ordered(sys, (*block_a, *block_b)))


# ---------------------------------------------------------------------------
# incremental procedure


def decompose(
    sys: SpinSystem,
    plan: DecompositionPlan,
    floor: float = FIT_FLOOR,
    seed: int = 0,
) -> ErrorTerms:
    """Error terms from B single-block and B(B-1)/2 pair-block simulations.

    1. Each block alone gives Z terms for its spins and ZZ terms for its
       internal couplings.
    2. Each pair of blocks gives cross-coupling ZZ terms and Z terms; the
       difference from step 1 is an incremental Z correction.
    3. A spin's Z term is its step-1 value plus all its increments.

    Couplings between blocks the ideal does not act on are taken as free
    evolution, ``pi*J*T/2`` split evenly; their simulation still runs and
    serves as a consistency check.
    """
    plan.validate(sys)
    pulse = plan.pulse
    t_total = pulse.total_duration
    single: dict[tuple[str, ...], FitResult] = {}
    worst = 1.0
    for block in plan.blocks:
        names = _ordered(sys, block)
        u = single_block_sim(sys, plan, block)
        ideal = plan.ideal.on(names)
        pairs = [p for p in sys.coupled_pairs() if p[0] in names and p[1] in names]
        guess = _free_guess(sys, names, pairs, t_total)
        fr = fit_error_terms(u, ideal, names, names, pairs, seeds=[guess], seed=seed, floor=floor)
        single[block] = fr
        worst = min(worst, fr.fitness)
    z_pre = {s: a for fr in single.values() for s, a in fr.z_pre.items()}
    z_post = {s: a for fr in single.values() for s, a in fr.z_post.items()}
    zz_pre = {p: b for fr in single.values() for p, b in fr.zz_pre.items()}
    zz_post = {p: b for fr in single.values() for p, b in fr.zz_post.items()}
    inc_pre = {s: 0.0 for s in sys.names}
    inc_post = {s: 0.0 for s in sys.names}
    for ba, bb in itertools.combinations(plan.blocks, 2):
        names = _ordered(sys, (*ba, *bb))
        u = pair_block_sim(sys, plan, ba, bb)
        cross = [
            p for p in sys.coupled_pairs()
            if (p[0] in ba and p[1] in bb) or (p[0] in bb and p[1] in ba)
        ]
        if not cross:
            continue
        base = FitResult(
            {s: z_pre[s] for s in names},
            {s: z_post[s] for s in names},
            {p: b for p, b in zz_pre.items() if set(p) <= set(names)},
            {p: b for p, b in zz_post.items() if set(p) <= set(names)},
            1.0,
        )
        if not plan.ideal.touches(names):
            for p in cross:
                zz_pre[p] = zz_post[p] = float(wrap(math.pi * sys.J(*p) * t_total / 4))
            continue
        free = _free_guess(sys, names, cross, t_total)
        seed_fr = FitResult(base.z_pre, base.z_post, free.zz_pre, free.zz_post, 1.0)
        ideal = plan.ideal.on(names)
        fr = fit_error_terms(
            u, ideal, names, names, cross, fixed=base, seeds=[seed_fr], seed=seed, floor=floor
        )
        worst = min(worst, fr.fitness)
        for s in names:
            inc_pre[s] += _delta(fr.z_pre[s], base.z_pre[s])
            inc_post[s] += _delta(fr.z_post[s], base.z_post[s])
        for p in cross:
            zz_pre[p], zz_post[p] = fr.zz_pre[p], fr.zz_post[p]
    fr = FitResult(
        {s: float(wrap(z_pre[s] + inc_pre[s])) for s in sys.names},
        {s: float(wrap(z_post[s] + inc_post[s])) for s in sys.names},
        {p: float(wrap(b)) for p, b in zz_pre.items()},
        {p: float(wrap(b)) for p, b in zz_post.items()},
        worst,
    )
    fr = canonicalize(fr, lambda spins: gate_gauge(plan.ideal, spins))
    return ErrorTerms(
        plan.ideal, fr.z_pre, fr.z_post, fr.zz_pre, fr.zz_post, worst, None, t_total
    )


def _delta(new: float, old: float) -> float:
    return float(wrap(new - old))


def _free_guess(sys: SpinSystem, names, pairs, t_total: float) -> FitResult:
    """Angles of pure free evolution, split evenly between pre and post."""
    z = {s: float(wrap(math.pi * sys.offset(s) * t_total / 2)) for s in names}
    zz = {p: float(wrap(math.pi * sys.J(*p) * t_total / 4)) for p in pairs}
    return FitResult(z, dict(z), zz, dict(zz), 1.0)


def representation_fidelity(sys: SpinSystem, pulse: PulseShape, terms: ErrorTerms) -> float:
    """HS fidelity of the reconstruction against a full simulation (validation only)."""
    return hs_fidelity(simulate(sys, pulse), terms.reconstruct(sys))
