"""
Gradient-ascent pulse engineering.

Fidelity is the Hilbert-Schmidt overlap averaged over an ensemble of RF
scalings and frequency offsets and, optionally, over weighted subsystems.
Gradients with respect to step amplitudes use the exact derivative of the
step propagator in its eigenbasis by default; the first-order approximation
``dU/du = -i dt H_u U`` is available with ``exact=False``.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .spinsys import (
    PulseShape,
    SpinSystem,
    SubsystemSpec,
    build_internal_hamiltonian,
    control_operators,
    restrict_to_subsystem,
)

log = logging.getLogger(__name__)


class BandwidthExceeded(ValueError):
    """Raised when a smoothed pulse needs more bandwidth than allowed."""


# ---------------------------------------------------------------------------
# configuration


def _normalized(pairs, what: str) -> tuple:
    pairs = tuple(pairs)
    if not pairs:
        return pairs
    w = [p[1] for p in pairs]
    if any(x < 0 for x in w):
        raise ValueError(f"{what} weights must be nonnegative")
    if abs(sum(w) - 1.0) > 1e-12:
        raise ValueError(f"{what} weights sum to {sum(w)!r}, not 1")
    return pairs


@dataclass(frozen=True)
class RobustnessDistribution:
    """Ensemble of RF multipliers and frequency offsets.

    ``rf_scales`` holds ``(multiplier, weight)`` pairs.  ``freq_offsets``
    holds ``(offset, weight)`` pairs where ``offset`` is either a number of
    Hz added to every spin in ``offset_spins`` (all spins when None) or a
    mapping from spin name to Hz.  The ensemble is the product of both axes;
    an empty axis is the single nominal point.
    """

    rf_scales: tuple = ()
    freq_offsets: tuple = ()
    offset_spins: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "rf_scales", _normalized(self.rf_scales, "rf"))
        object.__setattr__(
            self, "freq_offsets", _normalized(self.freq_offsets, "offset")
        )

    @classmethod
    def uniform_rf(cls, multipliers: Sequence[float], **kw) -> "RobustnessDistribution":
        w = 1.0 / len(multipliers)
        return cls(rf_scales=tuple((float(m), w) for m in multipliers), **kw)

    def points(self, sys: SpinSystem) -> list[tuple[float, dict[str, float], float]]:
        """Expand into ``(rf, shifts, weight)`` triples."""
        rf = self.rf_scales or ((1.0, 1.0),)
        off = self.freq_offsets or ((0.0, 1.0),)
        spins = self.offset_spins if self.offset_spins is not None else sys.names
        out = []
        for (m, wm), (o, wo) in itertools.product(rf, off):
            if isinstance(o, Mapping):
                shifts = {k: float(v) for k, v in o.items()}
            else:
                shifts = {k: float(o) for k in spins} if o else {}
            out.append((float(m), shifts, wm * wo))
        return out


def incoherent_offsets(
    sys: SpinSystem, subset: Sequence[str]
) -> tuple[tuple[dict[str, float], float], ...]:
    """Frequency points for averaging over the states of spins outside ``subset``.

    Each spin outside the subset that couples into it sits in one of its two
    Z eigenstates, shifting every coupled subset spin by ``+-J/2``.  All
    ``2**m`` sign patterns are returned with equal weight.
    """
    subset = list(subset)
    outside = [
        k for k in sys.names
        if k not in subset and any(sys.J(k, s) for s in subset)
    ]
    if not outside:
        return ()
    w = 1.0 / 2 ** len(outside)
    pts = []
    for signs in itertools.product((1.0, -1.0), repeat=len(outside)):
        shifts = {
            s: sum(sg * sys.J(k, s) / 2 for sg, k in zip(signs, outside))
            for s in subset
        }
        pts.append((shifts, w))
    return tuple(pts)


@dataclass(frozen=True)
class GuessSpec:
    knot_spacing: int = 25
    knot_range: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.knot_spacing < 1:
            raise ValueError("knot_spacing must be >= 1")
        if not 0 <= self.knot_range <= 1:
            raise ValueError("knot_range must lie in [0, 1]")


@dataclass(frozen=True)
class GrapeConfig:
    """Optimizer settings.

    ``goals`` for subsystem runs are passed to :func:`optimize`, one per
    entry of ``subsystems``.  ``channels`` restricts which species are
    driven (all species of the system when None).
    """

    n_steps: int
    initial_dt: float
    optimize_durations: bool = False
    time_penalty_weight: float = 0.0
    edge_penalty_weight: float = 0.0
    edge_steps: int = 3
    max_iterations: int = 200
    convergence_threshold: float = 1e-10
    target_fidelity: float = 0.999
    stop_at_target: bool = False
    guess: GuessSpec = field(default_factory=GuessSpec)
    subsystems: SubsystemSpec | None = None
    robustness: RobustnessDistribution = field(default_factory=RobustnessDistribution)
    channels: tuple[str, ...] | None = None
    exact_gradient: bool = True
    duration_floor: float = 0.5e-6
    max_step_angle: float = 0.3
    bandwidth_cap: float | None = None

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        if not self.initial_dt > 0:
            raise ValueError("initial_dt must be > 0")
        for name in ("time_penalty_weight", "edge_penalty_weight"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")


@dataclass
class GrapeResult:
    pulse: PulseShape
    fitness_history: list[float]
    final_fidelity: float
    point_fidelities: dict[tuple, float]
    converged: bool
    iterations: int


# ---------------------------------------------------------------------------
# initial guess


def initial_guess(
    spec: GuessSpec,
    n_steps: int,
    channels: Sequence[str],
    max_amplitudes: Sequence[float],
    dt: float = 1e-5,
) -> PulseShape:
    """Cubic spline through random knots every ``knot_spacing`` steps."""
    rng = np.random.default_rng(spec.seed)
    knots = np.arange(0, n_steps, spec.knot_spacing)
    if knots[-1] != n_steps - 1:
        knots = np.append(knots, n_steps - 1)
    steps = np.arange(n_steps)
    amps = np.zeros((n_steps, len(channels), 2))
    for c, cap in enumerate(max_amplitudes):
        for q in range(2):
            vals = rng.uniform(-1, 1, knots.size) * spec.knot_range * cap
            if knots.size >= 2:
                amps[:, c, q] = CubicSpline(knots, vals)(steps)
            else:
                amps[:, c, q] = vals[0]
        mag = np.hypot(amps[:, c, 0], amps[:, c, 1])
        over = mag > cap
        amps[over, c, :] *= (cap / mag[over])[:, None]
    return PulseShape(np.full(n_steps, dt), amps, tuple(channels))


# ---------------------------------------------------------------------------
# fitness and gradients


@dataclass
class _Target:
    key: tuple
    weight: float
    goal_dag: np.ndarray
    h0: np.ndarray
    controls: list  # per pulse channel: (hx, hy) scaled by rf, or None


def _targets(
    sys: SpinSystem,
    goals: Sequence[np.ndarray],
    channels: Sequence[str],
    dist: RobustnessDistribution,
    subsystems: SubsystemSpec | None,
) -> list[_Target]:
    if subsystems is None:
        subs, sub_w = [tuple(sys.names)], [1.0]
    else:
        subsystems.validate(sys)
        subs, sub_w = list(subsystems.subsystems), list(subsystems.weights)
    if len(goals) != len(subs):
        raise ValueError(f"{len(subs)} subsystem(s) but {len(goals)} goal(s)")
    out = []
    for rf, shifts, w in dist.points(sys):
        shifted = sys.with_shifts(shifts)
        for s, (sub, ws) in enumerate(zip(subs, sub_w)):
            part = restrict_to_subsystem(shifted, sub) if subsystems else shifted
            goal = np.asarray(goals[s], dtype=complex)
            if goal.shape != (part.dim, part.dim):
                raise ValueError(
                    f"goal shape {goal.shape} does not match {part.dim}-dim system"
                )
            ctrl = control_operators(part)
            species = part.species
            controls = [
                tuple(rf * h for h in ctrl[species.index(c)]) if c in species else None
                for c in channels
            ]
            key = (rf, tuple(sorted(shifts.items())))
            out.append(
                _Target(key, w * ws, goal.conj().T, build_internal_hamiltonian(part), controls)
            )
    return out


def _step_hamiltonians(t: _Target, durations, amps) -> np.ndarray:
    h = np.broadcast_to(t.h0, (durations.size,) + t.h0.shape).copy()
    for c, ops in enumerate(t.controls):
        if ops is None:
            continue
        h += amps[:, c, 0, None, None] * ops[0] + amps[:, c, 1, None, None] * ops[1]
    return h


def _evaluate_target(
    t: _Target, durations, amps, grads: bool, exact: bool, max_angle: float | None
):
    """Return ``(phi, d phi/d amps, d phi/d durations)`` for one target."""
    n = t.h0.shape[0]
    h = _step_hamiltonians(t, durations, amps)
    lam, v = np.linalg.eigh(h)
    if max_angle is not None and not exact:
        spread = (lam[:, -1] - lam[:, 0]) * durations
        if np.any(spread > max_angle):
            warnings.warn(
                f"step rotation up to {spread.max():.3g} rad exceeds {max_angle} rad; "
                "first-order gradients will be inaccurate",
                stacklevel=3,
            )
    ph = np.exp(-1j * lam * durations[:, None])
    vd = np.conj(np.swapaxes(v, -1, -2))
    u = (v * ph[:, None, :]) @ vd
    m_steps = durations.size
    fwd = np.empty_like(u)
    acc = np.eye(n, dtype=complex)
    for j in range(m_steps):
        fwd[j] = acc
        acc = u[j] @ acc
    g = np.vdot(t.goal_dag.conj().T, acc)  # tr(G^dag U)
    phi = abs(g) ** 2 / n ** 2
    if not grads:
        return phi, None, None
    bwd = np.empty_like(u)
    acc = t.goal_dag.copy()
    for j in range(m_steps - 1, -1, -1):
        bwd[j] = acc
        acc = acc @ u[j]
    mj = fwd @ bwd  # tr(B_j dU_j F_j) = tr(M_j dU_j)
    scale = 2.0 / n ** 2
    d_amp = np.zeros(amps.shape)
    if exact:
        dl = lam[:, :, None] - lam[:, None, :]
        dph = ph[:, :, None] - ph[:, None, :]
        close = np.abs(dl) < 1e-9
        with np.errstate(divide="ignore", invalid="ignore"):
            gam = np.where(close, -1j * durations[:, None, None] * ph[:, :, None], dph / dl)
        w = np.swapaxes(vd @ mj @ v, -1, -2) * gam
        for c, ops in enumerate(t.controls):
            if ops is None:
                continue
            for q in range(2):
                k = vd @ ops[q] @ v
                dg = np.einsum("jab,jab->j", w, k)
                d_amp[:, c, q] = scale * np.real(np.conj(g) * dg)
    else:
        mu = mj @ u
        for c, ops in enumerate(t.controls):
            if ops is None:
                continue
            for q in range(2):
                dg = -1j * durations * np.einsum("jab,ba->j", mu, ops[q])
                d_amp[:, c, q] = scale * np.real(np.conj(g) * dg)
    dg_dt = -1j * np.einsum("jab,jbc,jca->j", mj, h, u)
    d_dur = scale * np.real(np.conj(g) * dg_dt)
    return phi, d_amp, d_dur


class Objective:
    """Ensemble fitness with gradients, shared by the public helpers and the optimizer."""

    def __init__(
        self,
        sys: SpinSystem,
        goals: Sequence[np.ndarray],
        channels: Sequence[str],
        dist: RobustnessDistribution | None = None,
        subsystems: SubsystemSpec | None = None,
        exact: bool = True,
        max_step_angle: float | None = 0.3,
    ):
        self.channels = tuple(channels)
        self.targets = _targets(
            sys, goals, self.channels, dist or RobustnessDistribution(), subsystems
        )
        self.exact = exact
        self.max_step_angle = max_step_angle

    def __call__(self, durations, amps, grads: bool = True):
        durations = np.asarray(durations, dtype=float)
        amps = np.asarray(amps, dtype=float)
        total, d_amp, d_dur = 0.0, np.zeros(amps.shape), np.zeros(durations.shape)
        points: dict[tuple, float] = {}
        wsum: dict[tuple, float] = {}
        for t in self.targets:
            phi, ga, gd = _evaluate_target(
                t, durations, amps, grads, self.exact, self.max_step_angle
            )
            total += t.weight * phi
            points[t.key] = points.get(t.key, 0.0) + t.weight * phi
            wsum[t.key] = wsum.get(t.key, 0.0) + t.weight
            if grads:
                d_amp += t.weight * ga
                d_dur += t.weight * gd
        points = {k: v / wsum[k] if wsum[k] else 0.0 for k, v in points.items()}
        return total, d_amp, d_dur, points


def _goal_list(goal, subsystems) -> list:
    if subsystems is None:
        return [goal]
    return list(goal)


def ensemble_fitness(
    pulse: PulseShape,
    sys: SpinSystem,
    goal,
    dist: RobustnessDistribution | None = None,
    subsystems: SubsystemSpec | None = None,
) -> float:
    """Weighted mean HS fidelity over the ensemble (and subsystems)."""
    obj = Objective(sys, _goal_list(goal, subsystems), pulse.channels, dist, subsystems)
    return obj(pulse.durations, pulse.amplitudes, grads=False)[0]


def gradient(
    pulse: PulseShape,
    sys: SpinSystem,
    goal,
    dist: RobustnessDistribution | None = None,
    subsystems: SubsystemSpec | None = None,
    exact: bool = True,
) -> np.ndarray:
    """d(fitness)/d(u) with shape ``(M, C, 2)``."""
    obj = Objective(
        sys, _goal_list(goal, subsystems), pulse.channels, dist, subsystems, exact
    )
    return obj(pulse.durations, pulse.amplitudes)[1]


def duration_gradient(
    pulse: PulseShape,
    sys: SpinSystem,
    goal,
    dist: RobustnessDistribution | None = None,
    subsystems: SubsystemSpec | None = None,
    time_penalty_weight: float = 0.0,
    include_fidelity: bool = True,
) -> np.ndarray:
    """d(fitness - w * total time)/d(dt_j), exact for piecewise-constant steps."""
    grad = np.full(pulse.n_steps, -float(time_penalty_weight))
    if include_fidelity:
        obj = Objective(sys, _goal_list(goal, subsystems), pulse.channels, dist, subsystems)
        grad += obj(pulse.durations, pulse.amplitudes)[2]
    return grad


def edge_penalty(amps: np.ndarray, caps: np.ndarray, q: int) -> tuple[float, np.ndarray]:
    """Quadratic penalty on normalized power in the first and last ``q`` steps."""
    m = amps.shape[0]
    mask = np.zeros(m)
    mask[: min(q, m)] = 1.0
    mask[max(m - q, 0):] = 1.0
    norm = amps / caps[None, :, None]
    value = float(np.sum(mask[:, None, None] * norm ** 2))
    grad = 2 * mask[:, None, None] * norm / caps[None, :, None]
    return value, grad


# ---------------------------------------------------------------------------
# optimizer


def _channel_caps(sys: SpinSystem, channels) -> np.ndarray:
    return np.array([sys.channel(c).max_amplitude for c in channels])


def _project(amps: np.ndarray, caps: np.ndarray) -> np.ndarray:
    mag = np.hypot(amps[..., 0], amps[..., 1])
    factor = np.minimum(1.0, caps[None, :] / np.maximum(mag, 1e-300))
    return amps * factor[..., None]


def optimize(
    config: GrapeConfig,
    sys: SpinSystem,
    goal,
    guess: PulseShape | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> GrapeResult:
    """Polak-Ribiere conjugate-gradient ascent on fitness minus penalties.

    ``goal`` is a unitary on ``sys``, or one unitary per subsystem when
    ``config.subsystems`` is set.  Returns the best pulse seen.
    """
    channels = config.channels or tuple(sys.species)
    caps = _channel_caps(sys, channels)
    obj = Objective(
        sys,
        _goal_list(goal, config.subsystems),
        channels,
        config.robustness,
        config.subsystems,
        config.exact_gradient,
        config.max_step_angle,
    )
    if guess is None:
        guess = initial_guess(config.guess, config.n_steps, channels, caps, config.initial_dt)
    if guess.channels != tuple(channels):
        raise ValueError(f"guess channels {guess.channels} != {tuple(channels)}")
    m = guess.n_steps
    dt_scale = config.initial_dt
    floor = min(config.duration_floor, float(guess.durations.min())) / dt_scale
    n_amp = m * len(channels) * 2
    opt_t = config.optimize_durations

    def unpack(x):
        amps = x[:n_amp].reshape(m, len(channels), 2) * caps[None, :, None]
        durs = x[n_amp:] * dt_scale if opt_t else guess.durations
        return amps, durs

    def project(x):
        x = x.copy()
        amps = _project(x[:n_amp].reshape(m, len(channels), 2), np.ones(len(channels)))
        x[:n_amp] = amps.reshape(-1)
        if opt_t:
            x[n_amp:] = np.maximum(x[n_amp:], floor)
        return x

    def evaluate(x, grads=True):
        amps, durs = unpack(x)
        fit, ga, gd, pts = obj(durs, amps, grads)
        val = fit
        if config.time_penalty_weight:
            val -= config.time_penalty_weight * durs.sum()
        if config.edge_penalty_weight:
            pe, pg = edge_penalty(amps, caps, config.edge_steps)
            val -= config.edge_penalty_weight * pe
        if not grads:
            return val, None, fit, pts
        ga = ga.copy()
        if config.edge_penalty_weight:
            ga -= config.edge_penalty_weight * pg
        g = (ga * caps[None, :, None]).reshape(-1)
        if opt_t:
            gd = (gd - config.time_penalty_weight) * dt_scale
            g = np.concatenate([g, gd])
        return val, g, fit, pts

    x0 = (guess.amplitudes / caps[None, :, None]).reshape(-1)
    if opt_t:
        x0 = np.concatenate([x0, guess.durations / dt_scale])
    x = project(x0)
    f, g, fit, pts = evaluate(x)
    history = [f]
    best = (f, x, fit, pts)
    d = g.copy()
    g_prev = None
    restart_every = m * len(channels) * 2
    since_restart = 0
    step = prev_slope = None
    it = 0
    for it in range(1, config.max_iterations + 1):
        if config.stop_at_target and fit >= config.target_fidelity:
            it -= 1
            break
        if g_prev is not None and since_restart < restart_every:
            beta = max(0.0, float(g @ (g - g_prev)) / max(float(g_prev @ g_prev), 1e-300))
            d = g + beta * d
        else:
            d = g.copy()
            since_restart = 0
        if float(g @ d) <= 0:
            d = g.copy()
            since_restart = 0
        slope = float(g @ d)
        dmax = float(np.abs(d).max())
        if dmax == 0:
            break
        if step and prev_slope:
            trial = min(step * prev_slope / slope, 1.0 / dmax)
        else:
            trial = 0.05 / dmax
        accepted = False
        for _ in range(40):
            xn = project(x + trial * d)
            fn, _, fitn, ptsn = evaluate(xn, grads=False)
            if fn >= f + 1e-4 * float(g @ (xn - x)) and fn >= f:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            if since_restart == 0:
                break
            g_prev = None
            since_restart = 0
            continue
        # refine with the parabola through f(0), f'(0) and f(trial)
        curv = (fn - f - slope * trial) / trial ** 2
        if curv < 0:
            alt = min(max(-slope / (2 * curv), 0.1 * trial), 10 * trial)
            xe = project(x + alt * d)
            fe, _, fite, ptse = evaluate(xe, grads=False)
            if fe > fn:
                trial, xn, fn, fitn, ptsn = alt, xe, fe, fite, ptse
        else:
            for _ in range(20):
                xe = project(x + 2 * trial * d)
                fe, _, fite, ptse = evaluate(xe, grads=False)
                if fe <= fn:
                    break
                trial, xn, fn, fitn, ptsn = 2 * trial, xe, fe, fite, ptse
        step, prev_slope = trial, slope
        fn, gn, fitn, ptsn = evaluate(xn)
        improvement = fn - f
        g_prev, g = g, gn
        x, f, fit, pts = xn, fn, fitn, ptsn
        history.append(f)
        since_restart += 1
        if f > best[0]:
            best = (f, x, fit, pts)
        if callback is not None:
            callback(it, f)
        if improvement < config.convergence_threshold:
            break
    f, x, fit, pts = best
    amps, durs = unpack(x)
    pulse = PulseShape(durs, amps, tuple(channels))
    converged = bool(fit >= config.target_fidelity)
    if not converged:
        log.warning(
            "GRAPE did not reach target fidelity %.6g (best %.6g)", config.target_fidelity, fit
        )
    return GrapeResult(pulse, history, float(fit), pts, converged, it)


# ---------------------------------------------------------------------------
# smoothing


def occupied_bandwidth(pulse: PulseShape, fraction: float = 0.99) -> float:
    """Smallest |f| (Hz) containing ``fraction`` of the complex-envelope power."""
    dt = float(pulse.durations.mean())
    env = pulse.amplitudes[..., 0] + 1j * pulse.amplitudes[..., 1]
    psd = np.abs(np.fft.fft(env, axis=0)) ** 2
    power = psd.sum(axis=1)
    freqs = np.abs(np.fft.fftfreq(pulse.n_steps, dt))
    order = np.argsort(freqs, kind="stable")
    total = power.sum()
    if total == 0:
        return 0.0
    cum = np.cumsum(power[order]) / total
    return float(freqs[order][np.searchsorted(cum, fraction - 1e-12)])


def resample(pulse: PulseShape, target_dt: float, window: int = 1) -> PulseShape:
    """Moving-average the steps over ``window``, then spline onto a finer grid."""
    if window > 1:
        kernel = np.ones(window) / window
        pad = window // 2
        amps = np.empty_like(pulse.amplitudes)
        for c in range(pulse.amplitudes.shape[1]):
            for q in range(2):
                padded = np.pad(pulse.amplitudes[:, c, q], (pad, window - 1 - pad), mode="edge")
                amps[:, c, q] = np.convolve(padded, kernel, mode="valid")
    else:
        amps = pulse.amplitudes
    t_old = np.cumsum(pulse.durations) - pulse.durations / 2
    total = pulse.total_duration
    n_new = max(2, int(round(total / target_dt)))
    dt = total / n_new
    t_new = (np.arange(n_new) + 0.5) * dt
    spline = CubicSpline(t_old, amps, axis=0)
    return PulseShape(np.full(n_new, dt), spline(t_new), pulse.channels)


def smooth_and_reoptimize(
    result: GrapeResult,
    sys: SpinSystem,
    goal,
    config: GrapeConfig,
    target_dt: float,
    rounds: int = 1,
    window: int = 1,
    edge_penalty_weight: float | None = None,
) -> GrapeResult:
    """Resample onto ``target_dt`` steps and re-optimize, ``rounds`` times.

    Each round checks the smoothed pulse against ``config.bandwidth_cap``
    (when set) before re-optimizing with the edge penalty on.
    """
    pulse = result.pulse
    if not target_dt < float(pulse.durations.max()):
        raise ValueError("target_dt must be shorter than the current step")
    edge = config.edge_penalty_weight if edge_penalty_weight is None else edge_penalty_weight
    if edge <= 0:
        edge = 1.0
    caps = _channel_caps(sys, pulse.channels)
    for _ in range(rounds):
        smooth = resample(pulse, target_dt, window)
        smooth = PulseShape(smooth.durations, _project(smooth.amplitudes, caps), smooth.channels)
        if config.bandwidth_cap is not None:
            bw = occupied_bandwidth(smooth)
            if bw > config.bandwidth_cap:
                raise BandwidthExceeded(
                    f"smoothed pulse occupies {bw:.6g} Hz > cap {config.bandwidth_cap:.6g} Hz"
                )
        cfg = replace(
            config,
            n_steps=smooth.n_steps,
            initial_dt=float(smooth.durations[0]),
            edge_penalty_weight=edge,
            channels=pulse.channels,
        )
        result = optimize(cfg, sys, goal, guess=smooth)
        pulse = result.pulse
    return result
