"""
Program compiler: virtual-180 planning, frame and coupling walk, delay
optimization and schedule emission.

Physical pulses and refocusing 180s split the program into delay slots, one
before each physical event and one after the last.  Goal values are affine
in the slot delays, so the compiler walks the program once at zero delays
and once per unit delay, then optimizes the delays on that linear model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..decomposer import ErrorTerms, IdealGate, gate_gauge
from ..spinsys import PulseShape, SpinSystem, rz
from .delays import DelayConfig, optimize_delays, wrapped
from .frames import TWO_PI, FrameTracker, frame_table, rotation_parameters, wrap
from .ledger import CouplingLedger, Goal, InfeasibleGoal
from .program import STATE_TOKENS, ZZ, Program, Pulse, Refocus, Z

ANGLE_TOL = 1e-9
PHASE_TOL = 1e-6


class CompileError(ValueError):
    pass


class PhaseConflict(CompileError):
    pass


class CompileWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RegisteredPulse:
    """A named pulse: its decomposition and, optionally, its waveform.

    Without a waveform the pulse is treated as its decomposition, which for
    :func:`ideal_pulse` is the bare ideal gate taking no time.
    """

    name: str
    terms: ErrorTerms
    shape: PulseShape | None = None

    @property
    def ideal(self) -> IdealGate:
        return self.terms.ideal

    @property
    def duration(self) -> float:
        return self.shape.total_duration if self.shape is not None else self.terms.duration

    def channels(self, sys: SpinSystem) -> tuple[str, ...]:
        if self.shape is not None:
            return tuple(self.shape.channels)
        used = {sys.spin(t).species for t in self.ideal.targets}
        return tuple(sp for sp in sys.species if sp in used)


def ideal_pulse(name: str, targets: Sequence[str], unitary: np.ndarray) -> RegisteredPulse:
    """Zero-duration pulse that applies ``unitary`` to ``targets`` exactly."""
    gate = IdealGate(((tuple(targets), np.asarray(unitary, dtype=complex)),), name)
    return RegisteredPulse(name, ErrorTerms(gate))


def _nontrivial(ideal: IdealGate):
    for targets, u in ideal.factors:
        if not np.allclose(u, u[0, 0] * np.eye(len(u)), atol=ANGLE_TOL):
            yield targets, u


def rotated_ideal(ideal: IdealGate, phase: float) -> IdealGate:
    """The ideal gate with its phase advanced by ``phase`` radians about Z."""
    factors = []
    for targets, u in ideal.factors:
        r = np.eye(1, dtype=complex)
        for _ in targets:
            r = np.kron(r, rz(phase))
        factors.append((targets, r @ u @ r.conj().T))
    return IdealGate(tuple(factors), ideal.label)


def refocus_target(pulse: RegisteredPulse) -> tuple[str, float]:
    """``(spin, phase)`` of a registered single-spin 180."""
    factors = list(_nontrivial(pulse.ideal))
    if len(factors) == 1 and len(factors[0][0]) == 1:
        rp = rotation_parameters(factors[0][1])
        if rp is not None and abs(rp[0] - math.pi) < ANGLE_TOL:
            return factors[0][0][0], rp[1]
    raise CompileError(f"refocus pulse {pulse.name!r} is not a 180 on a single spin")


def _is_90(u) -> tuple[float, float] | None:
    rp = rotation_parameters(u)
    return rp if rp is not None and abs(rp[0] - math.pi / 2) < ANGLE_TOL else None


# ---------------------------------------------------------------------------
# planning


@dataclass
class PhysicalEvent:
    kind: str  # "pulse" or "refocus"
    name: str
    source: int  # program event index
    phase: float = 0.0  # logical phase, radians
    assumptions: tuple = ()
    modes: dict[str, str] = field(default_factory=dict)  # spin -> absorb | emit
    spin: str | None = None  # refocused spin
    position: float = 0.5
    completion: bool = False

    @property
    def label(self) -> str:
        tag = " (completion)" if self.completion else ""
        return f"{self.kind} {self.name} #{self.source + 1}{tag}"


@dataclass
class Plan:
    events: list[PhysicalEvent]
    markers: list[list]  # per slot: ZZ and Z events, in program order
    resolutions: dict[int, str]  # refocus source -> how its virtual 180 is cleared


def _touching(program: Program, registry, i: int, spin: str):
    ev = program.events[i]
    if isinstance(ev, Pulse):
        for targets, u in _nontrivial(registry[ev.name].ideal):
            if spin in targets:
                return "pulse", targets, u
    elif isinstance(ev, Refocus) and refocus_target(registry[ev.name])[0] == spin:
        return "refocus", (spin,), None
    return None


def plan_program(program: Program, registry, virtual_180: bool = True) -> Plan:
    """Place physical events and decide how each refocus's virtual 180 clears.

    A refocusing 180 leaves a 180 pending in its spin's frame.  It clears on
    the next 90 on that spin (absorption) or on the next refocus of the spin
    (cancellation); other single-spin rotations pass through.  Failing that,
    the last 90 on the spin before the refocus is sent so that it leaves the
    180 pending instead.  Otherwise a physical completion 180 follows the
    refocus in the same interval.
    """
    evs = program.events
    modes: dict[int, dict[str, str]] = {}
    resolutions: dict[int, str] = {}
    completions: set[int] = set()
    consumed: set[int] = set()
    for i, ev in enumerate(evs):
        if not isinstance(ev, Refocus):
            continue
        spin = refocus_target(registry[ev.name])[0]
        if i in consumed:
            resolutions[i] = "cancelled"
            continue
        how = None
        if virtual_180:
            for j in range(i + 1, len(evs)):
                hit = _touching(program, registry, j, spin)
                if hit is None:
                    continue
                kind, targets, u = hit
                if kind == "refocus":
                    consumed.add(j)
                    how = "cancelled"
                elif len(targets) == 1 and _is_90(u) and spin not in modes.get(j, {}):
                    modes.setdefault(j, {})[spin] = "absorb"
                    how = "absorbed"
                elif len(targets) == 1 and rotation_parameters(u) is not None:
                    continue
                break
            if how is None:
                for j in range(i - 1, -1, -1):
                    hit = _touching(program, registry, j, spin)
                    if hit is None:
                        continue
                    kind, targets, u = hit
                    if kind == "pulse" and len(targets) == 1 and _is_90(u) and spin not in modes.get(j, {}):
                        modes.setdefault(j, {})[spin] = "emit"
                        how = "emitted"
                    break
        if how is None:
            completions.add(i)
            how = "completed"
        resolutions[i] = how

    phys: list[PhysicalEvent] = []
    markers: list[list] = [[]]
    for i, ev in enumerate(evs):
        if isinstance(ev, (ZZ, Z)):
            markers[-1].append(ev)
            continue
        if isinstance(ev, Pulse):
            phys.append(PhysicalEvent("pulse", ev.name, i, TWO_PI * ev.phase, ev.assumptions, modes.get(i, {})))
            markers.append([])
        else:
            spin = refocus_target(registry[ev.name])[0]
            phys.append(PhysicalEvent("refocus", ev.name, i, spin=spin, position=ev.position))
            markers.append([])
            if i in completions:
                pos = min(1.0, ev.position + 0.5)
                phys.append(PhysicalEvent("refocus", ev.name, i, spin=spin, position=pos, completion=True))
                markers.append([])
    return Plan(phys, markers, resolutions)


# ---------------------------------------------------------------------------
# walking


@dataclass
class CompileOptions:
    """Compiler settings.

    ``initial_state`` maps spins to state tokens holding before the first
    event.  ``zz_modulus`` is the period under which goal angles match.
    ``max_delay`` caps each delay and defaults to twice the longer of the
    program's total coupling time and half the shortest coupling period.
    """

    initial_state: Mapping[str, str] = field(default_factory=dict)
    virtual_180: bool = True
    zz_modulus: float = TWO_PI
    max_delay: float | None = None
    time_penalty: float = 0.0
    acceptance: float = 1e-6
    goal_distance: float = 0.0
    threshold: float = 1e-12
    max_sweeps: int = 200
    observe: str | None = None


@dataclass
class WalkResult:
    frames: FrameTracker
    ledger: CouplingLedger
    phases: list[dict[str, float]]  # channel phases per physical event
    times: list[float]  # start time per physical event

    @property
    def goal_values(self) -> np.ndarray:
        return np.array([g.value for g in self.ledger.goals])


def _initial_states(program_spins, sys, options) -> dict[str, str]:
    states = {k: "unknown" for k in sys.names}
    for k, tok in options.initial_state.items():
        if k not in states:
            raise CompileError(f"initial state for unknown spin {k!r}")
        states[k] = STATE_TOKENS.get(tok, "unknown")
    return states


def _channel_phases(sys, fr: FrameTracker, ev: PhysicalEvent, pulse: RegisteredPulse, strict: bool):
    need: dict[str, list[tuple[float, str]]] = {}
    for targets, u in _nontrivial(pulse.ideal):
        rp = rotation_parameters(u) if len(targets) == 1 else None
        if rp is not None:
            k, phi0 = targets[0], rp[1]
            logical = phi0 + ev.phase
            mode = ev.modes.get(k)
            if mode == "absorb":
                axis = fr.absorb(k, logical)
            elif mode == "emit":
                axis = fr.emit_pending(k, logical)
            else:
                axis = fr.rotation_phase(k, logical)
            need.setdefault(sys.spin(k).species, []).append((axis - phi0, k))
        else:
            for k in targets:
                if fr.pending[k]:
                    raise CompileError(f"{ev.label}: virtual 180 pending on {k} cannot pass a multi-spin gate")
                need.setdefault(sys.spin(k).species, []).append((fr.spin_frames[k] + ev.phase, k))
    out = {}
    for ch, vals in need.items():
        ref = vals[0][0]
        for v, k in vals[1:]:
            if strict and abs(wrap(v - ref)) > PHASE_TOL:
                raise PhaseConflict(
                    f"{ev.label}: spins {vals[0][1]} and {k} on channel {ch} need phases "
                    f"{math.degrees(wrap(ref)):.3f} and {math.degrees(wrap(v)):.3f} deg; "
                    "decompose the pulse into single-spin pulses"
                )
        out[ch] = ref
    return out


def walk(sys: SpinSystem, program: Program, registry, plan: Plan, delays, options: CompileOptions, strict: bool = True) -> WalkResult:
    """Run frames and ledger through the program with the given slot delays."""
    fr = FrameTracker.for_system(sys)
    led = CouplingLedger.for_system(sys)
    states = _initial_states(program.spins(), sys, options)
    phases, times = [], []

    def advance(t):
        fr.delay(sys, t)
        led.delay(fr, t)

    for j in range(len(plan.events) + 1):
        advance(float(delays[j]))
        for m in plan.markers[j]:
            if isinstance(m, ZZ):
                led.request(m.spin_a, m.spin_b, math.pi * m.amount)
            else:
                fr.logical_z(m.spin, m.amount)
        if j == len(plan.events):
            break
        ev = plan.events[j]
        pulse = registry[ev.name]
        terms = pulse.terms
        times.append(fr.time)
        for k, th in terms.z_pre.items():
            fr.physical_z(k, th)
        for (a, b), beta in terms.zz_pre.items():
            led.physical_zz(fr, a, b, beta)
        if ev.kind == "pulse":
            logical = rotated_ideal(pulse.ideal, ev.phase)
            touched = {k for ts, _ in _nontrivial(logical) for k in ts}
            for pair in led.couplings:
                if touched & set(pair) and gate_gauge(logical, pair) != 1:
                    led.goal(ev.label, pair, fr, states)
            phases.append(_channel_phases(sys, fr, ev, pulse, strict))
        else:
            _, phi0 = refocus_target(pulse)
            phases.append({sys.spin(ev.spin).species: fr.refocus(ev.spin) - phi0})
        for k, th in terms.z_post.items():
            fr.physical_z(k, th)
        for (a, b), beta in terms.zz_post.items():
            led.physical_zz(fr, a, b, beta)
        # time and transmitter phase advance; spin precession is in the Z terms
        for ch, f in fr.channel_freqs.items():
            fr.channel_frames[ch] += TWO_PI * f * pulse.duration
        fr.time += pulse.duration
        if ev.kind == "pulse":
            for targets, u in _nontrivial(pulse.ideal):
                for k in targets:
                    if gate_gauge(pulse.ideal, (k,)) != 1:
                        states[k] = "unknown"
            for a in ev.assumptions:
                states[a.spin] = a.state
    for pair in led.couplings:
        led.goal("END", pair, fr, states)
    fr.observe(options.observe or sys.names[0])
    return WalkResult(fr, led, phases, times)


def _coupling_times(sys, program: Program) -> list[tuple[int, float]]:
    """``(program index, time)`` of free evolution realizing each ZZ request."""
    out = []
    for i, ev in enumerate(program.events):
        if isinstance(ev, ZZ):
            j = sys.J(ev.spin_a, ev.spin_b)
            if j == 0:
                raise InfeasibleGoal(f"ZZ requested on {ev.spin_a}-{ev.spin_b}, which has no coupling")
            out.append((i, 2 * ((ev.amount * math.copysign(1, j)) % 2) / abs(j)))
    return out


def initial_delays(sys, program: Program, plan: Plan) -> np.ndarray:
    """Coupling-time estimates split across each interval by the refocus hints."""
    d = np.zeros(len(plan.events) + 1)
    slot_of = {}
    slot = 0
    for i, ev in enumerate(program.events):
        slot_of[i] = slot
        if isinstance(ev, (Pulse, Refocus)):
            slot += sum(1 for e in plan.events if e.source == i)
    need: dict[tuple[int, int], float] = {}
    for i, t in _coupling_times(sys, program):
        lo = hi = slot_of[i]
        while lo > 0 and plan.events[lo - 1].kind == "refocus":
            lo -= 1
        while hi < len(plan.events) and plan.events[hi].kind == "refocus":
            hi += 1
        need[(lo, hi)] = max(need.get((lo, hi), 0.0), t)
    for (lo, hi), t in need.items():
        pos = [0.0]
        for e in plan.events[lo:hi]:
            pos.append(max(pos[-1], e.position))
        pos.append(1.0)
        d[lo:hi + 1] = np.diff(pos) * t
    return d


def default_max_delay(sys, program: Program) -> float:
    js = [abs(sys.J(*p)) for p in sys.coupled_pairs()]
    if not js:
        return 0.0
    total = sum(t for _, t in _coupling_times(sys, program))
    return 2 * max(total, 1 / (2 * max(js)))


def _check(sys, program: Program, registry):
    program.resolve(sys.names, registry.keys())
    for name in program.pulse_names():
        for t in registry[name].ideal.targets:
            sys.index(t)


def track_phases(sys, program: Program, registry, delays=None, options: CompileOptions | None = None) -> FrameTracker:
    """Frames after the program with the given delays (default: initial estimates)."""
    options = options or CompileOptions()
    _check(sys, program, registry)
    plan = plan_program(program, registry, options.virtual_180)
    d = initial_delays(sys, program, plan) if delays is None else delays
    return walk(sys, program, registry, plan, d, options).frames


def ledger_update(sys, program: Program, registry, delays=None, options: CompileOptions | None = None) -> CouplingLedger:
    """Coupling ledger with goals for the given delays (default: initial estimates)."""
    options = options or CompileOptions()
    _check(sys, program, registry)
    plan = plan_program(program, registry, options.virtual_180)
    _coupling_times(sys, program)
    d = initial_delays(sys, program, plan) if delays is None else delays
    return walk(sys, program, registry, plan, d, options).ledger


# ---------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class ScheduleItem:
    start: float
    kind: str  # "pulse" or "delay"
    name: str
    duration: float
    phases: Mapping[str, float] = field(default_factory=dict)  # channel -> radians


@dataclass(frozen=True)
class CircuitOp:
    """One step of the ideal circuit: ``gate``, ``zz`` or ``z``."""

    kind: str
    spins: tuple[str, ...]
    angle: float = 0.0  # radians of exp(-i angle Z...) for zz and z
    gate: IdealGate | None = None


@dataclass
class Schedule:
    items: list[ScheduleItem]
    frames: dict[str, float]
    observation_phase: float
    residuals: list[tuple[str, tuple[str, str], float]]
    distance: float
    delays: np.ndarray
    circuit: list[CircuitOp]
    initial_state: dict[str, str]
    resolutions: dict[int, str] = field(default_factory=dict)
    sweeps: int = 0

    @property
    def duration(self) -> float:
        return self.items[-1].start + self.items[-1].duration if self.items else 0.0

    def pulses(self):
        return [it for it in self.items if it.kind == "pulse"]


def ideal_circuit(program: Program, registry) -> list[CircuitOp]:
    ops = []
    for ev in program.events:
        if isinstance(ev, Pulse):
            g = rotated_ideal(registry[ev.name].ideal, TWO_PI * ev.phase)
            ops.append(CircuitOp("gate", g.targets, gate=g))
        elif isinstance(ev, ZZ):
            ops.append(CircuitOp("zz", (ev.spin_a, ev.spin_b), math.pi * ev.amount))
        elif isinstance(ev, Z):
            ops.append(CircuitOp("z", (ev.spin,), math.pi * ev.amount))
    return ops


def circuit_unitary(ops: Sequence[CircuitOp], names: Sequence[str]) -> np.ndarray:
    from ..decomposer import phase_diagonal

    names = list(names)
    u = np.eye(2 ** len(names), dtype=complex)
    for op in ops:
        if op.kind == "gate":
            u = op.gate.on(names) @ u
        elif op.kind == "zz":
            u = phase_diagonal(names, {}, {op.spins: op.angle})[:, None] * u
        else:
            u = phase_diagonal(names, {op.spins[0]: op.angle}, {})[:, None] * u
    return u


def compile_program(sys: SpinSystem, program: Program, registry: Mapping[str, RegisteredPulse], options: CompileOptions | None = None) -> Schedule:
    """Compile ``program`` into a timed, phase-resolved schedule."""
    options = options or CompileOptions()
    _check(sys, program, registry)
    if options.observe is not None:
        sys.index(options.observe)
    plan = plan_program(program, registry, options.virtual_180)
    d0 = initial_delays(sys, program, plan)
    m = d0.size
    base = walk(sys, program, registry, plan, np.zeros(m), options, strict=False)
    r0 = base.goal_values
    a = np.zeros((r0.size, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        a[:, i] = walk(sys, program, registry, plan, e, options, strict=False).goal_values - r0
    cap = default_max_delay(sys, program) if options.max_delay is None else options.max_delay
    cfg = DelayConfig(
        threshold=options.threshold,
        max_sweeps=options.max_sweeps,
        goal_distance=options.goal_distance,
        time_penalty=options.time_penalty,
        max_delay=cap,
        acceptance=options.acceptance,
        modulus=options.zz_modulus,
    )
    res = optimize_delays(a, r0, d0, cfg)
    final = walk(sys, program, registry, plan, res.delays, options)
    goals: list[Goal] = final.ledger.goals
    residuals = [
        (g.event, g.pair, float(wrapped(np.array(g.value), options.zz_modulus))) for g in goals
    ]
    dist = float(sum(r[2] ** 2 for r in residuals))
    if dist > options.acceptance:
        worst = ", ".join(f"{ev} {p[0]}-{p[1]}: {r:.3g} rad" for ev, p, r in residuals if abs(r) > 1e-6)
        warnings.warn(
            f"coupling distance {dist:.3g} rad^2 above {options.acceptance:g}; residuals {worst}; "
            "consider adding refocusing pulses",
            CompileWarning,
            stacklevel=2,
        )
    items: list[ScheduleItem] = []
    t = 0.0
    for j in range(m):
        if res.delays[j] > 0:
            items.append(ScheduleItem(t, "delay", "delay", float(res.delays[j])))
            t += float(res.delays[j])
        if j < len(plan.events):
            ev = plan.events[j]
            p = registry[ev.name]
            items.append(ScheduleItem(t, "pulse", ev.name, p.duration, dict(final.phases[j])))
            t += p.duration
    if any(final.frames.pending.values()):
        raise CompileError("virtual 180 left pending at program end")
    return Schedule(
        items=items,
        frames=frame_table(final.frames.spin_frames),
        observation_phase=wrap(final.frames.observation_phase),
        residuals=residuals,
        distance=dist,
        delays=res.delays,
        circuit=ideal_circuit(program, registry),
        initial_state=dict(options.initial_state),
        resolutions=plan.resolutions,
        sweeps=res.sweeps,
    )
