"""
Spin-system model, Hamiltonians, propagators and unitary fidelity measures.

Conventions
-----------
* Frequencies supplied by the user are in Hz.  Hamiltonians are returned in
  rad/s with ``H = sum_i pi*nu_i*Z_i + sum_{i<j} (pi/2)*J_ij*Z_i Z_j``, so a
  free evolution of ``t = 1/(2J)`` yields ``exp(-i pi/4 Z Z)``.
* A control amplitude ``u`` (Hz) enters as ``pi*(u_x X + u_y Y)`` summed over
  the spins of the channel's species; a constant ``u_x = a`` for time ``t``
  nutates an on-resonance spin by ``2*pi*a*t`` about x.
* Tensor order follows the spin list; the first spin is the most significant
  factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_SPINS = 10
DEFAULT_MAX_AMPLITUDE = 30e3

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

COUPLING_MODELS = ("weak_ising", "full_exchange")


class SystemTooLarge(ValueError):
    """Raised when a dense simulation would exceed :data:`MAX_SPINS`."""


@dataclass(frozen=True)
class Spin:
    name: str
    species: str
    shift: float = 0.0


@dataclass(frozen=True)
class ControlChannel:
    species: str
    transmitter_freq: float = 0.0
    max_amplitude: float = DEFAULT_MAX_AMPLITUDE

    def __post_init__(self):
        if not self.max_amplitude > 0:
            raise ValueError(f"channel {self.species}: max_amplitude must be > 0")


def pair_key(a: str, b: str, order: Sequence[str]) -> tuple[str, str]:
    """Return ``(a, b)`` sorted by position in ``order``."""
    ia, ib = order.index(a), order.index(b)
    return (a, b) if ia < ib else (b, a)


@dataclass(frozen=True)
class SpinSystem:
    """Named spins, chemical shifts and scalar couplings.

    ``couplings`` maps spin-name pairs to J in Hz; it may be given with either
    ordering and is stored with keys sorted by spin order.  One
    :class:`ControlChannel` exists per species; missing channels are filled
    in with a zero transmitter offset.
    """

    spins: tuple[Spin, ...]
    couplings: Mapping[tuple[str, str], float] = field(default_factory=dict)
    coupling_model: str = "weak_ising"
    channels: tuple[ControlChannel, ...] = ()

    def __post_init__(self):
        spins = tuple(self.spins)
        names = [s.name for s in spins]
        if len(set(names)) != len(names):
            raise ValueError(f"spin names must be unique: {names}")
        if not spins:
            raise ValueError("a spin system needs at least one spin")
        if self.coupling_model not in COUPLING_MODELS:
            raise ValueError(f"unknown coupling model {self.coupling_model!r}")
        couplings: dict[tuple[str, str], float] = {}
        for (a, b), j in dict(self.couplings).items():
            if a not in names or b not in names:
                raise ValueError(f"coupling {a}-{b} references an unknown spin")
            if a == b:
                raise ValueError(f"self coupling on {a}")
            key = pair_key(a, b, names)
            if key in couplings and couplings[key] != float(j):
                raise ValueError(f"asymmetric coupling for {a}-{b}")
            if not math.isfinite(j):
                raise ValueError(f"coupling {a}-{b} is not finite")
            couplings[key] = float(j)
        species = list(dict.fromkeys(s.species for s in spins))
        channels = {}
        for ch in self.channels:
            if ch.species in channels:
                raise ValueError(f"duplicate channel for species {ch.species}")
            channels[ch.species] = ch
        for sp in species:
            channels.setdefault(sp, ControlChannel(sp))
        object.__setattr__(self, "spins", spins)
        object.__setattr__(self, "couplings", couplings)
        object.__setattr__(
            self, "channels", tuple(channels[sp] for sp in species)
        )

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.spins]

    @property
    def n(self) -> int:
        return len(self.spins)

    @property
    def dim(self) -> int:
        return 2 ** len(self.spins)

    @property
    def species(self) -> list[str]:
        return [ch.species for ch in self.channels]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown spin {name!r}") from None

    def spin(self, name: str) -> Spin:
        return self.spins[self.index(name)]

    def channel(self, species: str) -> ControlChannel:
        for ch in self.channels:
            if ch.species == species:
                return ch
        raise KeyError(f"no channel for species {species!r}")

    def J(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        return self.couplings.get(pair_key(a, b, self.names), 0.0)

    def offset(self, name: str) -> float:
        """Resonance offset of ``name`` from its channel transmitter (Hz)."""
        s = self.spin(name)
        return s.shift - self.channel(s.species).transmitter_freq

    def coupled_pairs(self) -> list[tuple[str, str]]:
        names = self.names
        return [
            (a, b)
            for i, a in enumerate(names)
            for b in names[i + 1:]
            if self.J(a, b) != 0.0
        ]

    def with_shifts(self, extra: Mapping[str, float]) -> "SpinSystem":
        """Copy with ``extra`` Hz added to the named spins' shifts."""
        spins = tuple(
            Spin(s.name, s.species, s.shift + extra.get(s.name, 0.0))
            for s in self.spins
        )
        return SpinSystem(spins, self.couplings, self.coupling_model, self.channels)


def restrict_to_subsystem(sys: SpinSystem, subset: Iterable[str]) -> SpinSystem:
    """Keep only ``subset`` (in system order) and couplings internal to it."""
    subset = list(subset)
    if not subset:
        raise ValueError("subsystem must be nonempty")
    for name in subset:
        sys.index(name)
    keep = [s for s in sys.spins if s.name in subset]
    names = {s.name for s in keep}
    couplings = {
        k: j for k, j in sys.couplings.items() if k[0] in names and k[1] in names
    }
    species = {s.species for s in keep}
    channels = tuple(ch for ch in sys.channels if ch.species in species)
    return SpinSystem(tuple(keep), couplings, sys.coupling_model, channels)


@dataclass(frozen=True)
class SubsystemSpec:
    """Possibly overlapping spin subsets with nonnegative fitness weights."""

    subsystems: tuple[tuple[str, ...], ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        subs = tuple(tuple(s) for s in self.subsystems)
        w = tuple(self.weights) or tuple(1.0 / len(subs) for _ in subs)
        if len(w) != len(subs):
            raise ValueError("one weight per subsystem required")
        if any(len(s) == 0 for s in subs):
            raise ValueError("subsystems must be nonempty")
        if any(x < 0 for x in w):
            raise ValueError("subsystem weights must be nonnegative")
        object.__setattr__(self, "subsystems", subs)
        object.__setattr__(self, "weights", w)

    def validate(self, sys: SpinSystem, strong_threshold: float | None = None):
        for sub in self.subsystems:
            for name in sub:
                sys.index(name)
        if strong_threshold is None:
            return
        for (a, b), j in sys.couplings.items():
            if abs(j) >= strong_threshold and not any(
                a in sub and b in sub for sub in self.subsystems
            ):
                raise ValueError(
                    f"strong coupling {a}-{b} ({j} Hz) is not internal to any subsystem"
                )


# ---------------------------------------------------------------------------
# operators


def check_size(n: int):
    if n > MAX_SPINS:
        raise SystemTooLarge(
            f"{n} spins requested; dense simulation is capped at {MAX_SPINS}"
        )


def embed(op: np.ndarray, k: int, n: int) -> np.ndarray:
    """Embed a single-spin operator acting on spin ``k`` of ``n``."""
    left = np.eye(2 ** k, dtype=complex)
    right = np.eye(2 ** (n - k - 1), dtype=complex)
    return np.kron(np.kron(left, op), right)


def z_diagonal(k: int, n: int) -> np.ndarray:
    """Eigenvalues (+1/-1) of ``Z_k`` on the computational basis."""
    idx = np.arange(2 ** n)
    return 1.0 - 2.0 * ((idx >> (n - 1 - k)) & 1)


def internal_diagonal(sys: SpinSystem) -> np.ndarray:
    """Diagonal of the weak-coupling internal Hamiltonian (rad/s)."""
    n = sys.n
    names = sys.names
    z = [z_diagonal(k, n) for k in range(n)]
    h = np.zeros(2 ** n)
    for k, name in enumerate(names):
        h += math.pi * sys.offset(name) * z[k]
    for (a, b), j in sys.couplings.items():
        h += 0.5 * math.pi * j * z[names.index(a)] * z[names.index(b)]
    return h


def build_internal_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Internal Hamiltonian in rad/s, tensor order = spin order."""
    check_size(sys.n)
    h = np.diag(internal_diagonal(sys)).astype(complex)
    if sys.coupling_model == "full_exchange":
        n = sys.n
        names = sys.names
        for (a, b), j in sys.couplings.items():
            ia, ib = names.index(a), names.index(b)
            xx = embed(SX, ia, n) @ embed(SX, ib, n)
            yy = embed(SY, ia, n) @ embed(SY, ib, n)
            h += 0.5 * math.pi * j * (xx + yy)
    return h


def control_operators(sys: SpinSystem) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-channel ``(pi*sum X_k, pi*sum Y_k)`` over spins of the species."""
    n = sys.n
    out = []
    for ch in sys.channels:
        hx = np.zeros((2 ** n, 2 ** n), dtype=complex)
        hy = np.zeros_like(hx)
        for k, s in enumerate(sys.spins):
            if s.species == ch.species:
                hx += embed(SX, k, n)
                hy += embed(SY, k, n)
        out.append((math.pi * hx, math.pi * hy))
    return out


# ---------------------------------------------------------------------------
# pulses


@dataclass(frozen=True, eq=False)
class PulseShape:
    """Piecewise-constant controls.

    ``durations`` has shape ``(M,)`` in seconds; ``amplitudes`` has shape
    ``(M, C, 2)`` holding ``(u_x, u_y)`` in Hz for each channel in
    ``channels`` (species identifiers).
    """

    durations: np.ndarray
    amplitudes: np.ndarray
    channels: tuple[str, ...]

    def __post_init__(self):
        d = np.asarray(self.durations, dtype=float).reshape(-1)
        a = np.asarray(self.amplitudes, dtype=float)
        channels = tuple(self.channels)
        if a.shape != (d.size, len(channels), 2):
            raise ValueError(
                f"amplitudes shape {a.shape} != ({d.size}, {len(channels)}, 2)"
            )
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise ValueError("step durations must be finite and > 0")
        if not np.all(np.isfinite(a)):
            raise ValueError("pulse amplitudes must be finite")
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "channels", channels)

    @classmethod
    def zeros(cls, n_steps: int, dt: float, channels: Sequence[str]) -> "PulseShape":
        return cls(np.full(n_steps, dt), np.zeros((n_steps, len(channels), 2)), channels)

    @property
    def n_steps(self) -> int:
        return self.durations.size

    @property
    def total_duration(self) -> float:
        return float(self.durations.sum())

    def amplitude(self) -> np.ndarray:
        """Nutation amplitude per step and channel (Hz)."""
        return np.hypot(self.amplitudes[..., 0], self.amplitudes[..., 1])

    def check_caps(self, sys: SpinSystem, tol: float = 1e-9):
        amp = self.amplitude()
        for c, sp in enumerate(self.channels):
            cap = sys.channel(sp).max_amplitude
            if np.any(amp[:, c] > cap * (1 + tol)):
                raise ValueError(f"channel {sp} exceeds max amplitude {cap} Hz")

    def scaled(self, factor: float) -> "PulseShape":
        return PulseShape(self.durations, self.amplitudes * factor, self.channels)

    def phase_shifted(self, phases: Mapping[str, float]) -> "PulseShape":
        """Rotate each channel's (u_x, u_y) by ``phases[channel]`` radians."""
        a = self.amplitudes.copy()
        for c, sp in enumerate(self.channels):
            phi = phases.get(sp, 0.0)
            if phi:
                ux, uy = a[:, c, 0].copy(), a[:, c, 1].copy()
                a[:, c, 0] = math.cos(phi) * ux - math.sin(phi) * uy
                a[:, c, 1] = math.sin(phi) * ux + math.cos(phi) * uy
        return PulseShape(self.durations, a, self.channels)

    def __eq__(self, other):
        if not isinstance(other, PulseShape):
            return NotImplemented
        return (
            self.channels == other.channels
            and np.array_equal(self.durations, other.durations)
            and np.array_equal(self.amplitudes, other.amplitudes)
        )


def channel_matrix(sys: SpinSystem, pulse: PulseShape) -> list[int | None]:
    """Map each pulse channel onto the system's channel index (None if absent)."""
    species = sys.species
    return [species.index(sp) if sp in species else None for sp in pulse.channels]


def step_hamiltonians(
    sys: SpinSystem,
    pulse: PulseShape,
    rf_scale: float = 1.0,
    h_int: np.ndarray | None = None,
) -> np.ndarray:
    """Stack of total Hamiltonians ``(M, N, N)`` for each pulse step."""
    check_size(sys.n)
    if h_int is None:
        h_int = build_internal_hamiltonian(sys)
    ctrl = control_operators(sys)
    idx = channel_matrix(sys, pulse)
    h = np.broadcast_to(h_int, (pulse.n_steps,) + h_int.shape).copy()
    amp = pulse.amplitudes * rf_scale
    for c, k in enumerate(idx):
        if k is None:
            continue
        hx, hy = ctrl[k]
        h += amp[:, c, 0, None, None] * hx + amp[:, c, 1, None, None] * hy
    return h


def expm_hermitian(h: np.ndarray, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``exp(-i t H)`` for a (stack of) Hermitian H via eigendecomposition.

    Returns ``(U, evals, evecs)`` so callers can reuse the spectral data.
    """
    evals, evecs = np.linalg.eigh(h)
    t = np.asarray(t, dtype=float)
    phase = np.exp(-1j * evals * t[..., None])
    u = (evecs * phase[..., None, :]) @ np.conj(np.swapaxes(evecs, -1, -2))
    return u, evals, evecs


def step_propagator(h_int: np.ndarray, controls, duration: float, amps) -> np.ndarray:
    """Propagator of one piecewise-constant step.

    ``controls`` is the output of :func:`control_operators`; ``amps`` is a
    ``(C, 2)`` array of ``(u_x, u_y)`` in Hz aligned with it.
    """
    amps = np.asarray(amps, dtype=float).reshape(len(controls), 2)
    if not np.all(np.isfinite(amps)):
        raise ValueError("non-finite control amplitude")
    if not duration > 0:
        raise ValueError("step duration must be > 0")
    h = np.array(h_int, dtype=complex)
    for (hx, hy), (ux, uy) in zip(controls, amps):
        h = h + ux * hx + uy * hy
    return expm_hermitian(h, duration)[0]


def step_propagators(
    sys: SpinSystem, pulse: PulseShape, rf_scale: float = 1.0
) -> np.ndarray:
    h = step_hamiltonians(sys, pulse, rf_scale)
    return expm_hermitian(h, pulse.durations)[0]


def total_propagator(steps: Sequence[np.ndarray] | np.ndarray, dim: int | None = None) -> np.ndarray:
    """Time-ordered product ``U_M ... U_1`` (first element applied first)."""
    steps = list(steps)
    if not steps:
        if dim is None:
            raise ValueError("dimension required for an empty product")
        return np.eye(dim, dtype=complex)
    shape = steps[0].shape
    u = np.eye(shape[0], dtype=complex)
    for s in steps:
        if s.shape != shape:
            raise ValueError(f"propagator dimension mismatch: {s.shape} vs {shape}")
        u = s @ u
    return u


def simulate(sys: SpinSystem, pulse: PulseShape, rf_scale: float = 1.0) -> np.ndarray:
    """Full propagator of ``pulse`` on ``sys``."""
    return total_propagator(step_propagators(sys, pulse, rf_scale))


def free_propagator(sys: SpinSystem, t: float) -> np.ndarray:
    """Propagator of free evolution for ``t`` seconds."""
    if t < 0:
        raise ValueError("negative evolution time")
    if sys.coupling_model == "weak_ising":
        return np.diag(np.exp(-1j * t * internal_diagonal(sys)))
    return expm_hermitian(build_internal_hamiltonian(sys), t)[0]


# ---------------------------------------------------------------------------
# fidelities


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def hs_fidelity(u_goal: np.ndarray, u_sim: np.ndarray) -> float:
    """Hilbert-Schmidt fidelity ``|tr(U_goal^dag U_sim)|^2 / N^2``."""
    _check_pair(u_goal, u_sim)
    n = u_goal.shape[0]
    return float(abs(np.vdot(u_goal, u_sim)) ** 2 / n ** 2)


def worst_case_fidelity(u_goal: np.ndarray, u_sim: np.ndarray) -> float:
    """Minimum over pure inputs of ``|<psi|U_goal^dag U_sim|psi>|^2``.

    The overlap ranges over the convex hull of the eigenvalues of the unitary
    ``U_goal^dag U_sim``; the minimum modulus is the distance from the origin
    to that hull.  For points on the unit circle confined to an arc of
    angular length ``L < pi`` the closest hull point lies on the chord between
    the arc ends, at distance ``cos(L/2)``.
    """
    _check_pair(u_goal, u_sim)
    m = np.conj(u_goal.T) @ u_sim
    angles = np.sort(np.angle(np.linalg.eigvals(m)))
    gaps = np.diff(np.concatenate([angles, angles[:1] + 2 * math.pi]))
    span = 2 * math.pi - gaps.max()
    if span >= math.pi:
        return 0.0
    return float(math.cos(span / 2) ** 2)


def average_fidelity(u_goal: np.ndarray, u_sim: np.ndarray) -> float:
    """Haar-averaged state fidelity, ``(N*Phi + 1)/(N + 1)``."""
    n = u_goal.shape[0]
    return (n * hs_fidelity(u_goal, u_sim) + 1) / (n + 1)


# ---------------------------------------------------------------------------
# gates


def rotation(angle: float, phase: float) -> np.ndarray:
    """``R_phase(angle) = exp(-i angle/2 (cos(phase) X + sin(phase) Y))``."""
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    return np.array(
        [
            [c, -1j * s * np.exp(-1j * phase)],
            [-1j * s * np.exp(1j * phase), c],
        ],
        dtype=complex,
    )


def rz(angle: float) -> np.ndarray:
    """``exp(-i angle/2 Z)``."""
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])


def operator_on(
    op: np.ndarray, targets: Sequence[int], n: int
) -> np.ndarray:
    """Embed an operator on ``targets`` (in the op's own tensor order) into ``n`` spins."""
    targets = list(targets)
    k = len(targets)
    if op.shape != (2 ** k, 2 ** k):
        raise ValueError(f"operator shape {op.shape} does not match {k} targets")
    if len(set(targets)) != k:
        raise ValueError("duplicate targets")
    rest = [q for q in range(n) if q not in targets]
    full = np.kron(op, np.eye(2 ** len(rest), dtype=complex))
    # permute from (targets..., rest...) into natural spin order
    order = targets + rest
    perm = np.argsort(order)
    t = full.reshape([2] * (2 * n))
    t = t.transpose(list(perm) + [n + p for p in perm])
    return t.reshape(2 ** n, 2 ** n)


def zz_phase_diagonal(
    sys: SpinSystem, z: Mapping[str, float], zz: Mapping[tuple[str, str], float]
) -> np.ndarray:
    """Diagonal of ``prod exp(-i a_k Z_k) prod exp(-i b_jk Z_j Z_k)``."""
    n = sys.n
    names = sys.names
    phase = np.zeros(2 ** n)
    for name, a in z.items():
        phase += a * z_diagonal(names.index(name), n)
    for (p, q), b in zz.items():
        phase += b * z_diagonal(names.index(p), n) * z_diagonal(names.index(q), n)
    return np.exp(-1j * phase)


def equivalent_up_to_local_z(u: np.ndarray, v: np.ndarray, tol: float = 1e-9) -> bool:
    """True if diagonal ``u`` equals ``v`` up to local Z rotations and a global phase.

    A phase pattern ``phi(x)`` on the boolean cube is affine in the ``z_k``
    exactly when every mixed second difference vanishes, i.e.
    ``r(x00) r(x11) = r(x01) r(x10)`` for the ratio ``r = u/v`` and every
    pair of bits.
    """
    du, dv = np.diag(u), np.diag(v)
    if not (np.allclose(u, np.diag(du), atol=tol) and np.allclose(v, np.diag(dv), atol=tol)):
        return False
    r = du / dv
    n = int(round(math.log2(r.size)))
    idx = np.arange(r.size)
    for j in range(n):
        bj = 1 << (n - 1 - j)
        for k in range(j + 1, n):
            bk = 1 << (n - 1 - k)
            base = idx[((idx & bj) == 0) & ((idx & bk) == 0)]
            lhs = r[base] * r[base | bj | bk]
            rhs = r[base | bj] * r[base | bk]
            if not np.allclose(lhs, rhs, atol=1e-8):
                return False
    return True
