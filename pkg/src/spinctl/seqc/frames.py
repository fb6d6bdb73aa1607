"""
Rotating-frame bookkeeping.

Each spin carries a frame ``F = Rz(a) @ Xpi**s`` relating the physical state
to the logical one (``|phys> = F |log>``), where ``Xpi = R_0(pi)`` and
``s = 1`` marks a pending virtual 180.  Physical Z rotations and free
precession only change ``a``; logical Z gates become frame changes; a
logical rotation is sent at the channel phase that realizes it inside the
frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

TWO_PI = 2 * math.pi


def wrap(angle: float) -> float:
    """Map onto (-pi, pi]."""
    return math.pi - (math.pi - angle) % TWO_PI


def absorb_virtual_180(beta: float, alpha: float) -> tuple[float, float]:
    """Rewrite ``R_alpha(pi/2) R_beta(pi)`` as ``Rz(gamma) R_delta(pi/2)``.

    Returns ``(delta, gamma)`` with ``delta = 2*beta - alpha - pi`` and
    ``gamma = 2*(alpha - beta)``, both wrapped onto (-pi, pi].
    """
    return wrap(2 * beta - alpha - math.pi), wrap(2 * (alpha - beta))


def rotation_parameters(u: np.ndarray, tol: float = 1e-9) -> tuple[float, float] | None:
    """``(angle, phase)`` if ``u`` is ``R_phase(angle)`` up to global phase, else None."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        return None
    det = np.linalg.det(u)
    su = u / np.sqrt(det)
    # SU(2): [[c - i nz s, (-i nx - ny) s], [(-i nx + ny) s, c + i nz s]]
    c = (su[0, 0] + su[1, 1]).real / 2
    if abs((su[0, 0] - su[1, 1]).imag) > tol:
        return None
    off = su[1, 0]
    nx_s, ny_s = -off.imag, off.real
    s = math.hypot(nx_s, ny_s)
    if s < tol:
        return (0.0, 0.0) if abs(abs(c) - 1) < tol else None
    angle = 2 * math.atan2(s, c)
    phase = math.atan2(ny_s, nx_s)
    if angle > math.pi + tol:
        angle, phase = TWO_PI - angle, phase + math.pi
    return angle, wrap(phase)


@dataclass
class FrameTracker:
    """Per-spin frames ``(a, s)`` and per-channel transmitter phases."""

    spin_frames: dict[str, float]
    pending: dict[str, int]
    channel_frames: dict[str, float] = field(default_factory=dict)
    channel_freqs: dict[str, float] = field(default_factory=dict)
    observation_phase: float = 0.0
    time: float = 0.0

    @classmethod
    def for_system(cls, sys) -> "FrameTracker":
        return cls(
            {k: 0.0 for k in sys.names},
            {k: 0 for k in sys.names},
            {ch.species: 0.0 for ch in sys.channels},
            {ch.species: ch.transmitter_freq for ch in sys.channels},
        )

    def sign(self, spin: str) -> int:
        return -1 if self.pending[spin] else 1

    def delay(self, sys, t: float):
        """Free precession at each spin's offset and each transmitter's frequency."""
        for k in self.spin_frames:
            self.spin_frames[k] += TWO_PI * sys.offset(k) * t
        for ch, f in self.channel_freqs.items():
            self.channel_frames[ch] += TWO_PI * f * t
        self.time += t

    def physical_z(self, spin: str, theta: float):
        """Absorb a physical ``exp(-i theta Z)``."""
        self.spin_frames[spin] += 2 * theta

    def logical_z(self, spin: str, turns: float):
        """Realize the logical gate ``exp(-i pi turns Z)`` as a frame change."""
        self.spin_frames[spin] -= self.sign(spin) * TWO_PI * turns

    def rotation_phase(self, spin: str, phase: float) -> float:
        """Channel phase realizing a logical rotation at ``phase`` radians."""
        a = self.spin_frames[spin]
        return a - phase if self.pending[spin] else a + phase

    def absorb(self, spin: str, phase: float) -> float:
        """Send a logical 90 at ``phase`` so that it absorbs the pending 180."""
        if not self.pending[spin]:
            raise ValueError(f"no pending virtual 180 on {spin}")
        a = self.spin_frames[spin]
        self.spin_frames[spin] = a - 2 * phase
        self.pending[spin] = 0
        return a - phase - math.pi

    def emit_pending(self, spin: str, phase: float) -> float:
        """Send a logical 90 at ``phase`` that leaves a 180 pending in the frame."""
        if self.pending[spin]:
            raise ValueError(f"virtual 180 already pending on {spin}")
        a = self.spin_frames[spin]
        self.spin_frames[spin] = a + 2 * phase
        self.pending[spin] = 1
        return a + phase - math.pi

    def refocus(self, spin: str, phase: float | None = None) -> float:
        """Physical 180 at channel phase ``phase`` (default: the frame angle)."""
        a = self.spin_frames[spin]
        phi = a if phase is None else phase
        self.spin_frames[spin] = 2 * phi - a
        self.pending[spin] ^= 1
        return phi

    def snapshot(self) -> dict[str, float]:
        return dict(self.spin_frames)

    def observe(self, spin: str):
        self.observation_phase = self.spin_frames[spin]

    def frame_unitary(self, names) -> np.ndarray:
        """``F = kron_k Rz(a_k) Xpi**s_k`` in system order."""
        out = np.ones((1, 1), dtype=complex)
        for k in names:
            a = self.spin_frames[k]
            f = np.diag([np.exp(-0.5j * a), np.exp(0.5j * a)])
            if self.pending[k]:
                f = f @ np.array([[0, -1j], [-1j, 0]])
            out = np.kron(out, f)
        return out


def frame_table(frames: Mapping[str, float]) -> dict[str, float]:
    return {k: wrap(v) for k, v in frames.items()}
