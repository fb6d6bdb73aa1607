"""Full-system simulation of a compiled schedule against its ideal circuit."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import minimize_scalar

from ..spinsys import SpinSystem, check_size, free_propagator, simulate, z_diagonal
from .compiler import RegisteredPulse, Schedule, circuit_unitary
from .ledger import Z_EIGEN
from .program import STATE_TOKENS


@dataclass(frozen=True)
class VerifyReport:
    hs_fidelity: float
    worst_case_fidelity: float
    subspace_dim: int
    mode: str


def channel_rotation(sys: SpinSystem, phases: Mapping[str, float]) -> np.ndarray:
    """Diagonal of ``prod_k Rz(phi_channel(k))`` over all spins."""
    phase = np.zeros(sys.dim)
    for i, s in enumerate(sys.spins):
        phase += phases.get(s.species, 0.0) / 2 * z_diagonal(i, sys.n)
    return np.exp(-1j * phase)


def schedule_propagator(sys: SpinSystem, schedule: Schedule, registry: Mapping[str, RegisteredPulse], mode: str = "full") -> np.ndarray:
    """Physical propagator of the schedule.

    ``mode="full"`` simulates registered waveforms; ``"decomposed"`` uses the
    pre/post error-term representation.  Pulses without a waveform always use
    their representation.
    """
    if mode not in ("full", "decomposed"):
        raise ValueError(f"unknown mode {mode!r}")
    u = np.eye(sys.dim, dtype=complex)
    for it in schedule.items:
        if it.kind == "delay":
            u = free_propagator(sys, it.duration) @ u
            continue
        p = registry[it.name]
        if mode == "full" and p.shape is not None:
            step = simulate(sys, p.shape.phase_shifted(it.phases))
        else:
            r = channel_rotation(sys, it.phases)
            step = r[:, None] * p.terms.reconstruct(sys) * r.conj()[None, :]
        u = step @ u
    return u


def subspace_basis(sys: SpinSystem, initial_state: Mapping[str, str]) -> np.ndarray:
    """Columns spanning the states allowed by Z-eigenstate assumptions."""
    idx = np.arange(sys.dim)
    keep = np.ones(sys.dim, dtype=bool)
    for k, tok in initial_state.items():
        if STATE_TOKENS.get(tok, "unknown") in Z_EIGEN:
            bit = 1 << (sys.n - 1 - sys.index(k))
            keep &= (idx & bit) == 0
    return np.eye(sys.dim)[:, keep]


def _worst_case(m: np.ndarray) -> float:
    """``min_psi |<psi|M|psi>|^2`` minimized over unit vectors, for ``|M| <= 1``.

    Uses the support function of the numerical range:
    ``dist(0, W(M)) = max(0, max_theta lambda_min(Herm(exp(-i theta) M)))``.
    """

    def lam(theta):
        a = np.exp(-1j * theta) * m
        return -np.linalg.eigvalsh((a + a.conj().T) / 2)[0]

    grid = np.linspace(0, 2 * math.pi, 73)
    vals = [lam(t) for t in grid]
    i = int(np.argmin(vals))
    r = minimize_scalar(lam, bracket=(grid[i] - 0.1, grid[i], grid[i] + 0.1), tol=1e-12)
    best = -min(vals[i], r.fun)
    return max(0.0, best) ** 2


def verify(
    sys: SpinSystem,
    schedule: Schedule,
    registry: Mapping[str, RegisteredPulse],
    mode: str = "full",
    initial_state: Mapping[str, str] | None = None,
) -> VerifyReport:
    """Fidelity of the simulated schedule to its ideal circuit.

    The schedule's final per-spin frames are undone before comparison.
    With Z-eigenstate initial assumptions, fidelities are computed on the
    subspace those assumptions allow.
    """
    check_size(sys.n)
    u = schedule_propagator(sys, schedule, registry, mode)
    frame = np.ones(sys.dim, dtype=complex)
    for i, k in enumerate(sys.names):
        frame *= np.exp(-0.5j * schedule.frames[k] * z_diagonal(i, sys.n))
    w = frame.conj()[:, None] * u
    g = circuit_unitary(schedule.circuit, sys.names)
    state = schedule.initial_state if initial_state is None else initial_state
    v = subspace_basis(sys, state)
    m = v.T @ g.conj().T @ w @ v
    d = m.shape[0]
    hs = abs(np.trace(m)) ** 2 / d ** 2
    return VerifyReport(float(hs), float(_worst_case(m)), d, mode)
