"""Accumulated ZZ evolution per coupled pair, with goals and state simplifications."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .frames import FrameTracker

Z_EIGEN = ("ground", "pseudo_pure_z")


@dataclass(frozen=True)
class Goal:
    """A point where a pair's excess ZZ angle must vanish."""

    event: str
    pair: tuple[str, str]
    value: float  # accumulated minus requested, radians
    target: float  # requested angle since the previous goal


@dataclass
class CouplingLedger:
    """Logical-frame ZZ angles since each pair's last goal.

    ``accumulated`` holds physical evolution mapped through the frames (sign
    ``sigma_j * sigma_k``), ``requested`` the program's ZZ gates.
    """

    couplings: dict[tuple[str, str], float]
    accumulated: dict[tuple[str, str], float] = field(default_factory=dict)
    requested: dict[tuple[str, str], float] = field(default_factory=dict)
    goals: list[Goal] = field(default_factory=list)
    dropped: list[tuple[str, tuple[str, str], str]] = field(default_factory=list)

    @classmethod
    def for_system(cls, sys) -> "CouplingLedger":
        pairs = {p: sys.J(*p) for p in sys.coupled_pairs()}
        return cls(pairs, {p: 0.0 for p in pairs}, {p: 0.0 for p in pairs})

    def key(self, a: str, b: str) -> tuple[str, str] | None:
        if (a, b) in self.couplings:
            return (a, b)
        if (b, a) in self.couplings:
            return (b, a)
        return None

    def signs(self, frames: FrameTracker, pair) -> int:
        return frames.sign(pair[0]) * frames.sign(pair[1])

    def delay(self, frames: FrameTracker, t: float):
        for p, j in self.couplings.items():
            self.accumulated[p] += self.signs(frames, p) * math.pi * j * t / 2

    def physical_zz(self, frames: FrameTracker, a: str, b: str, beta: float):
        """Absorb a physical ``exp(-i beta Z_a Z_b)``."""
        p = self.key(a, b)
        if p is not None:
            self.accumulated[p] += self.signs(frames, p) * beta

    def request(self, a: str, b: str, beta: float):
        p = self.key(a, b)
        if p is None:
            raise InfeasibleGoal(f"ZZ requested on {a}-{b}, which has no coupling")
        self.requested[p] += beta

    def excess(self, pair) -> float:
        return self.accumulated[pair] - self.requested[pair]

    def reset(self, pair):
        self.accumulated[pair] = 0.0
        self.requested[pair] = 0.0

    def goal(self, event: str, pair, frames: FrameTracker, states: Mapping[str, str]):
        """Fix ``pair`` at ``event``, simplified by the known states of its spins."""
        value, target = self.excess(pair), self.requested[pair]
        action = apply_state_assumptions(pair, value, frames, states)
        if action == "goal":
            self.goals.append(Goal(event, pair, value, target))
        else:
            self.dropped.append((event, pair, action))
        self.reset(pair)


class InfeasibleGoal(ValueError):
    pass


def apply_state_assumptions(
    pair: tuple[str, str], value: float, frames: FrameTracker, states: Mapping[str, str]
) -> str:
    """Decide how an excess ZZ angle on ``pair`` is handled.

    Returns ``"mixed"`` when both spins are maximally mixed and
    ``"eigen"`` when both are Z eigenstates.  In both cases the coupling has
    no effect.  When exactly one spin is a Z eigenstate (eigenvalue +1), the
    coupling acts as a Z rotation on its partner.  That rotation is folded
    into the partner's frame and ``"frame"`` is returned.  Otherwise returns
    ``"goal"``.
    """
    sa, sb = (states.get(s, "unknown") for s in pair)
    if sa == sb == "maximally_mixed":
        return "mixed"
    if sa in Z_EIGEN and sb in Z_EIGEN:
        return "eigen"
    for eig, other in ((pair[0], pair[1]), (pair[1], pair[0])):
        if states.get(eig) in Z_EIGEN:
            frames.spin_frames[other] += frames.sign(other) * 2 * value
            return "frame"
    return "goal"
