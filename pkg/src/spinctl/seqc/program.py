"""
Pulse-program language.

One directive per line, each introduced by ``;``::

    ;pulse <name> <phase-turns> [@spin:token ...]
    ;zz <turns> <spinA> <spinB>
    ;refocus <name> <position>
    ;z <turns> <spin>

Blank lines and text after ``#`` are ignored.  State tokens are kept
verbatim; :data:`STATE_TOKENS` maps them to the states the compiler uses.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Union

STATES = ("ground", "maximally_mixed", "pseudo_pure_z", "unknown")

STATE_TOKENS = {
    "0+": "pseudo_pure_z",
    "ground": "ground",
    "0": "ground",
    "mixed": "maximally_mixed",
    "I": "maximally_mixed",
    "X+": "unknown",
    "X-": "unknown",
    "Y+": "unknown",
    "Y-": "unknown",
}


class ParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class StateAssumption:
    spin: str
    token: str

    @property
    def state(self) -> str:
        return STATE_TOKENS.get(self.token, "unknown")


@dataclass(frozen=True)
class Pulse:
    name: str
    phase: float
    assumptions: tuple[StateAssumption, ...] = ()


@dataclass(frozen=True)
class ZZ:
    amount: float
    spin_a: str
    spin_b: str


@dataclass(frozen=True)
class Refocus:
    name: str
    position: float


@dataclass(frozen=True)
class Z:
    amount: float
    spin: str


Event = Union[Pulse, ZZ, Refocus, Z]


@dataclass(frozen=True)
class Program:
    events: tuple[Event, ...] = ()

    def spins(self) -> set[str]:
        out: set[str] = set()
        for ev in self.events:
            if isinstance(ev, ZZ):
                out |= {ev.spin_a, ev.spin_b}
            elif isinstance(ev, Z):
                out.add(ev.spin)
            elif isinstance(ev, Pulse):
                out |= {a.spin for a in ev.assumptions}
        return out

    def pulse_names(self) -> set[str]:
        return {ev.name for ev in self.events if isinstance(ev, (Pulse, Refocus))}

    def resolve(self, spins: Iterable[str], pulses: Iterable[str] | None = None):
        """Raise :class:`ParseError` for names that do not resolve."""
        spins = set(spins)
        pulses = None if pulses is None else set(pulses)
        for i, ev in enumerate(self.events, start=1):
            names = []
            if isinstance(ev, ZZ):
                names = [ev.spin_a, ev.spin_b]
            elif isinstance(ev, Z):
                names = [ev.spin]
            elif isinstance(ev, Pulse):
                names = [a.spin for a in ev.assumptions]
            for name in names:
                if name not in spins:
                    raise ParseError(f"unknown spin {name!r}", i, 1)
            if pulses is not None and isinstance(ev, (Pulse, Refocus)):
                if ev.name not in pulses:
                    raise ParseError(f"unknown pulse {ev.name!r}", i, 1)


_TOKEN = re.compile(r"\S+")


def _number(tok: str, col: int, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"malformed number {tok!r}", line, col) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite number {tok!r}", line, col)
    return v


def parse(text: str, spins: Iterable[str] | None = None, pulses: Iterable[str] | None = None) -> Program:
    """Parse program text; optionally check spin and pulse names."""
    events: list[Event] = []
    known = None if spins is None else set(spins)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        toks = [(m.group(), m.start() + 1) for m in _TOKEN.finditer(line)]
        head, col = toks[0]
        if not head.startswith(";") or len(head) == 1:
            raise ParseError(f"expected ';<directive>', got {head!r}", lineno, col)
        directive, args = head[1:], toks[1:]

        def check(name, c):
            if known is not None and name not in known:
                raise ParseError(f"unknown spin {name!r}", lineno, c)

        def need(n, usage):
            if len(args) != n:
                raise ParseError(f"usage: ;{usage}", lineno, col)

        if directive == "pulse":
            if len(args) < 2:
                raise ParseError("usage: ;pulse <name> <phase> [@spin:state ...]", lineno, col)
            name, phase = args[0][0], _number(*args[1], lineno)
            assumptions = []
            for tok, c in args[2:]:
                m = re.fullmatch(r"@([^:\s]+):(\S+)", tok)
                if not m:
                    raise ParseError(f"malformed state assumption {tok!r}", lineno, c)
                check(m.group(1), c + 1)
                if any(a.spin == m.group(1) for a in assumptions):
                    raise ParseError(f"two assumptions for {m.group(1)}", lineno, c)
                assumptions.append(StateAssumption(m.group(1), m.group(2)))
            events.append(Pulse(name, phase, tuple(assumptions)))
        elif directive == "zz":
            need(3, "zz <turns> <spinA> <spinB>")
            amount = _number(*args[0], lineno)
            a, b = args[1][0], args[2][0]
            check(a, args[1][1])
            check(b, args[2][1])
            if a == b:
                raise ParseError("zz needs two distinct spins", lineno, args[2][1])
            events.append(ZZ(amount, a, b))
        elif directive == "refocus":
            need(2, "refocus <name> <position>")
            pos = _number(*args[1], lineno)
            if not 0 <= pos <= 1:
                raise ParseError("refocus position must lie in [0, 1]", lineno, args[1][1])
            events.append(Refocus(args[0][0], pos))
        elif directive == "z":
            need(2, "z <turns> <spin>")
            check(args[1][0], args[1][1])
            events.append(Z(_number(*args[0], lineno), args[1][0]))
        else:
            raise ParseError(f"unknown directive {directive!r}", lineno, col)
        if pulses is not None and directive in ("pulse", "refocus") and args[0][0] not in pulses:
            raise ParseError(f"unknown pulse {args[0][0]!r}", lineno, args[0][1])
    return Program(tuple(events))


def _num(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def format_program(program: Program) -> str:
    """Canonical text; ``parse(format_program(p)) == p``."""
    lines = []
    for ev in program.events:
        if isinstance(ev, Pulse):
            extra = "".join(f" @{a.spin}:{a.token}" for a in ev.assumptions)
            lines.append(f";pulse {ev.name} {_num(ev.phase)}{extra}")
        elif isinstance(ev, ZZ):
            lines.append(f";zz {_num(ev.amount)} {ev.spin_a} {ev.spin_b}")
        elif isinstance(ev, Refocus):
            lines.append(f";refocus {ev.name} {_num(ev.position)}")
        elif isinstance(ev, Z):
            lines.append(f";z {_num(ev.amount)} {ev.spin}")
    return "\n".join(lines) + ("\n" if lines else "")
