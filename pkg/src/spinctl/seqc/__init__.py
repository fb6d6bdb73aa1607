"""Pulse-program compiler: parsing, frame tracking, coupling goals, delays, verification."""

from .compiler import (
    CompileError,
    CompileOptions,
    CompileWarning,
    PhaseConflict,
    RegisteredPulse,
    Schedule,
    compile_program,
    ideal_pulse,
    ledger_update,
    track_phases,
)
from .delays import DelayConfig, optimize_delays
from .frames import FrameTracker, absorb_virtual_180
from .ledger import CouplingLedger, InfeasibleGoal, apply_state_assumptions
from .program import ParseError, Program, format_program, parse
from .verify import VerifyReport, verify

__all__ = [
    "CompileError",
    "CompileOptions",
    "CompileWarning",
    "CouplingLedger",
    "DelayConfig",
    "FrameTracker",
    "InfeasibleGoal",
    "ParseError",
    "PhaseConflict",
    "Program",
    "RegisteredPulse",
    "Schedule",
    "VerifyReport",
    "absorb_virtual_180",
    "apply_state_assumptions",
    "compile_program",
    "format_program",
    "ideal_pulse",
    "ledger_update",
    "optimize_delays",
    "parse",
    "track_phases",
    "verify",
]
