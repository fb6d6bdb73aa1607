"""
Command-line front end.

Exit codes: 0 success, 1 invalid input or I/O failure, 2 optimization did
not reach its target (GRAPE fidelity, decomposition fit floor, compiled
coupling distance or requested verification fidelity).  Inputs are fully
validated before any output file is written.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys as _sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .decomposer import FIT_FLOOR, DecompositionPlan, decompose, representation_fidelity
from .grape import optimize, smooth_and_reoptimize
from .seqc.compiler import CircuitOp, CompileOptions, CompileWarning, compile_program
from .seqc.program import parse
from .seqc.verify import verify
from .spinsys import check_size, hs_fidelity, simulate, worst_case_fidelity

OK, INVALID, NOT_CONVERGED = 0, 1, 2

log = logging.getLogger("spinctl")


def _write(out: Path, files: dict[str, str]):
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _goals(args, sys, cfg):
    if cfg.subsystems is None:
        if len(args.goal) != 1:
            raise ValueError("give exactly one --goal")
        return io.goal_unitary(args.goal[0], sys.names)
    subs = cfg.subsystems.subsystems
    if len(args.goal) != len(subs):
        raise ValueError(f"{len(subs)} subsystems need {len(subs)} --goal options")
    return [io.goal_unitary(g, [n for n in sys.names if n in sub]) for g, sub in zip(args.goal, subs)]


def cmd_grape(args) -> int:
    sys = io.load_system(args.system)
    raw = io._read_json(args.config)
    cfg = io.grape_config_from_dict(raw, sys, str(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, guess=dataclasses.replace(cfg.guess, seed=args.seed))
    if args.max_iter is not None:
        cfg = dataclasses.replace(cfg, max_iterations=args.max_iter)
    goal = _goals(args, sys, cfg)
    result = optimize(cfg, sys, goal)
    history = list(result.fitness_history)
    smoothing = raw.get("smoothing")
    if smoothing:
        result = smooth_and_reoptimize(
            result, sys, goal, cfg, float(smoothing["target_dt"]),
            int(smoothing.get("rounds", 1)), int(smoothing.get("window", 1)),
        )
        history += list(result.fitness_history)
    report = {
        "final_fidelity": result.final_fidelity,
        "converged": result.converged,
        "iterations": result.iterations,
        "total_duration_s": result.pulse.total_duration,
        "point_fidelities": [
            {"rf": rf, "shifts_hz": dict(shifts), "fidelity": f}
            for (rf, shifts), f in result.point_fidelities.items()
        ],
    }
    out = Path(args.out)
    _write(out, {
        "pulse.txt": io.format_pulse(result.pulse),
        "history.tsv": "# iteration fitness\n" + "".join(f"{i} {_fmt(f)}\n" for i, f in enumerate(history)),
        "report.json": io.dumps(report),
    })
    if args.plot:
        from .plotting import plot_history, plot_pulse

        plot_history(history, out / "history.png")
        plot_pulse(result.pulse, out / "pulse.png")
    print(f"final fidelity {_fmt(result.final_fidelity)} after {result.iterations} iterations")
    return OK if result.final_fidelity >= cfg.target_fidelity else NOT_CONVERGED


def cmd_scan(args) -> int:
    sys = io.load_system(args.system)
    check_size(sys.n)
    pulse = io.load_pulse(args.pulse)
    pulse.check_caps(sys)
    goal = io.goal_unitary(args.goal, sys.names)
    if args.points < 1:
        raise ValueError("--points must be >= 1")
    spins = args.spins.split(",") if args.spins else sys.names
    for s in spins:
        sys.index(s)
    values = np.linspace(args.range[0], args.range[1], args.points) if args.points > 1 else np.array([args.range[0]])
    rows = []
    for v in values:
        if args.axis == "rf":
            u = simulate(sys, pulse, float(v))
        else:
            u = simulate(sys.with_shifts({s: float(v) for s in spins}), pulse)
        rows.append((float(v), hs_fidelity(goal, u), worst_case_fidelity(goal, u)))
    out = Path(args.out)
    head = "rf" if args.axis == "rf" else "offset_hz"
    _write(out, {"scan.tsv": f"# {head} hs_fidelity worst_case_fidelity\n" + "".join(
        " ".join(_fmt(x) for x in r) + "\n" for r in rows)})
    if args.plot:
        from .plotting import plot_scan

        v, hs, wc = zip(*rows)
        plot_scan(v, hs, wc, args.axis, out / "scan.png")
    print(f"min hs fidelity {_fmt(min(r[1] for r in rows))} over {len(rows)} points")
    return OK


def cmd_decompose(args) -> int:
    sys = io.load_system(args.system)
    pulse = io.load_pulse(args.pulse)
    ideal = io.ideal_from_goal(args.ideal, sys.names)
    if args.blocks:
        blocks = tuple(tuple(b.split(",")) for b in args.blocks.split(";"))
        for b in blocks:
            for s in b:
                sys.index(s)
        plan = DecompositionPlan(blocks, pulse, ideal)
    else:
        plan = DecompositionPlan.singletons(sys, pulse, ideal)
    plan.validate(sys)
    terms = decompose(sys, plan, args.floor, args.seed or 0)
    if sys.n <= 10:
        terms = dataclasses.replace(terms, representation_fidelity=representation_fidelity(sys, pulse, terms))
    table = io.format_terms_table(terms, sys.names)
    _write(Path(args.out), {"terms.json": io.dumps(io.terms_to_dict(terms)), "table.txt": table})
    print(table, end="")
    print(f"fit fidelity {_fmt(terms.fit_fidelity)}")
    if terms.representation_fidelity is not None:
        print(f"representation fidelity {_fmt(terms.representation_fidelity)}")
    return OK if terms.fit_fidelity >= args.floor else NOT_CONVERGED


def _initial_state(items) -> dict[str, str]:
    out = {}
    for it in items or ():
        spin, sep, tok = it.partition("=")
        if not sep or not spin or not tok:
            raise ValueError(f"--initial expects SPIN=STATE, got {it!r}")
        out[spin] = tok
    return out


def cmd_compile(args) -> int:
    sys = io.load_system(args.system)
    registry = io.load_registry(args.registry, sys)
    program = parse(Path(args.program).read_text(), sys.names, registry.keys())
    opts = CompileOptions(
        initial_state=_initial_state(args.initial),
        virtual_180=not args.no_virtual_180,
        zz_modulus=math.pi if args.zz_modulus == "pi" else 2 * math.pi,
        max_delay=args.max_delay,
        time_penalty=args.time_penalty,
        acceptance=args.acceptance,
        observe=args.observe,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CompileWarning)
        schedule = compile_program(sys, program, registry, opts)
    for w in caught:
        print(f"warning: {w.message}", file=_sys.stderr)
    out = Path(args.out)
    _write(out, {"schedule.json": io.dumps(io.schedule_to_dict(schedule))})
    if args.plot:
        from .plotting import plot_schedule

        plot_schedule(schedule, out / "schedule.png")
    for ev, p, r in schedule.residuals:
        print(f"residual {ev} {p[0]}-{p[1]} {_fmt(r)} rad")
    print(f"distance {_fmt(schedule.distance)} rad^2, duration {_fmt(schedule.duration)} s")
    return OK if schedule.distance <= args.acceptance else NOT_CONVERGED


def cmd_verify(args) -> int:
    sys = io.load_system(args.system)
    check_size(sys.n)
    registry = io.load_registry(args.registry, sys)
    schedule = io.load_schedule(args.schedule)
    for it in schedule.pulses():
        if it.name not in registry:
            raise ValueError(f"schedule pulse {it.name!r} not in registry")
    missing = set(sys.names) - set(schedule.frames)
    if missing:
        raise ValueError(f"schedule has no frame for {sorted(missing)}")
    if args.ideal is not None:
        gate = io.ideal_from_goal(args.ideal, sys.names)
        schedule = dataclasses.replace(schedule, circuit=[CircuitOp("gate", gate.targets, gate=gate)])
    report = verify(sys, schedule, registry, args.mode, _initial_state(args.initial) if args.initial else None)
    text = io.dumps({
        "hs_fidelity": report.hs_fidelity,
        "worst_case_fidelity": report.worst_case_fidelity,
        "subspace_dim": report.subspace_dim,
        "mode": report.mode,
    })
    if args.out:
        _write(Path(args.out), {"verify.json": text})
    print(text, end="")
    if args.min_fidelity is not None and report.hs_fidelity < args.min_fidelity:
        return NOT_CONVERGED
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinctl", description="Pulse design, decomposition and compilation for coupled spins.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--system", required=True, help="spin-system JSON")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--plot", action="store_true", help="also write PNG figures")

    g = sub.add_parser("grape", help="optimize a pulse")
    common(g)
    g.add_argument("--config", required=True, help="GRAPE config JSON")
    g.add_argument("--goal", action="append", required=True, help="goal expression, one per subsystem")
    g.add_argument("--max-iter", type=int, default=None)
    g.set_defaults(func=cmd_grape)

    s = sub.add_parser("scan", help="fidelity versus RF scale or offset")
    common(s)
    s.add_argument("--pulse", required=True)
    s.add_argument("--goal", required=True)
    s.add_argument("--axis", choices=("rf", "offset"), default="rf")
    s.add_argument("--range", type=float, nargs=2, default=(0.9, 1.1), metavar=("LO", "HI"))
    s.add_argument("--points", type=int, default=21)
    s.add_argument("--spins", default=None, help="comma-separated spins shifted on the offset axis")
    s.set_defaults(func=cmd_scan)

    d = sub.add_parser("decompose", help="fit pre/post error terms")
    common(d)
    d.add_argument("--pulse", required=True)
    d.add_argument("--ideal", required=True, help="ideal gate expression")
    d.add_argument("--blocks", default=None, help="blocks as 'A,B;C;D' (default: one per spin)")
    d.add_argument("--floor", type=float, default=FIT_FLOOR)
    d.set_defaults(func=cmd_decompose)

    c = sub.add_parser("compile", help="compile a pulse program")
    common(c)
    c.add_argument("--registry", required=True)
    c.add_argument("--program", required=True)
    c.add_argument("--initial", action="append", help="initial state SPIN=TOKEN")
    c.add_argument("--no-virtual-180", action="store_true")
    c.add_argument("--zz-modulus", choices=("2pi", "pi"), default="2pi")
    c.add_argument("--max-delay", type=float, default=None)
    c.add_argument("--time-penalty", type=float, default=0.0)
    c.add_argument("--acceptance", type=float, default=1e-6)
    c.add_argument("--observe", default=None)
    c.set_defaults(func=cmd_compile)

    v = sub.add_parser("verify", help="simulate a schedule against its ideal circuit")
    common(v, out_required=False)
    v.add_argument("--registry", required=True)
    v.add_argument("--schedule", required=True)
    v.add_argument("--ideal", default=None, help="override the schedule's ideal circuit")
    v.add_argument("--mode", choices=("full", "decomposed"), default="full")
    v.add_argument("--initial", action="append", help="initial state SPIN=TOKEN")
    v.add_argument("--min-fidelity", type=float, default=None)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=_sys.stderr)
        return INVALID


if __name__ == "__main__":
    raise SystemExit(main())
