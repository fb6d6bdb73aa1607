"""
File formats.

Structured files are JSON.  Pulse shapes are plain text: ``#`` header
lines naming the channels and step count, then one row per step holding the
duration in seconds and ``u_x u_y`` in Hz for each channel.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .decomposer import ErrorTerms, IdealGate, phase_diagonal
from .grape import GrapeConfig, GuessSpec, RobustnessDistribution, incoherent_offsets
from .seqc.compiler import CircuitOp, RegisteredPulse, Schedule, ScheduleItem
from .spinsys import ControlChannel, PulseShape, Spin, SpinSystem, SubsystemSpec, operator_on, rotation

SIG_DIGITS = 12


class FormatError(ValueError):
    pass


def _read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None


def _field(obj: Mapping, key: str, where: str):
    try:
        return obj[key]
    except (KeyError, TypeError):
        raise FormatError(f"{where}: missing field {key!r}") from None


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_plain) + "\n"


# ---------------------------------------------------------------------------
# spin systems


def system_to_dict(sys: SpinSystem) -> dict:
    return {
        "spins": [{"name": s.name, "species": s.species, "shift_hz": s.shift} for s in sys.spins],
        "couplings": [{"a": a, "b": b, "j_hz": j} for (a, b), j in sys.couplings.items()],
        "coupling_model": sys.coupling_model,
        "channels": [
            {"species": c.species, "transmitter_hz": c.transmitter_freq, "max_amplitude_hz": c.max_amplitude}
            for c in sys.channels
        ],
    }


def system_from_dict(d: Mapping, where: str = "spin system") -> SpinSystem:
    try:
        spins = tuple(
            Spin(str(_field(s, "name", where)), str(_field(s, "species", where)), float(s.get("shift_hz", 0.0)))
            for s in _field(d, "spins", where)
        )
        couplings = {
            (str(_field(c, "a", where)), str(_field(c, "b", where))): float(_field(c, "j_hz", where))
            for c in d.get("couplings", [])
        }
        channels = []
        for c in d.get("channels", []):
            kw = {"species": str(_field(c, "species", where))}
            if "transmitter_hz" in c:
                kw["transmitter_freq"] = float(c["transmitter_hz"])
            if "max_amplitude_hz" in c:
                kw["max_amplitude"] = float(c["max_amplitude_hz"])
            channels.append(ControlChannel(**kw))
        return SpinSystem(spins, couplings, d.get("coupling_model", "weak_ising"), tuple(channels))
    except (TypeError, ValueError, KeyError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{where}: {e}") from None


def load_system(path) -> SpinSystem:
    return system_from_dict(_read_json(path), str(path))


def save_system(sys: SpinSystem, path):
    Path(path).write_text(dumps(system_to_dict(sys)))


# ---------------------------------------------------------------------------
# pulse shapes


def format_pulse(pulse: PulseShape) -> str:
    lines = [f"# channels: {' '.join(pulse.channels)}", f"# steps: {pulse.n_steps}"]
    for dt, row in zip(pulse.durations, pulse.amplitudes):
        vals = [dt, *row.reshape(-1)]
        lines.append(" ".join(f"{v:.17g}" for v in vals))
    return "\n".join(lines) + "\n"


def parse_pulse(text: str, where: str = "pulse") -> PulseShape:
    channels = steps = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.fullmatch(r"#\s*(\w+)\s*:\s*(.*)", line)
            if m and m.group(1) == "channels":
                channels = tuple(m.group(2).split())
            elif m and m.group(1) == "steps":
                steps = int(m.group(2))
            continue
        try:
            rows.append([float(x) for x in line.split()])
        except ValueError:
            raise FormatError(f"{where}:{lineno}: malformed number") from None
    if not channels:
        raise FormatError(f"{where}: missing '# channels:' header")
    width = 1 + 2 * len(channels)
    if any(len(r) != width for r in rows):
        raise FormatError(f"{where}: every row needs {width} columns")
    if steps is not None and steps != len(rows):
        raise FormatError(f"{where}: header says {steps} steps, found {len(rows)}")
    arr = np.array(rows, dtype=float).reshape(len(rows), width)
    try:
        return PulseShape(arr[:, 0], arr[:, 1:].reshape(len(rows), len(channels), 2), channels)
    except ValueError as e:
        raise FormatError(f"{where}: {e}") from None


def load_pulse(path) -> PulseShape:
    return parse_pulse(Path(path).read_text(), str(path))


def save_pulse(pulse: PulseShape, path):
    Path(path).write_text(format_pulse(pulse))


# ---------------------------------------------------------------------------
# goal expressions


def parse_goal(text: str) -> list[tuple[str, tuple[str, ...], tuple[float, ...]]]:
    """Parse ``op; op; ...`` applied left to right.

    Ops are ``r(S, angle_deg, phase_deg)``, ``zz(A, B, turns)`` for
    ``exp(-i pi turns ZZ)``, ``z(S, turns)`` for ``exp(-i pi turns Z)`` and
    ``identity``.
    """
    ops = []
    for part in (p.strip() for p in text.split(";")):
        if not part or part == "identity":
            continue
        m = re.fullmatch(r"(\w+)\s*\((.*)\)", part)
        if not m:
            raise FormatError(f"malformed goal op {part!r}")
        kind, args = m.group(1), [a.strip() for a in m.group(2).split(",")]
        arity = {"r": (1, 2), "zz": (2, 1), "z": (1, 1)}.get(kind)
        if arity is None:
            raise FormatError(f"unknown goal op {kind!r}")
        n_spins, n_nums = arity
        if len(args) != n_spins + n_nums:
            raise FormatError(f"{kind} takes {n_spins + n_nums} arguments")
        try:
            nums = tuple(float(x) for x in args[n_spins:])
        except ValueError:
            raise FormatError(f"malformed number in {part!r}") from None
        ops.append((kind, tuple(args[:n_spins]), nums))
    return ops


def _op_matrix(kind, spins, nums, names):
    names = list(names)
    if kind == "r":
        u = rotation(math.radians(nums[0]), math.radians(nums[1]))
        return operator_on(u, [names.index(spins[0])], len(names))
    if kind == "zz":
        return np.diag(phase_diagonal(names, {}, {tuple(spins): math.pi * nums[0]}))
    return np.diag(phase_diagonal(names, {spins[0]: math.pi * nums[0]}, {}))


def _check_spins(ops, names):
    for _, spins, _ in ops:
        for s in spins:
            if s not in names:
                raise FormatError(f"unknown spin {s!r} in goal")


def goal_unitary(text: str, names: Sequence[str]) -> np.ndarray:
    ops = parse_goal(text)
    _check_spins(ops, names)
    u = np.eye(2 ** len(names), dtype=complex)
    for op in ops:
        u = _op_matrix(*op, names) @ u
    return u


def ideal_from_goal(text: str, names: Sequence[str]) -> IdealGate:
    """Ideal gate with one factor per group of spins the ops connect."""
    ops = parse_goal(text)
    _check_spins(ops, names)
    groups: list[set[str]] = []
    for _, spins, _ in ops:
        merged = set(spins)
        for g in [g for g in groups if g & merged]:
            merged |= g
            groups.remove(g)
        groups.append(merged)
    factors = []
    for g in groups:
        targets = [s for s in names if s in g]
        u = np.eye(2 ** len(targets), dtype=complex)
        for op in ops:
            if set(op[1]) <= g:
                u = _op_matrix(*op, targets) @ u
        factors.append((tuple(targets), u))
    factors.sort(key=lambda f: list(names).index(f[0][0]))
    return IdealGate(tuple(factors), text.strip() or "identity")


# ---------------------------------------------------------------------------
# error terms


def _pair_key(p) -> str:
    return f"{p[0]}-{p[1]}"


def _split_pair(key: str, where: str) -> tuple[str, str]:
    parts = key.split("-")
    if len(parts) != 2:
        raise FormatError(f"{where}: pair key {key!r} must be 'A-B'")
    return parts[0], parts[1]


def _matrix_to_dict(u: np.ndarray) -> dict:
    return {"re": u.real.tolist(), "im": u.imag.tolist()}


def _matrix_from_dict(d, where) -> np.ndarray:
    try:
        return np.array(d["re"], dtype=float) + 1j * np.array(d["im"], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{where}: gate needs 're' and 'im' matrices") from None


def ideal_to_dict(ideal: IdealGate) -> dict:
    return {
        "label": ideal.label,
        "factors": [{"targets": list(t), "gate": _matrix_to_dict(u)} for t, u in ideal.factors],
    }


def ideal_from_dict(d: Mapping, where: str = "ideal") -> IdealGate:
    try:
        factors = tuple(
            (tuple(f["targets"]), _matrix_from_dict(f["gate"], where)) for f in d.get("factors", [])
        )
        return IdealGate(factors, d.get("label", "identity"))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{where}: {e}") from None


def terms_to_dict(terms: ErrorTerms) -> dict:
    deg = math.degrees
    return {
        "ideal": ideal_to_dict(terms.ideal),
        "z_pre": {k: deg(v) for k, v in terms.z_pre.items()},
        "z_post": {k: deg(v) for k, v in terms.z_post.items()},
        "zz_pre": {_pair_key(p): deg(v) for p, v in terms.zz_pre.items()},
        "zz_post": {_pair_key(p): deg(v) for p, v in terms.zz_post.items()},
        "fit_fidelity": terms.fit_fidelity,
        "representation_fidelity": terms.representation_fidelity,
        "duration_s": terms.duration,
    }


def terms_from_dict(d: Mapping, where: str = "error terms") -> ErrorTerms:
    rad = math.radians
    try:
        return ErrorTerms(
            ideal_from_dict(_field(d, "ideal", where), where),
            {k: rad(float(v)) for k, v in d.get("z_pre", {}).items()},
            {k: rad(float(v)) for k, v in d.get("z_post", {}).items()},
            {_split_pair(k, where): rad(float(v)) for k, v in d.get("zz_pre", {}).items()},
            {_split_pair(k, where): rad(float(v)) for k, v in d.get("zz_post", {}).items()},
            float(d.get("fit_fidelity", 1.0)),
            None if d.get("representation_fidelity") is None else float(d["representation_fidelity"]),
            float(d.get("duration_s", 0.0)),
        )
    except (TypeError, ValueError, AttributeError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{where}: {e}") from None


def load_terms(path) -> ErrorTerms:
    return terms_from_dict(_read_json(path), str(path))


def save_terms(terms: ErrorTerms, path):
    Path(path).write_text(dumps(terms_to_dict(terms)))


def format_terms_table(terms: ErrorTerms, names: Sequence[str]) -> str:
    """Degrees: diagonal total Z, above diagonal ZZ pre, below ZZ post."""
    names = list(names)
    n = len(names)
    table = np.zeros((n, n))
    for i, a in enumerate(names):
        table[i, i] = math.degrees(terms.total_z(a))
        for j in range(i + 1, n):
            b = names[j]
            for src, (r, c) in ((terms.zz_pre, (i, j)), (terms.zz_post, (j, i))):
                v = src.get((a, b), src.get((b, a), 0.0))
                table[r, c] = math.degrees(v)
    width = max(8, *(len(s) for s in names)) + 1
    out = [" " * width + "".join(f"{s:>{width}}" for s in names)]
    for i, a in enumerate(names):
        out.append(f"{a:<{width}}" + "".join(f"{v:>{width}.2f}" for v in table[i]))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# pulse registry


def load_registry(path, sys: SpinSystem) -> dict[str, RegisteredPulse]:
    """Registry JSON: ``{name: {"terms": file, "shape": file?} | {"ideal": goal}}``.

    Paths are relative to the registry file.  An ``ideal`` entry is a goal
    expression applied as a zero-duration pulse.
    """
    path = Path(path)
    base = path.parent
    d = _read_json(path)
    if not isinstance(d, Mapping):
        raise FormatError(f"{path}: expected an object of pulses")
    out = {}
    for name, entry in d.items():
        where = f"{path}: pulse {name!r}"
        if "ideal" in entry:
            ideal = ideal_from_goal(entry["ideal"], sys.names)
            out[name] = RegisteredPulse(name, ErrorTerms(ideal))
            continue
        terms = load_terms(base / _field(entry, "terms", where))
        shape = load_pulse(base / entry["shape"]) if entry.get("shape") else None
        for t in terms.ideal.targets:
            if t not in sys.names:
                raise FormatError(f"{where}: unknown spin {t!r}")
        out[name] = RegisteredPulse(name, terms, shape)
    return out


# ---------------------------------------------------------------------------
# schedules


def _g(x: float) -> float:
    return float(f"{x:.{SIG_DIGITS}g}")


def schedule_to_dict(schedule: Schedule) -> dict:
    records = []
    for it in schedule.items:
        if it.kind == "delay":
            records.append({
                "t_start_s": _g(it.start), "type": "delay", "name": it.name,
                "channel": None, "phase_deg": None, "duration_s": _g(it.duration),
            })
            continue
        for ch, ph in (sorted(it.phases.items()) or [(None, None)]):
            records.append({
                "t_start_s": _g(it.start), "type": "pulse", "name": it.name, "channel": ch,
                "phase_deg": None if ph is None else _g(math.degrees(_wrap(ph))),
                "duration_s": _g(it.duration),
            })
    circuit = []
    for op in schedule.circuit:
        if op.kind == "gate":
            circuit.append({"kind": "gate", "ideal": ideal_to_dict(op.gate)})
        else:
            circuit.append({"kind": op.kind, "spins": list(op.spins), "angle_rad": op.angle})
    return {
        "records": records,
        "frames_deg": {k: _g(math.degrees(v)) for k, v in schedule.frames.items()},
        "observation_phase_deg": _g(math.degrees(schedule.observation_phase)),
        "residuals": [
            {"event": ev, "pair": _pair_key(p), "rad": _g(r)} for ev, p, r in schedule.residuals
        ],
        "distance_rad2": _g(schedule.distance),
        "delays_s": [_g(x) for x in schedule.delays],
        "initial_state": dict(schedule.initial_state),
        "circuit": circuit,
    }


def _wrap(a: float) -> float:
    return math.pi - (math.pi - a) % (2 * math.pi)


def schedule_from_dict(d: Mapping, where: str = "schedule") -> Schedule:
    items: list[ScheduleItem] = []
    try:
        for r in _field(d, "records", where):
            kind = r["type"]
            start, dur = float(r["t_start_s"]), float(r["duration_s"])
            if kind == "delay":
                items.append(ScheduleItem(start, "delay", r.get("name", "delay"), dur))
            elif kind == "pulse":
                last = items[-1] if items else None
                phase = {} if r.get("channel") is None else {r["channel"]: math.radians(float(r["phase_deg"]))}
                if last and last.kind == "pulse" and last.name == r["name"] and last.start == start and r.get("channel") not in last.phases:
                    items[-1] = ScheduleItem(start, "pulse", last.name, last.duration, {**last.phases, **phase})
                else:
                    items.append(ScheduleItem(start, "pulse", r["name"], dur, phase))
            else:
                raise FormatError(f"{where}: unknown record type {kind!r}")
        circuit = []
        for op in d.get("circuit", []):
            if op["kind"] == "gate":
                g = ideal_from_dict(op["ideal"], where)
                circuit.append(CircuitOp("gate", g.targets, gate=g))
            elif op["kind"] in ("zz", "z"):
                circuit.append(CircuitOp(op["kind"], tuple(op["spins"]), float(op["angle_rad"])))
            else:
                raise FormatError(f"{where}: unknown circuit op {op['kind']!r}")
        return Schedule(
            items=items,
            frames={k: math.radians(float(v)) for k, v in d.get("frames_deg", {}).items()},
            observation_phase=math.radians(float(d.get("observation_phase_deg", 0.0))),
            residuals=[
                (r["event"], _split_pair(r["pair"], where), float(r["rad"])) for r in d.get("residuals", [])
            ],
            distance=float(d.get("distance_rad2", 0.0)),
            delays=np.array(d.get("delays_s", []), dtype=float),
            circuit=circuit,
            initial_state=dict(d.get("initial_state", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{where}: {e}") from None


def load_schedule(path) -> Schedule:
    return schedule_from_dict(_read_json(path), str(path))


def save_schedule(schedule: Schedule, path):
    Path(path).write_text(dumps(schedule_to_dict(schedule)))


# ---------------------------------------------------------------------------
# GRAPE configuration


def grape_config_from_dict(d: Mapping, sys: SpinSystem, where: str = "config") -> GrapeConfig:
    """Build a :class:`GrapeConfig`.

    Besides the plain fields, ``robustness`` takes ``rf_scales`` and
    ``freq_offsets`` as ``[value, weight]`` lists, and ``incoherent_subset``
    names spins whose neighbours' Z states are averaged.  ``subsystems``
    takes ``{"subsystems": [[...]], "weights": [...]}``.
    """
    d = dict(d)
    try:
        kw = {k: d.pop(k) for k in list(d) if k in GrapeConfig.__dataclass_fields__ and k not in ("guess", "robustness", "subsystems", "channels")}
        if "guess" in d:
            kw["guess"] = GuessSpec(**d.pop("guess"))
        if "channels" in d:
            kw["channels"] = tuple(d.pop("channels"))
        if "subsystems" in d:
            s = d.pop("subsystems")
            kw["subsystems"] = SubsystemSpec(tuple(tuple(x) for x in s["subsystems"]), tuple(s.get("weights", ())))
            kw["subsystems"].validate(sys)
        rob = d.pop("robustness", {})
        offsets = tuple((o if isinstance(o, Mapping) else float(o), float(w)) for o, w in rob.get("freq_offsets", []))
        if "incoherent_subset" in d:
            from .grape import incoherent_offsets

            if offsets:
                raise FormatError(f"{where}: give freq_offsets or incoherent_subset, not both")
            subset = d.pop("incoherent_subset")
            offsets = incoherent_offsets(sys, subset)
        kw["robustness"] = RobustnessDistribution(
            tuple((float(m), float(w)) for m, w in rob.get("rf_scales", [])),
            offsets,
            None if rob.get("offset_spins") is None else tuple(rob["offset_spins"]),
        )
        d.pop("smoothing", None)
        if d:
            raise FormatError(f"{where}: unknown fields {sorted(d)}")
        return GrapeConfig(**kw)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{where}: {e}") from None
