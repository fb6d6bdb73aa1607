import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinctl import io
from spinctl.decomposer import ErrorTerms
from spinctl.seqc import CompileOptions, compile_program, parse, verify
from spinctl.spinsys import ControlChannel, PulseShape, Spin, SpinSystem, rotation


@pytest.fixture
def sys3():
    return SpinSystem(
        (Spin("C1", "13C", -800.0), Spin("C2", "13C", 0.0), Spin("H1", "1H", 120.0)),
        {("C1", "C2"): 50.0, ("C2", "H1"): 140.0},
        channels=(ControlChannel("13C", 100.0, 15e3),),
    )


def test_system_round_trip(sys3, tmp_path):
    io.save_system(sys3, tmp_path / "s.json")
    back = io.load_system(tmp_path / "s.json")
    assert back == sys3


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 2), st.integers(0, 2**31))
def test_pulse_round_trip_is_exact(n, n_ch, seed):
    rng = np.random.default_rng(seed)
    chans = ("1H", "13C")[:n_ch]
    p = PulseShape(rng.uniform(1e-7, 1e-4, n), rng.normal(0, 1e4, (n, n_ch, 2)), chans)
    back = io.parse_pulse(io.format_pulse(p))
    assert np.array_equal(back.durations, p.durations)
    assert np.array_equal(back.amplitudes, p.amplitudes)
    assert back.channels == p.channels


@pytest.mark.parametrize(
    "text, msg",
    [
        ("1 2 3\n", "channels"),
        ("# channels: 1H\n1 2\n", "columns"),
        ("# channels: 1H\n# steps: 2\n1 2 3\n", "steps"),
        ("# channels: 1H\n1 x 3\n", "malformed"),
    ],
)
def test_pulse_format_errors(text, msg):
    with pytest.raises(io.FormatError, match=msg):
        io.parse_pulse(text)


def test_goal_language():
    names = ["A", "B"]
    u = io.goal_unitary("r(A, 90, 0); zz(A, B, 0.25)", names)
    x = np.kron(rotation(math.pi / 2, 0), np.eye(2))
    zz = np.diag(np.exp(-1j * math.pi / 4 * np.array([1, -1, -1, 1])))
    assert np.allclose(u, zz @ x)
    assert np.allclose(io.goal_unitary("identity", names), np.eye(4))
    g = io.ideal_from_goal("r(A,180,90); r(B,90,0)", names)
    assert [f[0] for f in g.factors] == [("A",), ("B",)]
    with pytest.raises(io.FormatError):
        io.goal_unitary("r(Q, 90, 0)", names)
    with pytest.raises(io.FormatError):
        io.goal_unitary("cnot(A, B)", names)
    with pytest.raises(io.FormatError):
        io.goal_unitary("r(A, 90)", names)


def test_terms_round_trip(tmp_path):
    ideal = io.ideal_from_goal("r(A, 90, 30)", ["A", "B", "C"])
    t = ErrorTerms(ideal, {"A": 0.1}, {"B": -0.2}, {("B", "C"): 0.03}, {("A", "B"): 0.4}, 0.998, 0.997, 1e-3)
    io.save_terms(t, tmp_path / "t.json")
    back = io.load_terms(tmp_path / "t.json")
    sys = SpinSystem((Spin("A", "1H"), Spin("B", "1H"), Spin("C", "1H")))
    assert np.allclose(back.reconstruct(sys), t.reconstruct(sys), atol=1e-12)
    assert back.duration == pytest.approx(1e-3)
    table = io.format_terms_table(t, sys.names)
    assert "5.73" in table  # A total Z in degrees


def test_registry_and_schedule_round_trip(sys3, tmp_path):
    (tmp_path / "reg.json").write_text(json.dumps({
        "X1": {"ideal": "r(C1, 90, 0)"},
        "R2": {"ideal": "r(C2, 180, 90)"},
    }))
    reg = io.load_registry(tmp_path / "reg.json", sys3)
    prog = parse(";pulse X1 0\n;zz 0.25 C1 C2\n;refocus R2 0.5\n", sys3.names, reg)
    s = compile_program(sys3, prog, reg, CompileOptions(initial_state={"H1": "0+"}))
    io.save_schedule(s, tmp_path / "s.json")
    back = io.load_schedule(tmp_path / "s.json")
    a, b = verify(sys3, s, reg), verify(sys3, back, reg)
    assert b.hs_fidelity == pytest.approx(a.hs_fidelity, abs=1e-9)
    assert b.subspace_dim == a.subspace_dim == 4
    assert [it.name for it in back.items] == [it.name for it in s.items]


def test_registry_errors(sys3, tmp_path):
    (tmp_path / "reg.json").write_text(json.dumps({"X": {"ideal": "r(Q, 90, 0)"}}))
    with pytest.raises(io.FormatError):
        io.load_registry(tmp_path / "reg.json", sys3)
    (tmp_path / "reg.json").write_text("{not json")
    with pytest.raises(io.FormatError, match="invalid JSON"):
        io.load_registry(tmp_path / "reg.json", sys3)
    (tmp_path / "reg.json").write_text(json.dumps({"X": {"shape": "p.txt"}}))
    with pytest.raises(io.FormatError, match="terms"):
        io.load_registry(tmp_path / "reg.json", sys3)


def test_system_errors():
    with pytest.raises(io.FormatError):
        io.system_from_dict({"spins": [{"name": "A"}]})
    with pytest.raises(ValueError):
        io.system_from_dict({"spins": [{"name": "A", "species": "1H"}], "couplings": [{"a": "A", "b": "Z", "j_hz": 1}]})


def test_grape_config(sys3):
    cfg = io.grape_config_from_dict(
        {"n_steps": 10, "initial_dt": 1e-6, "robustness": {"rf_scales": [[0.9, 0.5], [1.1, 0.5]]}, "incoherent_subset": ["C1", "C2"]},
        sys3,
    )
    assert cfg.n_steps == 10
    assert len(cfg.robustness.freq_offsets) == 2
    with pytest.raises(io.FormatError):
        io.grape_config_from_dict({"n_steps": 10, "bogus": 1}, sys3)
