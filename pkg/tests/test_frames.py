import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinctl.seqc.frames import FrameTracker, absorb_virtual_180, rotation_parameters, wrap
from spinctl.spinsys import Spin, SpinSystem, rotation, rz

angles = st.floats(-math.pi, math.pi, allow_nan=False)
XPI = rotation(math.pi, 0.0)


def frame(a, s):
    return rz(a) @ (XPI if s else np.eye(2))


def one_spin(shift=0.0):
    return SpinSystem((Spin("A", "1H", shift),))


def same_up_to_phase(u, v, tol=1e-12):
    return abs(abs(np.trace(u.conj().T @ v)) - 2) < tol


class TestAbsorb:
    def test_examples(self):
        delta, gamma = absorb_virtual_180(0.0, math.pi / 2)
        assert gamma == pytest.approx(math.pi)
        assert delta == pytest.approx(math.pi / 2)
        delta, gamma = absorb_virtual_180(0.7, 0.7)
        assert gamma == 0.0
        assert delta == pytest.approx(wrap(0.7 - math.pi))

    @given(angles, angles)
    def test_identity_up_to_sign(self, alpha, beta):
        delta, gamma = absorb_virtual_180(beta, alpha)
        left = rz(gamma) @ rotation(math.pi / 2, delta)
        right = rotation(math.pi / 2, alpha) @ rotation(math.pi, beta)
        # SU(2) double cover: equal up to a sign, which flips with each wrap
        assert min(np.linalg.norm(left + right), np.linalg.norm(left - right)) < 1e-12


class TestRotationParameters:
    @given(st.floats(0.01, math.pi, allow_nan=False), angles)
    def test_round_trip(self, theta, phi):
        got = rotation_parameters(np.exp(0.3j) * rotation(theta, phi))
        assert got[0] == pytest.approx(theta, abs=1e-9)
        if theta < math.pi - 1e-6:
            assert abs(wrap(got[1] - phi)) < 1e-9
        assert same_up_to_phase(rotation(*got), rotation(theta, phi))

    def test_rejects_z_rotations(self):
        assert rotation_parameters(rz(0.5)) is None
        assert rotation_parameters(np.eye(4)) is None
        assert rotation_parameters(np.eye(2)) == (0.0, 0.0)


class TestTracker:
    def test_integer_turn_precession(self):
        fr = FrameTracker.for_system(one_spin(100.0))
        fr.delay(one_spin(100.0), 10e-3)
        assert wrap(fr.rotation_phase("A", 0.0)) == pytest.approx(0.0, abs=1e-12)
        assert fr.time == 10e-3

    def test_logical_z_shifts_next_pulse(self):
        fr = FrameTracker.for_system(one_spin())
        fr.logical_z("A", 0.25)
        assert fr.rotation_phase("A", 0.0) == pytest.approx(-math.pi / 2)

    @given(angles, st.integers(0, 1), angles, st.floats(-2, 2))
    def test_rules_preserve_physical_evolution(self, a, s, phase, turns):
        # |phys> = F |log>: each rule must satisfy F_after L = P F_before
        fr = FrameTracker({"A": a}, {"A": s})
        before = frame(a, s)
        axis = fr.rotation_phase("A", phase)
        assert same_up_to_phase(frame(a, s) @ rotation(1.1, phase), rotation(1.1, axis) @ before)

        fr.logical_z("A", turns)
        logical = rz(2 * math.pi * turns)
        assert same_up_to_phase(frame(fr.spin_frames["A"], s) @ logical, before)

        fr = FrameTracker({"A": a}, {"A": s})
        fr.physical_z("A", phase)
        assert same_up_to_phase(frame(fr.spin_frames["A"], s), rz(2 * phase) @ before)

        fr = FrameTracker({"A": a}, {"A": s})
        axis = fr.refocus("A", phase)
        after = frame(fr.spin_frames["A"], fr.pending["A"])
        assert same_up_to_phase(after, rotation(math.pi, axis) @ before)

    @given(angles, angles)
    def test_absorb_and_emit(self, a, phase):
        fr = FrameTracker({"A": a}, {"A": 1})
        axis = fr.absorb("A", phase)
        assert fr.pending["A"] == 0
        after = frame(fr.spin_frames["A"], 0)
        assert same_up_to_phase(after @ rotation(math.pi / 2, phase), rotation(math.pi / 2, axis) @ frame(a, 1))

        fr = FrameTracker({"A": a}, {"A": 0})
        axis = fr.emit_pending("A", phase)
        after = frame(fr.spin_frames["A"], 1)
        assert same_up_to_phase(after @ rotation(math.pi / 2, phase), rotation(math.pi / 2, axis) @ frame(a, 0))

    def test_absorb_needs_pending(self):
        fr = FrameTracker({"A": 0.0}, {"A": 0})
        with pytest.raises(ValueError):
            fr.absorb("A", 0.0)
        fr.pending["A"] = 1
        with pytest.raises(ValueError):
            fr.emit_pending("A", 0.0)

    def test_frame_unitary_order(self):
        fr = FrameTracker({"A": 0.3, "B": 0.0}, {"A": 0, "B": 1})
        assert np.allclose(fr.frame_unitary(["A", "B"]), np.kron(rz(0.3), XPI))
