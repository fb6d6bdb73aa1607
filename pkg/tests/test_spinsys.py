import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from spinctl.spinsys import (
    SX,
    SY,
    SZ,
    ControlChannel,
    PulseShape,
    Spin,
    SpinSystem,
    SubsystemSpec,
    SystemTooLarge,
    build_internal_hamiltonian,
    control_operators,
    equivalent_up_to_local_z,
    free_propagator,
    hs_fidelity,
    restrict_to_subsystem,
    rotation,
    rz,
    simulate,
    step_propagator,
    total_propagator,
    worst_case_fidelity,
)


def one_spin(shift=0.0, cap=30e3):
    return SpinSystem((Spin("A", "1H", shift),), channels=(ControlChannel("1H", 0.0, cap),))


def two_spin(j=100.0, model="weak_ising", shifts=(0.0, 0.0), species=("13C", "13C")):
    return SpinSystem(
        (Spin("A", species[0], shifts[0]), Spin("B", species[1], shifts[1])),
        {("A", "B"): j},
        model,
    )


def haar_unitary(rng, n):
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / abs(np.diag(r)))


class TestSpinSystem:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SpinSystem((Spin("A", "1H"), Spin("A", "1H")))
        with pytest.raises(ValueError):
            SpinSystem((Spin("A", "1H"),), {("A", "B"): 1.0})
        with pytest.raises(ValueError):
            SpinSystem((Spin("A", "1H"),), {("A", "A"): 1.0})

    def test_symmetric_j(self):
        sys = SpinSystem((Spin("A", "1H"), Spin("B", "1H")), {("B", "A"): 7.0})
        assert sys.J("A", "B") == sys.J("B", "A") == 7.0
        assert sys.dim == 4

    def test_one_channel_per_species(self):
        sys = SpinSystem((Spin("H", "1H"), Spin("C", "13C")))
        assert sys.species == ["1H", "13C"]
        with pytest.raises(ValueError):
            ControlChannel("1H", max_amplitude=0.0)

    def test_size_cap(self):
        sys = SpinSystem(tuple(Spin(f"S{k}", "1H") for k in range(11)))
        with pytest.raises(SystemTooLarge):
            build_internal_hamiltonian(sys)

    def test_restrict_full_set(self):
        sys = two_spin()
        assert restrict_to_subsystem(sys, ["A", "B"]) == sys

    def test_restrict_chain(self):
        sys = SpinSystem(
            (Spin("1", "C"), Spin("2", "C"), Spin("3", "C")),
            {("1", "2"): 50.0, ("2", "3"): 30.0},
        )
        sub = restrict_to_subsystem(sys, ["1", "2"])
        assert sub.couplings == {("1", "2"): 50.0}
        with pytest.raises(KeyError):
            restrict_to_subsystem(sys, ["9"])

    def test_restrict_by_species(self):
        spins = tuple(Spin(f"H{k}", "1H") for k in range(3)) + tuple(
            Spin(f"C{k}", "13C") for k in range(4)
        )
        names = [s.name for s in spins]
        couplings = {
            (a, b): 10.0 + i
            for i, (a, b) in enumerate(
                (a, b) for k, a in enumerate(names) for b in names[k + 1:]
            )
        }
        sys = SpinSystem(spins, couplings)
        sub = restrict_to_subsystem(sys, [f"C{k}" for k in range(4)])
        # brute-force count of carbon-carbon pairs
        assert len(sub.couplings) == 4 * 3 // 2
        assert all(a.startswith("C") and b.startswith("C") for a, b in sub.couplings)
        assert sub.species == ["13C"]

    def test_subsystem_spec_strong_couplings(self):
        sys = SpinSystem(
            (Spin("1", "C"), Spin("2", "C"), Spin("3", "C")),
            {("1", "2"): 50.0, ("2", "3"): 5.0},
        )
        SubsystemSpec((("1", "2"),)).validate(sys, strong_threshold=20.0)
        with pytest.raises(ValueError):
            SubsystemSpec((("2", "3"),)).validate(sys, strong_threshold=20.0)
        with pytest.raises(ValueError):
            SubsystemSpec(((),))


class TestHamiltonian:
    def test_single_spin_zero(self):
        assert np.array_equal(build_internal_hamiltonian(one_spin()), np.zeros((2, 2)))

    def test_weak_ising_diagonal(self):
        h = build_internal_hamiltonian(two_spin(100.0))
        # direct tensor product evaluation
        expected = math.pi / 2 * 100.0 * np.kron(SZ, SZ)
        assert np.allclose(h, expected, atol=1e-12)
        assert np.allclose(np.diag(h), math.pi / 2 * 100 * np.array([1, -1, -1, 1]))

    def test_shift_term_order(self):
        sys = two_spin(0.0, shifts=(10.0, 3.0))
        h = build_internal_hamiltonian(sys)
        expected = math.pi * 10.0 * np.kron(SZ, np.eye(2)) + math.pi * 3.0 * np.kron(np.eye(2), SZ)
        assert np.allclose(h, expected)

    def test_full_exchange_spectrum(self):
        j = 100.0
        h = build_internal_hamiltonian(two_spin(j, "full_exchange"))
        brute = math.pi / 2 * j * (np.kron(SX, SX) + np.kron(SY, SY) + np.kron(SZ, SZ))
        assert np.allclose(h, brute)
        # dense eigensolver oracle: triplet at +pi J/2, singlet at -3 pi J/2
        ev = np.sort(np.linalg.eigvalsh(brute))
        assert np.allclose(np.sort(np.linalg.eigvalsh(h)), ev)
        assert np.allclose(ev, np.sort([math.pi * j / 2] * 3 + [-3 * math.pi * j / 2]))

    def test_transmitter_offset(self):
        sys = SpinSystem((Spin("A", "1H", 500.0),), channels=(ControlChannel("1H", 200.0),))
        assert np.allclose(np.diag(build_internal_hamiltonian(sys)), math.pi * 300 * np.array([1, -1]))


class TestPropagators:
    def test_identity_when_idle(self):
        sys = one_spin()
        u = step_propagator(build_internal_hamiltonian(sys), control_operators(sys), 1e-3, [[0, 0]])
        assert np.allclose(u, np.eye(2))

    def test_quarter_turn(self):
        sys = one_spin()
        u = step_propagator(build_internal_hamiltonian(sys), control_operators(sys), 1e-3, [[250.0, 0]])
        assert np.allclose(u, scipy.linalg.expm(-1j * math.pi / 4 * SX), atol=1e-12)

    def test_nonfinite_rejected(self):
        sys = one_spin()
        with pytest.raises(ValueError):
            step_propagator(build_internal_hamiltonian(sys), control_operators(sys), 1e-3, [[np.nan, 0]])

    def test_matches_scipy_expm(self):
        rng = np.random.default_rng(1)
        sys = two_spin(80.0, shifts=(300.0, -1200.0), species=("1H", "13C"))
        pulse = PulseShape(np.full(5, 2e-5), rng.uniform(-3e3, 3e3, (5, 2, 2)), ("1H", "13C"))
        h_int = build_internal_hamiltonian(sys)
        ctrl = control_operators(sys)
        expected = np.eye(4)
        for d, a in zip(pulse.durations, pulse.amplitudes):
            h = h_int + sum(a[c, 0] * ctrl[c][0] + a[c, 1] * ctrl[c][1] for c in range(2))
            expected = scipy.linalg.expm(-1j * d * h) @ expected
        assert np.allclose(simulate(sys, pulse), expected, atol=1e-11)

    def test_far_off_resonance_phase(self):
        # 3 kHz off-resonance under an on-resonance 180 of 1 ms picks up ~15 deg
        sys = one_spin(3000.0)
        pulse = PulseShape(np.array([1e-3]), np.array([[[500.0, 0.0]]]), ("1H",))
        u = simulate(sys, pulse)
        free = free_propagator(sys, 1e-3)
        rel = np.conj(free.T) @ u
        extra = abs(np.angle(rel[1, 1] / rel[0, 0]))
        closed_form = 2 * math.pi * (math.hypot(3000, 500) - 3000) * 1e-3
        assert math.degrees(extra) == pytest.approx(15.0, abs=1.0)
        assert extra == pytest.approx(closed_form, abs=0.01)

    def test_total_propagator(self):
        assert np.array_equal(total_propagator([], dim=2), np.eye(2))
        rng = np.random.default_rng(2)
        u = haar_unitary(rng, 4)
        assert np.allclose(total_propagator([u, u.conj().T]), np.eye(4), atol=1e-10)
        r = rotation(math.pi / 4, 0.0)
        assert np.allclose(total_propagator([r, r]), rotation(math.pi / 2, 0.0))
        with pytest.raises(ValueError):
            total_propagator([np.eye(2), np.eye(4)])

    def test_time_order(self):
        a, b = rotation(math.pi / 2, 0.0), rotation(math.pi / 2, math.pi / 2)
        assert np.allclose(total_propagator([a, b]), b @ a)

    @settings(max_examples=25, deadline=None)
    @given(
        st.lists(st.floats(-5e3, 5e3), min_size=4, max_size=4),
        st.floats(1e-6, 1e-4),
        st.floats(-2e3, 2e3),
    )
    def test_unitarity_and_trotter(self, amps, dt, shift):
        sys = SpinSystem(
            (Spin("A", "1H", shift), Spin("B", "1H", -shift / 3)), {("A", "B"): 40.0}
        )
        a = np.array(amps).reshape(1, 2, 2)[:, :1, :]
        pulse = PulseShape(np.array([dt]), a, ("1H",))
        u = simulate(sys, pulse)
        assert np.abs(u.conj().T @ u - np.eye(4)).max() < 1e-10
        half = PulseShape(np.array([dt / 2, dt / 2]), np.repeat(a, 2, axis=0), ("1H",))
        assert np.abs(simulate(sys, half) - u).max() < 1e-12

    def test_half_j_gives_cz(self):
        j = 73.0
        u = free_propagator(two_spin(j), 1 / (2 * j))
        cz = np.diag([1, 1, 1, -1]).astype(complex)
        assert equivalent_up_to_local_z(u, cz)
        assert not equivalent_up_to_local_z(free_propagator(two_spin(j), 1 / (4 * j)), cz)


class TestFidelity:
    def test_hs_basic(self):
        assert hs_fidelity(np.eye(2), np.eye(2)) == pytest.approx(1.0)
        assert hs_fidelity(np.eye(2), SX) == pytest.approx(0.0)
        # |tr diag(e^{-i pi/4}, e^{i pi/4})|^2/4 = cos^2(pi/4)
        assert hs_fidelity(np.eye(2), rz(math.pi / 2)) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            hs_fidelity(np.eye(2), np.eye(4))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-10, 10), st.integers(0, 10_000))
    def test_global_phase_invariance(self, theta, seed):
        u = haar_unitary(np.random.default_rng(seed), 4)
        assert hs_fidelity(u, np.exp(1j * theta) * u) == pytest.approx(1.0)

    def test_worst_case_basic(self):
        rng = np.random.default_rng(3)
        u = haar_unitary(rng, 4)
        assert worst_case_fidelity(u, u) == pytest.approx(1.0)
        assert worst_case_fidelity(np.eye(2), SZ) == pytest.approx(0.0)
        # rotation by theta: eigenvalues e^{+-i theta/2}, span theta -> cos^2(theta/2)
        assert worst_case_fidelity(np.eye(2), rotation(0.3, 1.0)) == pytest.approx(math.cos(0.15) ** 2)

    def test_worst_case_below_average(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            u = haar_unitary(rng, 4)
            v = scipy.linalg.expm(-1j * 0.2 * (lambda h: h + h.conj().T)(rng.normal(size=(4, 4)) + 0j)) @ u
            avg = (4 * hs_fidelity(u, v) + 1) / 5
            assert worst_case_fidelity(u, v) <= avg + 1e-12

    def test_worst_case_monte_carlo_oracle(self):
        rng = np.random.default_rng(5)
        u = haar_unitary(rng, 4)
        h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        v = scipy.linalg.expm(-0.25j * (h + h.conj().T)) @ u
        m = u.conj().T @ v
        closed = worst_case_fidelity(u, v)
        assert 0 < closed < 1
        psi = rng.normal(size=(100_000, 4)) + 1j * rng.normal(size=(100_000, 4))
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        vals = np.abs(np.einsum("si,ij,sj->s", psi.conj(), m, psi)) ** 2
        assert closed <= vals.min() + 1e-12
        # polish the best Haar samples with a local search
        def f(x):
            p = x[:4] + 1j * x[4:]
            p = p / np.linalg.norm(p)
            return abs(p.conj() @ m @ p) ** 2

        best = min(
            scipy.optimize.minimize(f, np.concatenate([p.real, p.imag]), method="Nelder-Mead",
                                    options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000}).fun
            for p in psi[np.argsort(vals)[:10]]
        )
        assert closed <= best + 1e-12
        assert best - closed < 1e-3


def test_local_z_equivalence_checks_every_basis_pair():
    ccz = np.diag([1, 1, 1, 1, 1, 1, 1, -1]).astype(complex)
    assert not equivalent_up_to_local_z(ccz, np.eye(8))
    local = np.kron(rz(0.3), np.kron(rz(-1.1), rz(2.0)))
    assert equivalent_up_to_local_z(local, np.eye(8))
