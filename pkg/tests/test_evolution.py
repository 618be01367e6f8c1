import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trsb.basis import StateVector, basis, full_basis
from trsb.evolution import (
    Propagator,
    RampConvergenceError,
    RampSchedule,
    eigenstate_overlaps,
    evolve_ramp,
    evolve_static,
    ground_state,
    quench_trajectory,
    ramp_amplitudes,
)
from trsb.model import AbRingSpec, LadderSpec, build_ab, build_h0, build_ladder

import oracles

OMEGA = 2 * math.pi * 350.0
T_RAMP = 0.01
EPS = 0.22

# |<g|psi(T)>|^2 from a DOP853 integration (rtol 1e-12) of the quadratic ramp
# on the 3-site ring, Omega = 2 pi 350, T = 10 ms, delta = 4 Omega, eps = 0.22.
RAMP_OVERLAPS = {
    math.pi / 2: 0.9982669358524,
    -math.pi / 2: 0.9982669358524,
    0.0: 0.9993367363634,
    3 * math.pi / 4: 0.9796802170755,
    math.pi: 0.8034645966548,
}


def ramp_overlap(phi: float, tol: float = 1e-8) -> float:
    h = build_ab(AbRingSpec(3, OMEGA, phi, EPS), m=1)
    h0 = build_h0(3, 1, 4 * OMEGA, m=1)
    psi0 = StateVector.basis_state(basis(3, 1), "100")
    psi = evolve_ramp(RampSchedule(T_RAMP, h0, h), psi0, tol=tol)
    return ground_state(h)[2].fidelity(psi)


def first_peak(times, values):
    i = int(np.argmax(values))
    return times[i]


def test_quench_matches_matrix_exponential():
    h = build_ab(AbRingSpec(3, OMEGA, 0.8, EPS))
    psi0 = StateVector.basis_state(full_basis(3), "100")
    h_ref = oracles.ring(3, OMEGA, 0.8, EPS)
    for t in [0.0, 1e-4, 7.3e-4, 3e-3]:
        ref = oracles.quench(h_ref, oracles.basis_ket(3, [1]), t)
        assert np.allclose(evolve_static(h, psi0, t).amplitudes, ref, atol=1e-10)


def test_norm_preserved_and_weights():
    spec = LadderSpec(4, OMEGA, math.pi / 2)
    psi0 = StateVector.normalized(np.arange(16) + 1j, full_basis(4))
    traj = quench_trajectory(build_ladder(spec), psi0, np.linspace(0, 5e-3, 11))
    w0 = traj.subspace_weights[0]
    assert np.allclose(traj.subspace_weights, w0, atol=1e-12)
    assert np.allclose(traj.subspace_weights.sum(axis=1), 1.0)


def test_ladder_one_excitation_periodicity():
    spec = LadderSpec(4, OMEGA, math.pi / 2)
    period = 2 * math.pi / (math.sqrt(5) * OMEGA)
    ts = np.linspace(0, period, 7)
    h = build_ladder(spec, m=1)
    for site in [1, 2]:
        psi0 = StateVector.basis_state(basis(4, 1), 1 << (4 - site))
        a = quench_trajectory(h, psi0, ts).site_occupations
        b = quench_trajectory(h, psi0, ts + period).site_occupations
        assert np.abs(a - b).max() < 1e-8


def test_ladder_two_excitation_periodicity():
    spec = LadderSpec(4, OMEGA, math.pi / 2)
    period = 2 * math.pi / (3 * OMEGA)
    ts = np.linspace(0, period, 7)
    psi0 = StateVector.basis_state(basis(4, 2), "1001")
    h = build_ladder(spec, m=2)
    a = quench_trajectory(h, psi0, ts).site_occupations
    b = quench_trajectory(h, psi0, ts + period).site_occupations
    assert np.abs(a - b).max() < 1e-8


@pytest.mark.parametrize("phi", [math.pi / 2, -math.pi / 2])
def test_ab_ring_periodicity(phi):
    period = 2 * math.pi / (math.sqrt(3) * OMEGA)
    ts = np.linspace(0, period, 9)
    psi0 = StateVector.basis_state(basis(3, 1), "100")
    h = build_ab(AbRingSpec(3, OMEGA, phi), m=1)
    a = quench_trajectory(h, psi0, ts).site_occupations
    b = quench_trajectory(h, psi0, ts + period).site_occupations
    assert np.abs(a - b).max() < 1e-8


def test_chirality_ordering():
    ts = np.linspace(0, 1.2e-3, 2401)
    psi0 = StateVector.basis_state(basis(3, 1), "100")
    peaks = {}
    for phi in [math.pi / 2, -math.pi / 2]:
        occ = quench_trajectory(build_ab(AbRingSpec(3, OMEGA, phi, EPS), m=1), psi0, ts).site_occupations
        peaks[phi] = (first_peak(ts, occ[:, 1]), first_peak(ts, occ[:, 2]))
    # oracle: site 2 at 0.458 ms then site 3 at 0.916 ms for +pi/2
    assert peaks[math.pi / 2][0] == pytest.approx(0.458e-3, abs=1e-6)
    assert peaks[math.pi / 2][1] == pytest.approx(0.916e-3, abs=1e-6)
    assert peaks[math.pi / 2][0] < peaks[math.pi / 2][1]
    assert peaks[-math.pi / 2][1] < peaks[-math.pi / 2][0]
    occ = quench_trajectory(build_ab(AbRingSpec(3, OMEGA, 0.0, EPS), m=1), psi0, ts).site_occupations
    assert np.abs(occ[:, 1] - occ[:, 2]).max() < 1e-12


@pytest.mark.parametrize("phi", sorted(RAMP_OVERLAPS))
def test_ramp_overlap_frozen(phi):
    assert ramp_overlap(phi) == pytest.approx(RAMP_OVERLAPS[phi], abs=1e-7)


def test_ramp_matches_ode_oracle():
    phi = 0.4
    h = build_ab(AbRingSpec(3, OMEGA, phi, EPS), m=1)
    h0 = build_h0(3, 1, 4 * OMEGA, m=1)
    psi0 = StateVector.basis_state(basis(3, 1), "100")
    psi = evolve_ramp(RampSchedule(T_RAMP, h0, h), psi0, tol=1e-8)
    idx = oracles.sector_indices(3, 1)[::-1]
    ref = oracles.ramp_state(oracles.detuning(3, 1, 4 * OMEGA), oracles.ring(3, OMEGA, phi, EPS),
                             T_RAMP, oracles.basis_ket(3, [1]))[idx]
    assert abs(np.vdot(ref, psi.amplitudes)) ** 2 == pytest.approx(1.0, abs=1e-7)


def test_overlap_degrades_towards_half_flux():
    ov = [ramp_overlap(p, tol=1e-8) for p in np.linspace(math.pi / 2, math.pi, 6)]
    assert ov[0] >= 0.97
    assert all(a > b for a, b in zip(ov, ov[1:]))


@settings(max_examples=20, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(1e-4, 5e-3))
def test_trivial_ramp_is_static_evolution(phi, T):
    h = build_ab(AbRingSpec(3, OMEGA, phi, EPS), m=1)
    psi0 = StateVector.basis_state(basis(3, 1), "010")
    a = evolve_ramp(RampSchedule(T, h, h, steps=4), psi0)
    assert np.allclose(a.amplitudes, evolve_static(h, psi0, T).amplitudes, atol=1e-10)


def test_ramp_amplitudes_continue_after_ramp():
    h = build_ab(AbRingSpec(3, OMEGA, 1.0, EPS), m=1).matrix
    h0 = build_h0(3, 1, 4 * OMEGA, m=1).matrix
    psi0 = np.array([1, 0, 0], dtype=complex)
    amps = ramp_amplitudes(h0, h, T_RAMP, psi0, [2 * T_RAMP, T_RAMP], 4096)
    w, v = np.linalg.eigh(h)
    later = v @ (np.exp(-1j * w * T_RAMP) * (v.conj().T @ amps[1]))
    assert np.allclose(amps[0], later, atol=1e-12)


def test_ramp_convergence_error():
    h = build_ab(AbRingSpec(3, OMEGA, 1.0), m=1)
    h0 = build_h0(3, 1, 4 * OMEGA, m=1)
    psi0 = StateVector.basis_state(basis(3, 1), "100")
    with pytest.raises(RampConvergenceError) as info:
        evolve_ramp(RampSchedule(T_RAMP, h0, h, steps=2), psi0, tol=1e-14, max_steps=64)
    assert info.value.steps == 64


def test_invalid_ramp_schedule():
    h = build_ab(AbRingSpec(3, 1.0, 1.0), m=1)
    with pytest.raises(ValueError):
        RampSchedule(0.0, h, h)
    with pytest.raises(ValueError):
        RampSchedule(1.0, build_h0(3, 1, 1.0), h)


def test_ground_state_and_overlaps():
    h = build_ab(AbRingSpec(3, 1.0, 0.0), m=1)
    e0, gap, g = ground_state(h)
    assert e0 == pytest.approx(-2.0)
    assert gap == pytest.approx(3.0)
    psi = StateVector.basis_state(basis(3, 1), "100")
    ov = eigenstate_overlaps(h, psi)
    assert [round(e, 9) for e, _ in ov] == [-2.0, 1.0]
    assert ov[0][1] == pytest.approx(1 / 3)
    assert ov[1][1] == pytest.approx(2 / 3)


def test_propagator_rejects_other_basis():
    prop = Propagator(build_ab(AbRingSpec(3, 1.0, 0.0), m=1))
    with pytest.raises(ValueError):
        prop.amplitudes(StateVector.basis_state(full_basis(3), "100"), [0.1])


@settings(max_examples=20, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(0, 0.5))
def test_two_excitations_move_as_a_hole(phi, eps):
    # a hole sees the conjugate hopping, i.e. the opposite flux
    ts = np.linspace(0, 3e-3, 31)
    two = quench_trajectory(build_ab(AbRingSpec(3, OMEGA, phi, eps), m=2),
                            StateVector.basis_state(basis(3, 2), "011"), ts).site_occupations
    hole = quench_trajectory(build_ab(AbRingSpec(3, OMEGA, -phi, eps), m=1),
                             StateVector.basis_state(basis(3, 1), "100"), ts).site_occupations
    assert np.abs(two - (1 - hole)).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-math.pi, math.pi))
def test_static_evolution_conserves_norm_and_energy(seed, phi):
    rng = np.random.default_rng(seed)
    h = build_ladder(LadderSpec(5, OMEGA, phi))
    psi0 = StateVector.normalized(rng.normal(size=32) + 1j * rng.normal(size=32), full_basis(5))
    e0 = h.expectation(psi0).real
    norm_h = np.linalg.norm(h.matrix, 2)
    for psi in Propagator(h).evolve_many(psi0, [1e-4, 1e-3, 7e-3]):
        assert abs(psi.norm() - 1) < 1e-10
        assert abs(h.expectation(psi).real - e0) < 1e-9 * norm_h


def test_eigenvector_overlap_is_indicator():
    h = build_ab(AbRingSpec(3, 1.0, 0.9, 0.1), m=1)
    w, v = h.eigh()
    ov = eigenstate_overlaps(h, StateVector(v[:, 1], basis(3, 1)))
    assert [p for _, p in ov] == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)


def test_uniform_state_is_the_zero_flux_ground_state():
    h = build_ab(AbRingSpec(3, 1.0, 0.0), m=1)
    ov = eigenstate_overlaps(h, StateVector.normalized(np.ones(3), basis(3, 1)))
    assert ov[0][0] == pytest.approx(-2.0)
    assert ov[0][1] == pytest.approx(1.0)
    assert sum(p for _, p in ov) == pytest.approx(1.0)
