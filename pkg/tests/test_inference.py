import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trsb.basis import StateVector, basis
from trsb.inference import (
    FitModel,
    FitProblem,
    JointFitProblem,
    Protocol,
    RampProtocol,
    fit,
    loglik,
    loglik_grid,
    read_records,
    simulate_data,
)
from trsb.measurement import MeasurementKind, ShotRecord

import oracles

OMEGA = 2 * math.pi * 350.0
TIMES = np.linspace(0.1e-3, 2.0e-3, 12)
PSI_AB = StateVector.basis_state(basis(3, 1), "100")
TRUTH = {"omega": OMEGA, "epsilon": 0.22}


def ab_problem(data, phi=math.pi / 2, free=("omega", "epsilon"), **kw):
    return FitProblem(FitModel.AB_RING, 3, phi, free, data, PSI_AB, 1,
                      params={"omega": OMEGA, "epsilon": 0.22}, **kw)


def exact_data(phi, params, times, shots=10**9):
    """Counts proportional to the exact probabilities (oracle propagation)."""
    idx = oracles.sector_indices(3, 1)
    h = oracles.ring(3, params["omega"], phi, params.get("epsilon", 0.0))
    out = []
    for t in times:
        p = np.abs(oracles.quench(h, oracles.basis_ket(3, [1]), t)) ** 2
        counts = np.round(p[idx] / p[idx].sum() * shots).astype(int)
        text = {format(i, "03b"): int(c) for i, c in zip(idx, counts) if c}
        out.append((float(t), ShotRecord(MeasurementKind.OCCUPANCY, 3, text, int(counts.sum()))))
    return out


def test_loglik_matches_oracle():
    data = simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES, 200, seed=3)
    prob = ab_problem(data, phi=0.7)
    h = oracles.ring(3, 1.1 * OMEGA, 0.7, 0.3)
    idx = oracles.sector_indices(3, 1)
    ref = 0.0
    for t, rec in data:
        p = np.abs(oracles.quench(h, oracles.basis_ket(3, [1]), t)) ** 2
        ref += float(rec.count_vector()[idx] @ np.log(np.clip(p[idx] / p[idx].sum(), 1e-15, None)))
    assert loglik(prob, {"omega": 1.1 * OMEGA, "epsilon": 0.3}) == pytest.approx(ref, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.8, 1.2), st.floats(0.0, 0.6))
def test_truth_maximizes_noise_free_likelihood(scale, eps):
    prob = ab_problem(exact_data(math.pi / 2, TRUTH, TIMES))
    assert loglik(prob, TRUTH) >= loglik(prob, {"omega": scale * OMEGA, "epsilon": eps}) - 1e-6


def test_doubling_counts_doubles_loglik():
    data = simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES, 300, seed=4)
    doubled = [(t, ShotRecord(r.setting, 3, {k: 2 * v for k, v in r.counts.items()}, 2 * r.shots))
               for t, r in data]
    p = {"omega": 0.9 * OMEGA, "epsilon": 0.1}
    assert loglik(ab_problem(doubled), p) == pytest.approx(2 * loglik(ab_problem(data), p), rel=1e-12)


def test_zero_count_outcomes_contribute_nothing():
    a = ShotRecord(MeasurementKind.OCCUPANCY, 3, {"100": 5, "010": 0}, 5)
    b = ShotRecord(MeasurementKind.OCCUPANCY, 3, {"100": 5}, 5)
    data_a = [(1e-4, a), (2e-4, a)]
    data_b = [(1e-4, b), (2e-4, b)]
    assert loglik(ab_problem(data_a)) == loglik(ab_problem(data_b))


def test_post_selection_ignores_other_sectors():
    a = ShotRecord(MeasurementKind.OCCUPANCY, 3, {"100": 5, "110": 7, "000": 2}, 14)
    b = ShotRecord(MeasurementKind.OCCUPANCY, 3, {"100": 5}, 5)
    assert loglik(ab_problem([(1e-4, a), (3e-4, a)])) == pytest.approx(
        loglik(ab_problem([(1e-4, b), (3e-4, b)])))


@settings(max_examples=15, deadline=None)
@given(st.floats(0.25, 4.0))
def test_time_rescaling_invariance(c):
    data = simulate_data(FitModel.AB_RING, 3, 1.0, TRUTH, PSI_AB, TIMES, 100, seed=5)
    scaled = [(t / c, r) for t, r in data]
    p = {"omega": 1.05 * OMEGA, "epsilon": 0.2}
    q = {"omega": 1.05 * OMEGA * c, "epsilon": 0.2}
    assert loglik(ab_problem(data, phi=1.0), p) == pytest.approx(
        loglik(ab_problem(scaled, phi=1.0, bounds={"omega": (0.5 * OMEGA * c, 2 * OMEGA * c)}), q),
        rel=1e-9)


def test_loglik_grid_matches_pointwise():
    prob = ab_problem(simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES, 100, seed=6))
    om = np.array([0.9, 1.0, 1.1]) * OMEGA
    ep = np.array([0.1, 0.2, 0.3])
    grid = loglik_grid(prob, om, ep)
    assert np.allclose(grid, [loglik(prob, {"omega": o, "epsilon": e}) for o, e in zip(om, ep)])
    with pytest.raises(ValueError):
        loglik(prob, {"omega": -1.0})
    with pytest.raises(ValueError):
        loglik(prob, {"epsilon": -0.1})


def test_large_sample_consistency():
    phis = [math.pi / 2, -math.pi / 2, 0.0]
    parts = [ab_problem(simulate_data(FitModel.AB_RING, 3, phi, TRUTH, PSI_AB, TIMES, 10**6,
                                      seed=10 + i), phi=phi)
             for i, phi in enumerate(phis)]
    res = fit(JointFitProblem(tuple(parts)))
    assert res.converged
    assert res.estimates["omega"] == pytest.approx(OMEGA, rel=1e-3)
    assert res.estimates["epsilon"] == pytest.approx(0.22, rel=1e-3)


def test_ladder_fit_recovers_omega():
    omega = 2 * math.pi * 245.0
    psi = StateVector.basis_state(basis(4, 1), "0100")
    times = np.linspace(0.1e-3, 1.5e-3, 15)
    data = simulate_data(FitModel.LADDER, 4, math.pi / 2, {"omega": omega}, psi, times, 400, seed=2)
    prob = FitProblem(FitModel.LADDER, 4, math.pi / 2, ("omega",), data, psi, 1,
                      params={"omega": 2 * math.pi * 250.0})
    res = fit(prob)
    lo, hi = res.ci95["omega"]
    assert lo < res.estimates["omega"] < hi
    assert abs(res.estimates["omega"] - omega) < 3 * (hi - lo)
    assert res.converged and not res.flat


def test_fixed_parameter_held():
    data = simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES, 500, seed=8)
    res = fit(ab_problem(data, phi=0.7, free=("omega",)))
    assert set(res.estimates) == {"omega"}
    assert res.surface.values.shape == (21,)


def test_flat_likelihood_flagged():
    # before any evolution every parameter value predicts the initial state
    data = [(t, ShotRecord(MeasurementKind.OCCUPANCY, 3, {"100": 30}, 30)) for t in (0.0, 1e-12)]
    res = fit(ab_problem(data, free=("epsilon",)))
    assert "epsilon" in res.flat


def test_fit_result_json():
    data = simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES, 500, seed=8)
    res = fit(ab_problem(data, phi=0.7, free=("omega",)))
    d = json.loads(res.to_json())
    assert set(d) >= {"estimates", "ci95", "loglik", "converged", "flat", "at_boundary"}


def test_problem_validation():
    data = simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES[:2], 10, seed=1)
    with pytest.raises(ValueError):
        ab_problem(data[:1])
    with pytest.raises(ValueError):
        ab_problem([(1e-4, data[0][1]), (1e-4, data[1][1])])
    with pytest.raises(ValueError):
        ab_problem(data, free=("gamma",))
    with pytest.raises(ValueError):
        ab_problem(data, free=())
    ip = ShotRecord(MeasurementKind.IN_PHASE, 3, {"100": 1}, 1)
    with pytest.raises(ValueError):
        ab_problem([(1e-4, ip), (2e-4, ip)])
    psi4 = StateVector.basis_state(basis(4, 1), "0100")
    with pytest.raises(ValueError):
        FitProblem(FitModel.LADDER, 4, 0.0, ("epsilon",), data, psi4, 1, params={"omega": 1.0})
    with pytest.raises(ValueError):
        FitProblem(FitModel.LADDER, 3, 0.0, ("omega",), data, PSI_AB, 1, params={"omega": 1.0},
                   protocol=Protocol.RAMP, ramp=RampProtocol(0.01, 1.0))
    with pytest.raises(ValueError):
        ab_problem(data, bounds={"omega": (2.0, 1.0)})


def test_records_round_trip(tmp_path):
    data = simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES[:3], 50, seed=1)
    paths = []
    for i, (t, rec) in enumerate(data):
        p = tmp_path / f"t{i:04d}.txt"
        rec.write(p)
        paths.append(p)
    back = read_records(paths)
    assert [t for t, _ in back] == [t for t, _ in data]
    assert [r.counts for _, r in back] == [r.counts for _, r in data]


def test_simulation_is_seeded():
    a = simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES, 50, seed=1)
    b = simulate_data(FitModel.AB_RING, 3, 0.7, TRUTH, PSI_AB, TIMES, 50, seed=1)
    assert [r.counts for _, r in a] == [r.counts for _, r in b]


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1])
def test_ramp_flux_sweep_fit(seed):
    T = 0.01
    ramp = RampProtocol(T, 4 * OMEGA)
    times = np.linspace(0.5 * T, 2 * T, 16)
    phis = np.linspace(-math.pi, math.pi, 9)
    ss = np.random.SeedSequence(seed).spawn(len(phis))
    parts = []
    for phi, s in zip(phis, ss):
        data = simulate_data(FitModel.AB_RING, 3, phi, TRUTH, PSI_AB, times, 500,
                             protocol=Protocol.RAMP, ramp=ramp, rng=np.random.default_rng(s))
        parts.append(ab_problem(data, phi=phi, protocol=Protocol.RAMP, ramp=ramp))
    res = fit(JointFitProblem(tuple(parts)))
    assert res.converged
    for k, v in TRUTH.items():
        lo, hi = res.ci95[k]
        width = hi - lo
        assert lo - width < v < hi + width
