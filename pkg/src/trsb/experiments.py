"""Named experiments behind ``trsb run``.

Each experiment resolves its configuration, computes in deterministic order
(optionally farming sweep points out to worker processes) and writes CSV/JSON
results with a fixed number format.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .basis import StateVector, basis as sector_basis, popcount
from .certification import CertificationConfig, certify
from .config import ConfigError, Experiment, ExperimentConfig
from .evolution import (
    Propagator,
    RampSchedule,
    eigenstate_overlaps,
    evolve_ramp,
    ground_state,
    trajectory_from_amplitudes,
)
from .inference import (
    FitModel,
    FitProblem,
    JointFitProblem,
    Protocol,
    RampProtocol,
    fit,
    read_records,
    simulate_data,
)
from .measurement import (
    current_expectation,
    local_energy_estimate,
    post_select,
    sample_shots,
    wilson_interval,
)
from .model import (
    AbRingSpec,
    Gauge,
    LadderSpec,
    build_ab,
    build_h0,
    build_ladder,
    current_hops,
    local_terms,
)

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
INVARIANT_TOL = 1e-9


class InvariantError(RuntimeError):
    """A self-check on computed results failed."""


@dataclass
class RunResult:
    out_dir: Path
    files: list[Path] = field(default_factory=list)


# ---------------------------------------------------------------- output helpers


def format_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FORMAT % float(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")
    return path


def write_json(path: Path, payload: dict) -> Path:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _spawn(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _map(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise InvariantError(message)


# ---------------------------------------------------------------- states


def _occupied_state(n_sites: int, occupied: Sequence[int]) -> StateVector:
    if len(set(occupied)) != len(occupied) or any(not 1 <= s <= n_sites for s in occupied):
        raise ConfigError(f"initial.occupied: sites must be distinct and within 1..{n_sites}")
    label = "".join("1" if k in occupied else "0" for k in range(1, n_sites + 1))
    return StateVector.basis_state(sector_basis(n_sites, len(occupied)), label)


def _gauge(cfg: ExperimentConfig) -> Gauge:
    return Gauge[cfg.model.gauge.upper()]


# ---------------------------------------------------------------- trajectories


def _trajectory_rows(cfg, h, psi, times, seed_seq) -> tuple[list[list], list[tuple[float, object]]]:
    n = psi.n_sites
    m = psi.basis.m
    amps = Propagator(h).amplitudes(psi, times)
    if cfg.shots == 0:
        traj = trajectory_from_amplitudes(times, amps, psi.basis)
        rows = [[t, *occ, *w] for t, occ, w in
                zip(traj.times, traj.site_occupations, traj.subspace_weights)]
        return rows, []
    rows, records = [], []
    for t, a, ss in zip(times, amps, seed_seq.spawn(len(times))):
        state = StateVector.normalized(a, psi.basis)
        rec = sample_shots(state, "OCCUPANCY", cfg.shots, None, time=float(t),
                           rng=np.random.default_rng(ss))
        freqs = rec.frequencies()
        weights = np.zeros(n + 1)
        for idx, f in enumerate(freqs):
            weights[popcount(idx)] += f
        occ = post_select(rec, m).occupations if weights[m] > 0 else np.full(n, np.nan)
        rows.append([t, *occ, *weights])
        records.append((t, rec))
    return rows, records


def _write_trajectory(cfg, out: Path, h, psi, result: RunResult) -> None:
    times = np.array(cfg.times.resolve("times"))
    n = psi.n_sites
    rows, records = _trajectory_rows(cfg, h, psi, times, np.random.SeedSequence(cfg.seed))
    arr = np.array(rows, dtype=float)
    occ, w = arr[:, 1:n + 1], arr[:, n + 1:]
    finite = np.isfinite(occ)
    _check(np.all((occ[finite] > -INVARIANT_TOL) & (occ[finite] < 1 + INVARIANT_TOL)),
           "site occupation outside [0, 1]")
    _check(np.allclose(w.sum(axis=1), 1.0, atol=INVARIANT_TOL), "subspace weights do not sum to 1")
    header = ["time", *[f"occ_site{k}" for k in range(1, n + 1)], *[f"weight_m{k}" for k in range(n + 1)]]
    result.files.append(write_csv(out / "trajectory.csv", header, rows))
    if records:
        rec_dir = out / "records"
        rec_dir.mkdir(exist_ok=True)
        for i, (_, rec) in enumerate(records):
            path = rec_dir / f"t{i:04d}.txt"
            rec.write(path)
            result.files.append(path)
    if cfg.output.plots:
        from .plotting import plot_trajectory

        result.files.append(plot_trajectory(out / "trajectory.svg", arr[:, 0], occ,
                                            title=cfg.experiment.value))


def run_ab_dynamics(cfg: ExperimentConfig, out: Path, result: RunResult) -> None:
    n = cfg.model.n_sites or 3
    occupied = cfg.initial.occupied or [1]
    psi = _occupied_state(n, occupied)
    spec = AbRingSpec(n, cfg.omega, cfg.model.phi, cfg.model.epsilon)
    _write_trajectory(cfg, out, build_ab(spec, psi.basis.m), psi, result)


def run_ladder(cfg: ExperimentConfig, out: Path, result: RunResult, m: int) -> None:
    n = cfg.model.n_sites or 4
    occupied = cfg.initial.occupied or ([2] if m == 1 else [1, 2])
    if len(occupied) != m:
        raise ConfigError(f"initial.occupied: {cfg.experiment.value} needs {m} excitation(s)")
    psi = _occupied_state(n, occupied)
    spec = LadderSpec(n, cfg.omega, cfg.model.phi, _gauge(cfg))
    _write_trajectory(cfg, out, build_ladder(spec, m), psi, result)


# ---------------------------------------------------------------- ground-state sweep


@dataclass(frozen=True)
class _PointTask:
    phi: float
    n_sites: int
    omega: float
    epsilon: float
    T: float
    delta: float
    site: int
    tol: float
    steps: int
    shots: int
    f_threshold: float
    alpha: float
    shots_budget: int
    seed: np.random.SeedSequence
    states: tuple[str, ...] = ()
    trials: int = 0


def _prepare(task: _PointTask):
    spec = AbRingSpec(task.n_sites, task.omega, task.phi, task.epsilon)
    h = build_ab(spec, 1)
    h0 = build_h0(task.n_sites, task.site, task.delta, 1)
    label = "".join("1" if k == task.site else "0" for k in range(1, task.n_sites + 1))
    psi0 = StateVector.basis_state(h.basis, label)
    psi = evolve_ramp(RampSchedule(task.T, h0, h, task.steps), psi0, tol=task.tol)
    return spec, h, psi


def _sweep_point(task: _PointTask) -> dict:
    spec, h, psi = _prepare(task)
    e0, gap, _ = ground_state(h)
    overlap = eigenstate_overlaps(h, psi)[0][1]
    terms = local_terms(spec.hops())
    rng = np.random.default_rng(task.seed)
    exact_energy = float(np.real(h.expectation(psi)))
    if task.shots == 0:
        energy, energy_err = exact_energy, 0.0
        current, current_err = current_expectation(psi, spec), 0.0
    else:
        est = local_energy_estimate(psi, terms, task.shots, rng=rng)
        energy, energy_err = est.value, est.stderr
        cur = local_energy_estimate(psi, local_terms(current_hops(spec)), task.shots, rng=rng)
        current, current_err = cur.value, cur.stderr
    if gap <= 0:
        decision, alpha, delta = "UNDEFINED", math.nan, math.nan
    elif task.shots == 0:
        bound = 1.0 - (exact_energy - e0) / gap
        decision = "ACCEPT" if bound >= task.f_threshold else "REJECT"
        alpha, delta = 0.0, 0.0
    else:
        cc = CertificationConfig(task.f_threshold, task.alpha, e0, gap, task.shots_budget)
        outcome = certify(psi, terms, cc, rng=rng, verify_spectrum=False)
        decision, alpha, delta = outcome.decision.value, outcome.reliability, outcome.delta_gap
    return dict(phi=task.phi, energy=energy, energy_err=energy_err, overlap_gs=overlap,
                current=current, current_err=current_err, certify_decision=decision,
                alpha=alpha, delta=delta, e0=e0, exact_energy=exact_energy)


def _tasks(cfg: ExperimentConfig, **extra) -> list[_PointTask]:
    phis = cfg.sweep.resolve("sweep")
    n = cfg.model.n_sites or 3
    seeds = _spawn(cfg.seed, len(phis))
    return [
        _PointTask(phi, n, cfg.omega, cfg.model.epsilon, cfg.ramp.T, cfg.ramp_delta,
                   cfg.ramp.site, cfg.ramp.tol, cfg.ramp.steps, cfg.shots,
                   cfg.certify.f_threshold, cfg.certify.alpha, cfg.certify.shots_budget,
                   ss, **extra)
        for phi, ss in zip(phis, seeds)
    ]


SWEEP_COLUMNS = ["phi", "energy", "energy_err", "overlap_gs", "current", "current_err",
                 "certify_decision", "alpha", "delta"]


def run_ground_state_sweep(cfg: ExperimentConfig, out: Path, result: RunResult) -> None:
    points = _map(_sweep_point, _tasks(cfg), cfg.workers)
    scale = cfg.freq_scale
    for p in points:
        _check(-INVARIANT_TOL <= p["overlap_gs"] <= 1 + INVARIANT_TOL, "overlap outside [0, 1]")
        _check(p["exact_energy"] >= p["e0"] - INVARIANT_TOL * max(1.0, abs(p["e0"])),
               "prepared energy below the ground energy")
    rows = [[p["phi"], p["energy"] / scale, p["energy_err"] / scale, p["overlap_gs"],
             p["current"], p["current_err"], p["certify_decision"], p["alpha"], p["delta"]]
            for p in points]
    result.files.append(write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows))
    if cfg.output.plots:
        from .plotting import plot_sweep

        result.files.append(plot_sweep(out / "sweep.svg", np.array([r[:6] for r in rows], float)))


# ---------------------------------------------------------------- certification sweep


def _certify_point(task: _PointTask) -> list[list]:
    spec, h, psi_ramp = _prepare(task)
    w, v = h.eigh()
    e0, gap, gs = ground_state(h)
    terms = local_terms(spec.hops())
    states = {
        "ground": gs,
        "excited": StateVector(v[:, 1], h.basis),
        "ramp": psi_ramp,
    }
    rows = []
    seeds = task.seed.spawn(len(task.states))
    for name, ss in zip(task.states, seeds):
        psi = states[name]
        fidelity = float(abs(np.vdot(gs.amplitudes, psi.amplitudes)) ** 2)
        energy = float(np.real(h.expectation(psi)))
        if gap <= 0:
            rows.append([task.phi, name, fidelity, math.nan, task.trials, math.nan,
                         math.nan, math.nan, math.nan, energy])
            continue
        cc = CertificationConfig(task.f_threshold, task.alpha, e0, gap, task.shots_budget)
        rng = np.random.default_rng(ss)
        outcomes = [certify(psi, terms, cc, rng=rng, verify_spectrum=False)
                    for _ in range(task.trials)]
        accepts = sum(o.accepted for o in outcomes)
        lo, hi = wilson_interval(accepts, task.trials)
        bound = 1.0 - (energy - e0) / gap
        rows.append([task.phi, name, fidelity, bound, task.trials, accepts / task.trials,
                     lo, hi, outcomes[0].delta_gap, energy])
    return rows


CERTIFY_COLUMNS = ["phi", "state", "fidelity", "fidelity_bound", "trials", "accept_rate",
                   "accept_lo", "accept_hi", "delta", "energy"]


def run_certify_sweep(cfg: ExperimentConfig, out: Path, result: RunResult) -> None:
    tasks = _tasks(cfg, states=tuple(cfg.certify.states), trials=cfg.certify.trials)
    blocks = _map(_certify_point, tasks, cfg.workers)
    rows = [r for block in blocks for r in block]
    for r in rows:
        _check(-INVARIANT_TOL <= r[2] <= 1 + INVARIANT_TOL, "fidelity outside [0, 1]")
    scale = cfg.freq_scale
    rows = [r[:-1] + [r[-1] / scale] for r in rows]
    result.files.append(write_csv(out / "certify.csv", CERTIFY_COLUMNS, rows))


# ---------------------------------------------------------------- fit


def _fit_problems(cfg: ExperimentConfig) -> tuple[FitProblem | JointFitProblem, dict | None]:
    f = cfg.fit
    system = FitModel(f.system.upper())
    protocol = Protocol(f.protocol.upper())
    scale = cfg.freq_scale
    n = cfg.model.n_sites or (3 if system is FitModel.AB_RING else 4)
    occupied = cfg.initial.occupied or ([1] if system is FitModel.AB_RING else [2])
    psi = _occupied_state(n, occupied)
    m = f.post_select_m if f.post_select_m is not None else len(occupied)
    ramp = None
    if protocol is Protocol.RAMP:
        ramp = RampProtocol(cfg.ramp.T, cfg.ramp_delta, cfg.ramp.site, f.ramp_steps)
    guess = {"omega": cfg.omega, "epsilon": cfg.model.epsilon}
    for k, v in f.guess.items():
        guess[k] = v * (scale if k == "omega" else 1.0)
    bounds = {k: (b[0] * scale, b[1] * scale) if k == "omega" else tuple(b)
              for k, b in f.bounds.items()}
    truth = None
    phis = f.phis if f.phis else [cfg.model.phi]
    if f.data:
        if len(phis) != 1:
            raise ConfigError("fit.phis: data files cover a single flux value")
        datasets = [read_records(f.data)]
    else:
        truth = {"omega": cfg.omega, "epsilon": cfg.model.epsilon}
        times = cfg.times.resolve("times")
        datasets = [
            simulate_data(system, n, phi, truth, psi, times, cfg.shots, cfg.seed,
                          protocol=protocol, ramp=ramp, gauge=_gauge(cfg),
                          rng=np.random.default_rng(ss))
            for phi, ss in zip(phis, _spawn(cfg.seed, len(phis)))
        ]
    parts = [
        FitProblem(system, n, phi, tuple(f.free), data, psi, m, params=guess, bounds=bounds,
                   grid_points=f.grid_points, protocol=protocol, ramp=ramp, gauge=_gauge(cfg))
        for phi, data in zip(phis, datasets)
    ]
    problem = parts[0] if len(parts) == 1 else JointFitProblem(tuple(parts))
    return problem, truth


def run_fit(cfg: ExperimentConfig, out: Path, result: RunResult) -> None:
    problem, truth = _fit_problems(cfg)
    res = fit(problem)
    scale = cfg.freq_scale

    def unit(k: str, v: float) -> float:
        return v / scale if k == "omega" else v

    _check(math.isfinite(res.loglik), "log-likelihood is not finite")
    for k, (lo, hi) in res.ci95.items():
        _check(lo <= res.estimates[k] <= hi, f"estimate of {k} outside its interval")
    report = {
        "units": cfg.units,
        "estimates": {k: unit(k, v) for k, v in res.estimates.items()},
        "ci95": {k: [unit(k, lo), unit(k, hi)] for k, (lo, hi) in res.ci95.items()},
        "loglik": res.loglik,
        "converged": res.converged,
        "flat": list(res.flat),
        "at_boundary": list(res.at_boundary),
        "evaluations": res.evaluations,
    }
    if truth is not None:
        report["truth"] = {k: unit(k, truth[k]) for k in res.estimates}
        report["covers_truth"] = res.covers({k: truth[k] for k in res.estimates})
    result.files.append(write_json(out / "fit.json", report))

    surf = res.surface
    names = list(surf.axes)
    mesh = np.meshgrid(*(surf.axes[k] for k in names), indexing="ij")
    rows = zip(*(unit(k, 1.0) * g.reshape(-1) for k, g in zip(names, mesh)), surf.values.reshape(-1))
    result.files.append(write_csv(out / "fit_surface.csv", [*names, "loglik"], rows))
    if cfg.output.plots:
        from .plotting import plot_surface

        axes = {k: unit(k, 1.0) * surf.axes[k] for k in names}
        est = {k: unit(k, v) for k, v in res.estimates.items()}
        result.files.append(plot_surface(out / "fit_surface.svg", axes, surf.values, est))


# ---------------------------------------------------------------- entry


RUNNERS = {
    Experiment.AB_DYNAMICS: run_ab_dynamics,
    Experiment.LADDER_1ES: lambda c, o, r: run_ladder(c, o, r, 1),
    Experiment.LADDER_2ES: lambda c, o, r: run_ladder(c, o, r, 2),
    Experiment.AB_GROUND_STATE_SWEEP: run_ground_state_sweep,
    Experiment.CERTIFY_SWEEP: run_certify_sweep,
    Experiment.FIT: run_fit,
}


def run(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> RunResult:
    """Run the configured experiment and write its outputs under ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    result = RunResult(out)
    resolved = cfg.to_dict()
    log.info("resolved configuration: %s", json.dumps(resolved, sort_keys=True))
    result.files.append(write_json(out / "resolved_config.json", resolved))
    RUNNERS[cfg.experiment](cfg, out, result)
    return result
