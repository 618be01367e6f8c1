"""Maximum-likelihood estimation of (omega, epsilon) from occupancy shot data.

The likelihood is multinomial over post-selected bitstrings at each time:
``sum_t sum_b n_b(t) log p_b(t; params)`` with ``p`` the model probability of
bitstring ``b`` conditioned on the post-selected excitation number.

Optimization is a grid scan over the search box followed by coordinate-wise
bounded scalar refinement; confidence intervals come from the profile
likelihood at the 95% chi-square(1) level (a drop of 1.92).
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .basis import StateVector, basis as sector_basis, embed, excitation_number, full_basis, restrict
from .evolution import Propagator, ramp_amplitudes
from .measurement import MeasurementKind, ShotRecord, sample_shots
from .model import AbRingSpec, Gauge, LadderSpec, build_ab, build_h0, build_ladder

log = logging.getLogger(__name__)

PARAMS = ("omega", "epsilon")
PROFILE_DROP = float(stats.chi2.ppf(0.95, 1) / 2)  # 1.92
PROB_FLOOR = 1e-15
DEFAULT_RAMP_STEPS = 256
DATA_RAMP_STEPS = 1 << 14


class FitModel(str, enum.Enum):
    AB_RING = "AB_RING"
    LADDER = "LADDER"


class Protocol(str, enum.Enum):
    QUENCH = "QUENCH"
    RAMP = "RAMP"


@dataclass(frozen=True)
class RampProtocol:
    """Quadratic ramp from a single-site detuning ``delta`` on ``site`` into the model.

    ``restricted`` evolves inside the initial state's excitation subspace;
    otherwise the forward model runs in the full space and is post-selected.
    """

    T: float
    delta: float
    site: int = 1
    steps: int = DEFAULT_RAMP_STEPS
    restricted: bool = True

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("ramp T must be positive")
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise ValueError("ramp delta must be >= 0")


@dataclass(frozen=True)
class FitProblem:
    """Everything needed to evaluate the likelihood.

    ``params`` holds a value for every model parameter: free ones are the
    starting guesses (and centre the default search box), the rest are held
    fixed.  ``bounds`` overrides the search box per free parameter.
    """

    model: FitModel
    n_sites: int
    phi: float
    free_params: tuple[str, ...]
    data: tuple[tuple[float, ShotRecord], ...]
    initial_state: StateVector
    post_select_m: int
    params: Mapping[str, float] = field(default_factory=dict)
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    grid_points: int = 21
    protocol: Protocol = Protocol.QUENCH
    ramp: RampProtocol | None = None
    gauge: Gauge = Gauge.STAGGERED

    def __post_init__(self):
        object.__setattr__(self, "model", FitModel(self.model))
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "free_params", tuple(self.free_params))
        object.__setattr__(self, "data", tuple((float(t), r) for t, r in self.data))
        params = {"epsilon": 0.0, **dict(self.params)}
        object.__setattr__(self, "params", params)
        if not self.free_params or any(p not in PARAMS for p in self.free_params):
            raise ValueError(f"free_params must be a non-empty subset of {PARAMS}")
        if len(set(self.free_params)) != len(self.free_params):
            raise ValueError("duplicate free parameter")
        if self.model is FitModel.LADDER and "epsilon" in self.free_params:
            raise ValueError("the ladder model has no epsilon parameter")
        if "omega" not in params:
            raise ValueError("params must give omega (a guess if free, the value if fixed)")
        times = {t for t, _ in self.data}
        if len(times) < 2:
            raise ValueError("need at least two distinct times")
        for t, rec in self.data:
            if rec.n_sites != self.n_sites:
                raise ValueError("all records must share the site count")
            if rec.setting is not MeasurementKind.OCCUPANCY:
                raise ValueError("fits use OCCUPANCY records only")
            if t < 0:
                raise ValueError("times must be >= 0")
        if self.initial_state.n_sites != self.n_sites:
            raise ValueError("initial state has the wrong site count")
        if self.protocol is Protocol.RAMP:
            if self.model is not FitModel.AB_RING or self.ramp is None:
                raise ValueError("ramp fits need the AB ring model and a RampProtocol")
        if self.grid_points < 3:
            raise ValueError("grid_points must be >= 3")
        for p in self.free_params:
            lo, hi = self.box(p)
            if not lo < hi:
                raise ValueError(f"empty search box for {p}")

    def box(self, name: str) -> tuple[float, float]:
        if name in self.bounds:
            lo, hi = map(float, self.bounds[name])
        elif name == "omega":
            w = abs(self.params["omega"])
            lo, hi = 0.8 * w, 1.2 * w
        else:
            lo, hi = 0.0, 1.0
        lo = max(lo, 0.0)
        return lo, hi

    @cached_property
    def forward(self) -> "_ForwardModel":
        return _ForwardModel(self)


class _ForwardModel:
    """Batched model probabilities over post-selected bitstrings."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        n, m = problem.n_sites, problem.post_select_m
        self.sector = sector_basis(n, m)
        psi = problem.initial_state
        m0 = psi.basis.m if not psi.basis.is_full else excitation_number(psi)
        restricted = m0 == m and not (
            problem.protocol is Protocol.RAMP and not problem.ramp.restricted
        )
        if restricted:
            self.work = self.sector
            self.psi0 = restrict(embed(psi), self.sector).amplitudes
            self.select = None
        else:
            self.work = full_basis(n)
            self.psi0 = embed(psi).amplitudes
            self.select = np.asarray(self.sector.states)
        wm = None if self.work.is_full else m
        if problem.model is FitModel.AB_RING:
            self.a = build_ab(AbRingSpec(n, 1.0, problem.phi, 0.0), wm).matrix
            self.b = build_ab(AbRingSpec(n, 1.0, 0.0, 0.0), wm).matrix
        else:
            self.a = build_ladder(LadderSpec(n, 1.0, problem.phi, problem.gauge), wm).matrix
            self.b = np.zeros_like(self.a)
            self.ladder_eig = np.linalg.eigh(self.a)
        if problem.protocol is Protocol.RAMP:
            r = problem.ramp
            self.h0 = build_h0(n, r.site, r.delta, wm).matrix
        self.times = np.array([t for t, _ in problem.data])
        idx = np.asarray(self.sector.states)
        self.counts = np.stack([rec.count_vector()[idx] for _, rec in problem.data])

    def amplitudes(self, omega: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """``(K, n_times, dim)`` amplitudes for K parameter points."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        eps = np.atleast_1d(np.asarray(eps, dtype=float))
        if self.problem.protocol is Protocol.RAMP:
            h1 = omega[:, None, None] * (self.a + eps[:, None, None] * self.b)
            r = self.problem.ramp
            return ramp_amplitudes(self.h0, h1, r.T, self.psi0, self.times, r.steps)
        if self.problem.model is FitModel.LADDER:
            w, v = self.ladder_eig
            w = omega[:, None] * w
            v = np.broadcast_to(v, (omega.size,) + v.shape)
        else:
            w, v = np.linalg.eigh(self.a + eps[:, None, None] * self.b)
            w = omega[:, None] * w
        coeff = np.einsum("kji,j->ki", v.conj(), self.psi0)
        phases = np.exp(-1j * w[:, None, :] * self.times[None, :, None])
        return np.einsum("kij,ktj->kti", v, phases * coeff[:, None, :])

    def probabilities(self, omega, eps) -> np.ndarray:
        p = np.abs(self.amplitudes(omega, eps)) ** 2
        if self.select is not None:
            p = p[..., self.select]
        tot = p.sum(axis=-1, keepdims=True)
        return p / np.where(tot > 0, tot, 1.0)

    def loglik(self, omega, eps) -> np.ndarray:
        p = np.clip(self.probabilities(omega, eps), PROB_FLOOR, None)
        return np.einsum("td,ktd->k", self.counts, np.log(p))


@dataclass(frozen=True)
class JointFitProblem:
    """Several fit problems sharing one parameter set (e.g. a flux sweep).

    The log-likelihood is the sum over parts; free parameters, guesses,
    search box and grid size are taken from the first part.
    """

    parts: tuple[FitProblem, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("a joint problem needs at least one part")
        free = self.parts[0].free_params
        if any(p.free_params != free for p in self.parts):
            raise ValueError("all parts must share free_params")

    @property
    def free_params(self) -> tuple[str, ...]:
        return self.parts[0].free_params

    @property
    def params(self) -> Mapping[str, float]:
        return self.parts[0].params

    @property
    def grid_points(self) -> int:
        return self.parts[0].grid_points

    def box(self, name: str) -> tuple[float, float]:
        return self.parts[0].box(name)

    @cached_property
    def forward(self) -> "_JointForward":
        return _JointForward([p.forward for p in self.parts])


class _JointForward:
    def __init__(self, parts):
        self.parts = parts

    def loglik(self, omega, eps) -> np.ndarray:
        return sum(f.loglik(omega, eps) for f in self.parts)


def _check_admissible(omega, eps) -> None:
    if np.any(~np.isfinite(omega)) or np.any(~np.isfinite(eps)):
        raise ValueError("parameters must be finite")
    if np.any(np.asarray(omega) <= 0):
        raise ValueError("omega must be > 0")
    if np.any(np.asarray(eps) < 0):
        raise ValueError("epsilon must be >= 0")


def _resolve(problem: FitProblem, params: Mapping[str, float] | None) -> tuple[float, float]:
    merged = {**problem.params, **(params or {})}
    return float(merged["omega"]), float(merged["epsilon"])


def loglik(problem: FitProblem | JointFitProblem, params: Mapping[str, float] | None = None) -> float:
    """Multinomial log-likelihood of the post-selected counts at ``params``.

    Parameters missing from ``params`` take their values from ``problem.params``.
    """
    omega, eps = _resolve(problem, params)
    _check_admissible(omega, eps)
    return float(problem.forward.loglik(omega, eps)[0])


def loglik_grid(problem: FitProblem, omega, epsilon) -> np.ndarray:
    """Vectorized log-likelihood over matching arrays of parameter values."""
    omega, epsilon = np.broadcast_arrays(np.asarray(omega, float), np.asarray(epsilon, float))
    _check_admissible(omega, epsilon)
    flat = problem.forward.loglik(omega.reshape(-1), epsilon.reshape(-1))
    return flat.reshape(omega.shape)


# ---------------------------------------------------------------- fit


@dataclass(frozen=True)
class LikelihoodSurface:
    axes: dict[str, np.ndarray]
    values: np.ndarray  # indexed like the axes, in free_params order


@dataclass(frozen=True)
class FitResult:
    estimates: dict[str, float]
    ci95: dict[str, tuple[float, float]]
    loglik: float
    converged: bool
    flat: tuple[str, ...] = ()
    at_boundary: tuple[str, ...] = ()
    surface: LikelihoodSurface | None = None
    evaluations: int = 0

    def to_dict(self) -> dict:
        out = {
            "estimates": self.estimates,
            "ci95": {k: list(v) for k, v in self.ci95.items()},
            "loglik": self.loglik,
            "converged": self.converged,
            "flat": list(self.flat),
            "at_boundary": list(self.at_boundary),
            "evaluations": self.evaluations,
        }
        if self.surface is not None:
            out["surface_axes"] = {k: v.tolist() for k, v in self.surface.axes.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def covers(self, truth: Mapping[str, float]) -> bool:
        return all(self.ci95[k][0] <= truth[k] <= self.ci95[k][1] for k in self.ci95)


class _Objective:
    def __init__(self, problem: FitProblem):
        self.problem = problem
        self.base = dict(problem.params)
        self.calls = 0

    def __call__(self, values: Mapping[str, float]) -> float:
        self.calls += 1
        omega, eps = _resolve(self.problem, {**self.base, **values})
        return float(self.problem.forward.loglik(omega, eps)[0])


def _maximize_1d(f, lo, hi, xtol) -> tuple[float, float]:
    res = optimize.minimize_scalar(
        lambda x: -f(x), bounds=(lo, hi), method="bounded", options={"xatol": xtol}
    )
    return float(res.x), float(-res.fun)


def fit(problem: FitProblem | JointFitProblem, rtol: float = 1e-4, max_sweeps: int = 50) -> FitResult:
    """Grid scan plus coordinate-wise refinement, then profile-likelihood CIs."""
    free = problem.free_params
    obj = _Objective(problem)
    axes = {p: np.linspace(*problem.box(p), problem.grid_points) for p in free}
    step = {p: axes[p][1] - axes[p][0] for p in free}
    xtol = {p: rtol * max(abs(problem.params.get(p, 0.0)), step[p]) for p in free}

    mesh = np.meshgrid(*(axes[p] for p in free), indexing="ij")
    pts = {p: g for p, g in zip(free, mesh)}
    omega = pts.get("omega", np.full(mesh[0].shape, problem.params["omega"]))
    eps = pts.get("epsilon", np.full(mesh[0].shape, problem.params["epsilon"]))
    values = loglik_grid(problem, omega, eps)
    obj.calls += values.size
    best_idx = np.unravel_index(np.argmax(values), values.shape)
    x = {p: float(axes[p][i]) for p, i in zip(free, best_idx)}
    best = float(values[best_idx])

    # coordinate-wise refinement inside +-1 grid step of the current point
    converged = False
    for _ in range(max_sweeps):
        moved = 0.0
        for p in free:
            lo = max(problem.box(p)[0], x[p] - step[p])
            hi = min(problem.box(p)[1], x[p] + step[p])
            xp, val = _maximize_1d(lambda v: obj({**x, p: v}), lo, hi, xtol[p])
            if val > best:
                moved = max(moved, abs(xp - x[p]) / xtol[p])
                x[p], best = xp, val
        if moved <= 1.0:
            converged = True
            break
    if not converged:
        log.warning("coordinate refinement did not converge after %d sweeps", max_sweeps)

    ci: dict[str, tuple[float, float]] = {}
    flat: list[str] = []
    boundary = [p for p in free if min(abs(x[p] - b) for b in problem.box(p)) <= xtol[p]]
    for p in free:
        lo, hi, improved = _profile_interval(problem, obj, x, best, p, step, xtol)
        if improved is not None:
            # the profile walked onto a higher point; adopt it and redo this interval
            x, best = improved
            lo, hi, _ = _profile_interval(problem, obj, x, best, p, step, xtol)
        if (lo, hi) == problem.box(p):
            flat.append(p)
        ci[p] = (lo, hi)
    if flat:
        log.warning("likelihood is flat within the search box along %s", flat)
    return FitResult(
        estimates=dict(x),
        ci95=ci,
        loglik=best,
        converged=converged,
        flat=tuple(flat),
        at_boundary=tuple(boundary),
        surface=LikelihoodSurface(axes, values),
        evaluations=obj.calls,
    )


def _inner_max(obj, vals, q, centre, box, step, xtol, max_shifts=8):
    """Maximize over ``q`` near ``centre``, sliding the bracket if the optimum sits on its edge."""
    lo_box, hi_box = box
    for _ in range(max_shifts):
        lo = max(lo_box, centre - 3 * step)
        hi = min(hi_box, centre + 3 * step)
        qv, val = _maximize_1d(lambda u: obj({**vals, q: u}), lo, hi, xtol)
        at_lo = qv - lo <= 2 * xtol and lo > lo_box
        at_hi = hi - qv <= 2 * xtol and hi < hi_box
        if not (at_lo or at_hi):
            break
        centre = qv
    return qv, val


def _bisect(f, good: float, bad: float, xtol: float) -> float:
    """Crossing between ``good`` (f >= 0) and ``bad`` (f < 0)."""
    while abs(bad - good) > xtol:
        mid = 0.5 * (good + bad)
        if f(mid) >= 0:
            good = mid
        else:
            bad = mid
    return 0.5 * (good + bad)


def _profile_interval(problem, obj, x, best, p, step, xtol):
    others = [q for q in problem.free_params if q != p]
    warm = {q: x[q] for q in others}
    improved = None

    def profile(v: float) -> float:
        nonlocal improved
        vals = {p: v}
        val = None
        for q in others:
            vals[q], val = _inner_max(obj, vals, q, warm[q], problem.box(q), step[q], xtol[q])
        if val is None:
            val = obj(vals)
        warm.update({q: vals[q] for q in others})
        if val > best + 1e-6 and (improved is None or val > improved[1]):
            improved = ({**vals}, val)
        return val

    level = best - PROFILE_DROP

    def excess(v):
        return profile(v) - level

    ends = []
    for direction in (-1, 1):
        warm.update({q: x[q] for q in others})
        bound = problem.box(p)[0 if direction < 0 else 1]
        inner, h = x[p], step[p] / 4
        end = bound
        while True:
            outer = inner + direction * h
            if (outer - bound) * direction >= 0:
                outer = bound
            if excess(outer) < 0:
                try:
                    end = optimize.brentq(excess, min(inner, outer), max(inner, outer),
                                          xtol=xtol[p])
                except ValueError:
                    # inner re-optimization moved; fall back to sign-tracking bisection
                    end = _bisect(excess, inner, outer, xtol[p])
                break
            if outer == bound:
                break
            inner, h = outer, 2 * h
        ends.append(float(end))
    return ends[0], ends[1], improved


# ---------------------------------------------------------------- data


def simulate_data(
    model: FitModel,
    n_sites: int,
    phi: float,
    params: Mapping[str, float],
    initial_state: StateVector,
    times: Sequence[float],
    shots: int,
    seed: int | None = None,
    *,
    protocol: Protocol = Protocol.QUENCH,
    ramp: RampProtocol | None = None,
    gauge: Gauge = Gauge.STAGGERED,
    ramp_steps: int = DATA_RAMP_STEPS,
    rng: np.random.Generator | None = None,
) -> list[tuple[float, ShotRecord]]:
    """Sample OCCUPANCY records of the exact model trajectory at ``times``.

    This uses the evolution module directly (an independent path from the
    likelihood's forward model) and one seeded generator for all times.
    """
    model, protocol = FitModel(model), Protocol(protocol)
    omega, eps = float(params["omega"]), float(params.get("epsilon", 0.0))
    psi = initial_state
    b = psi.basis
    m = None if b.is_full else b.m
    if model is FitModel.AB_RING:
        h = build_ab(AbRingSpec(n_sites, omega, phi, eps), m)
    else:
        h = build_ladder(LadderSpec(n_sites, omega, phi, gauge), m)
    times = np.asarray(times, dtype=float)
    if protocol is Protocol.QUENCH:
        amps = Propagator(h).amplitudes(psi, times)
    else:
        if ramp is None:
            raise ValueError("ramp data needs a RampProtocol")
        h0 = build_h0(n_sites, ramp.site, ramp.delta, m)
        amps = ramp_amplitudes(h0.matrix, h.matrix, ramp.T, psi.amplitudes, times, ramp_steps)
    rng = rng if rng is not None else np.random.default_rng(seed)
    out = []
    for t, a in zip(times, amps):
        state = StateVector.normalized(a, b)
        rec = sample_shots(state, "OCCUPANCY", shots, seed, time=float(t), rng=rng)
        out.append((float(t), rec))
    return out


def read_records(paths: Sequence[str | os.PathLike]) -> list[tuple[float, ShotRecord]]:
    """Load ShotRecord files; each must carry a ``time`` header."""
    out = []
    for path in paths:
        rec = ShotRecord.read(path)
        if rec.time is None:
            raise ValueError(f"{path}: shot record has no time header")
        out.append((rec.time, rec))
    return out
