"""Unitary propagation: static quenches, quadratic ramps, eigenstate overlaps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import (
    Operator,
    StateVector,
    _require_same,
    sector_weights,
)

RAMP_TOL = 1e-8
MAX_RAMP_STEPS = 1 << 17


class RampConvergenceError(RuntimeError):
    def __init__(self, residual: float, steps: int):
        super().__init__(
            f"ramp did not converge: residual {residual:.3g} after {steps} steps"
        )
        self.residual = residual
        self.steps = steps


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    site_occupations: np.ndarray  # (time, site)
    subspace_weights: np.ndarray  # (time, excitation number 0..N)

    @property
    def n_sites(self) -> int:
        return self.site_occupations.shape[1]


class Propagator:
    """Eigendecomposition of a static Hamiltonian, reused across times."""

    def __init__(self, h: Operator):
        self.h = h
        self.energies, self.vectors = h.eigh()

    def evolve(self, psi0: StateVector, t: float) -> StateVector:
        return self.evolve_many(psi0, [t])[0]

    def amplitudes(self, psi0: StateVector, times: Sequence[float]) -> np.ndarray:
        """``(len(times), dim)`` array of ``exp(-iHt) psi0``."""
        _require_same(self.h.basis, psi0.basis)
        coeff = self.vectors.conj().T @ psi0.amplitudes
        phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), self.energies))
        return (phases * coeff) @ self.vectors.T

    def evolve_many(self, psi0: StateVector, times: Sequence[float]) -> list[StateVector]:
        amps = self.amplitudes(psi0, times)
        return [StateVector(a, psi0.basis, normalize=psi0.normalize) for a in amps]


def evolve_static(h: Operator, psi0: StateVector, t: float) -> StateVector:
    """``exp(-i h t) psi0`` via eigendecomposition."""
    return Propagator(h).evolve(psi0, t)


def _weights(amps: np.ndarray, psi_basis) -> tuple[np.ndarray, np.ndarray]:
    probs = np.abs(amps) ** 2
    occ = probs @ psi_basis.occupation_matrix()
    n = psi_basis.n_sites
    if psi_basis.is_full:
        w = np.stack([sector_weights(p, n) for p in probs])
    else:
        w = np.zeros((probs.shape[0], n + 1))
        w[:, psi_basis.m] = probs.sum(axis=1)
    return occ, w


def quench_trajectory(h: Operator, psi0: StateVector, times: Sequence[float]) -> Trajectory:
    """Site occupations and excitation-number weights of ``exp(-iht) psi0``."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d sequence")
    amps = Propagator(h).amplitudes(psi0, times)
    occ, w = _weights(amps, psi0.basis)
    return Trajectory(times, occ, w)


def trajectory_from_amplitudes(times, amps: np.ndarray, psi_basis) -> Trajectory:
    occ, w = _weights(np.asarray(amps), psi_basis)
    return Trajectory(np.asarray(times, dtype=float), occ, w)


# ---------------------------------------------------------------- ramps


@dataclass(frozen=True)
class RampSchedule:
    """``H(t) = (1 - (t/T)^2) h0 + (t/T)^2 h_target`` for ``0 <= t <= T``."""

    T: float
    h0: Operator
    h_target: Operator
    steps: int = 64

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError("ramp time T must be positive and finite")
        _require_same(self.h0.basis, self.h_target.basis)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def weight(self, t: float) -> float:
        return (t / self.T) ** 2

    def hamiltonian(self, t: float) -> Operator:
        s = self.weight(t)
        return (1.0 - s) * self.h0 + s * self.h_target


def _expm_herm(h: np.ndarray, dt) -> np.ndarray:
    """``exp(-i h dt)`` for a (batch of) Hermitian matrices."""
    w, v = np.linalg.eigh(h)
    dt = np.asarray(dt, dtype=float)[..., None]
    return (v * np.exp(-1j * w * dt)[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


_CHUNK_ELEMENTS = 1 << 22


def _ordered_product(us: np.ndarray) -> np.ndarray:
    """``us[-1] @ ... @ us[0]`` along axis 0, by pairwise reduction."""
    while us.shape[0] > 1:
        if us.shape[0] % 2:
            tail = us[-1:]
            paired = us[1:-1:2] @ us[0:-1:2]
            us = np.concatenate([paired, tail])
        else:
            us = us[1::2] @ us[0::2]
    return us[0]


def _segment_unitary(h0, h1, T, t0, t1, n, batch, dim) -> np.ndarray:
    dt = (t1 - t0) / n
    mids = ((t0 + (np.arange(n) + 0.5) * dt) / T) ** 2
    per_step = int(np.prod(batch, dtype=np.int64)) * dim * dim
    chunk = max(1, _CHUNK_ELEMENTS // max(per_step, 1))
    total = np.broadcast_to(np.eye(dim, dtype=complex), batch + (dim, dim))
    for start in range(0, n, chunk):
        s = mids[start:start + chunk].reshape((-1,) + (1,) * (len(batch) + 2))
        u = _expm_herm((1.0 - s) * h0 + s * h1, dt)
        total = _ordered_product(u) @ total
    return total


def ramp_amplitudes(
    h0: np.ndarray,
    h1: np.ndarray,
    T: float,
    psi0: np.ndarray,
    times: Sequence[float],
    steps: int,
) -> np.ndarray:
    """Midpoint-stepped ramp states at each requested time.

    ``h0``/``h1`` may carry leading batch dimensions; the result has shape
    ``batch + (len(times), dim)``.  The interval ``[0, T]`` is cut at the
    requested times and every piece gets ``ceil(steps * length / T)`` equal
    midpoint steps; times beyond ``T`` continue under ``h1`` exactly.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("ramp times must be >= 0")
    order = np.argsort(times, kind="stable")
    h0 = np.asarray(h0, dtype=complex)
    h1 = np.asarray(h1, dtype=complex)
    batch = np.broadcast_shapes(h0.shape[:-2], h1.shape[:-2])
    dim = h0.shape[-1]
    psi = np.broadcast_to(np.asarray(psi0, dtype=complex), batch + (dim,)).copy()
    out = np.empty(batch + (times.size, dim), dtype=complex)

    t_now = 0.0
    final = None  # eigensystem of h1, built lazily for t > T
    for idx in order:
        target = times[idx]
        ramp_end = min(target, T)
        if ramp_end > t_now:
            n = max(1, int(np.ceil(steps * (ramp_end - t_now) / T - 1e-12)))
            u = _segment_unitary(h0, h1, T, t_now, ramp_end, n, batch, dim)
            psi = np.einsum("...ij,...j->...i", u, psi)
            t_now = ramp_end
        if target > t_now:
            if final is None:
                final = np.linalg.eigh(np.broadcast_to(h1, batch + (dim, dim)))
            w, v = final
            coeff = np.einsum("...ji,...j->...i", v.conj(), psi)
            psi = np.einsum("...ij,...j->...i", v, np.exp(-1j * w * (target - t_now)) * coeff)
            t_now = target
        out[..., idx, :] = psi
    return out


def evolve_ramp(
    schedule: RampSchedule,
    psi0: StateVector,
    tol: float = RAMP_TOL,
    max_steps: int = MAX_RAMP_STEPS,
) -> StateVector:
    """State at the end of the ramp, refined by step doubling until converged."""
    _require_same(schedule.h0.basis, psi0.basis)
    h0, h1 = schedule.h0.matrix, schedule.h_target.matrix
    steps = schedule.steps
    residual = float("inf")
    prev = ramp_amplitudes(h0, h1, schedule.T, psi0.amplitudes, [schedule.T], steps)[0]
    while True:
        steps *= 2
        if steps > max_steps:
            raise RampConvergenceError(residual, steps // 2)
        cur = ramp_amplitudes(h0, h1, schedule.T, psi0.amplitudes, [schedule.T], steps)[0]
        residual = float(np.linalg.norm(cur - prev))
        if residual < tol:
            return StateVector(cur, psi0.basis, normalize=psi0.normalize)
        prev = cur


# ---------------------------------------------------------------- spectra


def ground_state(h: Operator) -> tuple[float, float, StateVector]:
    """(ground energy, gap to the next distinct level, ground state vector)."""
    w, v = h.eigh()
    scale = max(np.abs(w).max(), 1.0)
    higher = w[w > w[0] + 1e-9 * scale]
    gap = float(higher[0] - w[0]) if higher.size else 0.0
    return float(w[0]), gap, StateVector(v[:, 0], h.basis)


def eigenstate_overlaps(
    h: Operator, psi: StateVector, merge_tol: float = 1e-9
) -> list[tuple[float, float]]:
    """``|<e_i|psi>|^2`` per eigenvalue, ascending; degenerate levels merged.

    Levels closer than ``merge_tol * ||h||`` are combined and reported at
    their mean energy with the summed overlap.
    """
    _require_same(h.basis, psi.basis)
    w, v = h.eigh()
    ov = np.abs(v.conj().T @ psi.amplitudes) ** 2
    scale = max(np.abs(w).max(), 1e-300)
    out: list[tuple[float, float]] = []
    group_e, group_p = [w[0]], ov[0]
    for e, p in zip(w[1:], ov[1:]):
        if e - group_e[-1] <= merge_tol * scale:
            group_e.append(e)
            group_p += p
        else:
            out.append((float(np.mean(group_e)), float(group_p)))
            group_e, group_p = [e], p
    out.append((float(np.mean(group_e)), float(group_p)))
    return out
