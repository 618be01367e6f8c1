"""Simulated projective readout: shot sampling, post-selection, tomography.

Single-site conventions (basis order ``|0>, |1>``; ``|1>`` excited)::

    sigma_z = diag(-1, +1)      sigma_x = [[0, 1], [1, 0]]
    sigma_y = [[0, i], [-i, 0]] (so that s+ = (sigma_x + i sigma_y)/2 = |1><0|)
    U_x(theta) = exp(-i theta sigma_x / 2),  U_z(theta) = exp(-i theta sigma_z / 2)

A measured bit ``1`` reads the ``+1`` eigenvalue of the measured Pauli.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import optimize, stats

from .basis import (
    StateVector,
    basis as sector_basis,
    bitstring,
    embed,
    full_basis,
    parse_bitstring,
    popcount,
)
from .model import AbRingSpec, LocalTerm, current_operator

log = logging.getLogger(__name__)

SIGMA = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, 1j], [-1j, 0]], dtype=complex),
    "Z": np.diag([-1.0, 1.0]).astype(complex),
}


def rotation(axis: str, theta: float) -> np.ndarray:
    """``exp(-i theta sigma_axis / 2)``."""
    s = SIGMA[axis.upper()]
    return math.cos(theta / 2) * SIGMA["I"] - 1j * math.sin(theta / 2) * s


def _measure_basis_change(pauli: str) -> np.ndarray:
    """Unitary V with V^dag sigma_z V = sigma_pauli (bit 1 <-> eigenvalue +1)."""
    if pauli == "Z":
        return SIGMA["I"]
    w, v = np.linalg.eigh(SIGMA[pauli])
    # column 0: eigenvalue -1 -> |0>, column 1: eigenvalue +1 -> |1>
    return v.conj().T


def apply_local(
    amps: np.ndarray, n_sites: int, ops: Iterable[tuple[int, np.ndarray]]
) -> np.ndarray:
    """Apply single-site 2x2 matrices ``(site, U)`` in order to a full-space vector."""
    psi = np.asarray(amps, dtype=complex).reshape((2,) * n_sites)
    for site, u in ops:
        psi = np.moveaxis(np.tensordot(u, psi, axes=([1], [site - 1])), 0, site - 1)
    return psi.reshape(-1)


def _local_unitary(n_sites: int, ops: Sequence[tuple[int, np.ndarray]]) -> np.ndarray:
    eye = np.eye(1 << n_sites, dtype=complex)
    cols = [apply_local(eye[:, j], n_sites, ops) for j in range(1 << n_sites)]
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------- settings


class MeasurementKind(str, enum.Enum):
    OCCUPANCY = "OCCUPANCY"
    IN_PHASE = "IN_PHASE"
    OUT_OF_PHASE = "OUT_OF_PHASE"


@dataclass(frozen=True)
class MeasurementSetting:
    kind: MeasurementKind
    n_sites: int = 3

    def __post_init__(self):
        object.__setattr__(self, "kind", MeasurementKind(self.kind))
        if self.kind is MeasurementKind.OUT_OF_PHASE and self.n_sites < 3:
            raise ValueError("the out-of-phase setting needs sites 2 and 3")

    @property
    def pre_rotations(self) -> list[tuple[int, str, float]]:
        """``(site, axis, angle)`` in application order."""
        if self.kind is MeasurementKind.OCCUPANCY:
            return []
        glob = [(k, "x", math.pi / 2) for k in range(1, self.n_sites + 1)]
        if self.kind is MeasurementKind.IN_PHASE:
            return glob
        return [(2, "z", math.pi / 2), (3, "z", math.pi)] + glob

    def local_ops(self) -> list[tuple[int, np.ndarray]]:
        return [(site, rotation(axis, angle)) for site, axis, angle in self.pre_rotations]


def outcome_probabilities(state, setting: MeasurementSetting) -> np.ndarray:
    """Born probabilities over the ``2**N`` bitstrings after the setting's rotations.

    ``state`` is a :class:`StateVector` or a full-space density matrix.
    """
    ops = setting.local_ops()
    if isinstance(state, StateVector):
        amps = embed(state).amplitudes
        if state.n_sites != setting.n_sites:
            raise ValueError("setting and state disagree on the site count")
        probs = np.abs(apply_local(amps, setting.n_sites, ops)) ** 2
    else:
        rho = np.asarray(state, dtype=complex)
        if rho.shape != (1 << setting.n_sites,) * 2:
            raise ValueError("density matrix has the wrong dimension")
        if ops:
            u = _local_unitary(setting.n_sites, ops)
            rho = u @ rho @ u.conj().T
        probs = np.real(np.diag(rho))
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


# ---------------------------------------------------------------- shot records


@dataclass(frozen=True)
class ShotRecord:
    setting: MeasurementKind
    n_sites: int
    counts: Mapping[str, int]
    shots: int
    seed: int | None = None
    time: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "setting", MeasurementKind(self.setting))
        clean = {}
        for key, c in sorted(self.counts.items()):
            if len(key) != self.n_sites:
                raise ValueError(f"bitstring {key!r} has the wrong length")
            parse_bitstring(key)
            if c < 0:
                raise ValueError("negative count")
            if c:
                clean[key] = int(c)
        if sum(clean.values()) != self.shots:
            raise ValueError(f"counts sum to {sum(clean.values())}, expected {self.shots}")
        object.__setattr__(self, "counts", clean)

    def frequencies(self) -> np.ndarray:
        """Empirical distribution indexed like the full space."""
        f = np.zeros(1 << self.n_sites)
        for key, c in self.counts.items():
            f[parse_bitstring(key)] = c
        return f / self.shots

    def count_vector(self) -> np.ndarray:
        f = np.zeros(1 << self.n_sites)
        for key, c in self.counts.items():
            f[parse_bitstring(key)] = c
        return f

    def to_text(self) -> str:
        lines = [
            "# trsb-shots v1",
            f"# setting={self.setting.value}",
            f"# n_sites={self.n_sites}",
            f"# shots={self.shots}",
            f"# seed={'' if self.seed is None else self.seed}",
        ]
        if self.time is not None:
            lines.append(f"# time={self.time!r}")
        lines += [f"{k},{c}" for k, c in self.counts.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ShotRecord":
        header: dict[str, str] = {}
        counts: dict[str, int] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].split("=", 1)
                    header[k.strip()] = v.strip()
                continue
            try:
                key, c = line.split(",")
                counts[key.strip()] = counts.get(key.strip(), 0) + int(c)
            except ValueError:
                raise ValueError(f"line {lineno}: expected 'bitstring,count', got {raw!r}") from None
        try:
            setting = header["setting"]
            shots = int(header["shots"])
        except KeyError as exc:
            raise ValueError(f"shot record header lacks {exc.args[0]!r}") from None
        n_sites = int(header.get("n_sites") or len(next(iter(counts), "")))
        seed = header.get("seed") or None
        time = header.get("time")
        return cls(setting, n_sites, counts, shots,
                   None if seed is None else int(seed),
                   None if time is None else float(time))

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def read(cls, path: str | os.PathLike) -> "ShotRecord":
        with open(path) as fh:
            return cls.from_text(fh.read())


def counts_from_probabilities(
    probs: np.ndarray, n_sites: int, shots: int, rng: np.random.Generator
) -> dict[str, int]:
    draws = rng.multinomial(shots, probs)
    return {bitstring(i, n_sites): int(c) for i, c in enumerate(draws) if c}


def sample_shots(
    psi,
    setting: MeasurementSetting | MeasurementKind | str,
    shots: int,
    seed: int | None = None,
    *,
    time: float | None = None,
    rng: np.random.Generator | None = None,
) -> ShotRecord:
    """Sample ``shots`` projective measurements of ``psi`` in ``setting``.

    ``psi`` may be a :class:`StateVector` or a full-space density matrix.
    Identical seeds give identical records.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    n_sites = psi.n_sites if isinstance(psi, StateVector) else int(np.log2(len(psi)))
    if not isinstance(setting, MeasurementSetting):
        setting = MeasurementSetting(MeasurementKind(setting), n_sites)
    probs = outcome_probabilities(psi, setting)
    rng = rng if rng is not None else np.random.default_rng(seed)
    counts = counts_from_probabilities(probs, n_sites, shots, rng)
    return ShotRecord(setting.kind, n_sites, counts, shots, seed, time)


# ---------------------------------------------------------------- post-selection


class EmptySubspaceError(ValueError):
    """No probability (or no shot) in the requested excitation subspace."""


class PostSelected(NamedTuple):
    occupations: np.ndarray
    weight: float


def post_select(data, m: int) -> PostSelected:
    """Site occupations conditioned on ``m`` excitations, plus ``P(m)``.

    ``data`` is an OCCUPANCY :class:`ShotRecord` or a full-space probability vector.
    """
    if isinstance(data, ShotRecord):
        if data.setting is not MeasurementKind.OCCUPANCY:
            raise ValueError("post-selection needs an OCCUPANCY record")
        n_sites = data.n_sites
        probs = data.frequencies()
    else:
        probs = np.asarray(data, dtype=float)
        n_sites = int(round(math.log2(probs.size)))
        if 1 << n_sites != probs.size:
            raise ValueError("probability vector length is not a power of two")
    if not 0 <= m <= n_sites:
        raise ValueError(f"excitation number {m} outside 0..{n_sites}")
    b = sector_basis(n_sites, m)
    p_m = probs[list(b.states)]
    weight = float(p_m.sum())
    if weight <= 0:
        raise EmptySubspaceError(f"no weight in the {m}-excitation subspace")
    occ = (p_m / weight) @ b.occupation_matrix()
    return PostSelected(occ, weight)


def wilson_interval(k: float, n: float, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion ``k/n``."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def occupation_intervals(record: ShotRecord, m: int, confidence: float = 0.95) -> np.ndarray:
    """``(N, 2)`` Wilson intervals on post-selected site occupations."""
    z = float(stats.norm.ppf(0.5 + confidence / 2))
    b = sector_basis(record.n_sites, m)
    counts = record.count_vector()[list(b.states)]
    n_m = counts.sum()
    if n_m == 0:
        raise EmptySubspaceError(f"no shots in the {m}-excitation subspace")
    k = counts @ b.occupation_matrix()
    return np.array([wilson_interval(kk, n_m, z) for kk in k])


# ---------------------------------------------------------------- dephasing


def dephase_subspaces(psi: StateVector, coherent_sector: int = 1) -> np.ndarray:
    """Full-space density matrix with inter-sector coherences removed.

    Coherences survive only inside the ``coherent_sector`` block; every other
    block is reduced to its diagonal.
    """
    amps = embed(psi).amplitudes
    rho = np.outer(amps, amps.conj())
    exc = np.array([popcount(s) for s in range(amps.size)])
    keep = (exc[:, None] == exc[None, :]) & (exc[:, None] == coherent_sector)
    keep |= np.eye(amps.size, dtype=bool)
    return np.where(keep, rho, 0.0)


# ---------------------------------------------------------------- tomography


@dataclass(frozen=True)
class TomographyEstimate:
    p: np.ndarray
    theta: np.ndarray
    clamped: bool = False
    residual: float = 0.0

    def state(self) -> StateVector:
        amps = np.sqrt(np.clip(self.p, 0, None)) * np.exp(1j * self.theta)
        return StateVector.normalized(amps, sector_basis(len(self.p), 1))


TOMOGRAPHY_SETTINGS = (
    MeasurementKind.OCCUPANCY,
    MeasurementKind.IN_PHASE,
    MeasurementKind.OUT_OF_PHASE,
)


def _angles_to_state(x: np.ndarray) -> np.ndarray:
    a, b, t2, t3 = x
    r = np.array([np.cos(a), np.sin(a) * np.cos(b), np.sin(a) * np.sin(b)])
    return r * np.exp(1j * np.array([0.0, t2, t3]))


class _ForwardModel:
    """Measurement map of the three settings for ``w |psi><psi| + dephased rest``."""

    def __init__(self, background: np.ndarray, weight: float):
        self.n_sites = 3
        self.b1 = sector_basis(3, 1)
        self.idx = np.asarray(self.b1.states)
        self.weight = weight
        self.unitaries = [
            _local_unitary(3, MeasurementSetting(k, 3).local_ops()) for k in TOMOGRAPHY_SETTINGS
        ]
        self.background = [
            np.real(np.einsum("ij,j,ij->i", u, background, u.conj())) for u in self.unitaries
        ]

    def probabilities(self, amps_1es: np.ndarray) -> list[np.ndarray]:
        out = []
        for u, bg in zip(self.unitaries, self.background):
            rotated = u[:, self.idx] @ amps_1es
            out.append(self.weight * np.abs(rotated) ** 2 + bg)
        return out


def tomography_1es(records: Sequence[ShotRecord] | Mapping) -> TomographyEstimate:
    """Reconstruct a three-site 1ES pure state from the three tomography settings.

    The complement of the 1ES is taken from the occupancy record and treated
    as fully dephased.  The fit is least squares on the outcome frequencies of
    all three settings, with the phase of site 1 fixed to zero.  ``clamped`` is
    set when the estimate sits on the edge of the physical region (a site
    probability driven to zero).
    """
    recs = dict(records) if isinstance(records, Mapping) else {r.setting: r for r in records}
    recs = {MeasurementKind(k): v for k, v in recs.items()}
    missing = [k.value for k in TOMOGRAPHY_SETTINGS if k not in recs]
    if missing:
        raise ValueError(f"missing tomography settings: {missing}")
    if any(r.n_sites != 3 for r in recs.values()):
        raise ValueError("1ES tomography is defined for three sites")

    freqs = [recs[k].frequencies() for k in TOMOGRAPHY_SETTINGS]
    occ = freqs[0]
    b1 = sector_basis(3, 1)
    idx = np.asarray(b1.states)
    weight = float(occ[idx].sum())
    if weight <= 0:
        raise EmptySubspaceError("occupancy record has no 1ES shots")
    background = occ.copy()
    background[idx] = 0.0
    model = _ForwardModel(background, weight)
    target = np.concatenate(freqs)

    def resid(x):
        return np.concatenate(model.probabilities(_angles_to_state(x))) - target

    p0 = occ[idx] / weight
    a0 = math.acos(math.sqrt(min(1.0, p0[0])))
    b0 = math.atan2(math.sqrt(p0[2]), math.sqrt(p0[1]))
    grid = np.linspace(-math.pi, math.pi, 12, endpoint=False)
    starts = sorted(
        ((float(np.sum(resid(np.array([a0, b0, t2, t3])) ** 2)), t2, t3)
         for t2 in grid for t3 in grid)
    )[:3]
    best = None
    for _, t2, t3 in starts:
        sol = optimize.least_squares(
            resid, np.array([a0, b0, t2, t3]), method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
        )
        if best is None or sol.cost < best.cost:
            best = sol
    amps = _angles_to_state(best.x)
    p = np.abs(amps) ** 2
    theta = np.angle(amps * np.exp(-1j * np.angle(amps[0]))) if p[0] > 0 else np.angle(amps)
    theta = np.where(p > 0, theta, 0.0)
    theta[0] = 0.0
    clamped = bool(np.any(p < 1e-12))
    if clamped:
        log.warning("tomography estimate clamped to the boundary of the physical region")
    return TomographyEstimate(p, theta, clamped, float(np.sqrt(2 * best.cost)))


def tomography_records(
    psi: StateVector | np.ndarray, shots: int, rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> list[ShotRecord]:
    """Sample the three tomography settings on a three-site state."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    return [sample_shots(psi, MeasurementSetting(k, 3), shots, seed, rng=rng)
            for k in TOMOGRAPHY_SETTINGS]


def exact_tomography_records(psi, shots: int = 10**12) -> list[ShotRecord]:
    """Noise-free records: counts proportional to exact probabilities.

    With the default huge ``shots`` the rounding error in the frequencies is
    below 1e-12.
    """
    out = []
    for k in TOMOGRAPHY_SETTINGS:
        probs = outcome_probabilities(psi, MeasurementSetting(k, 3))
        counts = np.floor(probs * shots).astype(np.int64)
        counts[np.argmax(probs)] += shots - counts.sum()
        out.append(ShotRecord(k, 3, {bitstring(i, 3): int(c) for i, c in enumerate(counts)}, shots))
    return out


# ---------------------------------------------------------------- currents and energies


def _density_or_state(state, n_sites: int) -> tuple[np.ndarray | None, np.ndarray | None]:
    if isinstance(state, StateVector):
        return embed(state).amplitudes, None
    rho = np.asarray(state, dtype=complex)
    if rho.ndim == 1:
        return rho, None
    return None, rho


def current_expectation(state, spec: AbRingSpec) -> float:
    """``<C>`` for a state vector (any sector) or a full-space density matrix."""
    if isinstance(state, StateVector) and not state.basis.is_full:
        c = current_operator(spec, m=state.basis.m)
        return float(np.real(c.expectation(state)))
    c = current_operator(spec).matrix
    amps, rho = _density_or_state(state, spec.n_sites)
    if amps is not None:
        return float(np.real(np.vdot(amps, c @ amps)))
    return float(np.real(np.trace(c @ rho)))


PAULI_LABELS = "IXYZ"


def pauli_decomposition(term: LocalTerm, tol: float = 1e-14) -> list[tuple[str, float]]:
    """Real coefficients of a Hermitian two-site term in the Pauli basis ``'AB'``."""
    out = []
    for a in PAULI_LABELS:
        for b in PAULI_LABELS:
            p = np.kron(SIGMA[a], SIGMA[b])
            c = np.trace(p @ term.matrix) / 4.0
            if abs(c.imag) > 1e-12 * max(1.0, abs(c.real)):
                raise ValueError("local term is not Hermitian")
            if abs(c.real) > tol:
                out.append((a + b, float(c.real)))
    return out


def pauli_expectation_distribution(
    amps: np.ndarray, n_sites: int, paulis: Mapping[int, str]
) -> tuple[float, float]:
    """Probabilities of parity +1 / -1 when measuring ``prod_k P_k`` (sites -> label)."""
    ops = [(site, _measure_basis_change(lbl)) for site, lbl in sorted(paulis.items())]
    probs = np.abs(apply_local(amps, n_sites, ops)) ** 2
    full = full_basis(n_sites)
    occ = full.occupation_matrix()[:, [s - 1 for s in sorted(paulis)]]
    parity = np.prod(2 * occ - 1, axis=1)
    p_plus = float(probs[parity > 0].sum())
    return p_plus, 1.0 - p_plus


def pauli_terms(term, n_sites: int) -> list[tuple[dict[int, str], float]]:
    """Pauli strings ``({site: label}, coeff)`` of a 2-local term.

    ``term`` is a :class:`LocalTerm` or a full-space :class:`Operator`; the
    latter is expanded over all one- and two-site Pauli strings and rejected
    if that expansion does not reproduce it.
    """
    if isinstance(term, LocalTerm):
        return [({s: l for s, l in zip(term.sites, label) if l != "I"}, c)
                for label, c in pauli_decomposition(term)]
    mat = np.asarray(term.matrix)
    if term.basis.dim != 1 << n_sites:
        raise ValueError("operator terms must act on the full space")
    out: list[tuple[dict[int, str], float]] = []
    recon = np.zeros_like(mat)
    seen = set()
    for i in range(1, n_sites + 1):
        for j in range(i + 1, n_sites + 1):
            for a in PAULI_LABELS:
                for b in PAULI_LABELS:
                    paulis = {s: l for s, l in ((i, a), (j, b)) if l != "I"}
                    key = tuple(sorted(paulis.items()))
                    if key in seen:
                        continue
                    seen.add(key)
                    p = _pauli_string(paulis, n_sites)
                    c = np.real(np.trace(p @ mat)) / mat.shape[0]
                    if abs(c) > 1e-14:
                        out.append((paulis, float(c)))
                        recon += c * p
    if not np.allclose(recon, mat, atol=1e-10 * max(1.0, np.abs(mat).max())):
        raise ValueError("term is not 2-local")
    return out


def _pauli_string(paulis: Mapping[int, str], n_sites: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for k in range(1, n_sites + 1):
        out = np.kron(out, SIGMA[paulis.get(k, "I")])
    return out


class LocalEstimate(NamedTuple):
    value: float
    stderr: float
    hoeffding_scale: float  # sum_k c_k^2 / n_k, for distribution-free bounds
    settings: int


def local_energy_estimate(
    psi: StateVector,
    h_terms: Sequence[LocalTerm],
    shots_per_term: int,
    seed: int | None = None,
    *,
    rng: np.random.Generator | None = None,
) -> LocalEstimate:
    """Estimate ``sum_k <h_k>`` from sampled Pauli correlators.

    Every two-site term is expanded in Paulis; each non-identity Pauli string
    gets its own ``shots_per_term`` measurements in its eigenbasis.  The
    standard error propagates the sample variances of the +-1 outcomes.
    """
    if shots_per_term < 1:
        raise ValueError("shots_per_term must be >= 1")
    amps = embed(psi).amplitudes
    n_sites = psi.n_sites
    rng = rng if rng is not None else np.random.default_rng(seed)
    value = 0.0
    var = 0.0
    scale = 0.0
    settings = 0
    for term in h_terms:
        for paulis, coeff in pauli_terms(term, n_sites):
            if not paulis:
                value += coeff
                continue
            p_plus, _ = pauli_expectation_distribution(amps, n_sites, paulis)
            k = rng.binomial(shots_per_term, min(max(p_plus, 0.0), 1.0))
            mean = (2 * k - shots_per_term) / shots_per_term
            n = shots_per_term
            s2 = (1 - mean * mean) * n / (n - 1) if n > 1 else 1.0
            value += coeff * mean
            var += coeff * coeff * s2 / n
            scale += coeff * coeff / n
            settings += 1
    return LocalEstimate(value, math.sqrt(var), scale, settings)


def exact_local_sum(psi: StateVector, h_terms: Sequence) -> float:
    amps = embed(psi).amplitudes
    total = 0.0
    for t in h_terms:
        op = (t.full(psi.n_sites) if isinstance(t, LocalTerm) else t).matrix
        total += float(np.real(np.vdot(amps, op @ amps)))
    return total
