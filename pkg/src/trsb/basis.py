"""Occupation-number bases, operators and state vectors.

Conventions used throughout the package:

* A basis state of ``N`` sites is an integer bit pattern in which site 1 is
  the most significant bit, so ``0b100`` is written ``|100>`` and carries its
  excitation on site 1.
* The full ``2**N`` space is ordered by ascending integer value, which is the
  ordinary Kronecker-product ordering with site 1 as the leftmost factor.
* A fixed-excitation block lists its states by the lexicographic order of the
  occupied-site tuples: ``(3, 1)`` gives ``|100>, |010>, |001>``.
* ``sigma^z |1> = +|1>``; ``|1>`` is the excited (occupied) state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

MAX_SITES = 14

HERMITIAN_RTOL = 1e-12


def check_sites(n_sites: int) -> int:
    n_sites = int(n_sites)
    if n_sites < 1 or n_sites > MAX_SITES:
        raise ValueError(f"site count must be in 1..{MAX_SITES}, got {n_sites}")
    return n_sites


def site_bit(n_sites: int, site: int) -> int:
    """Bit mask of 1-based ``site``."""
    if not 1 <= site <= n_sites:
        raise ValueError(f"site {site} outside 1..{n_sites}")
    return 1 << (n_sites - site)


def occupation(state: int, n_sites: int, site: int) -> int:
    return (state >> (n_sites - site)) & 1


def bitstring(state: int, n_sites: int) -> str:
    return format(state, f"0{n_sites}b")


def parse_bitstring(text: str) -> int:
    text = text.strip()
    if not text or set(text) - {"0", "1"}:
        raise ValueError(f"not a bitstring: {text!r}")
    return int(text, 2)


def popcount(state: int) -> int:
    return bin(state).count("1")


@dataclass(frozen=True)
class SubspaceBasis:
    """Ordered list of basis states; ``m is None`` marks the full space."""

    n_sites: int
    m: int | None
    states: tuple[int, ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def is_full(self) -> bool:
        return self.m is None

    def index(self, state: int | str) -> int:
        if isinstance(state, str):
            state = parse_bitstring(state)
        try:
            return _index_map(self)[state]
        except KeyError:
            raise ValueError(
                f"state {bitstring(state, self.n_sites)} not in basis"
            ) from None

    def labels(self) -> list[str]:
        return [bitstring(s, self.n_sites) for s in self.states]

    def occupation_matrix(self) -> np.ndarray:
        """``(dim, N)`` 0/1 array, column ``k`` is the occupation of site ``k+1``."""
        return _occupation_matrix(self)

    def excitation_numbers(self) -> np.ndarray:
        return self.occupation_matrix().sum(axis=1)


@lru_cache(maxsize=256)
def _index_map(b: SubspaceBasis) -> dict[int, int]:
    return {s: i for i, s in enumerate(b.states)}


@lru_cache(maxsize=256)
def _occupation_matrix(b: SubspaceBasis) -> np.ndarray:
    states = np.asarray(b.states, dtype=np.int64)
    shifts = np.arange(b.n_sites - 1, -1, -1, dtype=np.int64)
    occ = (states[:, None] >> shifts[None, :]) & 1
    occ.setflags(write=False)
    return occ


@lru_cache(maxsize=256)
def basis(n_sites: int, m: int) -> SubspaceBasis:
    """Basis of all ``n_sites``-bit patterns with exactly ``m`` excitations."""
    n_sites = check_sites(n_sites)
    if not 0 <= m <= n_sites:
        raise ValueError(f"excitation number {m} outside 0..{n_sites}")
    states = sorted(
        (s for s in range(1 << n_sites) if popcount(s) == m), reverse=True
    )
    return SubspaceBasis(n_sites, int(m), tuple(states))


@lru_cache(maxsize=64)
def full_basis(n_sites: int) -> SubspaceBasis:
    n_sites = check_sites(n_sites)
    return SubspaceBasis(n_sites, None, tuple(range(1 << n_sites)))


def same_basis(a: SubspaceBasis, b: SubspaceBasis) -> bool:
    return a.n_sites == b.n_sites and a.m == b.m


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense matrix acting in ``basis``."""

    matrix: np.ndarray
    basis: SubspaceBasis
    hermitian: bool = True

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (self.basis.dim, self.basis.dim):
            raise ValueError(
                f"matrix shape {mat.shape} does not match basis dimension {self.basis.dim}"
            )
        if not np.all(np.isfinite(mat)):
            raise ValueError("operator has non-finite entries")
        if self.hermitian:
            scale = np.abs(mat).max() if mat.size else 0.0
            if scale > 0 and np.abs(mat - mat.conj().T).max() >= HERMITIAN_RTOL * scale:
                raise ValueError("operator flagged Hermitian but M != M^dagger")
        object.__setattr__(self, "matrix", mat)

    @property
    def n_sites(self) -> int:
        return self.basis.n_sites

    @property
    def dim(self) -> int:
        return self.basis.dim

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.hermitian:
            raise ValueError("eigh requires a Hermitian operator")
        return np.linalg.eigh(self.matrix)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def expectation(self, psi: "StateVector") -> complex:
        _require_same(self.basis, psi.basis)
        a = psi.amplitudes
        return complex(a.conj() @ (self.matrix @ a))

    def __add__(self, other: "Operator") -> "Operator":
        _require_same(self.basis, other.basis)
        return Operator(self.matrix + other.matrix, self.basis,
                        self.hermitian and other.hermitian)

    def __mul__(self, scalar: float) -> "Operator":
        scalar = complex(scalar)
        herm = self.hermitian and scalar.imag == 0
        return Operator(self.matrix * scalar, self.basis, herm)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            _require_same(self.basis, other.basis)
            return StateVector(self.matrix @ other.amplitudes, self.basis, normalize=False)
        _require_same(self.basis, other.basis)
        return Operator(self.matrix @ other.matrix, self.basis, hermitian=False)


NORM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitudes in ``basis``.

    Unless ``normalize=False`` the vector must have unit norm to within
    ``NORM_TOL``; construct via :meth:`normalized` to rescale arbitrary input.
    """

    amplitudes: np.ndarray
    basis: SubspaceBasis
    normalize: bool = True

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amp.shape[0] != self.basis.dim:
            raise ValueError(
                f"{amp.shape[0]} amplitudes for basis of dimension {self.basis.dim}"
            )
        if self.normalize and abs(np.linalg.norm(amp) - 1.0) > NORM_TOL:
            raise ValueError(f"state norm {np.linalg.norm(amp):.3g} != 1")
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def normalized(cls, amplitudes, basis: SubspaceBasis) -> "StateVector":
        amp = np.asarray(amplitudes, dtype=complex)
        nrm = np.linalg.norm(amp)
        if nrm == 0:
            raise ValueError("zero vector cannot be normalized")
        return cls(amp / nrm, basis)

    @classmethod
    def basis_state(cls, basis: SubspaceBasis, state: int | str) -> "StateVector":
        amp = np.zeros(basis.dim, dtype=complex)
        amp[basis.index(state)] = 1.0
        return cls(amp, basis)

    @property
    def n_sites(self) -> int:
        return self.basis.n_sites

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def site_occupations(self) -> np.ndarray:
        return self.probabilities() @ self.basis.occupation_matrix()

    def overlap(self, other: "StateVector") -> complex:
        _require_same(self.basis, other.basis)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def fidelity(self, other: "StateVector") -> float:
        return abs(self.overlap(other)) ** 2


def _require_same(a: SubspaceBasis, b: SubspaceBasis) -> None:
    if not same_basis(a, b):
        raise ValueError(
            f"basis mismatch: (N={a.n_sites}, m={a.m}) vs (N={b.n_sites}, m={b.m})"
        )


def sector_indices(target: SubspaceBasis) -> np.ndarray:
    """Positions of ``target`` states inside the full space of the same N."""
    return np.asarray(target.states, dtype=np.int64)


LEAKAGE_TOL = 1e-12


def project(op: Operator, target: SubspaceBasis) -> Operator:
    """Restrict a full-space, excitation-conserving operator to ``target``.

    Raises ``ValueError`` if the operator couples ``target`` to states outside
    it by more than ``LEAKAGE_TOL`` (relative to the operator's largest entry).
    """
    if not op.basis.is_full:
        if same_basis(op.basis, target):
            return op
        raise ValueError("projection requires a full-space operator")
    if op.n_sites != target.n_sites:
        raise ValueError("site count mismatch between operator and basis")
    if target.is_full:
        return op
    idx = sector_indices(target)
    mask = np.zeros(op.dim, dtype=bool)
    mask[idx] = True
    scale = max(np.abs(op.matrix).max(), 1.0)
    leak = max(
        np.abs(op.matrix[np.ix_(~mask, mask)]).max(initial=0.0),
        np.abs(op.matrix[np.ix_(mask, ~mask)]).max(initial=0.0),
    )
    if leak > LEAKAGE_TOL * scale:
        raise ValueError(
            f"operator does not conserve excitation number (leakage {leak:.3g})"
        )
    return Operator(op.matrix[np.ix_(idx, idx)], target, op.hermitian)


def embed(psi: StateVector) -> StateVector:
    """Lift a fixed-excitation state into the full space."""
    if psi.basis.is_full:
        return psi
    full = full_basis(psi.n_sites)
    amp = np.zeros(full.dim, dtype=complex)
    amp[sector_indices(psi.basis)] = psi.amplitudes
    return StateVector(amp, full, normalize=psi.normalize)


def restrict(psi: StateVector, target: SubspaceBasis, tol: float = 1e-10) -> StateVector:
    """Inverse of :func:`embed`; rejects states with weight outside ``target``."""
    if not psi.basis.is_full:
        _require_same(psi.basis, target)
        return psi
    amp = psi.amplitudes[sector_indices(target)]
    outside = psi.norm() ** 2 - np.linalg.norm(amp) ** 2
    if outside > tol:
        raise ValueError(f"state has weight {outside:.3g} outside the sector")
    return StateVector(amp, target, normalize=psi.normalize)


def sector_weights(probabilities: np.ndarray, n_sites: int) -> np.ndarray:
    """Total probability per excitation number for a full-space distribution."""
    probs = np.asarray(probabilities, dtype=float)
    counts = np.array([popcount(s) for s in range(1 << n_sites)])
    return np.bincount(counts, weights=probs, minlength=n_sites + 1)


def excitation_number(psi: StateVector, tol: float = 1e-10) -> int | None:
    """The definite excitation number of ``psi``, or ``None`` if it is mixed."""
    if not psi.basis.is_full:
        return psi.basis.m
    w = sector_weights(psi.probabilities(), psi.n_sites)
    m = int(np.argmax(w))
    return m if w[m] >= w.sum() - tol else None


def total_sz(n_sites: int) -> Operator:
    """``sum_k sigma^z_k`` in the full space."""
    full = full_basis(n_sites)
    diag = 2.0 * full.excitation_numbers() - n_sites
    return Operator(np.diag(diag.astype(complex)), full)


def dimension_count(n_sites: int) -> int:
    return sum(comb(n_sites, m) for m in range(n_sites + 1))
