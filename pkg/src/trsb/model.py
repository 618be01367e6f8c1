"""Hamiltonians of excitation-hopping spin chains with complex hopping phases.

Every model is first reduced to a list of :class:`Hop` records (an excitation
moving ``src -> dst`` with a complex amplitude); the Hermitian conjugate is
implied.  Hop lists are materialized in the full space or directly in a
fixed-excitation block.

Sign convention
---------------
The hopping amplitude carries an overall factor ``HOP_SIGN = -1``::

    H = HOP_SIGN * sum_n Omega_n exp(i(phi_n - delta_n t)) sum_k s+_{k+n} s-_k + h.c.

i.e. positive couplings lower the energy of symmetric superpositions, as in a
``-t`` tight-binding model.  With this sign and ``psi(t) = exp(-iHt) psi(0)``
a flux of ``+pi/2`` drives a ring excitation 1 -> 2 -> 3, the ring's zero-flux
ground state is non-degenerate, and the four-site ladder at staggered flux
``pi/2`` has ``|S>(|10> - i|01>)/sqrt(2)`` at energy ``+Omega``.

All couplings are angular frequencies; times are in the reciprocal unit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .basis import (
    Operator,
    StateVector,
    SubspaceBasis,
    basis as sector_basis,
    check_sites,
    full_basis,
    site_bit,
)

HOP_SIGN = -1.0


@dataclass(frozen=True)
class Hop:
    """Excitation transfer ``src -> dst``: ``<..1_dst 0_src..|H|..0_dst 1_src..> = amplitude``."""

    src: int
    dst: int
    amplitude: complex


# ---------------------------------------------------------------- specs


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite parameter {v!r}")


@dataclass(frozen=True)
class HoppingTerm:
    n: int
    omega: float
    phi: float = 0.0
    delta: float = 0.0


@dataclass(frozen=True)
class HoppingSpec:
    """Uniform-range hopping model: one (Omega, phi, delta) triple per range n."""

    n_sites: int
    terms: tuple[HoppingTerm, ...] = field(default_factory=tuple)

    def __post_init__(self):
        n_sites = check_sites(self.n_sites)
        if n_sites < 2:
            raise ValueError("a hopping model needs at least two sites")
        terms = tuple(
            t if isinstance(t, HoppingTerm) else HoppingTerm(*t) for t in self.terms
        )
        seen = set()
        for t in terms:
            if not 1 <= t.n <= n_sites - 1:
                raise ValueError(f"range n={t.n} outside 1..{n_sites - 1}")
            if t.n in seen:
                raise ValueError(f"duplicate term for range n={t.n}")
            seen.add(t.n)
            _finite(t.omega, t.phi, t.delta)
            if t.omega < 0:
                raise ValueError("omega_n must be >= 0; absorb the sign into phi_n")
        object.__setattr__(self, "terms", terms)

    def hops(self, t: float = 0.0) -> list[Hop]:
        _finite(t)
        out = []
        for term in self.terms:
            amp = HOP_SIGN * term.omega * np.exp(1j * (term.phi - term.delta * t))
            out.extend(Hop(k, k + term.n, amp) for k in range(1, self.n_sites - term.n + 1))
        return out


@dataclass(frozen=True)
class AbRingSpec:
    """N-site ring threaded by flux ``phi_ab`` with zero-flux admixture ``epsilon``.

    Each bond ``k -> k+1`` (with ``N+1 = 1``) carries ``Omega (exp(i phi_ab/N) + epsilon)``.
    """

    n_sites: int
    omega: float
    phi_ab: float
    epsilon: float = 0.0

    def __post_init__(self):
        if check_sites(self.n_sites) < 3:
            raise ValueError("an AB ring needs at least three sites")
        _finite(self.omega, self.phi_ab, self.epsilon)
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def bond_factor(self) -> complex:
        return np.exp(1j * self.phi_ab / self.n_sites) + self.epsilon

    def hops(self) -> list[Hop]:
        amp = HOP_SIGN * self.omega * self.bond_factor
        n = self.n_sites
        return [Hop(k, k % n + 1, amp) for k in range(1, n + 1)]

    def to_hopping(self) -> HoppingSpec:
        """Same Hamiltonian written with ranges 1 and N-1."""
        a = self.bond_factor
        mag, arg = abs(a), float(np.angle(a))
        return HoppingSpec(
            self.n_sites,
            (HoppingTerm(1, self.omega * mag, arg),
             HoppingTerm(self.n_sites - 1, self.omega * mag, -arg)),
        )


class Gauge(str, enum.Enum):
    UNIFORM = "uniform"
    STAGGERED = "staggered"


@dataclass(frozen=True)
class LadderSpec:
    """Triangular ladder (nn rungs + nnn rails) with staggered plaquette flux ``phi_s``."""

    n_sites: int
    omega: float
    phi_s: float
    gauge: Gauge = Gauge.STAGGERED

    def __post_init__(self):
        if check_sites(self.n_sites) < 3:
            raise ValueError("a triangular ladder needs at least three sites")
        _finite(self.omega, self.phi_s)
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        object.__setattr__(self, "gauge", Gauge(self.gauge))

    def to_hopping(self) -> HoppingSpec:
        """The uniform-gauge form: phi_1 = -phi_2 = phi_s / 3."""
        third = self.phi_s / 3.0
        return HoppingSpec(
            self.n_sites,
            (HoppingTerm(1, self.omega, third), HoppingTerm(2, self.omega, -third)),
        )

    def hops(self) -> list[Hop]:
        if self.gauge is Gauge.UNIFORM:
            return self.to_hopping().hops()
        s = HOP_SIGN * self.omega
        flux = np.exp(1j * self.phi_s)
        out = [Hop(k, k + 1, s * (1.0 if k % 2 else flux)) for k in range(1, self.n_sites)]
        # rails written as s+_k s-_{k+2}: the excitation moves k+2 -> k
        out += [Hop(k + 2, k, s + 0j) for k in range(1, self.n_sites - 1)]
        return out


# ---------------------------------------------------------------- materialization


def _positions(b: SubspaceBasis, states: np.ndarray) -> np.ndarray:
    if b.is_full:
        return states
    asc = np.asarray(b.states[::-1], dtype=np.int64)
    return b.dim - 1 - np.searchsorted(asc, states)


def hop_matrix(hops: Iterable[Hop], b: SubspaceBasis) -> np.ndarray:
    """Dense matrix of ``sum(hops) + h.c.`` in basis ``b``."""
    n = b.n_sites
    states = np.asarray(b.states, dtype=np.int64)
    mat = np.zeros((b.dim, b.dim), dtype=complex)
    for hop in hops:
        if hop.src == hop.dst:
            raise ValueError("a hop needs distinct sites")
        sb, db = site_bit(n, hop.src), site_bit(n, hop.dst)
        cols = np.nonzero((states & sb != 0) & (states & db == 0))[0]
        if cols.size == 0:
            continue
        rows = _positions(b, states[cols] ^ sb ^ db)
        np.add.at(mat, (rows, cols), hop.amplitude)
        np.add.at(mat, (cols, rows), np.conj(hop.amplitude))
    return mat


def _target_basis(n_sites: int, m: int | None) -> SubspaceBasis:
    return full_basis(n_sites) if m is None else sector_basis(n_sites, m)


def hop_operator(hops: Sequence[Hop], n_sites: int, m: int | None = None) -> Operator:
    b = _target_basis(n_sites, m)
    return Operator(hop_matrix(hops, b), b)


def build_general(spec: HoppingSpec, t: float = 0.0, m: int | None = None) -> Operator:
    """H(t) of the uniform-range model, in the full space or the ``m`` block."""
    return hop_operator(spec.hops(t), spec.n_sites, m)


def build_ab(spec: AbRingSpec, m: int | None = None) -> Operator:
    return hop_operator(spec.hops(), spec.n_sites, m)


def build_ladder(spec: LadderSpec, m: int | None = None) -> Operator:
    return hop_operator(spec.hops(), spec.n_sites, m)


def build_h0(n_sites: int, site: int, delta: float, m: int | None = None) -> Operator:
    """``-delta * sigma^z_site``: lowers the energy of an excitation on ``site``."""
    n_sites = check_sites(n_sites)
    if not 1 <= site <= n_sites:
        raise ValueError(f"site {site} outside 1..{n_sites}")
    _finite(delta)
    if delta < 0:
        raise ValueError("delta must be >= 0")
    b = _target_basis(n_sites, m)
    occ = b.occupation_matrix()[:, site - 1]
    return Operator(np.diag(-delta * (2.0 * occ - 1.0)).astype(complex), b)


def current_hops(spec: AbRingSpec) -> list[Hop]:
    n = spec.n_sites
    amp = 1j * np.exp(1j * spec.phi_ab / n)
    return [Hop(k, k % n + 1, amp) for k in range(1, n + 1)]


def current_operator(spec: AbRingSpec, m: int | None = None) -> Operator:
    """Ring spin current ``C = i sum_n (s+_{n+1} s-_n e^{i Phi/N} - h.c.)``.

    Dimensionless (no coupling prefactor, no epsilon admixture).
    """
    return hop_operator(current_hops(spec), spec.n_sites, m)


# ---------------------------------------------------------------- local terms


@dataclass(frozen=True, eq=False)
class LocalTerm:
    """Two-site operator: ``matrix`` acts on ``|b_i b_j>`` (site ``i`` most significant)."""

    sites: tuple[int, int]
    matrix: np.ndarray

    def full(self, n_sites: int) -> Operator:
        return embed_two_site(self.matrix, self.sites, n_sites)


def local_terms(hops: Iterable[Hop]) -> list[LocalTerm]:
    """Group hops (plus h.c.) by bond into Hermitian two-site terms, ordered by bond."""
    acc: dict[tuple[int, int], np.ndarray] = {}
    for hop in hops:
        i, j = sorted((hop.src, hop.dst))
        mat = acc.setdefault((i, j), np.zeros((4, 4), dtype=complex))
        # |01> = index 1 (excitation on j), |10> = index 2 (excitation on i)
        if hop.src == i:
            mat[1, 2] += hop.amplitude
            mat[2, 1] += np.conj(hop.amplitude)
        else:
            mat[2, 1] += hop.amplitude
            mat[1, 2] += np.conj(hop.amplitude)
    return [LocalTerm(k, acc[k]) for k in sorted(acc)]


def embed_two_site(mat4: np.ndarray, sites: tuple[int, int], n_sites: int) -> Operator:
    i, j = sites
    if i == j:
        raise ValueError("two-site term needs distinct sites")
    full = full_basis(n_sites)
    states = np.arange(full.dim, dtype=np.int64)
    bi, bj = site_bit(n_sites, i), site_bit(n_sites, j)
    local = ((states & bi) != 0).astype(int) * 2 + ((states & bj) != 0).astype(int)
    rest = states & ~(bi | bj)
    mat = np.zeros((full.dim, full.dim), dtype=complex)
    for a in range(4):
        for c in range(4):
            if mat4[a, c] == 0:
                continue
            cols = np.nonzero(local == c)[0]
            tgt = rest[cols] | (bi if a & 2 else 0) | (bj if a & 1 else 0)
            mat[tgt, cols] += mat4[a, c]
    herm = np.allclose(mat4, mat4.conj().T, atol=0)
    return Operator(mat, full, hermitian=herm)


# ---------------------------------------------------------------- symmetries


class SymmetryKind(str, enum.Enum):
    SWAP_1_4 = "swap_1_4"
    CHIRAL = "chiral"
    ANTIUNITARY = "antiunitary"


class Symmetry(NamedTuple):
    operator: Operator
    antiunitary: bool

    def conjugate(self, h: Operator) -> Operator:
        """``S H S^-1``, with complex conjugation applied first when antiunitary."""
        u = self.operator.matrix
        m = h.matrix.conj() if self.antiunitary else h.matrix
        return Operator(u @ m @ u.conj().T, h.basis, hermitian=h.hermitian)


def swap_matrix(n_sites: int, i: int, j: int) -> np.ndarray:
    """Permutation exchanging the states of sites ``i`` and ``j``."""
    full = full_basis(n_sites)
    states = np.arange(full.dim, dtype=np.int64)
    bi, bj = site_bit(n_sites, i), site_bit(n_sites, j)
    oi, oj = (states & bi) != 0, (states & bj) != 0
    swapped = (states & ~(bi | bj)) | np.where(oi, bj, 0) | np.where(oj, bi, 0)
    mat = np.zeros((full.dim, full.dim))
    mat[swapped, states] = 1.0
    return mat


def sigma_z_diag(n_sites: int, site: int) -> np.ndarray:
    occ = full_basis(n_sites).occupation_matrix()[:, site - 1]
    return 2.0 * occ - 1.0


def symmetry_operator(kind: SymmetryKind | str, n_sites: int = 4) -> Symmetry:
    """Symmetries of the minimal (N=4) ladder in the staggered gauge."""
    kind = SymmetryKind(kind)
    if n_sites != 4:
        raise ValueError("ladder symmetries are defined for N=4 only")
    full = full_basis(4)
    if kind is SymmetryKind.SWAP_1_4:
        return Symmetry(Operator(swap_matrix(4, 1, 4), full, hermitian=False), False)
    u23 = swap_matrix(4, 2, 3)
    if kind is SymmetryKind.ANTIUNITARY:
        return Symmetry(Operator(u23, full, hermitian=False), True)
    zz = np.diag(sigma_z_diag(4, 1) * sigma_z_diag(4, 4))
    return Symmetry(Operator(zz @ u23, full, hermitian=False), False)


# ---------------------------------------------------------------- reference states


def ladder4_reference_states() -> list[tuple[str, StateVector, float, int]]:
    """The seven symmetry-determined eigenstates of the N=4 ladder at phi_s = pi/2.

    Returns ``(label, state, energy / Omega, excitation number)``; kets are
    written ``|a>_{1,4} |b>_{2,3}`` as in the symmetry analysis.
    """
    full = full_basis(4)

    def ket(s14: str, s23: str) -> np.ndarray:
        bits = s14[0] + s23[0] + s23[1] + s14[1]
        v = np.zeros(full.dim, dtype=complex)
        v[int(bits, 2)] = 1.0
        return v

    r2 = math.sqrt(2.0)
    singlet = lambda s23: (ket("10", s23) - ket("01", s23)) / r2  # noqa: E731
    rows = [
        ("|00>|00>", ket("00", "00"), 0.0, 0),
        ("|11>|11>", ket("11", "11"), 0.0, 4),
        ("|S>|00>", singlet("00"), 0.0, 1),
        ("|S>|11>", singlet("11"), 0.0, 3),
        ("|S>(|10>-i|01>)/sqrt2", (singlet("10") - 1j * singlet("01")) / r2, 1.0, 2),
        ("|S>(|10>+i|01>)/sqrt2", (singlet("10") + 1j * singlet("01")) / r2, -1.0, 2),
        ("(|11>|00>-|00>|11>)/sqrt2", (ket("11", "00") - ket("00", "11")) / r2, 0.0, 2),
    ]
    return [(label, StateVector(v, full), e, m) for label, v, e, m in rows]
