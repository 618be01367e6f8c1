"""Spinless-fermion form of the hopping models (Jordan-Wigner).

Modes are ordered by site index; an occupation state is
``(c+_1)^{b_1} (c+_2)^{b_2} ... (c+_N)^{b_N} |vac>``, so acting with
``c_j`` or ``c+_j`` picks up ``(-1)^(number of occupied sites < j)``.

A spin hop ``s+_b s-_a`` becomes ``c+_b c_a exp(i pi sum_{k strictly between} n_k)``.
The string is expanded exactly as ``prod_k (1 - 2 n_k)`` into normally ordered
monomials, so a range-2 hop yields the two-body term ``c+_b c_a`` and the
four-body term ``-2 c+_b c+_k c_k c_a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .basis import Operator, basis as sector_basis, check_sites, occupation, site_bit
from .model import Hop, HoppingSpec, LadderSpec


@dataclass(frozen=True)
class FermionTerm:
    """``coeff * c+_{creators[0]} c+_{creators[1]} ... c_{annihilators[0]} ...``."""

    coeff: complex
    creators: tuple[int, ...]
    annihilators: tuple[int, ...]

    @property
    def body(self) -> int:
        return len(self.creators) + len(self.annihilators)


@dataclass(frozen=True)
class FermionOperatorSpec:
    n_sites: int
    terms: tuple[FermionTerm, ...] = field(default_factory=tuple)

    def __post_init__(self):
        check_sites(self.n_sites)
        for t in self.terms:
            for s in t.creators + t.annihilators:
                if not 1 <= s <= self.n_sites:
                    raise ValueError(f"mode {s} outside 1..{self.n_sites}")

    def conserves_number(self) -> bool:
        return all(len(t.creators) == len(t.annihilators) for t in self.terms)

    def quadratic_part(self) -> "FermionOperatorSpec":
        """Drop every term beyond two-body (the correlated hops)."""
        return FermionOperatorSpec(self.n_sites, tuple(t for t in self.terms if t.body <= 2))

    def interaction_part(self) -> "FermionOperatorSpec":
        return FermionOperatorSpec(self.n_sites, tuple(t for t in self.terms if t.body > 2))


def _hop_terms(hop: Hop) -> list[FermionTerm]:
    a, b = hop.src, hop.dst
    between = range(min(a, b) + 1, max(a, b))
    out = []
    for r in range(len(between) + 1):
        for subset in combinations(between, r):
            coeff = hop.amplitude * (-2.0) ** r
            out.append(FermionTerm(coeff, (b, *subset), (*reversed(subset), a)))
    return out


def jordan_wigner_hops(hops: list[Hop], n_sites: int) -> FermionOperatorSpec:
    terms: list[FermionTerm] = []
    for hop in hops:
        terms += _hop_terms(hop)
        terms += _hop_terms(Hop(hop.dst, hop.src, np.conj(hop.amplitude)))
    return FermionOperatorSpec(n_sites, tuple(terms))


def jordan_wigner(spec: HoppingSpec | LadderSpec, t: float = 0.0) -> FermionOperatorSpec:
    """Fermionic representation of a spin hopping model, Hermitian conjugates included."""
    hops = spec.hops(t) if isinstance(spec, HoppingSpec) else spec.hops()
    return jordan_wigner_hops(hops, spec.n_sites)


def _apply(state: int, mode: int, n_sites: int, create: bool) -> tuple[int, int]:
    """Return (sign, new_state); sign 0 if the operator annihilates ``state``."""
    occ = occupation(state, n_sites, mode)
    if occ == int(create):
        return 0, state
    before = state >> (n_sites - mode + 1)
    sign = -1 if bin(before).count("1") % 2 else 1
    return sign, state ^ site_bit(n_sites, mode)


def apply_term(term: FermionTerm, state: int, n_sites: int) -> tuple[complex, int]:
    amp: complex = term.coeff
    for mode in reversed(term.annihilators):
        sign, state = _apply(state, mode, n_sites, create=False)
        if sign == 0:
            return 0.0, state
        amp *= sign
    for mode in reversed(term.creators):
        sign, state = _apply(state, mode, n_sites, create=True)
        if sign == 0:
            return 0.0, state
        amp *= sign
    return amp, state


def fermion_matrix(spec: FermionOperatorSpec, m: int) -> Operator:
    """Matrix of ``spec`` among the ``m``-particle occupation states."""
    if not spec.conserves_number():
        raise ValueError("fermion operator does not conserve particle number")
    b = sector_basis(spec.n_sites, m)
    mat = np.zeros((b.dim, b.dim), dtype=complex)
    for col, s in enumerate(b.states):
        for term in spec.terms:
            amp, out = apply_term(term, s, spec.n_sites)
            if amp != 0:
                mat[b.index(out), col] += amp
    herm = np.allclose(mat, mat.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(mat).max()))
    return Operator(mat, b, hermitian=herm)
