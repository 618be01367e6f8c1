"""Energy-based ground-state certification.

A candidate state is accepted when the lower confidence bound of

    F >= 1 - (<H> - E0) / gap

clears the fidelity threshold ``F_T``.  ``<H>`` comes from sampled local
Pauli correlators; the bound is the extremality inequality for a state with
known ground energy and spectral gap.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .basis import Operator, StateVector, basis as sector_basis, embed, excitation_number, project
from .measurement import local_energy_estimate, pauli_terms
from .model import LocalTerm

log = logging.getLogger(__name__)

# below this many shots per Pauli setting the normal approximation is not trusted
HOEFFDING_BELOW = 30
SPECTRUM_CHECK_MAX_DIM = 1 << 12
SPECTRUM_RTOL = 1e-8


class Decision(str, enum.Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"


@dataclass(frozen=True)
class CertificationConfig:
    f_threshold: float
    alpha: float
    e0: float
    gap: float
    shots_budget: int

    def __post_init__(self):
        for name in ("f_threshold", "alpha", "e0", "gap"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 0 < self.f_threshold < 1:
            raise ValueError("f_threshold must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gap <= 0:
            raise ValueError("gap must be > 0; certification is undefined at a degeneracy")
        if self.shots_budget < 1:
            raise ValueError("shots_budget must be >= 1")


@dataclass(frozen=True)
class CertificationOutcome:
    decision: Decision
    energy_estimate: float
    energy_stderr: float
    fidelity_lower_bound: float
    delta_gap: float
    reliability: float  # smallest alpha at which this data would be accepted
    resolved: bool
    method: str
    shots_per_setting: int

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["decision"] = self.decision.value
        return rec


def count_settings(h_terms: Sequence, n_sites: int) -> tuple[int, float]:
    """Number of non-identity Pauli settings and ``sum c^2`` over them."""
    n, c2 = 0, 0.0
    for term in h_terms:
        for paulis, c in pauli_terms(term, n_sites):
            if paulis:
                n += 1
                c2 += c * c
    return n, c2


def _terms_sum(h_terms: Sequence, n_sites: int) -> np.ndarray:
    return sum((t.full(n_sites) if isinstance(t, LocalTerm) else t).matrix for t in h_terms)


def check_spectrum(psi: StateVector, h_terms: Sequence, config: CertificationConfig) -> None:
    """Compare ``config.e0``/``config.gap`` with exact diagonalization in psi's sector."""
    n = psi.n_sites
    if (1 << n) > SPECTRUM_CHECK_MAX_DIM:
        return
    h = Operator(_terms_sum(h_terms, n), embed(psi).basis)
    m = psi.basis.m if not psi.basis.is_full else excitation_number(psi)
    if m is not None:
        h = project(h, sector_basis(n, m))
    w = h.eigvalsh()
    scale = max(1.0, float(np.abs(w).max()))
    higher = w[w > w[0] + 1e-9 * scale]
    gap = float(higher[0] - w[0]) if higher.size else 0.0
    if abs(w[0] - config.e0) > SPECTRUM_RTOL * scale or abs(gap - config.gap) > SPECTRUM_RTOL * scale:
        raise ValueError(
            f"config (e0={config.e0:.10g}, gap={config.gap:.10g}) disagrees with "
            f"exact diagonalization (e0={w[0]:.10g}, gap={gap:.10g})"
        )


def certify(
    psi: StateVector,
    h_terms: Sequence,
    config: CertificationConfig,
    seed: int | None = None,
    *,
    rng: np.random.Generator | None = None,
    verify_spectrum: bool = True,
) -> CertificationOutcome:
    """Accept or reject ``psi`` as a ground-state preparation.

    The shot budget is split evenly over the Pauli settings of ``h_terms``.
    ``delta_gap`` is the width of the indeterminate band in fidelity,
    computed from the worst-case per-setting variance so that it depends only
    on the budget (never grows as shots are added).  When that band is at
    least ``1 - f_threshold`` nothing can be certified; the outcome is a
    REJECT with ``resolved=False``.
    """
    if verify_spectrum:
        check_spectrum(psi, h_terms, config)
    n_settings, c2 = count_settings(h_terms, psi.n_sites)
    if n_settings == 0:
        raise ValueError("h_terms contain no measurable Pauli settings")
    shots = config.shots_budget // n_settings
    if shots < 1:
        raise ValueError(
            f"shots_budget {config.shots_budget} is smaller than the {n_settings} settings"
        )
    est = local_energy_estimate(psi, h_terms, shots, seed, rng=rng)
    alpha, gap = config.alpha, config.gap
    threshold = config.e0 + (1.0 - config.f_threshold) * gap  # largest acceptable <H>
    bound_se = math.sqrt(c2 / shots)

    if shots < HOEFFDING_BELOW or est.stderr == 0.0:
        method = "hoeffding"
        half = math.sqrt(2.0 * c2 / shots * math.log(1.0 / alpha))
        band = half
        margin = threshold - est.value
        reliability = math.exp(-margin * margin / (2.0 * c2 / shots)) if margin > 0 else 1.0
    else:
        method = "normal"
        z = float(stats.norm.ppf(1.0 - alpha))
        half = z * est.stderr
        band = z * bound_se
        reliability = float(stats.norm.sf((threshold - est.value) / est.stderr))

    f_lcb = 1.0 - (est.value + half - config.e0) / gap
    delta = band / gap
    resolved = delta < 1.0 - config.f_threshold
    accept = resolved and f_lcb >= config.f_threshold
    if not resolved:
        log.warning(
            "shot budget %d cannot resolve delta=%.3g below 1-F_T=%.3g; rejecting",
            config.shots_budget, delta, 1.0 - config.f_threshold,
        )
    return CertificationOutcome(
        Decision.ACCEPT if accept else Decision.REJECT,
        float(est.value),
        float(est.stderr),
        float(f_lcb),
        float(delta),
        float(min(1.0, reliability)),
        bool(resolved),
        method,
        shots,
    )


def fidelity_bound(energy: float, e0: float, gap: float) -> float:
    """Point value of ``1 - (E - E0)/gap``."""
    return 1.0 - (energy - e0) / gap
