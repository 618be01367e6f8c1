"""Independent reference implementations used to derive expected values.

Everything here is built from explicit Kronecker products of 2x2 matrices
and generic scipy routines, sharing no code with the package.
"""

from __future__ import annotations

from functools import reduce

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

I2 = np.eye(2, dtype=complex)
SP = np.array([[0, 0], [1, 0]], dtype=complex)  # |1><0|
SM = SP.T.copy()
NUM = np.diag([0.0, 1.0]).astype(complex)


def site_op(op: np.ndarray, site: int, n: int) -> np.ndarray:
    return reduce(np.kron, [op if k == site else I2 for k in range(1, n + 1)])


def hop(dst: int, src: int, amp: complex, n: int) -> np.ndarray:
    """``-amp s+_dst s-_src + h.c.`` (hopping carries an overall minus sign)."""
    t = -amp * site_op(SP, dst, n) @ site_op(SM, src, n)
    return t + t.conj().T


def ring(n: int, omega: float, phi: float, eps: float = 0.0) -> np.ndarray:
    a = omega * (np.exp(1j * phi / n) + eps)
    return sum(hop(k % n + 1, k, a, n) for k in range(1, n + 1))


def ladder(n: int, omega: float, phi: float) -> np.ndarray:
    h = np.zeros((2**n, 2**n), dtype=complex)
    for k in range(1, n):
        amp = omega if k % 2 else omega * np.exp(1j * phi)
        h += hop(k + 1, k, amp, n)
    for k in range(1, n - 1):
        h += hop(k, k + 2, omega, n)
    return h


def detuning(n: int, site: int, delta: float) -> np.ndarray:
    return -delta * (2 * site_op(NUM, site, n) - np.eye(2**n))


def sector_indices(n: int, m: int) -> np.ndarray:
    return np.array([i for i in range(2**n) if bin(i).count("1") == m])


def occupations(psi: np.ndarray, n: int) -> np.ndarray:
    p = np.abs(psi) ** 2
    return np.array([np.real(np.vdot(psi, site_op(NUM, k, n) @ psi)) for k in range(1, n + 1)])


def quench(h: np.ndarray, psi0: np.ndarray, t: float) -> np.ndarray:
    return expm(-1j * h * t) @ psi0


def ramp_state(h0: np.ndarray, h1: np.ndarray, T: float, psi0: np.ndarray) -> np.ndarray:
    """ODE integration of the quadratic ramp with tight tolerances."""

    def rhs(t, y):
        s = (t / T) ** 2
        return -1j * (((1 - s) * h0 + s * h1) @ y)

    sol = solve_ivp(rhs, (0.0, T), psi0.astype(complex), method="DOP853",
                    rtol=1e-12, atol=1e-12)
    return sol.y[:, -1]


def basis_ket(n: int, occupied: list[int]) -> np.ndarray:
    idx = sum(1 << (n - k) for k in occupied)
    v = np.zeros(2**n, dtype=complex)
    v[idx] = 1.0
    return v
