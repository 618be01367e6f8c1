"""Exact simulation of spin chains with synthetic gauge fields.

Hamiltonians live in fixed excitation-number sectors; the modules cover model
construction, time evolution, simulated measurements, ground-state
certification and maximum-likelihood parameter fits.
"""

__version__ = "0.1.0"
