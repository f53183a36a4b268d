"""Closed forms for constant (free) cocycles and the Lloyd model."""

from __future__ import annotations

import numpy as np


def expanding_root(w):
    """Root ``zeta`` of ``zeta + 1/zeta = w`` with ``|zeta| >= 1``."""
    w = np.asarray(w, dtype=complex)
    r = np.sqrt(w * w - 4.0 + 0j)
    a, b = (w + r) / 2.0, (w - r) / 2.0
    return np.where(np.abs(a) >= np.abs(b), a, b)


def free_gamma(z):
    """Lyapunov exponent of the free scalar cocycle: ``log|zeta(z)|``."""
    return np.log(np.abs(expanding_root(z)))


def constant_exponents(z, V) -> np.ndarray:
    """Non-negative exponents ``gamma_1 >= .. >= gamma_W`` of the constant cocycle ``V``.

    The cocycle decouples along the eigenvectors of ``V``.
    """
    ev = np.linalg.eigvalsh(np.atleast_2d(np.asarray(V, float)))
    g = free_gamma(complex(z) - ev)
    return np.sort(g)[::-1]


def constant_Gamma(z, V, k: int) -> float:
    return float(np.sum(constant_exponents(z, V)[:k]))


def lloyd_gamma(E, scale: float = 1.0):
    """Scalar Lloyd model (Cauchy potential of width ``scale``): ``gamma_free(E + i scale)``."""
    return free_gamma(np.asarray(E) + 1j * scale)


def free_ids(E):
    """Integrated density of states of the free scalar operator."""
    E = np.clip(np.asarray(E, float), -2.0, 2.0)
    return 1.0 - np.arccos(E / 2.0) / np.pi
