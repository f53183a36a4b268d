"""Finite-volume block Jacobi operators, density of states and resolvent blocks."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .drivers import OrbitSeed, PotentialModel, ensemble_seeds, orbit_potentials
from .symplectic import LagrangianFrame, ValidationError


@dataclass(frozen=True, eq=False)
class FiniteOperator:
    """``(H psi)_n = psi_{n+1} + psi_{n-1} + V_n psi_n`` on sites ``1..L``.

    The boundary frame ``[X; Y]`` at site 0 imposes ``psi_0 = Y X^{-1} psi_1``,
    which adds ``Y X^{-1}`` to the first block.
    """

    blocks: np.ndarray = field(repr=False)  # (L, W, W), boundary term included
    boundary: LagrangianFrame = field(repr=False)

    @property
    def L(self) -> int:
        return self.blocks.shape[0]

    @property
    def W(self) -> int:
        return self.blocks.shape[1]

    def dense(self) -> np.ndarray:
        L, W = self.L, self.W
        H = linalg.block_diag(*self.blocks)
        off = np.eye(W * (L - 1))
        H[W:, :-W] += off
        H[:-W, W:] += off
        return H

    def banded(self) -> np.ndarray:
        """Lower banded storage (``W + 1`` rows) as used by ``scipy.linalg.eig_banded``."""
        L, W = self.L, self.W
        N = L * W
        ab = np.zeros((W + 1, N))
        for d in range(W):  # sub-diagonals inside the blocks
            idx = np.arange(W - d)
            vals = self.blocks[:, idx + d, idx]  # (L, W-d)
            row = np.zeros(N)
            starts = np.arange(L)[:, None] * W + idx[None, :]
            row[starts.reshape(-1)] = vals.reshape(-1)
            ab[d] = row
        ab[W, : N - W] = 1.0  # identity hopping between neighbouring blocks
        return ab

    def eigenvalues(self) -> np.ndarray:
        if self.W == 1:
            return linalg.eigvalsh_tridiagonal(self.blocks[:, 0, 0], np.ones(self.L - 1))
        return linalg.eig_banded(self.banded(), lower=True, eigvals_only=True)


def boundary_term(boundary: LagrangianFrame) -> np.ndarray:
    """``Y X^{-1}`` for a real Lagrangian frame ``[X; Y]``."""
    boundary.validate()
    B = boundary.basis
    if np.max(np.abs(B.imag)) > 1e-12:
        raise ValidationError("boundary frame must be real")
    W = boundary.W
    X, Y = B.real[:W], B.real[W:]
    if np.linalg.cond(X) > 1e12:
        raise ValidationError("boundary frame is not a graph over the first component")
    M = Y @ np.linalg.inv(X)
    return 0.5 * (M + M.T)


def assemble_finite(
    model: PotentialModel,
    seed,
    L: int,
    boundary: LagrangianFrame | None = None,
) -> FiniteOperator:
    if L < 2:
        raise ValueError("L must be at least 2")
    boundary = LagrangianFrame.dirichlet(model.W) if boundary is None else boundary
    if not isinstance(boundary, LagrangianFrame):
        boundary = LagrangianFrame(np.asarray(boundary))
    term = boundary_term(boundary)
    seed = seed if isinstance(seed, OrbitSeed) else OrbitSeed(int(seed))
    blocks = orbit_potentials(model, seed, 1, L).copy()
    blocks[0] += term
    return FiniteOperator(blocks, boundary)


# -- density of states ---------------------------------------------------------


@dataclass(frozen=True)
class IdsEstimate:
    eigenvalues: np.ndarray = field(repr=False)  # pooled, sorted
    L: int
    W: int
    samples: int

    def kappa(self, E):
        """Fraction of pooled eigenvalues ``<= E``."""
        return np.searchsorted(self.eigenvalues, np.asarray(E, float), side="right") / self.eigenvalues.size

    @property
    def support_hull(self) -> tuple[float, float]:
        return float(self.eigenvalues[0]), float(self.eigenvalues[-1])

    def log_potential(self, z) -> np.ndarray:
        """``mean log|z - E_i|`` over the pool."""
        zs = np.atleast_1d(np.asarray(z, complex))
        out = np.array([np.mean(np.log(np.abs(w - self.eigenvalues))) for w in zs.reshape(-1)])
        return out.reshape(zs.shape)


def ids_estimate(
    model: PotentialModel,
    L: int,
    samples: int,
    seed: int = 0,
    boundary: LagrangianFrame | None = None,
    threads: int = 1,
) -> IdsEstimate:
    if L < 500:
        warnings.warn("L below 500 gives only a qualitative density of states", stacklevel=2)
    seeds = ensemble_seeds(seed, samples)

    def one(sd):
        return assemble_finite(model, sd, L, boundary).eigenvalues()

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(one, seeds))
    else:
        parts = [one(sd) for sd in seeds]
    # order of the pooled values does not depend on the thread schedule
    return IdsEstimate(np.sort(np.concatenate(parts)), L, model.W, samples)


# -- Thouless cross-check ------------------------------------------------------


def thouless_test_points(hull: tuple[float, float], per_line: int = 9, far: int = 16,
                         radius: float = 100.0) -> np.ndarray:
    """Points on ``Im z = +-0.5, +-1, +-2`` over the hull and on the circle ``|z| = radius``."""
    xs = np.linspace(hull[0], hull[1], per_line)
    pts = [x + 1j * s * y for y in (0.5, 1.0, 2.0) for s in (1, -1) for x in xs]
    th = 2 * np.pi * np.arange(far) / far
    pts.extend(radius * np.exp(1j * th))
    return np.array(pts)


@dataclass(frozen=True)
class ThoulessReport:
    residual: float
    points: np.ndarray
    differences: np.ndarray  # per kept point, Gamma/W - potential
    excluded: np.ndarray  # points too close to the pooled eigenvalues


def thouless_residual(points, Gamma_W, ids: IdsEstimate) -> ThoulessReport:
    """``sup |Gamma_W(z)/W - mean log|z - E_i||`` over test points.

    Points closer than ``1/L`` to an eigenvalue of the pool are dropped and
    listed in ``excluded``.
    """
    z = np.atleast_1d(np.asarray(points, complex))
    G = np.broadcast_to(np.asarray(Gamma_W, float), z.shape)
    dist = np.array([np.min(np.abs(w - ids.eigenvalues)) for w in z])
    keep = dist >= 1.0 / ids.L
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} test points excluded (closer than 1/L to the spectrum)",
                      stacklevel=2)
    diff = G[keep] / ids.W - ids.log_potential(z[keep])
    res = float(np.max(np.abs(diff))) if diff.size else math.nan
    return ThoulessReport(res, z[keep], diff, z[~keep])


# -- resolvent blocks ----------------------------------------------------------


def _shifted_banded(op: FiniteOperator, z: complex) -> np.ndarray:
    """General banded storage of ``H - z`` with ``W`` bands on each side."""
    W = op.W
    low = op.banded()
    N = low.shape[1]
    ab = np.zeros((2 * W + 1, N), dtype=complex)
    for d in range(W + 1):
        ab[W + d, : N - d] = low[d, : N - d]  # sub-diagonal d
        ab[W - d, d:] = low[d, : N - d]  # super-diagonal d (symmetric)
    ab[W] -= z
    return ab


def resolvent_columns(op: FiniteOperator, z: complex, site: int = 1) -> np.ndarray:
    """``G_z(., site)`` as a ``(L, W, W)`` array of blocks ``G_z(n, site)``."""
    W, L = op.W, op.L
    rhs = np.zeros((L * W, W), dtype=complex)
    rhs[(site - 1) * W: site * W] = np.eye(W)
    X = linalg.solve_banded((W, W), _shifted_banded(op, z), rhs)
    return X.reshape(L, W, W)


def resolvent(op: FiniteOperator, z: complex) -> np.ndarray:
    """Full ``(H - z)^{-1}`` (small operators only)."""
    return np.linalg.inv(op.dense() - z * np.eye(op.L * op.W))


@dataclass(frozen=True)
class GreenProbe:
    z: complex
    ns: np.ndarray
    norms: np.ndarray
    rate: float
    prefactor: float
    r2: float

    @property
    def combes_thomas_ratio(self) -> float:
        """Fitted rate over ``log(1 + |Im z|)``."""
        return self.rate / math.log1p(abs(self.z.imag))


def green_block(
    model: PotentialModel,
    seed,
    z: complex,
    n_range,
    L: int,
) -> GreenProbe:
    """Norms ``||G_z(1, n)||`` on a finite volume and their log-linear decay rate."""
    z = complex(z)
    if z.imag == 0:
        raise ValidationError("the resolvent probe needs Im z != 0")
    ns = np.asarray(sorted(int(n) for n in n_range))
    if ns[0] < 1:
        raise ValueError("block indices start at 1")
    if L < ns[-1] + 10:
        raise ValueError("L must exceed the largest probed index by at least 10")
    op = assemble_finite(model, seed, L)
    cols = resolvent_columns(op, z, 1)
    # G(1, n) = G(n, 1)^T for the complex-symmetric H - z
    norms = np.linalg.norm(cols[ns - 1], ord=2, axis=(-2, -1))
    fit = stats.linregress(ns, np.log(norms))
    return GreenProbe(z, ns, norms, float(-fit.slope), float(math.exp(fit.intercept)),
                      float(fit.rvalue**2))
