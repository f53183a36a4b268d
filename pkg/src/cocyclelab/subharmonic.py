"""Partial sums ``Gamma_k`` on complex grids: sub-mean values, Riesz masses,
logarithmic potentials and circular means."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage, signal

from .drivers import ConstantModel, PotentialModel, ensemble_seeds, member_seed
from .engine import evolve, wedge_log_norms
from .lyapunov import lyapunov_spectra, paired


@dataclass(frozen=True)
class ComplexGrid:
    x0: float
    x1: float
    y0: float
    y1: float
    h: float

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        for lo, hi in ((self.x0, self.x1), (self.y0, self.y1)):
            steps = (hi - lo) / self.h
            if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
                raise ValueError("grid bounds must be an integer number of steps apart")
        if self.nx < 10 or self.ny < 10:
            raise ValueError("grid needs at least 8 x 8 interior nodes")

    @property
    def nx(self) -> int:
        return int(round((self.x1 - self.x0) / self.h)) + 1

    @property
    def ny(self) -> int:
        return int(round((self.y1 - self.y0) / self.h)) + 1

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.h * np.arange(self.ny)

    @property
    def Z(self) -> np.ndarray:
        """Node values, shape ``(ny, nx)``."""
        return self.xs[None, :] + 1j * self.ys[:, None]


@dataclass(frozen=True)
class GridField:
    grid: ComplexGrid
    k: int
    n: int  # 0 for analytic fields
    samples: int
    values: np.ndarray = field(repr=False)
    stderr: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.values.shape != (self.grid.ny, self.grid.nx):
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def near_axis(self) -> np.ndarray:
        """Nodes closer than one spacing to the real axis (slow convergence)."""
        return np.abs(self.grid.Z.imag) < self.grid.h * (1 - 1e-9)


def analytic_field(grid: ComplexGrid, func: Callable, k: int = 1) -> GridField:
    return GridField(grid, k, 0, 0, np.asarray(func(grid.Z), float))


def field_gamma(
    model: PotentialModel,
    grid: ComplexGrid,
    n: int,
    k: int,
    samples: int = 1,
    seed: int = 0,
    shared: bool = False,
    estimator: str = "qr",
    threads: int = 1,
) -> GridField:
    """Ensemble mean of ``(1/n) sum_{j<=k} log s_j(Phi_n(z))`` at every node.

    ``shared=True`` runs every node on the same orbits; otherwise each node
    gets its own orbits. ``estimator="qr"`` uses accumulated QR stretches of
    the first ``k`` frame columns; ``"wedge"`` the exact norm of the k-th
    exterior power.
    """
    if not 1 <= k <= model.W:
        raise ValueError(f"k must lie in 1..{model.W}")
    Z = grid.Z.reshape(-1)
    S = 1 if isinstance(model, ConstantModel) else samples
    if shared:
        seeds = ensemble_seeds(seed, S)
    else:
        seeds = [[member_seed(seed, p * S + s) for s in range(S)] for p in range(Z.size)]
    if estimator == "qr":
        run = evolve(model, Z, seeds, n, m=k, threads=threads)
        per = run.logstretch.sum(axis=-1) / n
    elif estimator == "wedge":
        per = wedge_log_norms(model, Z, seeds, [n], [k])[0, ..., 0] / n
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    vals = per.mean(axis=1).reshape(grid.ny, grid.nx)
    se = None
    if S > 1:
        se = (per.std(axis=1, ddof=1) / math.sqrt(S)).reshape(grid.ny, grid.nx)
    return GridField(grid, k, n, S, vals, se)


def submean_defect(fld: GridField) -> float:
    """Largest positive excess of a node over the mean of its 8 neighbours."""
    u = fld.values
    c = u[1:-1, 1:-1]
    ring = (u[:-2, :-2] + u[:-2, 1:-1] + u[:-2, 2:] + u[1:-1, :-2] + u[1:-1, 2:]
            + u[2:, :-2] + u[2:, 1:-1] + u[2:, 2:]) / 8.0
    return float(np.max(np.maximum(c - ring, 0.0)))


def defect_tolerance(fld: GridField, C: float = 1.0) -> float:
    """``C h^2 + 3 max stderr``."""
    se = 0.0 if fld.stderr is None else float(np.max(fld.stderr))
    return C * fld.grid.h**2 + 3.0 * se


@dataclass(frozen=True)
class RieszEstimate:
    grid: ComplexGrid
    k: int
    cell_mass: np.ndarray = field(repr=False)  # (ny-2, nx-2), interior nodes
    total: float
    negative_clipped: float  # mass discarded after local cancellation
    negative_raw: float  # negative part of the pointwise Laplacian before cancellation
    boundary_fraction: float
    ball_mass_bound: float

    @property
    def centers(self) -> np.ndarray:
        return self.grid.Z[1:-1, 1:-1]

    def mass_in(self, x_lo=-np.inf, x_hi=np.inf, y_lo=-np.inf, y_hi=np.inf) -> float:
        """Mass of a rectangle, each node carrying a uniform ``h x h`` cell."""
        h = self.grid.h
        c = self.centers

        def overlap(lo, hi, mid):
            return np.clip(np.minimum(hi, mid + h / 2) - np.maximum(lo, mid - h / 2), 0.0, h) / h

        wx = overlap(x_lo, x_hi, c.real)
        wy = overlap(y_lo, y_hi, c.imag)
        return float(np.sum(self.cell_mass * wx * wy))


def _ball_mass_bound(mass: np.ndarray, grid: ComplexGrid) -> float:
    h = grid.h
    centers = grid.Z[1:-1, 1:-1]
    weight = 1.0 + np.maximum(np.log(np.maximum(np.abs(centers), 1e-300)), 0.0)
    best = math.nan
    r = h
    while r <= 1.0 / math.e + 1e-12:
        q = int(math.floor(r / h + 1e-9))
        i = np.arange(-q, q + 1)
        disc = ((i[:, None] ** 2 + i[None, :] ** 2) * h * h <= r * r + 1e-12).astype(float)
        ball = signal.convolve(mass, disc, mode="same", method="direct")
        val = float(np.max(ball * abs(math.log(r)) / weight))
        best = val if math.isnan(best) else max(best, val)
        r *= 2.0
    return best


def _box(a: np.ndarray, r: int) -> np.ndarray:
    return ndimage.uniform_filter(a, 2 * r + 1, mode="constant") * (2 * r + 1) ** 2


def cancel_negative(mass: np.ndarray, max_radius: int = 4) -> tuple[np.ndarray, float]:
    """Offset negative cells against positive mass in growing square windows.

    Each round moves mass only between cells at most ``r`` apart and conserves
    the signed total exactly; whatever is still negative after the last round
    is clipped and returned as the second value.
    """
    m = mass.copy()
    for r in range(1, max_radius + 1):
        neg = np.maximum(-m, 0.0)
        if not neg.any():
            break
        pos = np.maximum(m, 0.0)
        supply = _box(pos, r)
        want = np.where(supply > 0, neg / np.where(supply > 0, supply, 1.0), 0.0)
        want = np.minimum(want, 1.0)  # never ask a window for more than it holds
        load = _box(want, r)
        give = np.where(load > 1.0, 1.0 / np.where(load > 0, load, 1.0), 1.0)
        m = pos - pos * give * load + (-neg + want * _box(pos * give, r))
    residual = float(-np.sum(m[m < 0]))
    return np.maximum(m, 0.0), residual


def riesz_measure(fld: GridField, warn_fraction: float = 0.01, max_radius: int = 4) -> RieszEstimate:
    """Discrete ``Delta(Gamma_k / k) / 2 pi`` per interior cell (5-point stencil).

    The pointwise Laplacian is signed (stencil truncation near singular
    support, Monte-Carlo noise); negative cells are cancelled locally against
    neighbouring positive mass and the unresolved remainder is clipped and
    reported as ``negative_clipped``.
    """
    u = fld.values
    lap_h2 = u[1:-1, 2:] + u[1:-1, :-2] + u[2:, 1:-1] + u[:-2, 1:-1] - 4.0 * u[1:-1, 1:-1]
    signed = lap_h2 / (2.0 * math.pi * fld.k)
    negative_raw = float(-np.sum(signed[signed < 0]))
    mass, neg = cancel_negative(signed, max_radius)
    total = float(np.sum(mass))
    ring = total - float(np.sum(mass[1:-1, 1:-1]))
    frac = ring / total if total > 0 else 0.0
    if frac > warn_fraction:
        warnings.warn(f"{100 * frac:.1f}% of the mass sits on the boundary ring; "
                      "the grid may not contain the support", stacklevel=2)
    return RieszEstimate(fld.grid, fld.k, mass, total, neg, negative_raw, frac,
                         _ball_mass_bound(mass, fld.grid))


NEAR_CELLS = 3


class ProximityError(ValueError):
    """Evaluation point sits inside a heavy cell."""


def _log_area_primitive(x, y):
    """Antiderivative of ``log(x^2 + y^2)`` in both variables."""
    r2 = x * x + y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(r2 > 0, x * y * (np.log(np.where(r2 > 0, r2, 1.0)) - 3.0), 0.0)
        t += np.where(x != 0, x * x * np.arctan(y / np.where(x != 0, x, 1.0)), 0.0)
        t += np.where(y != 0, y * y * np.arctan(x / np.where(y != 0, y, 1.0)), 0.0)
    return t


def cell_mean_log(d, h: float) -> np.ndarray:
    """Mean of ``log|d - w|`` over the square ``|Re w|, |Im w| <= h/2``."""
    x, y = np.real(d), np.imag(d)
    a, b = x - h / 2, x + h / 2
    c, e = y - h / 2, y + h / 2
    F = _log_area_primitive
    return 0.5 * (F(b, e) - F(a, e) - F(b, c) + F(a, c)) / (h * h)


def log_potential(measure: RieszEstimate, z) -> float | np.ndarray:
    """``sum mass * log|z - w|`` with each cell's mass spread uniformly over the cell.

    Cells farther than ``NEAR_CELLS`` spacings use the centre value; nearer
    ones the exact cell average, which stays finite at the centre itself.
    """
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    c = measure.centers.reshape(-1)
    m = measure.cell_mass.reshape(-1)
    h = measure.grid.h
    heavy = m > 0.5
    keep = m > 0
    c, m, heavy = c[keep], m[keep], heavy[keep]
    out = np.empty(zs.size)
    for i, w in enumerate(zs.reshape(-1)):
        d = w - c
        inside = (np.abs(d.real) <= h / 2) & (np.abs(d.imag) <= h / 2)
        if np.any(heavy & inside):
            raise ProximityError(f"point {w} lies in a cell carrying more than half the mass")
        near = np.abs(d) < NEAR_CELLS * h
        vals = np.empty(d.size)
        vals[~near] = np.log(np.abs(d[~near]))
        vals[near] = cell_mean_log(d[near], h)
        out[i] = np.sum(m * vals)
    out = out.reshape(zs.shape)
    return out if np.ndim(z) else float(out[0])


@dataclass(frozen=True)
class CircularMean:
    R: float
    ntheta: int
    M: np.ndarray  # (W,)
    stderr: np.ndarray  # (W,)


def circular_mean(
    model: PotentialModel,
    R: float,
    ntheta: int,
    n: int,
    samples: int = 1,
    seed: int = 0,
    threads: int = 1,
) -> CircularMean:
    """Angular average of ``gamma_j(R e^{i theta})``; every angle sees the same orbits."""
    if ntheta < 64:
        raise ValueError("ntheta must be at least 64")
    theta = 2.0 * np.pi * np.arange(ntheta) / ntheta
    ests = lyapunov_spectra(model, R * np.exp(1j * theta), n, samples, seed, threads=threads)
    # per-sample paired exponents, sorted per angle and sample: (ntheta, S, W)
    per = np.stack([-np.sort(-paired(e.raw), axis=-1) for e in ests])
    circ = per.mean(axis=0)  # (S, W)
    M = circ.mean(axis=0)
    S = circ.shape[0]
    se = circ.std(axis=0, ddof=1) / math.sqrt(S) if S > 1 else np.full(M.shape, np.nan)
    return CircularMean(float(R), ntheta, M, se)
