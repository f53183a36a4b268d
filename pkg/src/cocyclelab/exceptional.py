"""Exceptional-energy statistics along a single orbit.

Schedule minima of ``(1/n) log s_W``, weighted scans ``p_n s_W``, interval
covers of energies with slow wedge growth and their gauge content,
subsequence deviations and growth restricted to a Lagrangian frame.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats

from .drivers import OrbitSeed, PotentialModel, member_seed, orbit_potentials, validate_model
from .engine import evolve, wedge_log_norms
from .lyapunov import LyapunovEstimate
from .symplectic import LagrangianFrame, ValidationError, compound_matrix

# values below the threshold by less than this are round-off, not dips
DIP_ATOL = 1e-12
# cap on energy samples per cover interval
MAX_COVER_SAMPLES = 1_000_000
# simultaneous energies kept in memory by the step-by-step scans
_SCAN_BUFFER = 1 << 22


def _orbit(seed) -> OrbitSeed:
    return seed if isinstance(seed, OrbitSeed) else OrbitSeed(int(seed))


def _gamma_vector(gamma_ref, W: int) -> np.ndarray:
    """Non-negative exponents ``gamma_1..gamma_W`` from an estimate or a plain array."""
    if isinstance(gamma_ref, LyapunovEstimate):
        return np.asarray(gamma_ref.gamma[:W], float)
    g = np.atleast_1d(np.asarray(gamma_ref, float))
    if g.size == 2 * W:
        g = g[:W]
    if g.size != W:
        raise ValueError(f"reference needs {W} exponents")
    return g


# -- schedules ----------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Levels ``floor(exp(tau i))`` for ``i_min <= i <= i_max``, deduplicated.

    The default start ``i_min = 10`` drops the first levels, whose one-orbit
    transients sit well below the exponent even off the spectrum.
    """

    tau: float = 0.5
    i_max: int = 20
    i_min: int = 10

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 1 <= self.i_min <= self.i_max:
            raise ValueError("need 1 <= i_min <= i_max")

    @property
    def levels(self) -> tuple[int, ...]:
        raw = (math.floor(math.exp(self.tau * i)) for i in range(self.i_min, self.i_max + 1))
        return tuple(sorted(set(r for r in raw if r >= 1)))


# -- scans ----------------------------------------------------------------------


@dataclass(frozen=True)
class ScanReport:
    kind: str
    energies: np.ndarray
    statistic: np.ndarray
    reference: np.ndarray
    eps: np.ndarray
    dips: list[tuple[float, float]]  # (E, depth below reference - eps)
    log_statistic: np.ndarray | None = None
    levels: tuple[int, ...] = ()

    def recompute_dips(self) -> list[tuple[float, float]]:
        return _dips(self.energies, self.statistic, self.reference, self.eps)


def _dips(E, stat, ref, eps):
    gap = (ref - eps) - stat
    hit = gap > DIP_ATOL
    return [(float(e), float(d)) for e, d in zip(E[hit], gap[hit])]


def _energy_batches(count: int, per_energy: int):
    size = max(1, _SCAN_BUFFER // max(per_energy, 1))
    for a in range(0, count, size):
        yield slice(a, min(count, a + size))


def _log_sW(model, seed, E, record, threads):
    """QR estimate of ``log s_W(Phi_n(E))`` at every recorded step, shape ``(len(record), len(E))``."""
    W = model.W
    out = np.empty((len(record), E.size))
    for sl in _energy_batches(E.size, len(record) * W):
        run = evolve(model, E[sl], [_orbit(seed)], max(record), m=W, record=record, threads=threads)
        out[:, sl] = run.snapshots[:, :, 0, W - 1]
    return out


def _exact_log_sW(model, seed, E, record, threads):
    """``log s_W(Phi_n(E))`` from exterior-power norms, shape ``(len(record), len(E))``."""
    W = model.W
    ks = [W] if W == 1 else [W - 1, W]

    def one(sl):
        w = wedge_log_norms(model, E[sl], [_orbit(seed)], record, ks)[:, :, 0, :]
        return w[..., -1] if W == 1 else w[..., 1] - w[..., 0]

    chunks = np.array_split(np.arange(E.size), max(1, min(threads, E.size)))
    sls = [slice(c[0], c[-1] + 1) for c in chunks if c.size]
    if len(sls) == 1:
        return one(sls[0])
    with ThreadPoolExecutor(len(sls)) as ex:
        return np.concatenate(list(ex.map(one, sls)), axis=1)


def liminf_scan(
    model: PotentialModel,
    seed,
    E_grid,
    schedule: Schedule,
    gamma_ref,
    eps=None,
    threads: int = 1,
) -> ScanReport:
    """Minimum over the schedule of ``(1/n_i) log s_W(Phi_{n_i}(E))`` for one orbit.

    ``gamma_ref`` is ``gamma_W(E)`` per energy (scalar broadcast allowed).
    Energies below ``gamma_ref - eps`` are reported as dips; ``eps``
    defaults to ``0.1 gamma_ref``.
    """
    E = np.atleast_1d(np.asarray(E_grid, float))
    ref = np.broadcast_to(np.asarray(gamma_ref, float), E.shape).copy()
    eps = 0.1 * ref if eps is None else np.broadcast_to(np.asarray(eps, float), E.shape).copy()
    levels = schedule.levels
    logs = _log_sW(model, seed, E, levels, threads)
    stat = np.min(logs / np.asarray(levels, float)[:, None], axis=0)
    return ScanReport("liminf", E, stat, ref, eps, _dips(E, stat, ref, eps), levels=levels)


@dataclass(frozen=True)
class Weight:
    """Weight sequence ``p_n``: ``scale n^{-s}`` (``kind="power"``) or ``scale e^{-eps n}``."""

    kind: str
    param: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError("weight scale must be positive (p_n = 0 is not admissible)")
        if self.kind == "power":
            if not self.param > 0.5:
                raise ValidationError("power weights need exponent s > 1/2 (square summable)")
        elif self.kind == "exp":
            if not self.param > 0:
                raise ValidationError("exponential weights need a positive rate")
        else:
            raise ValidationError(f"unknown weight kind {self.kind!r}")

    def log_p(self, n) -> np.ndarray:
        n = np.asarray(n, float)
        if self.kind == "power":
            return math.log(self.scale) - self.param * np.log(n)
        return math.log(self.scale) - self.param * n


def pn_scan(
    model: PotentialModel,
    seed,
    E_grid,
    weight: Weight,
    n_max: int,
    threshold: float | None = None,
    threads: int = 1,
) -> ScanReport:
    """``min_{n <= n_max} p_n s_W(Phi_n(E))`` along one orbit, accumulated in log form.

    ``s_W`` is exact at every ``n`` (ratio of exterior-power norms). With ``threshold`` set, energies whose statistic falls below it are dips.
    """
    if weight.kind == "power" and not validate_model(model).bounded:
        raise ValidationError("polynomial weights require a bounded potential")
    if n_max < 1:
        raise ValueError("n_max must be positive")
    E = np.atleast_1d(np.asarray(E_grid, float))
    ns = tuple(range(1, n_max + 1))
    logs = _exact_log_sW(model, seed, E, ns, threads)
    log_stat = np.min(logs + weight.log_p(ns)[:, None], axis=0)
    stat = np.exp(log_stat)
    ref = np.full(E.shape, math.nan)
    if threshold is None:
        eps = np.full(E.shape, math.nan)
        dips = []
    else:
        # dip when stat < threshold, written as reference - eps with reference = threshold
        ref = np.full(E.shape, float(threshold))
        eps = np.zeros(E.shape)
        dips = _dips(E, stat, ref, eps)
    return ScanReport("pn", E, stat, ref, eps, dips, log_statistic=log_stat, levels=(n_max,))


# -- covers -------------------------------------------------------------------


@dataclass(frozen=True)
class Cover:
    intervals: tuple[tuple[float, float], ...]
    level: int
    threshold: float
    interval: tuple[float, float] = (0.0, 0.0)
    eps: float = math.nan
    step: float = math.nan  # sampling resolution before endpoint refinement
    samples: int = 0

    def __post_init__(self):
        norm = normalize_intervals(self.intervals)
        object.__setattr__(self, "intervals", norm)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.intervals])

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum()) if self.intervals else 0.0

    @property
    def max_length(self) -> float:
        return float(self.lengths.max()) if self.intervals else 0.0


def normalize_intervals(intervals) -> tuple[tuple[float, float], ...]:
    """Sort and merge overlapping intervals; reject empty or reversed ones."""
    iv = sorted((float(a), float(b)) for a, b in intervals)
    for a, b in iv:
        if not b > a:
            raise ValueError(f"interval [{a}, {b}] has no positive length")
    out: list[list[float]] = []
    for a, b in iv:
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return tuple((a, b) for a, b in out)


def wedge_entry_rate(model: PotentialModel, seed, E, n: int) -> np.ndarray:
    """Cover statistic at each energy.

    ``(1/n) log`` of the largest entry of the ``(W-1)``-st exterior power of
    ``Phi_n(E)``; for ``W = 1`` the ``(1/n) log s_1`` of the product instead.
    """
    E = np.atleast_1d(np.asarray(E, float))
    W = model.W
    pots = orbit_potentials(model, _orbit(seed), 1, n)
    I = np.eye(W)
    Phi = np.broadcast_to(np.eye(2 * W), (E.size, 2 * W, 2 * W)).copy()
    logscale = np.zeros(E.size)
    T = np.zeros((E.size, 2 * W, 2 * W))
    T[:, :W, W:] = -I
    T[:, W:, :W] = I
    for t in range(n):
        T[:, :W, :W] = E[:, None, None] * I - pots[t]
        Phi = T @ Phi
        mx = np.max(np.abs(Phi), axis=(-2, -1))
        Phi /= mx[:, None, None]
        logscale += np.log(mx)
    if W == 1:
        s1 = np.linalg.norm(Phi, ord=2, axis=(-2, -1))
        return (np.log(s1) + logscale) / n
    C = compound_matrix(Phi, W - 1)
    top = np.max(np.abs(C), axis=(-2, -1))
    return (np.log(top) + (W - 1) * logscale) / n


def cover_threshold(gamma_ref, W: int, eps: float) -> float:
    g = _gamma_vector(gamma_ref, W)
    base = float(g[0]) if W == 1 else float(np.sum(g[: W - 1]))
    return base - eps / 4.0


def build_cover(
    model: PotentialModel,
    seed,
    interval: tuple[float, float],
    eps: float,
    level: int,
    gamma_ref,
    rel_tol: float = 1e-3,
) -> Cover:
    """Maximal sub-intervals where the wedge-entry rate stays below the threshold.

    Energies are sampled at step ``max(1e-4, exp(-2 gamma_1 n)/10)`` (at most
    ``MAX_COVER_SAMPLES`` points) and each endpoint is bisected until its
    bracket is below ``rel_tol`` times the sampling step.
    """
    if level < 10:
        raise ValueError("cover level must be at least 10")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise ValueError("interval must have positive length")
    W = model.W
    g = _gamma_vector(gamma_ref, W)
    thr = cover_threshold(g, W, eps)
    step = max(1e-4, math.exp(-2.0 * float(g[0]) * level) / 10.0)
    count = min(MAX_COVER_SAMPLES, int(math.ceil((b - a) / step)) + 1)
    E = np.linspace(a, b, count)
    step = (b - a) / (count - 1)
    inside = wedge_entry_rate(model, seed, E, level) <= thr
    if not inside.any():
        return Cover((), level, thr, (a, b), eps, step, count)
    edges = np.diff(inside.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1))
    if inside[0]:
        starts.insert(0, 0)
    if inside[-1]:
        ends.append(count - 1)
    # brackets (outside, inside) to refine; interval ends stay put
    lo_out = np.array([E[s - 1] for s in starts if s > 0])
    lo_in = np.array([E[s] for s in starts if s > 0])
    hi_in = np.array([E[e] for e in ends if e < count - 1])
    hi_out = np.array([E[e + 1] for e in ends if e < count - 1])
    out_pts = np.concatenate([lo_out, hi_out])
    in_pts = np.concatenate([lo_in, hi_in])
    if out_pts.size:
        while np.max(np.abs(in_pts - out_pts)) > rel_tol * step:
            mid = 0.5 * (in_pts + out_pts)
            ok = wedge_entry_rate(model, seed, mid, level) <= thr
            in_pts = np.where(ok, mid, in_pts)
            out_pts = np.where(ok, out_pts, mid)
    nlo = lo_in.size
    left = iter(in_pts[:nlo])
    right = iter(in_pts[nlo:])
    intervals = []
    for s, e in zip(starts, ends):
        lo = E[0] if s == 0 else next(left)
        hi = E[-1] if e == count - 1 else next(right)
        if hi <= lo:  # isolated sample: widen to the refined bracket midpoints
            lo, hi = lo - 0.5 * rel_tol * step, hi + 0.5 * rel_tol * step
        intervals.append((max(a, lo), min(b, hi)))
    return Cover(tuple(intervals), level, thr, (a, b), eps, step, count)


def decay_rate(levels, values) -> tuple[float, float]:
    """Exponential decay rate and R^2 of ``values`` against ``levels`` (positive values only)."""
    n = np.asarray(levels, float)
    v = np.asarray(values, float)
    keep = v > 0
    if keep.sum() < 2:
        return math.nan, math.nan
    fit = stats.linregress(n[keep], -np.log(v[keep]))
    return float(fit.slope), float(fit.rvalue**2)


@dataclass(frozen=True)
class CoverShrinkage:
    levels: tuple[int, ...]
    max_length: np.ndarray  # (orbits, levels)
    content: np.ndarray  # (orbits, levels), under ``gauge``
    gauge: str

    @property
    def mean_max_length(self) -> np.ndarray:
        return self.max_length.mean(axis=0)

    @property
    def mean_content(self) -> np.ndarray:
        return self.content.mean(axis=0)

    @property
    def rate(self) -> tuple[float, float]:
        """Fitted exponential decay rate and R^2 of the mean max length."""
        return decay_rate(self.levels, self.mean_max_length)


def cover_shrinkage(
    model: PotentialModel,
    seed: int,
    interval: tuple[float, float],
    eps: float,
    levels: Sequence[int],
    gamma_ref,
    orbits: int = 32,
    gauge: Gauge | None = None,
) -> CoverShrinkage:
    """Covers at each level for ``orbits`` independent orbits of ``seed``'s ensemble.

    One orbit gives an erratic sequence of covers; the ensemble means of the
    longest interval and of the gauge content are the quantities that shrink.
    """
    gauge = power_gauge(0.5) if gauge is None else gauge
    levels = tuple(int(n) for n in levels)
    mx = np.empty((orbits, len(levels)))
    ct = np.empty((orbits, len(levels)))
    for i in range(orbits):
        sd = member_seed(seed, i)
        for j, n in enumerate(levels):
            c = build_cover(model, sd, interval, eps, n, gamma_ref)
            mx[i, j] = c.max_length
            ct[i, j] = gauge_content(c, gauge)
    return CoverShrinkage(levels, mx, ct, gauge.name)


# -- gauges -------------------------------------------------------------------


@dataclass(frozen=True)
class Gauge:
    name: str
    rho: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    integrable: bool  # whether int_0^1 rho(t)/t dt converges

    def __call__(self, t):
        return self.rho(np.asarray(t, float))


_TINY = np.finfo(float).tiny


def power_gauge(s: float) -> Gauge:
    if not s > 0:
        raise ValueError("power gauge needs s > 0")
    return Gauge(f"t^{s:g}", lambda t: t**s, True)


def inverse_log_gauge() -> Gauge:
    return Gauge("1/log(e/t)", lambda t: 1.0 / np.log(math.e / np.maximum(t, _TINY)), False)


def log_power_gauge(delta: float) -> Gauge:
    if not delta > 0:
        raise ValueError("log-power gauge needs delta > 0")
    p = 1.0 + delta
    return Gauge(f"log^-{p:g}(e/t)", lambda t: np.log(math.e / np.maximum(t, _TINY)) ** (-p), True)


def gauge_catalog() -> dict[str, Gauge]:
    gs = [power_gauge(0.5), power_gauge(1.0), inverse_log_gauge(), log_power_gauge(1.0)]
    return {g.name: g for g in gs}


def gauge_integral(gauge: Gauge, t0: float) -> float:
    """``int_{t0}^1 rho(t)/t dt`` via the substitution ``t = e^{-u}``."""
    U = -math.log(t0)
    val, _ = integrate.quad(lambda u: float(gauge(math.exp(-u))), 0.0, U, limit=500)
    return float(val)


def gauge_content(cover: Cover, gauge: Gauge) -> float:
    if not cover.intervals:
        return 0.0
    t = np.minimum(cover.lengths, 1.0)
    return float(np.sum(gauge(t)))


# -- subsequence statistic ------------------------------------------------------


@dataclass(frozen=True)
class SubseqRecord:
    E: float
    ns: np.ndarray
    values: np.ndarray
    min_value: float
    argmin: int

    def window_minima(self, starts, window: Callable[[int], int] = lambda n: n * n) -> np.ndarray:
        """``min_{n <= m <= N_n} value(m)`` for each start ``n`` (default ``N_n = n^2``)."""
        out = []
        for n in starts:
            lo, hi = int(n), min(int(window(int(n))), int(self.ns[-1]))
            sel = (self.ns >= lo) & (self.ns <= hi)
            out.append(float(self.values[sel].min()) if sel.any() else math.nan)
        return np.array(out)


def subseq_statistic(
    model: PotentialModel,
    seed,
    E: float,
    N_max: int,
    gamma_ref,
    n_min: int = 1,
) -> SubseqRecord:
    """``max_j |(1/n) logstretch_j - gamma_j(E)|`` for every ``n <= N_max`` on one orbit."""
    W = model.W
    g = _gamma_vector(gamma_ref, W)
    ns = tuple(range(max(1, n_min), N_max + 1))
    run = evolve(model, [E], [_orbit(seed)], N_max, m=W, record=ns)
    rates = run.snapshots[:, 0, 0, :] / np.asarray(ns, float)[:, None]
    vals = np.max(np.abs(rates - g[None, :]), axis=1)
    i = int(np.argmin(vals))
    return SubseqRecord(float(E), np.asarray(ns), vals, float(vals[i]), int(ns[i]))


# -- restricted growth -----------------------------------------------------------


@dataclass(frozen=True)
class RestrictedGrowth:
    z: complex
    n: int
    volume_rate: float  # (1/n) sum_j log s_j(Phi_n pi_F^*)
    min_column_rate: float
    unrestricted: float | None  # (1/n) sum_{j<=W} log s_j(Phi_n)


def restricted_growth(
    model: PotentialModel,
    seed,
    z: complex,
    F: LagrangianFrame,
    n: int,
    compare: bool = True,
) -> RestrictedGrowth:
    """Growth of ``Phi_n`` on the Lagrangian frame ``F``.

    With ``compare=True`` the exact unrestricted sum of the top ``W``
    log-singular values is computed on the same orbit.
    """
    if not isinstance(F, LagrangianFrame):
        F = LagrangianFrame(np.asarray(F))
    F.validate()
    if F.W != model.W:
        raise ValueError("frame width does not match the model")
    run = evolve(model, [z], [_orbit(seed)], n, frame=F.basis)
    logs = run.logstretch[0, 0]
    unres = None
    if compare:
        unres = float(wedge_log_norms(model, [z], [_orbit(seed)], [n], [model.W])[0, 0, 0, 0] / n)
    return RestrictedGrowth(complex(z), n, float(logs.sum() / n), float(logs.min() / n), unres)
