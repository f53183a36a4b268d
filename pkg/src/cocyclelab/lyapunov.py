"""Lyapunov spectra, large-deviation tails and the doubling monotonicity."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .drivers import ConstantModel, PotentialModel, ensemble_seeds
from .engine import evolve, wedge_log_norms

# ensemble members for tail estimates are drawn from a disjoint index range
LDP_OFFSET = 1 << 32


def paired(raw: np.ndarray) -> np.ndarray:
    """``(g_j - g_{2W+1-j}) / 2`` for ``j <= W`` along the last axis."""
    W = raw.shape[-1] // 2
    return 0.5 * (raw[..., :W] - raw[..., ::-1][..., :W])


@dataclass(frozen=True)
class LyapunovEstimate:
    z: complex
    gamma: np.ndarray  # (2W,), gamma_{2W+1-j} = -gamma_j
    stderr: np.ndarray  # (W,)
    n: int
    samples: int
    raw: np.ndarray  # (samples, 2W) raw logstretch / n, before pairing

    @property
    def W(self) -> int:
        return self.gamma.size // 2

    def per_sample(self) -> np.ndarray:
        """Paired per-sample estimates, shape ``(samples, W)``, in reported order."""
        return paired(self.raw)[:, self._order]

    @property
    def _order(self) -> np.ndarray:
        return np.argsort(-paired(self.raw).mean(axis=0), kind="stable")

    def Gamma(self, k: int) -> float:
        if not 1 <= k <= self.W:
            raise ValueError(f"k must lie in 1..{self.W}")
        return float(np.sum(self.gamma[:k]))

    def Gamma_stderr(self, k: int) -> float:
        return _stderr(self.per_sample()[:, :k].sum(axis=1))

    def Gamma_sd(self, k: int) -> float:
        """Spread of a single trajectory's ``Gamma_k`` estimate at this ``n``."""
        x = self.per_sample()[:, :k].sum(axis=1)
        return float(np.std(x, ddof=1)) if x.size > 1 else math.nan


def _stderr(x: np.ndarray, axis: int = 0):
    x = np.asarray(x)
    S = x.shape[axis]
    if S < 2:
        return np.full(np.delete(x.shape, axis), np.nan) if x.ndim > 1 else math.nan
    out = np.std(x, axis=axis, ddof=1) / math.sqrt(S)
    return out if np.ndim(out) else float(out)


def _estimate(z: complex, raw: np.ndarray, n: int) -> LyapunovEstimate:
    pj = paired(raw)
    mean = pj.mean(axis=0)
    order = np.argsort(-mean, kind="stable")
    mean = mean[order]
    se = _stderr(pj[:, order])
    return LyapunovEstimate(complex(z), np.concatenate([mean, -mean[::-1]]),
                            np.atleast_1d(se), n, raw.shape[0], raw)


def lyapunov_spectra(
    model: PotentialModel,
    zs,
    n: int,
    samples: int = 1,
    seed: int = 0,
    stride: int = 1,
    threads: int = 1,
) -> list[LyapunovEstimate]:
    """One estimate per point of ``zs``; all points see the same orbits."""
    if n < 100:
        raise ValueError("n must be at least 100")
    if samples < 1:
        raise ValueError("samples must be at least 1")
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    run = evolve(model, zs, ensemble_seeds(seed, samples), n, stride=stride, threads=threads)
    raw = run.logstretch / n
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("non-finite log-stretch")
    return [_estimate(z, raw[p], n) for p, z in enumerate(zs)]


def lyapunov_spectrum(model, z, n, samples=1, seed=0, stride=1, threads=1) -> LyapunovEstimate:
    return lyapunov_spectra(model, [z], n, samples, seed, stride, threads)[0]


# -- large deviations ----------------------------------------------------------


@dataclass(frozen=True)
class LdpCurve:
    E: float
    j: int
    epsilon: float
    n_list: tuple[int, ...]
    p_hat: np.ndarray
    rate: float
    prefactor: float
    r2: float
    censored: bool
    M: int

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.p_hat) < 0))


def fit_exponential_tail(n_list, p_hat, M: int):
    """Least squares of ``-log p`` on ``n`` over points with ``p > 0``.

    Returns ``(rate, prefactor, r2, censored)``. With no positive point the
    rule of three gives the one-sided bound ``rate >= log(M/3) / min(n)``.
    """
    n = np.asarray(n_list, float)
    p = np.asarray(p_hat, float)
    keep = p > 0
    if keep.sum() >= 2:
        fit = stats.linregress(n[keep], -np.log(p[keep]))
        return float(fit.slope), float(math.exp(-fit.intercept)), float(fit.rvalue**2), False
    if keep.sum() == 1:
        return float(-math.log(p[keep][0]) / n[keep][0]), 1.0, math.nan, True
    return math.log(M / 3.0) / float(n.min()), 1.0, math.nan, True


def ldp_tail(
    model: PotentialModel,
    E: float,
    j: int,
    epsilon: float,
    n_list: Sequence[int],
    M: int,
    gamma_ref: LyapunovEstimate,
    seed: int = 0,
    threads: int = 1,
) -> LdpCurve:
    W = model.W
    if not 1 <= j <= W:
        raise ValueError(f"j must lie in 1..{W}")
    if M < 1000:
        raise ValueError("ensemble size M must be at least 1000")
    if complex(gamma_ref.z) != complex(E):
        raise ValueError("reference estimate was computed at a different energy")
    se = gamma_ref.stderr[j - 1]
    if np.isfinite(se) and se > epsilon / 10:
        warnings.warn("reference standard error is not small compared with epsilon", stacklevel=2)
    n_list = tuple(sorted(int(x) for x in n_list))
    run = evolve(model, [E], ensemble_seeds(seed, M, offset=LDP_OFFSET), n_list[-1],
                 record=n_list, threads=threads)
    g = paired(run.snapshots[:, 0])[..., j - 1] / np.asarray(n_list, float)[:, None]
    dev = np.abs(g - gamma_ref.gamma[j - 1])
    p_hat = (dev >= epsilon).mean(axis=1)
    rate, pref, r2, cens = fit_exponential_tail(n_list, p_hat, M)
    return LdpCurve(float(E), j, float(epsilon), n_list, p_hat, rate, pref, r2, cens, M)


# -- Craig-Simon doubling --------------------------------------------------------


@dataclass(frozen=True)
class DoublingRecord:
    n: int
    ks: tuple[int, ...]
    a_n: np.ndarray
    a_2n: np.ndarray
    stderr_n: np.ndarray
    stderr_2n: np.ndarray

    def slack(self, sigmas: float = 3.0) -> np.ndarray:
        """``a_n + sigmas (se_n + se_2n) - a_2n``; non-negative where the bound holds."""
        se = np.nan_to_num(self.stderr_n) + np.nan_to_num(self.stderr_2n)
        return self.a_n + sigmas * se - self.a_2n

    def holds(self, sigmas: float = 3.0, atol: float = 1e-12) -> bool:
        return bool(np.all(self.slack(sigmas) >= -atol))


def doubling_check(
    model: PotentialModel,
    z: complex,
    n: int,
    samples: int = 100,
    seed: int = 0,
    ks: Sequence[int] | None = None,
) -> DoublingRecord:
    """Empirical ``(1/m) E log ||Phi_m^(wedge k)||`` at ``m = n`` and ``2n``."""
    if samples < 100 and not isinstance(model, ConstantModel):
        raise ValueError("samples must be at least 100")
    ks = tuple(range(1, model.W + 1)) if ks is None else tuple(ks)
    S = 1 if isinstance(model, ConstantModel) else samples
    w = wedge_log_norms(model, [z], ensemble_seeds(seed, S), [n, 2 * n], ks)[:, 0]
    a = w / np.array([n, 2 * n], float)[:, None, None]
    se = [np.zeros(len(ks)) if S == 1 else _stderr(a[i]) for i in range(2)]
    return DoublingRecord(n, ks, a[0].mean(axis=0), a[1].mean(axis=0), np.asarray(se[0]), np.asarray(se[1]))
