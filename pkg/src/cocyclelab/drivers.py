"""Ergodic drivers: deterministic potential sequences ``V_n = F(T^n omega)``.

Random variants use a counter-based generator (Philox) keyed by the orbit
seed, with the site index block encoded in the counter, so any window
``V_{n0} .. V_{n0+count-1}`` is reproducible without replaying the prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence, Union

import numpy as np
from scipy import integrate

from .symplectic import ValidationError, check_symmetric

BLOCK = 512

IID_DISTRIBUTIONS = ("bernoulli", "uniform", "cauchy", "choice")


@dataclass(frozen=True)
class OrbitSeed:
    """Root of one orbit: a 64-bit seed, plus an explicit phase for shifts."""

    seed: int
    phase: tuple[float, ...] | None = None


def member_seed(seed: int, index: int) -> OrbitSeed:
    """Seed of the ``index``-th ensemble member derived from a root seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return OrbitSeed(int(ss.generate_state(1, np.uint64)[0]))


def ensemble_seeds(seed: int, count: int, offset: int = 0) -> list[OrbitSeed]:
    return [member_seed(seed, offset + i) for i in range(count)]


def _philox_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed) & (2**64 - 1)).generate_state(2, np.uint64)


def _uniforms(seed: int, n0: int, count: int, per_site: int) -> np.ndarray:
    """Uniform draws for sites ``n0 .. n0+count-1``, shape ``(count, per_site)``."""
    key = _philox_key(seed)
    first, last = n0 // BLOCK, (n0 + count - 1) // BLOCK
    chunks = []
    for b in range(first, last + 1):
        bg = np.random.Philox(key=key, counter=[0, b, 0, 0])
        chunks.append(np.random.Generator(bg).random((BLOCK, per_site)))
    u = np.concatenate(chunks)
    start = n0 - first * BLOCK
    return u[start:start + count]


@dataclass(frozen=True, eq=False)
class ConstantModel:
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", check_symmetric(self.V))

    @property
    def W(self) -> int:
        return self.V.shape[0]


@dataclass(frozen=True, eq=False)
class IIDModel:
    """Independent potentials.

    ``structure="scalar"`` draws ``x I``; ``"diagonal"`` draws ``diag(x_1..x_W)``.
    ``base`` (e.g. transverse hopping of a strip) is added to every draw.
    ``distribution="choice"`` samples from the finite ``support`` with ``weights``.
    """

    W: int
    distribution: str
    scale: float = 1.0
    structure: str = "diagonal"
    base: np.ndarray | None = None
    support: tuple | None = None
    weights: tuple | None = None
    irreducible: bool | None = None  # user-asserted; not checkable in general

    def __post_init__(self):
        if self.distribution not in IID_DISTRIBUTIONS:
            raise ValidationError(f"unknown distribution {self.distribution!r}")
        if self.structure not in ("scalar", "diagonal"):
            raise ValidationError(f"unknown structure {self.structure!r}")
        if self.base is not None:
            base = check_symmetric(self.base)
            if base.shape != (self.W, self.W):
                raise ValidationError("base block has the wrong shape")
            object.__setattr__(self, "base", base)
        if self.distribution == "choice":
            if not self.support:
                raise ValidationError("choice distribution needs a non-empty support")
            supp = tuple(check_symmetric(v) for v in self.support)
            if any(v.shape != (self.W, self.W) for v in supp):
                raise ValidationError("support matrices have the wrong shape")
            w = np.ones(len(supp)) if self.weights is None else np.asarray(self.weights, float)
            if w.shape != (len(supp),) or np.any(w < 0) or w.sum() <= 0:
                raise ValidationError("invalid support weights")
            object.__setattr__(self, "support", supp)
            object.__setattr__(self, "weights", tuple(w / w.sum()))
        elif not self.scale > 0:
            raise ValidationError("scale must be positive")

    @property
    def per_site(self) -> int:
        if self.distribution == "choice" or self.structure == "scalar":
            return 1
        return self.W


@dataclass(frozen=True, eq=False)
class TrigTerm:
    """``A cos(2 pi k.theta) + B sin(2 pi k.theta)``."""

    freq: tuple[int, ...]
    cos: np.ndarray
    sin: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class QuasiPeriodicModel:
    """Shift ``theta -> theta + alpha`` on the torus with a trig-polynomial ``F``."""

    alpha: tuple[float, ...]
    const: np.ndarray
    terms: tuple[TrigTerm, ...] = field(default_factory=tuple)

    def __post_init__(self):
        const = check_symmetric(self.const)
        object.__setattr__(self, "const", const)
        object.__setattr__(self, "alpha", tuple(float(a) % 1.0 for a in self.alpha))
        W, d = const.shape[0], len(self.alpha)
        terms = []
        for t in self.terms:
            if len(t.freq) != d:
                raise ValidationError("trig term frequency has the wrong dimension")
            A = check_symmetric(t.cos)
            B = np.zeros_like(A) if t.sin is None else check_symmetric(t.sin)
            if A.shape != (W, W) or B.shape != (W, W):
                raise ValidationError("trig term coefficient has the wrong shape")
            terms.append(TrigTerm(tuple(int(k) for k in t.freq), A, B))
        object.__setattr__(self, "terms", tuple(terms))

    @property
    def W(self) -> int:
        return self.const.shape[0]

    @property
    def dim(self) -> int:
        return len(self.alpha)

    def evaluate(self, theta) -> np.ndarray:
        """``F(theta)`` for ``theta`` of shape ``(..., d)``."""
        theta = np.asarray(theta, float)
        out = np.broadcast_to(self.const, theta.shape[:-1] + self.const.shape).copy()
        for t in self.terms:
            arg = 2 * np.pi * (theta @ np.asarray(t.freq, float))
            out += np.cos(arg)[..., None, None] * t.cos + np.sin(arg)[..., None, None] * t.sin
        return out

    def phase(self, seed: OrbitSeed) -> np.ndarray:
        if seed.phase is not None:
            ph = np.asarray(seed.phase, float)
            if ph.shape != (self.dim,):
                raise ValidationError("phase has the wrong dimension")
            return ph % 1.0
        return _uniforms(seed.seed, 0, 1, self.dim)[0]

    def angles(self, seed: OrbitSeed, n0: int, count: int) -> np.ndarray:
        n = np.arange(n0, n0 + count, dtype=float)[:, None]
        return (self.phase(seed) + n * np.asarray(self.alpha)) % 1.0


PotentialModel = Union[ConstantModel, IIDModel, QuasiPeriodicModel]


def orbit_potentials(model: PotentialModel, seed: OrbitSeed | int, n0: int, count: int) -> np.ndarray:
    """``V_{n0} .. V_{n0+count-1}`` as an array of shape ``(count, W, W)``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if n0 < 0:
        raise ValueError("n0 must be non-negative")
    if isinstance(seed, (int, np.integer)):
        seed = OrbitSeed(int(seed))
    if isinstance(model, ConstantModel):
        return np.broadcast_to(model.V, (count,) + model.V.shape).copy()
    if isinstance(model, QuasiPeriodicModel):
        return model.evaluate(model.angles(seed, n0, count))
    if isinstance(model, IIDModel):
        return _iid_potentials(model, seed.seed, n0, count)
    raise ValidationError(f"unknown potential model variant {type(model).__name__}")


def _iid_potentials(model: IIDModel, seed: int, n0: int, count: int) -> np.ndarray:
    W = model.W
    u = _uniforms(seed, n0, count, model.per_site)
    if model.distribution == "choice":
        idx = np.searchsorted(np.cumsum(model.weights), u[:, 0], side="right")
        idx = np.minimum(idx, len(model.support) - 1)
        out = np.stack(model.support)[idx]
    else:
        if model.distribution == "bernoulli":
            x = np.where(u < 0.5, model.scale, -model.scale)
        elif model.distribution == "uniform":
            x = model.scale * (2.0 * u - 1.0)
        else:  # cauchy, inverse CDF
            x = model.scale * np.tan(np.pi * (u - 0.5))
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite potential draw")
        out = np.zeros((count, W, W))
        diag = np.broadcast_to(x, (count, W))
        out[:, np.arange(W), np.arange(W)] = diag
    if model.base is not None:
        out = out + model.base
    return out


# -- diagnostics -------------------------------------------------------------


@dataclass(frozen=True)
class ModelDiagnostics:
    bounded: bool
    norm_bound: float | None
    log_moment_finite: bool
    log_moment: float | None  # E log_+ ||F||, when available in closed form / quadrature
    eta: float | None  # a moment exponent with E||V||^eta finite
    eta_sup: float | None  # supremum of such exponents (exclusive when finite)
    rank_one_pair: bool | None
    irreducible: bool | None
    continuous: bool | None


def _abs_cdf(model: IIDModel):
    s = model.scale
    if model.distribution == "uniform":
        return lambda t: min(t / s, 1.0)
    if model.distribution == "cauchy":
        return lambda t: 2.0 / np.pi * math.atan(t / s)
    raise ValueError(model.distribution)


def _iid_log_moment(model: IIDModel) -> float | None:
    if model.distribution == "choice":
        norms = [np.linalg.norm(v, 2) for v in model.support]
        return float(sum(w * max(math.log(nv), 0.0) if nv > 0 else 0.0
                         for w, nv in zip(model.weights, norms)))
    if model.base is not None and np.any(model.base):
        return None
    if model.distribution == "bernoulli":
        return max(math.log(model.scale), 0.0)
    # ||V|| = max_i |x_i| (diagonal) or |x| (scalar): E log_+ = int_0^inf P(||V|| > e^t) dt
    cdf = _abs_cdf(model)
    copies = model.W if model.structure == "diagonal" else 1
    # int_0^inf P(||V|| > e^t) dt = int_1^inf P(||V|| > s) ds / s
    val, _ = integrate.quad(lambda s: (1.0 - cdf(s) ** copies) / s, 1.0, np.inf, limit=200)
    return float(val)


def _rank_one_pair(model: IIDModel) -> bool:
    if model.distribution == "choice":
        return any(np.linalg.matrix_rank(a - b) == 1 for a, b in combinations(model.support, 2))
    # continuous or two-valued entries: a pair differing in one diagonal slot exists
    return model.structure == "diagonal" or model.W == 1


def validate_model(model: PotentialModel) -> ModelDiagnostics:
    if isinstance(model, ConstantModel):
        nb = float(np.linalg.norm(model.V, 2))
        return ModelDiagnostics(True, nb, True, max(math.log(nb), 0.0) if nb > 0 else 0.0,
                                math.inf, math.inf, False, None, True)
    if isinstance(model, QuasiPeriodicModel):
        nb = float(np.linalg.norm(model.const, 2) + sum(
            np.linalg.norm(t.cos, 2) + np.linalg.norm(t.sin, 2) for t in model.terms))
        return ModelDiagnostics(True, nb, True, None, math.inf, math.inf, None, None, True)
    if isinstance(model, IIDModel):
        base_norm = 0.0 if model.base is None else float(np.linalg.norm(model.base, 2))
        if model.distribution == "cauchy":
            bounded, nb, eta, eta_sup = False, None, 0.5, 1.0
        else:
            bounded, eta, eta_sup = True, math.inf, math.inf
            if model.distribution == "choice":
                nb = float(max(np.linalg.norm(v, 2) for v in model.support))
            else:
                nb = model.scale + base_norm
        return ModelDiagnostics(bounded, nb, True, _iid_log_moment(model), eta, eta_sup,
                                _rank_one_pair(model), model.irreducible, None)
    raise ValidationError(f"unknown potential model variant {type(model).__name__}")


# -- catalogue of standard models ---------------------------------------------


def path_adjacency(W: int) -> np.ndarray:
    """Transverse hopping of a width-``W`` strip (free boundary)."""
    A = np.zeros((W, W))
    i = np.arange(W - 1)
    A[i, i + 1] = A[i + 1, i] = 1.0
    return A


def free_model(W: int = 1) -> ConstantModel:
    return ConstantModel(np.zeros((W, W)))


def anderson_bernoulli(W: int = 1, v: float = 1.0, hopping: bool = True) -> IIDModel:
    """On-site +-v disorder; for ``W > 1`` the strip carries transverse hopping."""
    base = path_adjacency(W) if (hopping and W > 1) else None
    return IIDModel(W, "bernoulli", v, "diagonal", base=base, irreducible=True)


def lloyd_model(scale: float = 1.0, W: int = 1) -> IIDModel:
    return IIDModel(W, "cauchy", scale, "diagonal", irreducible=True)


GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def almost_mathieu(coupling: float, alpha: float = GOLDEN) -> QuasiPeriodicModel:
    """``V_n = 2 lambda cos(2 pi (theta + n alpha))``."""
    return QuasiPeriodicModel((alpha,), np.zeros((1, 1)),
                              (TrigTerm((1,), np.array([[2.0 * coupling]])),))


def sequence_from_list(values: Sequence) -> np.ndarray:
    return np.stack([check_symmetric(v) for v in values])
