"""Small-matrix machinery for Schrödinger cocycles.

Transfer matrices have the block form ``[[z I - V, -I], [I, 0]]`` and are
symplectic for the *bilinear* form ``J = [[0, -I], [I, 0]]`` (transpose, not
conjugate transpose), so the same identities hold for complex ``z``.

Frames are stored with optional leading batch axes: ``frame[..., 2W, m]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy.linalg import subspace_angles

SYM_TOL = 1e-12
LAGRANGIAN_TOL = 1e-8


class ValidationError(ValueError):
    """Raised when an input violates a structural precondition."""


class DegenerateFrameError(ArithmeticError):
    """Raised when re-orthogonalization meets a (numerically) singular frame."""


def symplectic_form(W: int) -> np.ndarray:
    """The standard form with -I in the upper-right block and +I lower-left."""
    J = np.zeros((2 * W, 2 * W))
    J[:W, W:] = -np.eye(W)
    J[W:, :W] = np.eye(W)
    return J


def symplectic_defect(M: np.ndarray) -> float:
    """max-abs entry of ``M^T J M - J``."""
    M = np.asarray(M)
    W = M.shape[-1] // 2
    J = symplectic_form(W)
    return float(np.max(np.abs(np.swapaxes(M, -1, -2) @ J @ M - J)))


def check_symmetric(V, tol: float = SYM_TOL) -> np.ndarray:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ValidationError(f"potential block must be square, got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValidationError("potential block has non-finite entries")
    if np.max(np.abs(V - V.T), initial=0.0) > tol:
        raise ValidationError("potential block is not symmetric")
    return V


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray
    z: complex
    W: int


def build_transfer(z: complex, V) -> TransferMatrix:
    V = check_symmetric(V)
    W = V.shape[0]
    I = np.eye(W)
    T = np.zeros((2 * W, 2 * W), dtype=complex)
    T[:W, :W] = z * I - V
    T[:W, W:] = -I
    T[W:, :W] = I
    return TransferMatrix(T, complex(z), W)


def transfer_product(z: complex, potentials) -> np.ndarray:
    """Dense ``T_n ... T_1`` for a short potential sequence (no rescaling)."""
    potentials = list(potentials)
    W = np.atleast_2d(potentials[0]).shape[0]
    Phi = np.eye(2 * W, dtype=complex)
    for V in potentials:
        Phi = build_transfer(z, V).entries @ Phi
    return Phi


def wedge_logsum(A, k: int) -> float:
    """``sum_{j<=k} log s_j(A)``, the log-norm of the k-th exterior power.

    Returns ``-inf`` when ``k`` exceeds the numerical rank of ``A``.
    """
    A = np.asarray(A)
    d = min(A.shape[-2:])
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in 1..{d}, got {k}")
    s = np.linalg.svd(A, compute_uv=False)
    if not np.all(np.isfinite(s)):
        raise ValueError("matrix has non-finite entries")
    tol = s[0] * max(A.shape) * np.finfo(float).eps
    if s[0] == 0.0 or s[k - 1] <= tol:
        return -np.inf
    return float(np.sum(np.log(s[:k])))


def compound_matrix(A, k: int) -> np.ndarray:
    """k-th compound (matrix of k x k minors, rows/cols in lexicographic order).

    Accepts leading batch axes.
    """
    A = np.asarray(A)
    nr, nc = A.shape[-2:]
    rows = list(combinations(range(nr), k))
    cols = list(combinations(range(nc), k))
    if k == 1:
        return A.copy()
    r = np.array(rows)
    c = np.array(cols)
    # minors[..., a, b, :, :] = A[..., rows[a], :][..., :, cols[b]]
    sub = A[..., r[:, None, :, None], c[None, :, None, :]]
    return np.linalg.det(sub)


# -- QR-reorthogonalized products -------------------------------------------


def standard_frame(W: int, m: int | None = None) -> np.ndarray:
    """First ``m`` columns of the symplectically ordered identity.

    Column order is ``e_1..e_W, e_2W, ..., e_{W+1}``: the lower half is the
    reversed ``J``-partner of the upper half, which makes the QR stretches of
    a full frame pair exactly (``g_j + g_{2W+1-j} = 0``).
    """
    m = 2 * W if m is None else m
    if not 1 <= m <= 2 * W:
        raise ValueError(f"frame width must lie in 1..{2 * W}")
    order = list(range(W)) + list(range(2 * W - 1, W - 1, -1))
    return np.eye(2 * W, dtype=complex)[:, order[:m]]


@dataclass
class CocycleCursor:
    """Orthonormal frame plus accumulated per-column log-stretch."""

    frame: np.ndarray
    logstretch: np.ndarray
    steps: int
    z: complex | np.ndarray

    @property
    def W(self) -> int:
        return self.frame.shape[-2] // 2

    @property
    def m(self) -> int:
        return self.frame.shape[-1]


def new_cursor(z, W: int, m: int | None = None, frame=None) -> CocycleCursor:
    """Cursor at step 0; an unbatched frame is broadcast over the shape of ``z``."""
    frame = standard_frame(W, m) if frame is None else np.asarray(frame, dtype=complex)
    if frame.shape[-2] != 2 * W:
        raise ValueError("frame has the wrong number of rows")
    if not _is_orthonormal(frame):
        raise ValueError("initial frame must have orthonormal columns")
    z = np.asarray(z, dtype=complex)
    frame = np.broadcast_to(frame, z.shape + frame.shape[-2:]).copy() if frame.ndim == 2 else frame.copy()
    z = z if z.ndim else complex(z)
    return CocycleCursor(frame, np.zeros(frame.shape[:-2] + frame.shape[-1:]), 0, z)


def _is_orthonormal(frame: np.ndarray, tol: float = 1e-12) -> bool:
    G = frame.conj().swapaxes(-1, -2) @ frame
    return bool(np.max(np.abs(G - np.eye(frame.shape[-1]))) <= tol)


def reorthonormalize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR; returns ``(Q, log|R_ii|)``."""
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    if not np.all(np.isfinite(d)):
        raise DegenerateFrameError("non-finite entries in re-orthogonalized frame")
    if np.any(d == 0.0):
        raise DegenerateFrameError("zero diagonal in R: frame collapsed")
    return Q, np.log(d)


def apply_transfer(frame: np.ndarray, z, V: np.ndarray) -> np.ndarray:
    """``T(z, V) @ frame`` without materializing ``T``.

    ``z`` broadcasts against the batch axes of ``frame``; ``V`` is ``(..., W, W)``.
    """
    W = frame.shape[-2] // 2
    top = frame[..., :W, :]
    bot = frame[..., W:, :]
    zz = np.asarray(z)[..., None, None]
    new_top = zz * top - V @ top - bot
    return np.concatenate([new_top, top], axis=-2)


def qr_step(cursor: CocycleCursor, T: TransferMatrix) -> CocycleCursor:
    if not np.allclose(cursor.z, T.z, rtol=0, atol=1e-14):
        raise ValueError("cursor and transfer matrix are at different z")
    if T.W != cursor.W:
        raise ValueError("dimension mismatch between cursor and transfer matrix")
    Q, logd = reorthonormalize(T.entries @ cursor.frame)
    return replace(cursor, frame=Q, logstretch=cursor.logstretch + logd, steps=cursor.steps + 1)


# -- Lagrangian frames -------------------------------------------------------


@dataclass(frozen=True)
class LagrangianFrame:
    basis: np.ndarray = field(repr=False)

    @property
    def W(self) -> int:
        return self.basis.shape[1]

    def defect(self) -> float:
        return lagrangian_defect(self.basis)

    def validate(self, tol: float = LAGRANGIAN_TOL) -> "LagrangianFrame":
        b = self.basis
        if b.ndim != 2 or b.shape[0] != 2 * b.shape[1]:
            raise ValidationError(f"Lagrangian basis must be 2W x W, got {b.shape}")
        if not _is_orthonormal(b, 1e-8):
            raise ValidationError("Lagrangian basis columns are not orthonormal")
        if self.defect() > tol:
            raise ValidationError(f"subspace is not Lagrangian (defect {self.defect():.3g})")
        return self

    @classmethod
    def dirichlet(cls, W: int) -> "LagrangianFrame":
        """``F_0 = {(v, 0)}``."""
        return cls(np.eye(2 * W)[:, :W])

    @classmethod
    def from_unitary(cls, U) -> "LagrangianFrame":
        """``[Re U; Im U]`` for unitary ``U`` spans a real Lagrangian subspace."""
        U = np.asarray(U, dtype=complex)
        return cls(np.vstack([U.real, U.imag]))

    @classmethod
    def random(cls, W: int, rng: np.random.Generator) -> "LagrangianFrame":
        """Draw from the invariant measure on the real Lagrangian Grassmannian."""
        Z = rng.standard_normal((W, W)) + 1j * rng.standard_normal((W, W))
        Q, R = np.linalg.qr(Z)
        Q = Q * (np.diagonal(R) / np.abs(np.diagonal(R)))
        return cls.from_unitary(Q)


def lagrangian_defect(basis) -> float:
    basis = np.asarray(basis)
    W = basis.shape[0] // 2
    return float(np.max(np.abs(basis.T @ symplectic_form(W) @ basis)))


def principal_angle(F1: LagrangianFrame | np.ndarray, F2: LagrangianFrame | np.ndarray) -> float:
    """Largest principal angle between two subspaces, in ``[0, pi/2]``."""
    A = F1.basis if isinstance(F1, LagrangianFrame) else np.asarray(F1)
    B = F2.basis if isinstance(F2, LagrangianFrame) else np.asarray(F2)
    if A.shape != B.shape:
        raise ValueError("subspaces must have equal dimensions")
    return float(np.max(subspace_angles(A, B)))


def slow_subspace(Phi, previous: LagrangianFrame | None = None, tol: float = 1e-8) -> LagrangianFrame:
    """Span of the right singular vectors of the ``W`` smallest singular values.

    Singular values with ``|log s| <= tol`` form a degenerate block around 1;
    there the isotropic completion is chosen greedily along the principal
    directions of ``previous`` (default ``span{e_{W+1..2W}}``) projected into
    the block, so the result stays Lagrangian and varies continuously.
    """
    Phi = np.asarray(Phi)
    W = Phi.shape[0] // 2
    _, s, Vh = np.linalg.svd(Phi)
    V = Vh.conj().T
    with np.errstate(divide="ignore"):  # s may underflow to 0 for long products
        logs = np.log(s)
    small = V[:, logs < -tol]
    if small.shape[1] > W:
        small = small[:, -W:]
    need = W - small.shape[1]
    if need == 0:
        return LagrangianFrame(_clean_real(small))

    middle = V[:, np.abs(logs) <= tol]
    ref = previous.basis if previous is not None else np.eye(2 * W)[:, W:]
    J = symplectic_form(W)
    # principal directions of the reference inside the degenerate block
    U, _, _ = np.linalg.svd(middle.conj().T @ ref)
    candidates = middle @ U
    chosen: list[np.ndarray] = []
    for c in candidates.T:
        v = c.copy()
        for _ in range(2):
            for w in chosen:
                v = v - w * np.vdot(w, v)
                p = J @ w.conj()
                p = p / np.linalg.norm(p)
                v = v - p * np.vdot(p, v)
        nv = np.linalg.norm(v)
        if nv > 1e-6:
            chosen.append(v / nv)
        if len(chosen) == need:
            break
    if len(chosen) < need:
        raise DegenerateFrameError("could not complete a Lagrangian frame in the degenerate block")
    basis = np.column_stack([small] + chosen) if small.shape[1] else np.column_stack(chosen)
    return LagrangianFrame(_clean_real(basis))


def _clean_real(basis: np.ndarray) -> np.ndarray:
    """Rotate a complex basis of a real subspace back to a real basis when possible."""
    if np.isrealobj(basis):
        return basis
    if np.max(np.abs(basis.imag)) < 1e-14:
        return basis.real
    # the span is real iff it equals its conjugate; then Re/Im parts span it
    stacked = np.column_stack([basis.real, basis.imag])
    U, s, _ = np.linalg.svd(stacked, full_matrices=False)
    k = basis.shape[1]
    if s.size > k and s[k] > 1e-10 * s[0]:
        return basis
    return U[:, :k]
