import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocyclelab.symplectic import (
    DegenerateFrameError,
    LagrangianFrame,
    ValidationError,
    build_transfer,
    compound_matrix,
    new_cursor,
    principal_angle,
    qr_step,
    reorthonormalize,
    slow_subspace,
    standard_frame,
    symplectic_defect,
    symplectic_form,
    transfer_product,
    wedge_logsum,
)

GOLDEN_RATE = math.log((3 + math.sqrt(5)) / 2)


def minors_oracle(A, k):
    """Compound matrix assembled minor by minor."""
    n = A.shape[0]
    idx = list(combinations(range(n), k))
    C = np.empty((len(idx), len(idx)), dtype=A.dtype)
    for a, r in enumerate(idx):
        for b, c in enumerate(idx):
            C[a, b] = np.linalg.det(A[np.ix_(r, c)])
    return C


def random_symmetric(rng, W, scale=1.0):
    A = rng.normal(scale=scale, size=(W, W))
    return 0.5 * (A + A.T)


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


class TestTransfer:
    def test_zero_energy_free(self):
        T = build_transfer(0.0, [[0.0]])
        assert np.array_equal(T.entries, np.array([[0, -1], [1, 0]], dtype=complex))

    def test_substitution(self):
        T = build_transfer(2.0, [[1.0]])
        assert np.array_equal(T.entries, np.array([[1, -1], [1, 0]], dtype=complex))
        assert T.W == 1 and T.z == 2

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            build_transfer(0.3, [[0.0, 1.0], [0.5, 0.0]])

    @settings(max_examples=60, deadline=None)
    @given(W=st.integers(1, 4), re=finite, im=finite, seed=st.integers(0, 2**32 - 1))
    def test_symplectic_and_unimodular(self, W, re, im, seed):
        V = random_symmetric(np.random.default_rng(seed), W, 3.0)
        T = build_transfer(complex(re, im), V).entries
        assert symplectic_defect(T) <= 1e-12 * max(1.0, np.abs(T).max() ** 2)
        assert abs(np.linalg.det(T) - 1) <= 1e-10 * max(1.0, np.abs(T).max() ** (2 * W))

    def test_symplectic_form_layout(self):
        J = symplectic_form(2)
        assert np.array_equal(J[:2, 2:], -np.eye(2)) and np.array_equal(J[2:, :2], np.eye(2))


class TestWedge:
    def test_identity(self):
        for k in range(1, 5):
            assert wedge_logsum(np.eye(4), k) == 0.0

    def test_diagonal(self):
        assert wedge_logsum(np.diag([4, 2, 0.5, 0.25]), 2) == pytest.approx(math.log(8), abs=1e-14)

    def test_rank_deficient_sentinel(self):
        A = np.diag([1.0, 2.0, 0.0, 0.0])
        assert wedge_logsum(A, 2) == pytest.approx(math.log(2))
        assert wedge_logsum(A, 3) == -math.inf

    def test_k_range(self):
        with pytest.raises(ValueError):
            wedge_logsum(np.eye(4), 0)
        with pytest.raises(ValueError):
            wedge_logsum(np.eye(4), 5)

    def test_against_minors(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            oracle = math.log(np.linalg.norm(minors_oracle(A, 2), 2))
            assert abs(wedge_logsum(A, 2) - oracle) <= 1e-10

    def test_compound_matches_minor_loop(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(6, 6))
        for k in (1, 2, 3):
            assert np.allclose(compound_matrix(A, k), minors_oracle(A, k), atol=1e-12)

    def test_compound_batched(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(3, 4, 4))
        C = compound_matrix(A, 2)
        for i in range(3):
            assert np.allclose(C[i], minors_oracle(A[i], 2), atol=1e-12)

    def test_subadditive(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            A, B = rng.normal(size=(2, 4, 4))
            for k in (1, 2, 3):
                assert wedge_logsum(A @ B, k) <= wedge_logsum(A, k) + wedge_logsum(B, k) + 1e-10


class TestQrStep:
    def run(self, z, pots, m=None, frame=None):
        W = np.atleast_2d(pots[0]).shape[0]
        cur = new_cursor(z, W, m, frame)
        for V in pots:
            cur = qr_step(cur, build_transfer(z, V))
        return cur

    def test_quarter_rotation(self):
        cur = self.run(0.0, [[[0.0]]] * 4)
        assert np.allclose(cur.logstretch, 0.0, atol=1e-14)
        assert cur.steps == 4

    def test_free_rate(self):
        cur = self.run(3.0, [[[0.0]]] * 30, frame=np.array([[1.0], [0.0]]))
        assert abs(cur.logstretch[0] / 30 - GOLDEN_RATE) <= 0.02

    def test_full_frame_volume(self):
        rng = np.random.default_rng(8)
        pots = [random_symmetric(rng, 2) for _ in range(20)]
        cur = self.run(0.4 + 0.2j, pots)
        Phi = transfer_product(0.4 + 0.2j, pots)
        assert abs(cur.logstretch.sum()) <= 1e-8
        assert abs(wedge_logsum(Phi, 4)) <= 1e-8

    def test_partial_frame_volume_exact(self):
        rng = np.random.default_rng(9)
        pots = [random_symmetric(rng, 3) for _ in range(25)]
        z = 0.1 + 0.5j
        m = 2
        cur = self.run(z, pots, m=m)
        E = standard_frame(3, m)
        Phi = transfer_product(z, pots)
        vol = np.linalg.svd(Phi @ E, compute_uv=False)
        assert abs(cur.logstretch.sum() - np.log(vol).sum()) <= 1e-9

    def test_frame_stays_orthonormal(self):
        rng = np.random.default_rng(10)
        cur = new_cursor(1.0 + 1j, 2)
        for _ in range(50):
            cur = qr_step(cur, build_transfer(1.0 + 1j, random_symmetric(rng, 2)))
            G = cur.frame.conj().T @ cur.frame
            assert np.max(np.abs(G - np.eye(4))) <= 1e-12

    def test_z_mismatch(self):
        cur = new_cursor(1.0, 1)
        with pytest.raises(ValueError):
            qr_step(cur, build_transfer(2.0, [[0.0]]))

    def test_degenerate_frame(self):
        with pytest.raises(DegenerateFrameError):
            reorthonormalize(np.zeros((4, 2)))

    def test_rejects_non_orthonormal_start(self):
        with pytest.raises(ValueError):
            new_cursor(0.0, 1, frame=np.array([[2.0], [0.0]]))

    @pytest.mark.parametrize("W", [1, 2, 3])
    def test_pairing_short(self, W):
        rng = np.random.default_rng(W)
        pots = [random_symmetric(rng, W, 2.0) for _ in range(200)]
        cur = self.run(0.3, pots)
        g = cur.logstretch
        assert np.max(np.abs(g + g[::-1])) / 200 <= 1e-8

    def test_cocycle_property(self):
        rng = np.random.default_rng(12)
        pots = [random_symmetric(rng, 2) for _ in range(50)]
        z = 0.7 - 0.3j
        full = transfer_product(z, pots)
        split = transfer_product(z, pots[20:]) @ transfer_product(z, pots[:20])
        assert np.max(np.abs(full - split)) <= 1e-10 * np.max(np.abs(full))


class TestLagrangian:
    def test_dirichlet(self):
        F = LagrangianFrame.dirichlet(3)
        assert F.defect() == 0.0 and F.W == 3
        F.validate()

    @settings(max_examples=40, deadline=None)
    @given(W=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
    def test_random_frames_are_lagrangian(self, W, seed):
        F = LagrangianFrame.random(W, np.random.default_rng(seed))
        assert F.defect() <= 1e-12
        assert np.max(np.abs(F.basis.T @ F.basis - np.eye(W))) <= 1e-12

    def test_rejects_non_lagrangian(self):
        B = np.zeros((4, 2))
        B[0, 0] = B[2, 1] = 1.0  # e1 and e3 pair under J
        with pytest.raises(ValidationError):
            LagrangianFrame(B).validate()

    def test_principal_angles(self):
        F1 = np.array([[1.0], [0.0]])
        assert principal_angle(F1, F1) == 0.0
        assert principal_angle(F1, np.array([[0.0], [1.0]])) == pytest.approx(math.pi / 2, abs=1e-15)
        th = 0.3
        F2 = np.array([[math.cos(th)], [math.sin(th)]])
        assert abs(principal_angle(F1, F2) - th) <= 1e-12


class TestSlowSubspace:
    def test_diagonal(self):
        F = slow_subspace(np.diag([4, 2, 0.5, 0.25]))
        assert principal_angle(F, np.eye(4)[:, 2:]) <= 1e-12

    def test_identity_tie_break(self):
        F = slow_subspace(np.eye(4))
        assert F.defect() <= 1e-8
        prev = LagrangianFrame.random(2, np.random.default_rng(1))
        G = slow_subspace(np.eye(4), previous=prev)
        assert G.defect() <= 1e-8
        assert principal_angle(G, prev) <= 1e-8

    def test_partial_degeneracy(self):
        # s = (3, 1, 1, 1/3): e3 contracts, the completion comes from span{e2, e4}
        # and the default reference span{e3, e4} selects e4
        F = slow_subspace(np.diag([3.0, 1.0, 1.0 / 3.0, 1.0]))
        assert F.defect() <= 1e-8
        assert principal_angle(F, np.eye(4)[:, 2:]) <= 1e-12

    def test_contracting_eigenvector(self):
        Phi = transfer_product(3.0, [[[0.0]]] * 40)
        F = slow_subspace(Phi)
        T = np.array([[3.0, -1.0], [1.0, 0.0]])
        w, v = np.linalg.eig(T)
        contracting = v[:, [np.argmin(np.abs(w))]].real
        assert principal_angle(F, contracting) <= 1e-6

    @pytest.mark.parametrize("z", [3.0, 0.5 + 1j])
    def test_convergence_summable(self, z):
        if isinstance(z, complex):
            from cocyclelab.drivers import lloyd_model, orbit_potentials
            pots = orbit_potentials(lloyd_model(), 5, 1, 201)
        else:
            pots = np.zeros((201, 1, 1))
        Phi = np.eye(2, dtype=complex)
        prev = None
        angles = []
        for n, V in enumerate(pots, 1):
            Phi = build_transfer(z, V).entries @ Phi
            Phi = Phi / np.abs(Phi).max()
            F = slow_subspace(Phi)
            if prev is not None:
                angles.append(principal_angle(F, prev))
            prev = F
        s = np.sin(angles)
        assert np.isfinite(s.sum())
        assert s[-1] <= 1e-6
