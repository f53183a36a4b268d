import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cocyclelab.drivers import (
    GOLDEN,
    ConstantModel,
    IIDModel,
    OrbitSeed,
    QuasiPeriodicModel,
    TrigTerm,
    almost_mathieu,
    anderson_bernoulli,
    ensemble_seeds,
    lloyd_model,
    member_seed,
    orbit_potentials,
    validate_model,
)
from cocyclelab.symplectic import ValidationError


def test_constant_sequence():
    V = np.array([[1.0, 0.5], [0.5, -1.0]])
    out = orbit_potentials(ConstantModel(V), 3, 17, 5)
    assert out.shape == (5, 2, 2)
    assert np.array_equal(out, np.broadcast_to(V, (5, 2, 2)))


def test_quasi_periodic_zero_frequency():
    m = QuasiPeriodicModel((0.0,), np.zeros((1, 1)), (TrigTerm((1,), np.array([[1.5]])),))
    seed = OrbitSeed(0, phase=(0.2,))
    out = orbit_potentials(m, seed, 1, 50)
    assert np.all(out == out[0])
    assert out[0, 0, 0] == pytest.approx(1.5 * math.cos(2 * math.pi * 0.2), abs=1e-15)


def test_bernoulli_reproducible_and_balanced():
    m = anderson_bernoulli(1)
    a = orbit_potentials(m, 5, 1, 10_000)[:, 0, 0]
    b = orbit_potentials(m, 5, 1, 10_000)[:, 0, 0]
    c = orbit_potentials(m, 6, 1, 10_000)[:, 0, 0]
    assert np.array_equal(a, b)
    assert np.any(a[:100] != c[:100])
    assert set(np.unique(a)) == {-1.0, 1.0}
    n = a.size
    freq = np.mean(a > 0)
    assert abs(freq - 0.5) <= 3 * math.sqrt(0.25 / n)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**63), n0=st.integers(1, 3000), count=st.integers(1, 700))
def test_random_access_matches_prefix(seed, n0, count):
    m = IIDModel(2, "uniform", 2.0)
    long = orbit_potentials(m, seed, 1, n0 + count - 1)
    tail = orbit_potentials(m, seed, n0, count)
    assert np.array_equal(long[n0 - 1:], tail)


def test_sequences_are_symmetric():
    for m in (anderson_bernoulli(3), lloyd_model(1.0, 2), IIDModel(2, "uniform", structure="scalar")):
        V = orbit_potentials(m, 1, 1, 50)
        assert np.array_equal(V, V.swapaxes(-1, -2))


def test_errors():
    with pytest.raises(ValueError):
        orbit_potentials(anderson_bernoulli(), 1, 1, 0)
    with pytest.raises(ValidationError):
        orbit_potentials(object(), 1, 1, 3)
    with pytest.raises(ValidationError):
        IIDModel(1, "gaussian")


def test_member_seeds_distinct():
    seeds = ensemble_seeds(3, 50)
    assert len({s.seed for s in seeds}) == 50
    assert member_seed(3, 7) == seeds[7]


class TestDiagnostics:
    def test_constant(self):
        d = validate_model(ConstantModel(np.eye(2) * 3))
        assert d.bounded and d.log_moment_finite
        assert d.log_moment == pytest.approx(math.log(3))

    def test_cauchy(self):
        d = validate_model(lloyd_model(1.0))
        assert not d.bounded and d.log_moment_finite
        assert d.eta < 1.0 and d.eta_sup == 1.0
        # E log_+ |C| for a standard Cauchy is 2G/pi with G Catalan's constant
        catalan = 0.915965594177219015
        assert d.log_moment == pytest.approx(2 * catalan / math.pi, abs=1e-8)

    def test_uniform_log_moment(self):
        d = validate_model(IIDModel(1, "uniform", 3.0))
        # E log_+ |U| for U uniform on [-3, 3]: (1/3) int_1^3 log x dx
        exact = (3 * math.log(3) - 3 + 1) / 3
        assert d.log_moment == pytest.approx(exact, abs=1e-9)

    def test_rank_one_pair(self):
        m = IIDModel(2, "choice", support=(np.diag([1.0, 0.0]), np.zeros((2, 2))))
        assert validate_model(m).rank_one_pair is True
        m2 = IIDModel(2, "choice", support=(np.eye(2), np.zeros((2, 2))))
        assert validate_model(m2).rank_one_pair is False

    def test_irreducibility_is_user_flag(self):
        assert validate_model(anderson_bernoulli()).irreducible is True
        assert validate_model(IIDModel(1, "uniform")).irreducible is None


def test_birkhoff_bounded_iid():
    m = IIDModel(1, "uniform", 3.0)
    x = np.log(np.maximum(np.abs(orbit_potentials(m, 9, 1, 100_000)[:, 0, 0]), 1.0))
    exact = validate_model(m).log_moment
    assert abs(x.mean() - exact) <= 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_birkhoff_quasi_periodic():
    lam = 1.5
    m = almost_mathieu(lam)
    x = np.log(np.maximum(np.abs(orbit_potentials(m, 4, 1, 100_000)[:, 0, 0]), 1.0))
    exact, _ = integrate.quad(lambda t: max(math.log(abs(2 * lam * math.cos(2 * math.pi * t))), 0.0),
                              0, 1, limit=400, points=[0.25, 0.75])
    # irrational rotation: discrepancy O(log n / n), far below the iid error scale
    assert abs(x.mean() - exact) <= 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_equidistribution_golden():
    m = almost_mathieu(1.0, GOLDEN)
    th = m.angles(OrbitSeed(2), 1, 100_000)[:, 0]
    counts, _ = np.histogram(th, bins=10, range=(0, 1))
    expected = th.size / 10
    sigma = math.sqrt(th.size * 0.1 * 0.9)
    assert np.all(np.abs(counts - expected) <= 3 * sigma)
