import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma

from dyncov import mvstat
from dyncov.errors import DegenerateWeights, DimensionMismatch, EmptyCloud, InvalidDof, NotPositiveDefinite


def random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + d * np.eye(d)


def brute_det(M):
    """Leibniz expansion; independent of any factorization."""
    n = M.shape[0]
    total = 0.0
    for perm in permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        term = (-1.0) ** inv
        for i in range(n):
            term *= M[i, perm[i]]
        total += term
    return total


def inv2(S):
    (a, b), (c, d) = S
    det = a * d - b * c
    return np.array([[d, -b], [-c, a]]) / det


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(mvstat.cholesky(np.eye(3)), np.eye(3))

    def test_hand_example(self):
        L = mvstat.cholesky([[4.0, 2.0], [2.0, 3.0]])
        np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-15)

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            mvstat.cholesky([[1.0, 2.0], [2.0, 1.0]])

    def test_asymmetric_raises(self):
        with pytest.raises(NotPositiveDefinite):
            mvstat.cholesky([[1.0, 0.5], [0.0, 1.0]])

    def test_roundoff_singular_is_jittered(self):
        v = np.array([1.0, 2.0, 3.0])
        S = np.outer(v, v)  # rank one
        with pytest.raises(NotPositiveDefinite):
            mvstat.cholesky(S - 1e-3 * np.eye(3))
        L = mvstat.cholesky(S + 1e-14 * np.eye(3))
        np.testing.assert_allclose(L @ L.T, S, atol=1e-8)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    def test_reconstruction(self, d, seed):
        S = random_spd(np.random.default_rng(seed), d)
        L = mvstat.cholesky(S)
        assert np.allclose(L, np.tril(L))
        err = np.linalg.norm(L @ L.T - S) / np.linalg.norm(S)
        assert err < 1e-10


class TestLogDet:
    def test_identity(self):
        assert mvstat.log_det_spd(np.eye(5)) == 0.0

    def test_diag(self):
        assert mvstat.log_det_spd(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0), abs=1e-14)

    def test_hand_2x2(self):
        assert mvstat.log_det_spd([[4.0, 2.0], [2.0, 3.0]]) == pytest.approx(math.log(8.0), abs=1e-14)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_against_leibniz(self, d):
        rng = np.random.default_rng(d)
        for _ in range(5):
            S = random_spd(rng, d)
            assert mvstat.log_det_spd(S) == pytest.approx(math.log(brute_det(S)), abs=1e-10)


class TestGaussian:
    def test_zero_quadratic(self):
        assert mvstat.mvn_logpdf([0.0, 0.0], np.eye(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
        assert mvstat.mvn_logpdf([0.0, 0.0], np.eye(2)) == pytest.approx(-1.837877, abs=1e-6)

    def test_standard_normal_at_one(self):
        assert mvstat.mvn_logpdf([1.0], [[1.0]]) == pytest.approx(-1.418939, abs=1e-6)

    def test_against_explicit_inverse(self):
        S = np.array([[4.0, 2.0], [2.0, 3.0]])
        x = np.array([1.0, 1.0])
        q = x @ inv2(S) @ x
        expected = -math.log(2 * math.pi) - 0.5 * math.log(8.0) - 0.5 * q
        assert mvstat.mvn_logpdf(x, S) == pytest.approx(expected, abs=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mvstat.mvn_logpdf([1.0, 2.0, 3.0], np.eye(2))

    @pytest.mark.parametrize("var", [0.3, 1.0, 2.5])
    def test_integrates_to_one(self, var):
        grid = np.linspace(-8.0, 8.0, 16001)
        dens = np.exp([mvstat.mvn_logpdf([x], [[var]]) for x in grid])
        # tail mass beyond +-8 is not negligible for var = 2.5; compare with the erf oracle
        mass = math.erf(8.0 / math.sqrt(2.0 * var))
        assert np.trapezoid(dens, grid) == pytest.approx(mass, abs=1e-6)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        S = np.array([random_spd(rng, 3) for _ in range(20)])
        X = rng.standard_normal((20, 3))
        batch = mvstat.mvn_logpdf_batch(X, S)
        scalar = [mvstat.mvn_logpdf(x, s) for x, s in zip(X, S)]
        np.testing.assert_allclose(batch, scalar, rtol=0, atol=1e-12)


class TestStudentT:
    def test_univariate_at_zero(self):
        expected = math.log(gamma(2.0) / (gamma(1.5) * math.sqrt(3 * math.pi)))
        assert mvstat.mvt_logpdf([0.0], 3.0, [[1.0]]) == pytest.approx(expected, abs=1e-13)
        assert expected == pytest.approx(-1.0009, abs=1e-4)

    def test_gaussian_limit_point(self):
        assert mvstat.mvt_logpdf([2.0], 1e6, [[1.0]]) == pytest.approx(mvstat.mvn_logpdf([2.0], [[1.0]]), abs=1e-3)

    def test_against_direct_formula(self):
        x = np.array([1.0, 1.0])
        nu, d = 5.0, 2
        q = x @ x
        direct = (gamma((nu + d) / 2) * (1 + q / nu) ** (-(nu + d) / 2)) / (gamma(nu / 2) * (nu * math.pi) ** (d / 2))
        assert mvstat.mvt_logpdf(x, nu, np.eye(2)) == pytest.approx(math.log(direct), abs=1e-13)

    def test_invalid_dof(self):
        with pytest.raises(InvalidDof):
            mvstat.mvt_logpdf([0.0], 2.0, [[1.0]])
        with pytest.raises(InvalidDof):
            mvstat.scale_from_cov(1.5, np.eye(1))

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_gaussian_limit_grid(self, d):
        S = random_spd(np.random.default_rng(d), d) / d
        for r in np.linspace(-5, 5, 11):
            x = np.full(d, r / math.sqrt(d))
            assert abs(mvstat.mvt_logpdf(x, 1e6, S) - mvstat.mvn_logpdf(x, S)) < 1e-3

    @pytest.mark.parametrize("nu", [1e9, 1e12, 1e17, 1e25])
    def test_huge_dof_stays_gaussian(self, nu):
        # regression: gammaln differences cancel at large nu
        x = np.array([0.7, -1.2, 0.4])
        S = np.diag([1.0, 0.5, 2.0])
        ref = mvstat.mvn_logpdf(x, S)
        assert mvstat.mvt_logpdf(x, nu, S) == pytest.approx(ref, abs=1e-6)
        assert mvstat.mvt_logpdf_batch(x, np.array([nu]), S[None])[0] == pytest.approx(ref, abs=1e-6)

    def test_dof_switch_is_continuous(self):
        x = np.array([0.3, 0.9])
        lo = mvstat.mvt_logpdf(x, 2e6 * (1 - 1e-12), np.eye(2))
        hi = mvstat.mvt_logpdf(x, 2e6 * (1 + 1e-12), np.eye(2))
        assert abs(lo - hi) < 1e-8

    def test_batch_uses_covariance_parameterization(self):
        rng = np.random.default_rng(5)
        S = np.array([random_spd(rng, 2) for _ in range(10)])
        nu = rng.uniform(3, 30, size=10)
        x = rng.standard_normal(2)
        batch = mvstat.mvt_logpdf_batch(x, nu, S)
        scalar = [mvstat.mvt_logpdf(x, n, mvstat.scale_from_cov(n, s)) for n, s in zip(nu, S)]
        np.testing.assert_allclose(batch, scalar, atol=1e-12)


class TestScaleFromCov:
    def test_hand_values(self):
        np.testing.assert_allclose(mvstat.scale_from_cov(4.0, 2 * np.eye(2)), np.eye(2))
        np.testing.assert_allclose(mvstat.scale_from_cov(3.0, [[3.0]]), [[1.0]])

    def test_large_nu_limit(self):
        S = np.array([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_allclose(mvstat.scale_from_cov(1e9, S), S, rtol=1e-8)


class TestSampling:
    def test_zero_cov_returns_mean(self):
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(mvstat.sample_mvn([1.0, -2.0], np.zeros((2, 2)), rng), [1.0, -2.0])

    def test_partial_zero_variance(self):
        out = mvstat.sample_mvn([1.0, 2.0], np.diag([0.0, 1.0]), np.random.default_rng(1))
        assert out[0] == 1.0

    def test_moment_check(self):
        rng = np.random.default_rng(11)
        draws = np.array([mvstat.sample_mvn(np.zeros(2), np.eye(2), rng) for _ in range(100_000)])
        assert np.max(np.abs(np.cov(draws.T) - np.eye(2))) < 0.05

    def test_determinism(self):
        cov = np.array([[1.0, 0.3], [0.3, 2.0]])
        a = mvstat.sample_mvn([0.0, 0.0], cov, np.random.default_rng(42))
        b = mvstat.sample_mvn([0.0, 0.0], cov, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            mvstat.sample_mvn([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], np.random.default_rng(0))

    def test_student_t_covariance_contract(self):
        rng = np.random.default_rng(8)
        Sigma = np.array([[1.5, 0.4], [0.4, 0.8]])
        draws = mvstat.sample_mvt(8.0, mvstat.scale_from_cov(8.0, Sigma), rng, size=100_000)
        rel = np.linalg.norm(np.cov(draws.T) - Sigma) / np.linalg.norm(Sigma)
        assert rel < 0.05


class TestWeightedMoments:
    def test_single_point(self):
        m, V = mvstat.weighted_mean_and_cov([[1.0, 2.0, 3.0]], [1.0])
        np.testing.assert_array_equal(m, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(V, np.zeros((3, 3)))

    def test_two_point(self):
        m, V = mvstat.weighted_mean_and_cov([[-1.0], [1.0]], [0.5, 0.5])
        assert m[0] == 0.0 and V[0, 0] == 1.0

    def test_uniform_matches_unweighted(self):
        P = np.random.default_rng(2).standard_normal((100, 3))
        m, V = mvstat.weighted_mean_and_cov(P, np.full(100, 0.01))
        np.testing.assert_allclose(m, P.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(V, np.cov(P.T, bias=True), atol=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyCloud):
            mvstat.weighted_mean_and_cov(np.empty((0, 2)), np.empty(0))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 50), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_cov_is_psd(self, n, k, seed):
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(n))
        _, V = mvstat.weighted_mean_and_cov(rng.standard_normal((n, k)), w)
        np.testing.assert_array_equal(V, V.T)
        assert np.min(np.linalg.eigvalsh(V)) > -1e-12


class TestSystematicResample:
    def test_point_mass(self):
        idx = mvstat.systematic_resample([1.0, 0.0, 0.0], np.random.default_rng(0))
        np.testing.assert_array_equal(idx, [0, 0, 0])

    def test_uniform_each_once(self):
        for seed in range(20):
            idx = mvstat.systematic_resample(np.full(4, 0.25), np.random.default_rng(seed))
            np.testing.assert_array_equal(np.sort(idx), [0, 1, 2, 3])

    def test_three_to_one(self):
        for seed in range(20):
            idx = mvstat.systematic_resample([0.75, 0.25], np.random.default_rng(seed), n=4)
            assert np.count_nonzero(idx == 0) == 3 and np.count_nonzero(idx == 1) == 1

    def test_degenerate(self):
        with pytest.raises(DegenerateWeights):
            mvstat.systematic_resample([0.0, 0.0], np.random.default_rng(0))
        with pytest.raises(DegenerateWeights):
            mvstat.systematic_resample([np.nan, 1.0], np.random.default_rng(0))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 2**31 - 1))
    def test_counts_within_one(self, n, seed):
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(n))
        counts = np.bincount(mvstat.systematic_resample(w, rng), minlength=n)
        assert counts.sum() == n
        assert np.all(np.abs(counts - n * w) < 1.0 + 1e-9)

    def test_unbiased_for_statistic(self):
        rng = np.random.default_rng(12)
        n = 10
        w = rng.dirichlet(np.ones(n))
        f = rng.standard_normal(n)
        target = w @ f
        reps = np.array([f[mvstat.systematic_resample(w, rng)].mean() for _ in range(10_000)])
        se = reps.std(ddof=1) / math.sqrt(reps.size)
        assert abs(reps.mean() - target) < 3 * se + 1e-12
