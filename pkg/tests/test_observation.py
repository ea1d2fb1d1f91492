import numpy as np
import pytest

from tstopics import (
    ArWord,
    ConditioningError,
    DesignPair,
    MniwPosterior,
    MniwPrior,
    ParameterError,
    ShapeError,
    ar_loglik,
    build_design,
    loglik_table,
    mniw_update,
    sample_mniw,
)

from oracles import naive_gaussian_logpdf, ols_coefficients, ridge_solution


class TestBuildDesign:
    def test_scalar_ar1(self):
        X = build_design(np.array([1.0, 2.0, 3.0]), p=1)
        assert X.shape == (1, 2)
        assert X[0].tolist() == [1.0, 2.0]

    def test_bivariate_ar2_shape(self, rng):
        y = rng.standard_normal((5, 2))
        X = build_design(y, p=2)
        assert X.shape == (4, 3)

    def test_lag_round_trip(self, rng):
        y = rng.standard_normal((12, 3))
        X = build_design(y, p=2)
        # first block of column for observation t+1 is y_t
        for j in range(X.shape[1] - 1):
            assert np.array_equal(X[:3, j + 1], y[2 + j])

    def test_too_short(self):
        with pytest.raises(ShapeError):
            build_design(np.array([1.0, 2.0]), p=2)


class TestArLoglik:
    def test_standard_normal_at_mode(self):
        w = ArWord(A=np.array([[0.0]]), V=np.array([[1.0]]), omega=0.5)
        ll = ar_loglik(np.array([0.0]), np.array([3.7]), w)
        assert ll == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)

    def test_zero_residual_quarter_variance(self):
        w = ArWord(A=np.array([[0.9]]), V=np.array([[0.25]]), omega=0.5)
        ll = ar_loglik(np.array([1.8]), np.array([2.0]), w)
        assert ll == pytest.approx(-0.5 * np.log(2 * np.pi * 0.25), abs=1e-12)

    def test_matches_naive_inverse_oracle(self, rng):
        m, p = 3, 2
        A = rng.standard_normal((m, m * p))
        B = rng.standard_normal((m, m))
        V = B @ B.T + m * np.eye(m)
        w = ArWord(A=A, V=V, omega=0.5)
        for _ in range(10):
            y = rng.standard_normal(m)
            x = rng.standard_normal(m * p)
            assert ar_loglik(y, x, w) == pytest.approx(
                naive_gaussian_logpdf(y, A @ x, V), abs=1e-10
            )

    def test_permutation_invariance(self, rng):
        m, p = 3, 2
        A = rng.standard_normal((m, m * p))
        B = rng.standard_normal((m, m))
        V = B @ B.T + m * np.eye(m)
        y = rng.standard_normal(m)
        x = rng.standard_normal(m * p)
        base = ar_loglik(y, x, ArWord(A=A, V=V, omega=0.5))
        perm = np.array([2, 0, 1])
        colperm = np.concatenate([perm + k * m for k in range(p)])
        Ap = A[perm][:, colperm]
        Vp = V[perm][:, perm]
        assert ar_loglik(y[perm], x[colperm], ArWord(A=Ap, V=Vp, omega=0.5)) == pytest.approx(
            base, abs=1e-10
        )

    def test_non_pd_covariance_rejected(self):
        w = ArWord(A=np.zeros((2, 2)), V=np.array([[1.0, 2.0], [2.0, 1.0]]), omega=0.5)
        with pytest.raises(ConditioningError):
            ar_loglik(np.zeros(2), np.zeros(2), w)

    def test_table_matches_pointwise(self, rng):
        m, p, T = 2, 1, 9
        y = rng.standard_normal((T, m))
        words = [
            ArWord(A=rng.standard_normal((m, m)), V=np.eye(m) + 0.1, omega=0.5)
            for _ in range(3)
        ]
        X = build_design(y, p)
        table = loglik_table(y[p:].T, X, words)
        for t in range(T - p):
            for l, w in enumerate(words):
                assert table[t, l] == pytest.approx(
                    ar_loglik(y[p + t], X[:, t], w), abs=1e-12
                )


def _random_prior(rng, m, p):
    q = m * p
    B = rng.standard_normal((q, q))
    K0 = B @ B.T + q * np.eye(q)
    C = rng.standard_normal((m, m))
    S0 = C @ C.T + m * np.eye(m)
    return MniwPrior(M0=rng.standard_normal((m, q)), K0=K0, S0=S0, nu0=m + 3.0)


class TestMniwUpdate:
    def test_empty_data_returns_prior(self, rng):
        prior = _random_prior(rng, 2, 1)
        post = mniw_update(prior, DesignPair(Y=np.zeros((2, 0)), X=np.zeros((2, 0))))
        assert np.allclose(post.Mn, prior.M0, atol=1e-12)
        assert np.allclose(post.Kn, prior.K0, atol=1e-12)
        assert np.allclose(post.Sn, prior.S0, atol=1e-12)
        assert post.nun == prior.nu0

    def test_ols_oracle_noiseless_ar1(self):
        y = np.empty(201)
        y[0] = 1.0
        for t in range(1, 201):
            y[t] = 0.9 * y[t - 1]
        prior = MniwPrior(
            M0=np.zeros((1, 1)), K0=np.array([[1e-8]]), S0=np.eye(1), nu0=3.0
        )
        pair = DesignPair(Y=y[1:][None, :], X=y[:-1][None, :])
        post = mniw_update(prior, pair)
        assert abs(post.Mn[0, 0] - 0.9) < 1e-3
        assert abs(post.Mn[0, 0] - ols_coefficients(y)) < 1e-6

    def test_ridge_closed_form(self, rng):
        m, p, n = 2, 2, 40
        q = m * p
        prior = MniwPrior(M0=np.zeros((m, q)), K0=0.3 * np.eye(q), S0=np.eye(m), nu0=m + 2.0)
        Y = rng.standard_normal((m, n))
        X = rng.standard_normal((q, n))
        post = mniw_update(prior, DesignPair(Y=Y, X=X))
        assert np.allclose(post.Mn, ridge_solution(Y, X, prior.K0), atol=1e-10)

    @pytest.mark.parametrize("m,p", [(1, 1), (2, 1), (2, 2), (3, 2)])
    def test_conjugacy_chaining(self, m, p):
        rng = np.random.default_rng(100 + m * 10 + p)
        prior = _random_prior(rng, m, p)
        n = 30
        Y = rng.standard_normal((m, n))
        X = rng.standard_normal((m * p, n))
        one_shot = mniw_update(prior, DesignPair(Y=Y, X=X))
        half = mniw_update(prior, DesignPair(Y=Y[:, :13], X=X[:, :13]))
        as_prior = MniwPrior(M0=half.Mn, K0=half.Kn, S0=half.Sn, nu0=half.nun)
        chained = mniw_update(as_prior, DesignPair(Y=Y[:, 13:], X=X[:, 13:]))
        assert np.allclose(chained.Mn, one_shot.Mn, atol=1e-10)
        assert np.allclose(chained.Kn, one_shot.Kn, atol=1e-10)
        assert np.allclose(chained.Sn, one_shot.Sn, atol=1e-10)
        assert chained.nun == one_shot.nun

    def test_degenerate_design_raises(self):
        prior = MniwPrior(
            M0=np.zeros((1, 2)), K0=np.zeros((2, 2)), S0=np.eye(1), nu0=3.0
        )
        data = DesignPair(Y=np.ones((1, 3)), X=np.zeros((2, 3)))
        with pytest.raises(ConditioningError):
            mniw_update(prior, data)


class TestSampleMniw:
    def test_iw_mean_univariate(self):
        rng = np.random.default_rng(7)
        post = MniwPosterior(Mn=np.zeros((1, 1)), Kn=np.eye(1), Sn=np.eye(1), nun=1000.0)
        vs = np.array([sample_mniw(post, rng)[1][0, 0] for _ in range(10_000)])
        expected = 1.0 / (1000.0 - 2.0)
        assert abs(vs.mean() - expected) / expected < 0.05

    def test_iw_mean_multivariate(self):
        rng = np.random.default_rng(8)
        Sn = np.array([[2.0, 0.3], [0.3, 1.0]])
        post = MniwPosterior(Mn=np.zeros((2, 2)), Kn=np.eye(2), Sn=Sn, nun=50.0)
        vs = np.mean([sample_mniw(post, rng)[1] for _ in range(4_000)], axis=0)
        assert np.allclose(vs, Sn / (50.0 - 2 - 1), rtol=0.05)

    def test_tight_column_precision_collapses_to_mean(self):
        rng = np.random.default_rng(9)
        Mn = np.array([[1.0, -2.0]])
        post = MniwPosterior(Mn=Mn, Kn=1e14 * np.eye(2), Sn=np.eye(1), nun=10.0)
        A, _ = sample_mniw(post, rng)
        assert np.abs(A - Mn).max() < 1e-6

    def test_deterministic_given_seed(self):
        post = MniwPosterior(
            Mn=np.zeros((2, 2)), Kn=np.eye(2), Sn=np.eye(2), nun=8.0
        )
        a1, v1 = sample_mniw(post, np.random.default_rng(4))
        a2, v2 = sample_mniw(post, np.random.default_rng(4))
        assert np.array_equal(a1, a2) and np.array_equal(v1, v2)

    def test_sampled_v_is_choleskyable(self, rng):
        post = MniwPosterior(Mn=np.zeros((3, 3)), Kn=np.eye(3), Sn=np.eye(3), nun=7.0)
        for _ in range(20):
            _, V = sample_mniw(post, rng)
            np.linalg.cholesky(V)

    def test_improper_posterior_rejected(self, rng):
        post = MniwPosterior(Mn=np.zeros((3, 3)), Kn=np.eye(3), Sn=np.eye(3), nun=1.5)
        with pytest.raises(ParameterError):
            sample_mniw(post, rng)

    def test_matrix_normal_column_covariance(self):
        # with nun huge, V ~= Sn/(nun-m-1); vec(A) covariance is then E[V] (x) Kn^-1
        rng = np.random.default_rng(10)
        Sn = np.array([[1.0, 0.4], [0.4, 2.0]])
        Kn = np.array([[2.0, -0.5], [-0.5, 1.0]])
        nun = 100_000.0
        post = MniwPosterior(Mn=np.zeros((2, 2)), Kn=Kn, Sn=nun * Sn, nun=nun)
        draws = np.array([sample_mniw(post, rng)[0].reshape(-1) for _ in range(20_000)])
        emp = np.cov(draws.T)
        expected = np.kron(Sn / (nun - 3.0) * nun, np.linalg.inv(Kn))  # row-major vec
        assert np.allclose(emp, expected, atol=0.08)
