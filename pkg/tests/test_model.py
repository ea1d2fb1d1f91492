import numpy as np
import pytest

from tstopics import (
    ArWord,
    Hyperparameters,
    MniwPrior,
    ParameterError,
    ShapeError,
    sample_pi_n,
    sample_prior_params,
    simulate_corpus,
    simulate_series,
    validate_series_state,
)
from tstopics.model import dirichlet

from conftest import make_params
from oracles import dirichlet_mean_se


class TestHyperparameters:
    def test_defaults_match_reported_settings(self):
        h = Hyperparameters(D=4)
        assert (h.gamma, h.eta, h.alpha_l) == (10.0, 10.0, 10.0)
        assert h.kappa == 25.0 and h.rho == 20.0
        assert h.L == 15 and h.p == 1

    @pytest.mark.parametrize(
        "bad",
        [
            {"gamma": 0.0},
            {"eta": -1.0},
            {"rho": 0.0},
            {"kappa": -0.5},
            {"L": 0},
            {"p": 0},
        ],
    )
    def test_invalid_values_rejected(self, bad):
        with pytest.raises(ParameterError):
            Hyperparameters(D=2, **bad)

    def test_mniw_prior_requires_proper_dof(self):
        with pytest.raises(ParameterError):
            MniwPrior(M0=np.zeros((2, 2)), K0=np.eye(2), S0=np.eye(2), nu0=0.5)

    def test_word_domain(self):
        with pytest.raises(ParameterError):
            ArWord(A=np.zeros((1, 1)), V=np.eye(1), omega=1.0)


class TestPriorDraws:
    def test_single_stick_degenerate(self, rng):
        h = Hyperparameters(D=3, L=1)
        params = sample_prior_params(h, m=1, rng=rng)
        assert params.beta.tolist() == [1.0]
        assert np.all(params.phi == 1.0)

    def test_beta_monte_carlo_mean(self):
        # gamma=10, L=15 -> symmetric Dirichlet(2/3); empirical mean of each
        # coordinate over 10^4 draws within 3 SE of 1/15
        rng = np.random.default_rng(11)
        h = Hyperparameters(D=4, L=15)
        n = 10_000
        draws = np.stack([sample_prior_params(h, 1, rng).beta for _ in range(n)])
        se = dirichlet_mean_se(np.full(15, 10.0 / 15.0), n)
        assert np.all(np.abs(draws.mean(axis=0) - 1.0 / 15.0) < 3 * se)

    def test_omega_prior_mean_half(self):
        rng = np.random.default_rng(12)
        h = Hyperparameters(D=2, L=4, rho=20.0)
        n = 2_000
        oms = np.array(
            [w.omega for _ in range(n) for w in sample_prior_params(h, 1, rng).words]
        )
        # Beta(10, 10): mean 1/2, var 1/84
        se = np.sqrt((1.0 / 84.0) / oms.size)
        assert abs(oms.mean() - 0.5) < 3 * se

    def test_simplex_invariants(self, rng):
        h = Hyperparameters(D=3, L=6, p=2)
        params = sample_prior_params(h, m=2, rng=rng)
        assert abs(params.beta.sum() - 1.0) < 1e-12
        assert np.allclose(params.phi.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(params.pi_g.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(params.beta >= 0) and np.all(params.phi >= 0)

    def test_sticky_bias_on_global_rows(self):
        # kappa=25, alpha_g=10, D=4: diagonal Dirichlet mean 27.5/35
        rng = np.random.default_rng(13)
        h = Hyperparameters(D=4, L=2, kappa=25.0, alpha_g=10.0)
        n = 4_000
        diag = np.array(
            [sample_prior_params(h, 1, rng).pi_g[1 + i, i] for _ in range(n) for i in range(4)]
        )
        se = dirichlet_mean_se(np.array([27.5, 2.5, 2.5, 2.5]), diag.size)[0]
        assert abs(diag.mean() - 27.5 / 35.0) < 3 * se

    def test_dirichlet_zero_alpha_gets_zero_mass(self, rng):
        draw = dirichlet(rng, np.array([2.0, 0.0, 3.0]))
        assert draw[1] == 0.0
        assert abs(draw.sum() - 1.0) < 1e-12
        with pytest.raises(ParameterError):
            dirichlet(rng, np.zeros(3))


class TestSimulateSeries:
    def test_single_regime_forces_one_word(self, rng):
        params = make_params(D=1, L=1, rng=rng, omega=1.0 - 1e-12)
        y, st = simulate_series(params, params.pi_g, T=20, y_init=np.zeros((1, 1)), rng=rng)
        assert st.o[0] == 0 and np.all(st.o[1:] == 1)
        assert np.all(st.d == 0) and np.all(st.z == 0)

    def test_near_noiseless_ar1_decay(self, rng):
        words = (ArWord(A=np.array([[0.9]]), V=np.array([[1e-12]]), omega=0.5),)
        params = make_params(D=1, L=1, rng=rng)
        params = params.__class__(
            beta=params.beta, phi=params.phi, words=words, pi_g=params.pi_g
        )
        y, _ = simulate_series(params, params.pi_g, T=11, y_init=np.array([[1.0]]), rng=rng)
        for t in range(11):
            assert abs(y[t, 0] - 0.9**t) < 1e-4

    def test_length_guard(self, rng):
        params = make_params(D=1, L=1, rng=rng)
        with pytest.raises(ShapeError):
            simulate_series(params, params.pi_g, T=1, y_init=np.zeros((1, 1)), rng=rng)

    def test_long_run_transition_frequencies(self):
        rng = np.random.default_rng(21)
        params = make_params(D=2, L=3, rng=rng, sticky=0.7, omega=0.5)
        y, st = simulate_series(
            params, params.pi_g, T=50_001, y_init=np.zeros((1, 1)), rng=rng
        )
        emp = np.zeros((2, 2))
        np.add.at(emp, (st.d[:-1], st.d[1:]), 1)
        emp /= emp.sum(axis=1, keepdims=True)
        assert np.abs(emp - params.pi_g[1:]).max() < 0.01

    def test_mean_word_length(self):
        # geometric continuation: mean length 1/(1-omega), within 2% at 1e5 steps
        rng = np.random.default_rng(22)
        omega = 0.8
        params = make_params(D=1, L=2, rng=rng, omega=omega)
        _, st = simulate_series(
            params, params.pi_g, T=100_001, y_init=np.zeros((1, 1)), rng=rng
        )
        starts = np.flatnonzero(st.o == 0)
        lengths = np.diff(np.append(starts, st.o.shape[0]))
        expected = 1.0 / (1.0 - omega)
        assert abs(lengths.mean() - expected) / expected < 0.02

    def test_structural_invariants(self, rng):
        params = make_params(D=3, L=4, rng=rng, m=2, p=2, omega=0.6, sticky=0.6)
        y, st = simulate_series(params, params.pi_g, T=300, y_init=np.zeros((2, 2)), rng=rng)
        validate_series_state(st, 3, 4)
        assert y.shape == (300, 2)
        assert st.T == 298


class TestSimulateCorpus:
    def test_empty_corpus(self, rng):
        params = make_params(D=2, L=2, rng=rng)
        h = Hyperparameters(D=2, L=2)
        corpus, states = simulate_corpus(params, h, 0, [], rng)
        assert corpus.n_series == 0 and states == []

    def test_concentration_limit_pins_pi_n(self, rng):
        params = make_params(D=3, L=2, rng=rng)
        h = Hyperparameters(D=3, L=2, alpha_l=1e8)
        pi_n = sample_pi_n(params, h, rng)
        assert np.abs(pi_n - params.pi_g).max() < 1e-3

    def test_fixed_seed_bit_identical(self):
        params = make_params(D=2, L=3, rng=np.random.default_rng(5))
        h = Hyperparameters(D=2, L=3)
        out = []
        for _ in range(2):
            rng = np.random.default_rng(42)
            corpus, states = simulate_corpus(params, h, 3, [25, 30, 35], rng)
            out.append((corpus, states))
        for y1, y2 in zip(out[0][0].series, out[1][0].series):
            assert np.array_equal(y1, y2)
        for s1, s2 in zip(out[0][1], out[1][1]):
            assert np.array_equal(s1.d, s2.d) and np.array_equal(s1.pi_n, s2.pi_n)

    def test_label_masks_respected_in_truth(self, rng):
        params = make_params(D=3, L=2, rng=rng, sticky=0.6)
        h = Hyperparameters(D=3, L=2)
        labels = [np.array([1, 0, 1], dtype=np.int8), None]
        corpus, states = simulate_corpus(params, h, 2, 60, rng, labels=labels)
        assert np.all(states[0].pi_n[:, 1] == 0.0)
        assert not np.any(states[0].d == 1)
        validate_series_state(states[0], 3, 2)
        assert states[1].lam is None
