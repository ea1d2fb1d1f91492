"""Block Gibbs sampler.

One sweep alternates: joint (topic, word) state resampling per series via a
backward filter / forward sampler over the D*L product chain, then conjugate
updates of the word weights, topic-word distributions, continuation
probabilities, AR parameters, and transition matrices given the collected
count statistics.

The switch indicator o is marginalized out of the message passing (it is
deterministic given consecutive (d, z) pairs except when topic and word both
repeat) and sampled afterwards from its two-branch conditional.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg as sla
from scipy import stats as sstats
from scipy.special import gammaln, logsumexp

from .errors import LabelMaskError, NumericalError, ParameterError, ShapeError
from .model import (
    ArWord,
    Corpus,
    Hyperparameters,
    ModelParams,
    SeriesState,
    categorical,
    dirichlet,
    masked_pi_g_row,
    sample_pi_n,
    sample_prior_params,
    simulate_state_path,
)
from .observation import DesignPair, build_design, loglik_table, mniw_update, sample_mniw


@dataclass(frozen=True)
class SuffStats:
    """Count statistics of one assignment configuration.

    m_dl[d, l]: word starts (o=0 steps) of word l under topic d.
    c_bar[l, i]: topic-stable steps whose previous word was l and o=i.
    trans_counts[n, i, k]: topic transitions per series; row 0 holds the
    initial step, row 1+i transitions out of topic i.
    """

    m_dl: np.ndarray
    c_bar: np.ndarray
    trans_counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m_dl", np.asarray(self.m_dl, dtype=np.int64))
        object.__setattr__(self, "c_bar", np.asarray(self.c_bar, dtype=np.int64))
        object.__setattr__(self, "trans_counts", np.asarray(self.trans_counts, dtype=np.int64))

    @property
    def trans_totals(self) -> np.ndarray:
        return self.trans_counts.sum(axis=0)

    @property
    def D(self) -> int:
        return self.m_dl.shape[0]

    @property
    def L(self) -> int:
        return self.m_dl.shape[1]


@dataclass(frozen=True)
class GibbsConfig:
    """Sampler run settings."""

    n_iter: int
    burn_in: int = 0
    thin: int = 1
    n_chains: int = 1
    seed: int = 0
    supervised: bool = False
    fixed_topics: Optional[ModelParams] = None

    def __post_init__(self):
        if self.n_iter < 1:
            raise ParameterError("n_iter must be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ParameterError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ParameterError("thin must be >= 1")
        if self.n_chains < 1:
            raise ParameterError("n_chains must be >= 1")


# ---------------------------------------------------------------------------
# count collection
# ---------------------------------------------------------------------------


def collect_counts(states, D: int, L: int) -> SuffStats:
    """Aggregate the indicator sums defining the conjugate updates."""
    N = len(states)
    m_dl = np.zeros((D, L), dtype=np.int64)
    c_bar = np.zeros((L, 2), dtype=np.int64)
    trans = np.zeros((N, D + 1, D), dtype=np.int64)
    for n, st in enumerate(states):
        d, z, o = st.d, st.z, st.o
        starts = o == 0
        np.add.at(m_dl, (d[starts], z[starts]), 1)
        if d.shape[0] > 1:
            stable = d[1:] == d[:-1]
            np.add.at(c_bar, (z[:-1][stable], o[1:][stable].astype(np.int64)), 1)
            np.add.at(trans[n], (1 + d[:-1], d[1:]), 1)
        if d.shape[0] > 0:
            trans[n, 0, d[0]] += 1
    return SuffStats(m_dl=m_dl, c_bar=c_bar, trans_counts=trans)


# ---------------------------------------------------------------------------
# conjugate parameter updates
# ---------------------------------------------------------------------------


def sample_beta(stats: SuffStats, hyper: Hyperparameters, rng: np.random.Generator) -> np.ndarray:
    """Global word weights given pooled word-start counts."""
    return dirichlet(rng, hyper.gamma / hyper.L + stats.m_dl.sum(axis=0))


def sample_phi(
    beta: np.ndarray, stats: SuffStats, hyper: Hyperparameters, rng: np.random.Generator
) -> np.ndarray:
    """Per-topic word distributions given per-topic word-start counts."""
    return np.stack([dirichlet(rng, hyper.eta * beta + stats.m_dl[d]) for d in range(hyper.D)])


def sample_omega(stats: SuffStats, hyper: Hyperparameters, rng: np.random.Generator) -> np.ndarray:
    """Continuation probabilities; omega_l = P(word l carries over one step)."""
    return rng.beta(hyper.rho / 2.0 + stats.c_bar[:, 1], hyper.rho / 2.0 + stats.c_bar[:, 0])


def sample_words(
    corpus: Corpus, states, hyper: Hyperparameters, rng: np.random.Generator
) -> list:
    """AR parameters per word from the partitioned regression posteriors.

    Returns a list of (A, V) pairs; words with no assigned steps come out as
    fresh prior draws (the empty-data posterior is the prior).
    """
    m = corpus.m
    prior = hyper.mniw_for(m)
    Ys, Xs, zs = [], [], []
    for resid, st in zip(corpus.residuals, states):
        X = build_design(resid, hyper.p)
        Ys.append(resid[hyper.p:].T)
        Xs.append(X)
        zs.append(st.z)
    Yall = np.concatenate(Ys, axis=1) if Ys else np.zeros((m, 0))
    Xall = np.concatenate(Xs, axis=1) if Xs else np.zeros((m * hyper.p, 0))
    zall = np.concatenate(zs) if zs else np.zeros(0, dtype=np.int64)
    out = []
    for l in range(hyper.L):
        cols = zall == l
        post = mniw_update(prior, DesignPair(Y=Yall[:, cols], X=Xall[:, cols]))
        out.append(sample_mniw(post, rng))
    return out


def sample_transitions(
    stats: SuffStats,
    hyper: Hyperparameters,
    labels,
    rng: np.random.Generator,
) -> tuple:
    """Global and per-series transition matrices from their Dirichlet posteriors.

    Global rows get the self-transition bias kappa (not on the initial row);
    series rows center on the corresponding global row, restricted to the
    allowed topics and renormalized when a label mask is present, so masked
    columns receive exactly zero mass.
    """
    D = stats.D
    N = stats.trans_counts.shape[0]
    if labels is None:
        labels = [None] * N
    if len(labels) != N:
        raise ShapeError(f"need {N} label masks, got {len(labels)}")
    totals = stats.trans_totals
    pi_g = np.empty((D + 1, D))
    pi_g[0] = dirichlet(rng, hyper.alpha_g / D + totals[0])
    for i in range(D):
        alpha = np.full(D, hyper.alpha_g / D)
        alpha[i] += hyper.kappa
        pi_g[1 + i] = dirichlet(rng, alpha + totals[1 + i])
    pi_ns = []
    for n in range(N):
        lam = labels[n]
        if lam is not None and np.asarray(lam).sum() < 1:
            raise LabelMaskError(f"label mask for series {n} has no allowed topic")
        pi_n = np.empty((D + 1, D))
        for i in range(D + 1):
            alpha = hyper.alpha_l * masked_pi_g_row(pi_g[i], lam) + stats.trans_counts[n, i]
            pi_n[i] = dirichlet(rng, alpha)
        pi_ns.append(pi_n)
    return pi_g, pi_ns


# ---------------------------------------------------------------------------
# joint state update over the (topic, word) product chain
# ---------------------------------------------------------------------------


def _build_kernel(pi_n: np.ndarray, phi: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Joint transition kernel over states s = d*L + z, marginalizing o.

    Within a topic the word carries over with probability omega_z or is
    re-drawn from phi_d; across topics it is always re-drawn.
    """
    D, L = phi.shape
    K = np.empty((D, L, D, L))
    K[:] = pi_n[1:, None, :, None] * phi[None, None, :, :]
    idx = np.arange(L)
    for d in range(D):
        K[d, :, d, :] = pi_n[1 + d, d] * ((1.0 - omega)[:, None] * phi[d][None, :])
        K[d, idx, d, idx] += pi_n[1 + d, d] * omega
    return K.reshape(D * L, D * L)


def _series_tables(residuals: np.ndarray, params: ModelParams, pi_n: np.ndarray, p: int):
    """Shared precomputation for one series: state log-likelihoods, kernel,
    first-slice weights."""
    D, L = params.D, params.L
    X = build_design(residuals, p)
    Y = np.atleast_2d(np.asarray(residuals, dtype=float))
    if Y.shape[0] == 1 and Y.shape[1] > 1:
        Y = Y.T
    Y = Y[p:].T
    ll = loglik_table(Y, X, params.words)
    if not np.isfinite(ll).all():
        t_bad = int(np.argwhere(~np.isfinite(ll).all(axis=1))[0][0])
        raise NumericalError(f"non-finite observation log-likelihood at modeled step {t_bad}")
    ll_state = np.tile(ll, (1, D))
    omega = np.array([w.omega for w in params.words])
    K = _build_kernel(pi_n, params.phi, omega)
    w0 = (pi_n[0][:, None] * params.phi).reshape(-1)
    return ll_state, K, w0, omega


def backward_messages(
    residuals: np.ndarray, params: ModelParams, pi_n: np.ndarray, p: Optional[int] = None
) -> np.ndarray:
    """Backward filter over the joint state space, in log space.

    Returns a (T-p, D*L) table; row t is max-normalized and proportional to
    the log probability of the remaining observations given state s at t.
    """
    if p is None:
        p = params.words[0].A.shape[1] // params.m
    ll_state, K, _, _ = _series_tables(residuals, params, pi_n, p)
    return _backward(ll_state, K)


def _backward(ll_state: np.ndarray, K: np.ndarray) -> np.ndarray:
    T, S = ll_state.shape
    msg = np.zeros((T, S))
    for t in range(T - 2, -1, -1):
        w = ll_state[t + 1] + msg[t + 1]
        wmax = w.max()
        if not np.isfinite(wmax):
            raise NumericalError(f"backward message degenerate at modeled step {t + 1}")
        with np.errstate(divide="ignore"):
            lm = np.log(K @ np.exp(w - wmax))
        msg[t] = lm - lm.max()
    return msg


def sample_states(
    residuals: np.ndarray,
    params: ModelParams,
    pi_n: np.ndarray,
    messages: np.ndarray,
    rng: np.random.Generator,
    p: Optional[int] = None,
    n_paths: Optional[int] = None,
) -> SeriesState:
    """Forward-sample (d, z, o) trajectories given backward messages.

    Returns one SeriesState, or a list of n_paths independent draws when
    n_paths is given (the per-series tables are shared across draws).
    """
    if p is None:
        p = params.words[0].A.shape[1] // params.m
    ll_state, K, w0, omega = _series_tables(residuals, params, pi_n, p)
    if n_paths is None:
        d, z, o = _forward_sample(ll_state, K, w0, messages, params.phi, omega, rng)
        return SeriesState(d=d, z=z, o=o, pi_n=pi_n)
    out = []
    for _ in range(n_paths):
        d, z, o = _forward_sample(ll_state, K, w0, messages, params.phi, omega, rng)
        out.append(SeriesState(d=d, z=z, o=o, pi_n=pi_n))
    return out


def _forward_sample(ll_state, K, w0, msg, phi, omega, rng):
    T, S = ll_state.shape
    D, L = phi.shape
    with np.errstate(divide="ignore"):
        logK = np.log(K)
        logw0 = np.log(w0)
    d = np.empty(T, dtype=np.int64)
    z = np.empty(T, dtype=np.int64)
    o = np.zeros(T, dtype=np.int8)
    logp = logw0 + ll_state[0] + msg[0]
    s = categorical(rng, np.exp(logp - logp.max()))
    d[0], z[0] = divmod(s, L)
    for t in range(1, T):
        logp = logK[s] + ll_state[t] + msg[t]
        s = categorical(rng, np.exp(logp - logp.max()))
        d[t], z[t] = divmod(s, L)
        if d[t] == d[t - 1] and z[t] == z[t - 1]:
            w = omega[z[t]]
            p_cont = w / (w + (1.0 - w) * phi[d[t], z[t]])
            o[t] = 1 if rng.random() < p_cont else 0
    return d, z, o


def state_posteriors(
    residuals: np.ndarray, params: ModelParams, pi_n: np.ndarray, p: Optional[int] = None
) -> np.ndarray:
    """Exact per-step posterior over (d, z): (T-p, D, L) array.

    Diagnostic companion to backward_messages: combines them with a forward
    filter, so small instances can be checked against path enumeration.
    """
    if p is None:
        p = params.words[0].A.shape[1] // params.m
    D, L = params.D, params.L
    ll_state, K, w0, _ = _series_tables(residuals, params, pi_n, p)
    msg = _backward(ll_state, K)
    T, S = ll_state.shape
    post = np.empty((T, S))
    with np.errstate(divide="ignore"):
        la = np.log(w0) + ll_state[0]
    g = la + msg[0]
    post[0] = np.exp(g - logsumexp(g))
    for t in range(1, T):
        amax = la.max()
        with np.errstate(divide="ignore"):
            la = np.log(np.exp(la - amax) @ K) + amax + ll_state[t]
        g = la + msg[t]
        post[t] = np.exp(g - logsumexp(g))
    return post.reshape(T, D, L)


# ---------------------------------------------------------------------------
# chain orchestration
# ---------------------------------------------------------------------------


@dataclass
class ChainState:
    """Mutable runtime state of one chain."""

    params: ModelParams
    states: list
    rng: np.random.Generator
    iteration: int = 0
    stats: Optional[SuffStats] = None


def _series_masks(corpus: Corpus, config: GibbsConfig):
    if not config.supervised:
        return [None] * corpus.n_series
    if corpus.labels is None:
        raise LabelMaskError("supervised run requested but the corpus carries no label masks")
    return list(corpus.labels)


def init_chain(
    corpus: Corpus, hyper: Hyperparameters, config: GibbsConfig, rng: np.random.Generator
) -> ChainState:
    """Prior-draw parameters and roll prior state paths (not data-informed)."""
    for n, T in enumerate(corpus.lengths):
        if T <= hyper.p:
            raise ShapeError(f"series {n} has length {T} <= AR order p={hyper.p}")
    masks = _series_masks(corpus, config)
    if config.fixed_topics is not None:
        frozen = config.fixed_topics
        fresh = sample_prior_params(hyper, corpus.m, rng)
        params = ModelParams(
            beta=frozen.beta, phi=frozen.phi, words=frozen.words, pi_g=fresh.pi_g
        )
    else:
        params = sample_prior_params(hyper, corpus.m, rng)
    states = []
    for n, T in enumerate(corpus.lengths):
        lam = masks[n]
        pi_n = sample_pi_n(params, hyper, rng, lam=lam)
        d, z, o = simulate_state_path(params, pi_n, T - hyper.p, rng)
        states.append(SeriesState(d=d, z=z, o=o, pi_n=pi_n, lam=lam))
    return ChainState(params=params, states=states, rng=rng, iteration=0)


def gibbs_sweep(
    chain: ChainState, corpus: Corpus, hyper: Hyperparameters, config: GibbsConfig
) -> None:
    """Advance the chain by one full iteration, in place."""
    rng = chain.rng
    params = chain.params
    p = hyper.p
    new_states = []
    for resid, old in zip(corpus.residuals, chain.states):
        ll_state, K, w0, omega = _series_tables(resid, params, old.pi_n, p)
        msg = _backward(ll_state, K)
        d, z, o = _forward_sample(ll_state, K, w0, msg, params.phi, omega, rng)
        new_states.append(SeriesState(d=d, z=z, o=o, pi_n=old.pi_n, lam=old.lam))
    stats = collect_counts(new_states, hyper.D, hyper.L)
    if config.fixed_topics is None:
        beta = sample_beta(stats, hyper, rng)
        phi = sample_phi(beta, stats, hyper, rng)
        omegas = sample_omega(stats, hyper, rng)
        avs = sample_words(corpus, new_states, hyper, rng)
        words = tuple(
            ArWord(A=A, V=V, omega=float(w)) for (A, V), w in zip(avs, omegas)
        )
    else:
        beta, phi, words = params.beta, params.phi, params.words
    labels = [st.lam for st in new_states]
    pi_g, pi_ns = sample_transitions(stats, hyper, labels, rng)
    chain.params = ModelParams(beta=beta, phi=phi, words=words, pi_g=pi_g)
    chain.states = [
        SeriesState(d=st.d, z=st.z, o=st.o, pi_n=pi_ns[n], lam=st.lam)
        for n, st in enumerate(new_states)
    ]
    chain.stats = stats
    chain.iteration += 1


def run_chain(
    corpus: Corpus,
    hyper: Hyperparameters,
    config: GibbsConfig,
    rng: Optional[np.random.Generator] = None,
    on_iteration: Optional[Callable[[ChainState], None]] = None,
    state: Optional[ChainState] = None,
) -> list:
    """Run one chain and return the thinned post-burn-in samples.

    Each emitted sample is a (ModelParams, [SeriesState]) pair.  Pass `state`
    to continue a chain loaded from a checkpoint; iterations already done
    count toward n_iter.
    """
    if state is None:
        if rng is None:
            rng = np.random.default_rng(config.seed)
        state = init_chain(corpus, hyper, config, rng)
    samples = []
    while state.iteration < config.n_iter:
        gibbs_sweep(state, corpus, hyper, config)
        it = state.iteration
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            samples.append((state.params, list(state.states)))
        if on_iteration is not None:
            on_iteration(state)
    return samples


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def _dirichlet_logpdf(x: np.ndarray, alpha: np.ndarray) -> float:
    """Dirichlet log density restricted to the positive-concentration support."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    sup = alpha > 0
    if np.any(x[~sup] > 1e-12):
        return -np.inf
    x, alpha = x[sup], alpha[sup]
    with np.errstate(divide="ignore"):
        return float(
            gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1.0) * np.log(x))
        )


def _matrix_normal_logpdf(A, M, U, Kcolprec) -> float:
    """log MN(A; M, U, Kcolprec^-1) with U the row covariance."""
    m, q = A.shape
    Lu = np.linalg.cholesky(U)
    Ck = np.linalg.cholesky(Kcolprec)
    R = A - M
    half = sla.solve_triangular(Lu, R, lower=True)  # U^-1 quadratic form half
    quad = float(np.sum((half @ Ck) ** 2))
    logdet_u = 2.0 * np.sum(np.log(np.diag(Lu)))
    logdet_k = 2.0 * np.sum(np.log(np.diag(Ck)))
    return float(-0.5 * (m * q * np.log(2 * np.pi) + q * logdet_u - m * logdet_k + quad))


def log_joint(
    corpus: Corpus, hyper: Hyperparameters, params: ModelParams, states
) -> float:
    """Complete-data log joint of parameters, states, and observations."""
    p = hyper.p
    D, L = hyper.D, hyper.L
    prior = hyper.mniw_for(corpus.m)
    total = _dirichlet_logpdf(params.beta, np.full(L, hyper.gamma / L))
    for d in range(D):
        total += _dirichlet_logpdf(params.phi[d], hyper.eta * params.beta)
    for w in params.words:
        total += float(sstats.invwishart.logpdf(w.V, df=prior.nu0, scale=prior.S0))
        total += _matrix_normal_logpdf(w.A, prior.M0, w.V, prior.K0)
        total += float(sstats.beta.logpdf(w.omega, hyper.rho / 2.0, hyper.rho / 2.0))
    alpha0 = np.full(D, hyper.alpha_g / D)
    total += _dirichlet_logpdf(params.pi_g[0], alpha0)
    for i in range(D):
        a = alpha0.copy()
        a[i] += hyper.kappa
        total += _dirichlet_logpdf(params.pi_g[1 + i], a)
    omega = np.array([w.omega for w in params.words])
    with np.errstate(divide="ignore"):
        log_phi = np.log(params.phi)
    for resid, st in zip(corpus.residuals, states):
        for i in range(D + 1):
            total += _dirichlet_logpdf(
                st.pi_n[i], hyper.alpha_l * masked_pi_g_row(params.pi_g[i], st.lam)
            )
        d, z, o = st.d, st.z, st.o
        with np.errstate(divide="ignore"):
            log_pi = np.log(st.pi_n)
        total += float(log_pi[0, d[0]] + log_phi[d[0], z[0]])
        for t in range(1, d.shape[0]):
            total += float(log_pi[1 + d[t - 1], d[t]])
            if d[t] == d[t - 1]:
                w = omega[z[t - 1]]
                if o[t] == 1:
                    total += float(np.log(w))
                else:
                    total += float(np.log1p(-w) + log_phi[d[t], z[t]])
            else:
                total += float(log_phi[d[t], z[t]])
        X = build_design(resid, p)
        Y = resid[p:].T
        ll = loglik_table(Y, X, params.words)
        total += float(ll[np.arange(ll.shape[0]), z].sum())
    return total
