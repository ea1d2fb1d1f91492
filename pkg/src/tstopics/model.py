"""Model types and forward simulation.

The generative story for one series: a topic path d_t follows a Markov chain
with a series-specific transition matrix; within a stable topic, an
autoregressive regime ("word") persists with per-step continuation
probability omega and is re-drawn from the topic's word distribution at each
boundary; observations follow the active word's AR(p) law.

Index conventions used throughout the package:
  * topics d and words z are 0-based integers,
  * transition matrices have shape (D+1, D) where row 0 is the initial-state
    distribution and row 1+i holds transitions out of topic i,
  * the first p observations of a series are conditioning context only;
    latent states exist for observation indices p..T-1, so latent arrays
    have length T - p and o[0] == 0 always.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import LabelMaskError, ParameterError, ShapeError


def default_mniw_prior(m: int, p: int) -> "MniwPrior":
    """Weakly informative matrix-normal inverse-Wishart prior for AR(p) words."""
    q = m * p
    return MniwPrior(
        M0=np.zeros((m, q)),
        K0=0.1 * np.eye(q),
        S0=float(m) * np.eye(m),
        nu0=m + 2.0,
    )


@dataclass(frozen=True)
class MniwPrior:
    """Conjugate prior for one word's (A, V): V ~ IW(S0, nu0), A|V ~ MN(M0, V, K0^-1)."""

    M0: np.ndarray
    K0: np.ndarray
    S0: np.ndarray
    nu0: float

    def __post_init__(self):
        M0 = np.asarray(self.M0, dtype=float)
        K0 = np.asarray(self.K0, dtype=float)
        S0 = np.asarray(self.S0, dtype=float)
        object.__setattr__(self, "M0", M0)
        object.__setattr__(self, "K0", K0)
        object.__setattr__(self, "S0", S0)
        m, q = M0.shape
        if K0.shape != (q, q) or S0.shape != (m, m):
            raise ShapeError(
                f"MNIW prior shapes inconsistent: M0 {M0.shape}, K0 {K0.shape}, S0 {S0.shape}"
            )
        if not np.allclose(K0, K0.T) or not np.allclose(S0, S0.T):
            raise ParameterError("K0 and S0 must be symmetric")
        if self.nu0 <= m - 1:
            raise ParameterError(f"nu0 must exceed m-1={m - 1} for a proper IW, got {self.nu0}")

    @property
    def m(self) -> int:
        return self.M0.shape[0]

    @property
    def q(self) -> int:
        return self.M0.shape[1]


@dataclass(frozen=True)
class Hyperparameters:
    """Fixed concentrations and sizes for one run.

    gamma, eta: concentrations of the global and per-topic word distributions.
    alpha_g, alpha_l: concentrations of the global and series transition rows.
    kappa: extra mass on self-transitions of the global topic matrix.
    rho: symmetric Beta concentration on word continuation probabilities.
    L: word-vocabulary truncation level; D: number of topics; p: AR order.
    """

    D: int
    L: int = 15
    gamma: float = 10.0
    eta: float = 10.0
    alpha_g: float = 10.0
    alpha_l: float = 10.0
    kappa: float = 25.0
    rho: float = 20.0
    p: int = 1
    mniw_prior: Optional[MniwPrior] = None

    def __post_init__(self):
        for name in ("gamma", "eta", "alpha_g", "alpha_l", "rho"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be strictly positive")
        if self.kappa < 0:
            raise ParameterError("kappa must be nonnegative")
        for name in ("L", "D", "p"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")

    def mniw_for(self, m: int) -> MniwPrior:
        """The configured MNIW prior, or the default for dimension m."""
        if self.mniw_prior is not None:
            if self.mniw_prior.m != m or self.mniw_prior.q != m * self.p:
                raise ShapeError(
                    f"MNIW prior is {self.mniw_prior.m}x{self.mniw_prior.q}, "
                    f"need {m}x{m * self.p}"
                )
            return self.mniw_prior
        return default_mniw_prior(m, self.p)


@dataclass(frozen=True)
class ArWord:
    """One vocabulary entry: AR coefficients A (m x m*p), noise covariance V,
    and per-step continuation probability omega (mean duration 1/(1-omega))."""

    A: np.ndarray
    V: np.ndarray
    omega: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "V", V)
        m = A.shape[0]
        if V.shape != (m, m):
            raise ShapeError(f"V must be {m}x{m}, got {V.shape}")
        if not 0.0 < self.omega < 1.0:
            raise ParameterError(f"omega must lie in (0,1), got {self.omega}")

    @property
    def m(self) -> int:
        return self.A.shape[0]


def _check_simplex(v: np.ndarray, what: str, tol: float = 1e-12) -> None:
    v = np.asarray(v)
    if np.any(v < 0) or abs(float(v.sum()) - 1.0) > tol * max(1, v.size):
        raise ParameterError(f"{what} is not a probability vector (sum={v.sum()!r})")


@dataclass(frozen=True)
class ModelParams:
    """Global state of one Gibbs sample.

    beta: (L,) global word weights; phi: (D, L) per-topic word distributions;
    words: L ArWord entries; pi_g: (D+1, D) global transitions, row 0 initial.
    """

    beta: np.ndarray
    phi: np.ndarray
    words: tuple
    pi_g: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        pi_g = np.atleast_2d(np.asarray(self.pi_g, dtype=float))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "pi_g", pi_g)
        object.__setattr__(self, "words", tuple(self.words))
        L = beta.shape[0]
        D = phi.shape[0]
        if phi.shape != (D, L):
            raise ShapeError(f"phi must be (D,{L}), got {phi.shape}")
        if len(self.words) != L:
            raise ShapeError(f"need {L} words, got {len(self.words)}")
        if pi_g.shape != (D + 1, D):
            raise ShapeError(f"pi_g must be ({D + 1},{D}), got {pi_g.shape}")
        _check_simplex(beta, "beta")
        for d in range(D):
            _check_simplex(phi[d], f"phi[{d}]")
        for i in range(D + 1):
            _check_simplex(pi_g[i], f"pi_g[{i}]")

    @property
    def L(self) -> int:
        return self.beta.shape[0]

    @property
    def D(self) -> int:
        return self.phi.shape[0]

    @property
    def m(self) -> int:
        return self.words[0].m


@dataclass(frozen=True)
class SeriesState:
    """Latent trajectory of one series over its modeled steps.

    d, z: topic/word indices (0-based); o: switch indicators, o[t]=1 means the
    word carried over from t-1.  pi_n is the series transition matrix and lam
    the optional topic mask (1 = topic allowed).
    """

    d: np.ndarray
    z: np.ndarray
    o: np.ndarray
    pi_n: np.ndarray
    lam: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=np.int64))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int64))
        object.__setattr__(self, "o", np.asarray(self.o, dtype=np.int8))
        object.__setattr__(self, "pi_n", np.atleast_2d(np.asarray(self.pi_n, dtype=float)))
        if self.lam is not None:
            object.__setattr__(self, "lam", np.asarray(self.lam, dtype=np.int8))

    @property
    def T(self) -> int:
        return self.d.shape[0]


def validate_series_state(state: SeriesState, D: int, L: int) -> None:
    """Raise if the (d, z, o) trajectory violates any structural invariant."""
    d, z, o = state.d, state.z, state.o
    T = d.shape[0]
    if z.shape[0] != T or o.shape[0] != T:
        raise ShapeError("d, z, o must have equal length")
    if T == 0:
        return
    if np.any(d < 0) or np.any(d >= D):
        raise ParameterError("topic index out of range")
    if np.any(z < 0) or np.any(z >= L):
        raise ParameterError("word index out of range")
    if o[0] != 0:
        raise ParameterError("a word must start at the first modeled step (o[0]=0)")
    changed = d[1:] != d[:-1]
    cont = o[1:] == 1
    if np.any(cont & changed):
        raise ParameterError("o=1 at a topic change")
    if np.any(cont & (z[1:] != z[:-1])):
        raise ParameterError("o=1 but the word changed")
    if state.lam is not None:
        lam = state.lam
        if lam.sum() < 1:
            raise LabelMaskError("label mask has no allowed topic")
        if np.any(lam[d] == 0):
            raise ParameterError("topic path visits a masked-out topic")
    if state.pi_n.shape != (D + 1, D):
        raise ShapeError(f"pi_n must be ({D + 1},{D})")


@dataclass
class Corpus:
    """Observed multivariate series plus preprocessed residuals.

    series[n] and residuals[n] are (T_n, m) arrays; grades and labels are
    optional per-series metadata (labels entries may be None for unlabeled
    series under partial supervision).
    """

    series: list
    residuals: list
    series_ids: list = field(default_factory=list)
    grades: Optional[list] = None
    labels: Optional[list] = None

    def __post_init__(self):
        self.series = [np.atleast_2d(np.asarray(y, dtype=float)) for y in self.series]
        self.series = [y.T if y.shape[0] == 1 and y.shape[1] > 1 else y for y in self.series]
        self.residuals = [np.atleast_2d(np.asarray(y, dtype=float)) for y in self.residuals]
        self.residuals = [
            y.T if y.shape[0] == 1 and y.shape[1] > 1 else y for y in self.residuals
        ]
        if not self.series_ids:
            self.series_ids = [f"s{n:03d}" for n in range(len(self.series))]
        ms = {y.shape[1] for y in self.series}
        if len(ms) > 1:
            raise ShapeError(f"series disagree on dimension m: {sorted(ms)}")

    @property
    def n_series(self) -> int:
        return len(self.series)

    @property
    def m(self) -> int:
        return self.series[0].shape[1] if self.series else 0

    @property
    def lengths(self) -> list:
        return [y.shape[0] for y in self.series]


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------


def dirichlet(rng: np.random.Generator, alpha: np.ndarray) -> np.ndarray:
    """Dirichlet draw that tolerates exact zeros in the concentration vector.

    Entries with alpha=0 receive exactly zero mass (gamma(0) draws are 0).
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or not np.any(alpha > 0):
        raise ParameterError("Dirichlet concentration must be nonnegative with a positive entry")
    g = rng.gamma(alpha)
    s = g.sum()
    if s <= 0:  # all positive-alpha draws underflowed; retry once with scaling
        g = rng.gamma(alpha * 10.0)
        s = g.sum()
        if s <= 0:
            raise ParameterError(f"degenerate Dirichlet draw for alpha={alpha}")
    return g / s


def categorical(rng: np.random.Generator, p: np.ndarray) -> int:
    """Draw an index from an unnormalized nonnegative weight vector."""
    c = np.cumsum(p)
    return int(np.searchsorted(c, rng.random() * c[-1], side="right"))


def _sample_mniw_prior(prior: MniwPrior, rng: np.random.Generator):
    # Local import; observation holds the shared MNIW sampling path.
    from .observation import MniwPosterior, sample_mniw

    post = MniwPosterior(Mn=prior.M0, Kn=prior.K0, Sn=prior.S0, nun=prior.nu0)
    return sample_mniw(post, rng)


def sample_prior_params(hyper: Hyperparameters, m: int, rng: np.random.Generator) -> ModelParams:
    """Draw a full parameter set from the prior."""
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    L, D = hyper.L, hyper.D
    beta = dirichlet(rng, np.full(L, hyper.gamma / L))
    phi = np.stack([dirichlet(rng, hyper.eta * beta) for _ in range(D)])
    prior = hyper.mniw_for(m)
    words = []
    for _ in range(L):
        A, V = _sample_mniw_prior(prior, rng)
        omega = float(rng.beta(hyper.rho / 2.0, hyper.rho / 2.0))
        words.append(ArWord(A=A, V=V, omega=omega))
    pi_g = np.empty((D + 1, D))
    pi_g[0] = dirichlet(rng, np.full(D, hyper.alpha_g / D))
    for i in range(D):
        alpha = np.full(D, hyper.alpha_g / D)
        alpha[i] += hyper.kappa
        pi_g[1 + i] = dirichlet(rng, alpha)
    return ModelParams(beta=beta, phi=phi, words=tuple(words), pi_g=pi_g)


def masked_pi_g_row(pi_g_row: np.ndarray, lam: Optional[np.ndarray]) -> np.ndarray:
    """Restrict a global transition row to the allowed topics and renormalize."""
    if lam is None:
        return pi_g_row
    lam = np.asarray(lam, dtype=float)
    if lam.sum() < 1:
        raise LabelMaskError("label mask has no allowed topic")
    if np.all(lam == 1):
        return pi_g_row
    w = pi_g_row * lam
    return w / w.sum()


def sample_pi_n(
    params: ModelParams,
    hyper: Hyperparameters,
    rng: np.random.Generator,
    lam: Optional[np.ndarray] = None,
    counts: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Draw a series transition matrix around the global one.

    Row i ~ Dirichlet(alpha_l * mask(pi_g[i]) + counts[i]); masked-out columns
    carry zero concentration and therefore exactly zero sampled mass.
    """
    D = params.D
    pi_n = np.empty((D + 1, D))
    for i in range(D + 1):
        alpha = hyper.alpha_l * masked_pi_g_row(params.pi_g[i], lam)
        if counts is not None:
            alpha = alpha + counts[i]
        pi_n[i] = dirichlet(rng, alpha)
    return pi_n


def simulate_state_path(
    params: ModelParams,
    pi_n: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
) -> tuple:
    """Roll the (d, z, o) dynamics forward for n_steps modeled steps."""
    d = np.empty(n_steps, dtype=np.int64)
    z = np.empty(n_steps, dtype=np.int64)
    o = np.zeros(n_steps, dtype=np.int8)
    omegas = np.array([w.omega for w in params.words])
    d[0] = categorical(rng, pi_n[0])
    z[0] = categorical(rng, params.phi[d[0]])
    for t in range(1, n_steps):
        d[t] = categorical(rng, pi_n[1 + d[t - 1]])
        if d[t] == d[t - 1] and rng.random() < omegas[z[t - 1]]:
            o[t] = 1
            z[t] = z[t - 1]
        else:
            o[t] = 0
            z[t] = categorical(rng, params.phi[d[t]])
    return d, z, o


def simulate_series(
    params: ModelParams,
    pi_n: np.ndarray,
    T: int,
    y_init: np.ndarray,
    rng: np.random.Generator,
) -> tuple:
    """Generate one series of total length T given p seed observations.

    Returns (observations (T, m), SeriesState of length T - p).  The seeds
    occupy observations[:p] and receive no latent state.
    """
    hyper_p = _infer_p(params, y_init)
    m = params.m
    y_init = np.atleast_2d(np.asarray(y_init, dtype=float))
    if y_init.shape == (m, hyper_p) and m != hyper_p:
        y_init = y_init.T
    if y_init.shape != (hyper_p, m):
        raise ShapeError(f"y_init must be ({hyper_p},{m}), got {y_init.shape}")
    if T <= hyper_p:
        raise ShapeError(f"series length T={T} must exceed AR order p={hyper_p}")
    n_steps = T - hyper_p
    d, z, o = simulate_state_path(params, pi_n, n_steps, rng)
    y = np.empty((T, m))
    y[:hyper_p] = y_init
    chols = [np.linalg.cholesky(w.V) for w in params.words]
    for t in range(n_steps):
        i = hyper_p + t
        x = y[i - hyper_p:i][::-1].reshape(-1)  # most recent lag first
        w = params.words[z[t]]
        y[i] = w.A @ x + chols[z[t]] @ rng.standard_normal(m)
    state = SeriesState(d=d, z=z, o=o, pi_n=pi_n)
    return y, state


def _infer_p(params: ModelParams, y_init) -> int:
    m = params.m
    q = params.words[0].A.shape[1]
    if q % m != 0:
        raise ShapeError(f"word coefficient width {q} is not a multiple of m={m}")
    return q // m


def simulate_corpus(
    params: ModelParams,
    hyper: Hyperparameters,
    n_series: int,
    lengths,
    rng: np.random.Generator,
    labels: Optional[Sequence] = None,
) -> tuple:
    """Simulate a corpus of n_series series; returns (Corpus, list of SeriesState).

    Per series, pi_n is drawn around pi_g (masked by labels[n] when given) and
    the p seed observations are standard normal.  Residuals are set equal to
    the simulated series since the generator produces dynamics directly.
    """
    if np.isscalar(lengths):
        lengths = [int(lengths)] * n_series
    lengths = [int(t) for t in lengths]
    if len(lengths) != n_series:
        raise ShapeError(f"need {n_series} lengths, got {len(lengths)}")
    if labels is not None and len(labels) != n_series:
        raise ShapeError(f"need {n_series} label masks, got {len(labels)}")
    m = params.m
    series, states = [], []
    for n in range(n_series):
        lam = None if labels is None else labels[n]
        pi_n = sample_pi_n(params, hyper, rng, lam=lam)
        y_init = rng.standard_normal((hyper.p, m))
        y, state = simulate_series(params, pi_n, lengths[n], y_init, rng)
        if lam is not None:
            state = SeriesState(d=state.d, z=state.z, o=state.o, pi_n=pi_n, lam=lam)
        series.append(y)
        states.append(state)
    corpus = Corpus(
        series=series,
        residuals=[y.copy() for y in series],
        labels=list(labels) if labels is not None else None,
    )
    return corpus, states
