"""AR(p) likelihood evaluation and matrix-normal inverse-Wishart conjugacy.

Conditioned on word assignments, the observations split into independent
multivariate linear regressions Y = A X + E with column noise N(0, V); this
module owns the design construction, the Gaussian log density, the conjugate
posterior update, and posterior sampling.  All densities are computed in log
space via Cholesky factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import stats as sstats

from .errors import ConditioningError, ParameterError, ShapeError
from .model import ArWord, MniwPrior

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DesignPair:
    """Regression data for one word: targets Y (m x n) and inputs X (m*p x n)."""

    Y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        if Y.shape[1] != X.shape[1]:
            raise ShapeError(f"Y has {Y.shape[1]} columns but X has {X.shape[1]}")

    @property
    def n(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class MniwPosterior:
    """Posterior MNIW parameters; same roles as the prior fields."""

    Mn: np.ndarray
    Kn: np.ndarray
    Sn: np.ndarray
    nun: float

    def __post_init__(self):
        object.__setattr__(self, "Mn", np.atleast_2d(np.asarray(self.Mn, dtype=float)))
        object.__setattr__(self, "Kn", np.atleast_2d(np.asarray(self.Kn, dtype=float)))
        object.__setattr__(self, "Sn", np.atleast_2d(np.asarray(self.Sn, dtype=float)))

    @property
    def m(self) -> int:
        return self.Mn.shape[0]


def build_design(residuals: np.ndarray, p: int) -> np.ndarray:
    """Stack lagged observations into the (m*p, T-p) input matrix.

    Column j corresponds to observation index p+j and holds the p preceding
    observation vectors, most recent first.
    """
    y = np.atleast_2d(np.asarray(residuals, dtype=float))
    if y.shape[0] == 1 and y.shape[1] > 1:
        y = y.T
    T, m = y.shape
    if T <= p:
        raise ShapeError(f"series length {T} must exceed AR order p={p}")
    blocks = [y[p - 1 - k: T - 1 - k].T for k in range(p)]  # lag k+1
    return np.concatenate(blocks, axis=0)


def _chol_with_jitter(V: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; one bounded jitter retry before failing."""
    try:
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        m = V.shape[0]
        jitter = 1e-9 * np.trace(V) / m
        try:
            return np.linalg.cholesky(V + jitter * np.eye(m))
        except np.linalg.LinAlgError as exc:
            raise ConditioningError("noise covariance is not positive definite") from exc


def ar_loglik(y_t: np.ndarray, x_t: np.ndarray, word: ArWord) -> float:
    """log N(y_t; A x_t, V) for a single time step."""
    y_t = np.asarray(y_t, dtype=float).reshape(-1)
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    m = word.m
    if y_t.shape[0] != m or x_t.shape[0] != word.A.shape[1]:
        raise ShapeError(
            f"dimension mismatch: y {y_t.shape[0]}, x {x_t.shape[0]}, word {word.A.shape}"
        )
    r = y_t - word.A @ x_t
    Lc = _chol_with_jitter(word.V)
    sol = sla.solve_triangular(Lc, r, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(Lc)))
    return float(-0.5 * (m * LOG_2PI + logdet + sol @ sol))


def loglik_table(Y: np.ndarray, X: np.ndarray, words) -> np.ndarray:
    """Per-step log densities for every word: (T_lat, L) array.

    Y is (m, T_lat) targets and X the matching design; one Cholesky per word.
    """
    T = Y.shape[1]
    out = np.empty((T, len(words)))
    for l, w in enumerate(words):
        Lc = _chol_with_jitter(w.V)
        R = Y - w.A @ X
        sol = sla.solve_triangular(Lc, R, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(Lc)))
        out[:, l] = -0.5 * (w.m * LOG_2PI + logdet + np.sum(sol * sol, axis=0))
    return out


def mniw_update(prior: MniwPrior, data: DesignPair) -> MniwPosterior:
    """Conjugate posterior after observing the regression pairs in data."""
    M0, K0, S0, nu0 = prior.M0, prior.K0, prior.S0, prior.nu0
    Y, X = data.Y, data.X
    if Y.shape[0] != M0.shape[0] or X.shape[0] != M0.shape[1]:
        raise ShapeError(
            f"data shapes Y {Y.shape}, X {X.shape} do not match prior {M0.shape}"
        )
    Kn = K0 + X @ X.T
    try:
        cf = sla.cho_factor(Kn, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("posterior column precision Kn is singular") from exc
    rhs = (M0 @ K0 + Y @ X.T).T
    Mn = sla.cho_solve(cf, rhs).T
    # S0 + Y Y^T + M0 K0 M0^T - Mn Kn Mn^T, rewritten as a sum of PSD terms
    # to avoid catastrophic cancellation on large-magnitude data.
    E = Y - Mn @ X
    Dm = Mn - M0
    Sn = S0 + E @ E.T + Dm @ K0 @ Dm.T
    Sn = 0.5 * (Sn + Sn.T)
    return MniwPosterior(Mn=Mn, Kn=Kn, Sn=Sn, nun=nu0 + data.n)


def sample_mniw(post: MniwPosterior, rng: np.random.Generator) -> tuple:
    """Draw (A, V): V ~ IW(Sn, nun), then A | V ~ MN(Mn, V, Kn^-1)."""
    m = post.m
    if post.nun <= m - 1:
        raise ParameterError(f"improper posterior: nun={post.nun} <= m-1={m - 1}")
    if m == 1:
        s = float(post.Sn[0, 0])
        if s <= 0:
            raise ConditioningError("posterior scale Sn is not positive definite")
        # univariate inverse-Wishart is S / chi^2(nu)
        V = np.array([[s / rng.chisquare(post.nun)]])
        Lv = np.sqrt(V)
        Ck = np.linalg.cholesky(post.Kn)
        Z = rng.standard_normal(post.Mn.shape)
        A = post.Mn + Lv @ sla.solve_triangular(Ck.T, Z.T, lower=False).T
        return A, V
    try:
        V = sstats.invwishart.rvs(df=post.nun, scale=post.Sn, random_state=rng)
    except np.linalg.LinAlgError:
        jitter = 1e-9 * np.trace(post.Sn) / m
        try:
            V = sstats.invwishart.rvs(
                df=post.nun, scale=post.Sn + jitter * np.eye(m), random_state=rng
            )
        except np.linalg.LinAlgError as exc:
            raise ConditioningError("posterior scale Sn is not positive definite") from exc
    V = np.atleast_2d(np.asarray(V))
    V = 0.5 * (V + V.T)
    Lv = _chol_with_jitter(V)
    Ck = np.linalg.cholesky(post.Kn)
    Z = rng.standard_normal(post.Mn.shape)
    # column factor of Kn^-1 is Ck^-T, so A = Mn + Lv Z Ck^-1
    A = post.Mn + Lv @ sla.solve_triangular(Ck.T, Z.T, lower=False).T
    return A, V
