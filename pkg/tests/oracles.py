"""Independent brute-force oracles used to check the library's fast paths.

Everything here is deliberately naive: explicit inverses, exhaustive path
enumeration, O(N^2) double loops, direct convolution and DFT sums.  None of
it shares code with the implementation under test beyond the data types.
"""

import itertools

import numpy as np


def naive_gaussian_logpdf(y, mean, cov):
    """Multivariate normal log density via explicit inverse and determinant."""
    y = np.asarray(y, dtype=float).reshape(-1)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.atleast_2d(cov)
    m = y.shape[0]
    diff = y - mean
    quad = diff @ np.linalg.inv(cov) @ diff
    return -0.5 * (m * np.log(2 * np.pi) + np.log(np.linalg.det(cov)) + quad)


def enum_path_posterior(resid, params, pi_n, p):
    """Exact posterior over complete (d, z, o) paths by exhaustive enumeration.

    Returns a dict mapping ((d0,z0,o0), (d1,z1,o1), ...) to its probability.
    """
    D, L = params.D, params.L
    y = np.atleast_2d(np.asarray(resid, dtype=float))
    if y.shape[0] == 1 and y.shape[1] > 1:
        y = y.T
    T = y.shape[0]
    T_lat = T - p
    omegas = [w.omega for w in params.words]
    ll = np.empty((T_lat, L))
    for t in range(T_lat):
        i = p + t
        x = y[i - p:i][::-1].reshape(-1)
        for l in range(L):
            w = params.words[l]
            ll[t, l] = naive_gaussian_logpdf(y[i], w.A @ x, w.V)
    probs = {}
    for path in itertools.product(range(D * L * 2), repeat=T_lat):
        logp = 0.0
        ok = True
        prev = None
        key = []
        for t, code in enumerate(path):
            d, rem = divmod(code, L * 2)
            z, o = divmod(rem, 2)
            key.append((d, z, o))
            if t == 0:
                if o != 0:
                    ok = False
                    break
                logp += np.log(pi_n[0, d]) + np.log(params.phi[d, z]) + ll[t, z]
            else:
                pd, pz = prev
                logp += np.log(pi_n[1 + pd, d])
                if d != pd:
                    if o != 0:
                        ok = False
                        break
                    logp += np.log(params.phi[d, z])
                else:
                    if o == 1:
                        if z != pz:
                            ok = False
                            break
                        logp += np.log(omegas[pz])
                    else:
                        logp += np.log(1.0 - omegas[pz]) + np.log(params.phi[d, z])
                logp += ll[t, z]
            prev = (d, z)
        if ok:
            probs[tuple(key)] = np.exp(logp)
    total = sum(probs.values())
    return {k: v / total for k, v in probs.items()}


def enum_slice_marginals(path_posterior, T_lat, D, L):
    """Per-slice (d, z) marginals from an enumerated path posterior."""
    marg = np.zeros((T_lat, D, L))
    for path, pr in path_posterior.items():
        for t, (d, z, _) in enumerate(path):
            marg[t, d, z] += pr
    return marg


def brute_rank_score(H, G):
    """The pairwise definition as a literal double loop."""
    H = np.asarray(H)
    G = np.asarray(G)
    score = 0
    for n in range(len(H)):
        for m in range(len(H)):
            if H[n] > H[m]:
                score += int(G[n]) - int(G[m])
    return score


def brute_max_rank_score(G):
    G = np.asarray(G)
    total = 0
    for n in range(len(G)):
        for m in range(n + 1, len(G)):
            total += abs(int(G[n]) - int(G[m]))
    return total


def ols_coefficients(y):
    """Least squares AR(1) coefficient from a univariate series."""
    y = np.asarray(y, dtype=float).reshape(-1)
    x, t = y[:-1], y[1:]
    return float((x @ t) / (x @ x))


def ridge_solution(Y, X, K0):
    """Posterior mean with M0 = 0: (Y X^T)(X X^T + K0)^-1 via explicit inverse."""
    return (Y @ X.T) @ np.linalg.inv(X @ X.T + K0)


def direct_moving_average(x, window):
    """Symmetric truncated centered moving average by a literal loop."""
    x = np.asarray(x, dtype=float)
    T = x.shape[0]
    r = window // 2
    out = np.empty_like(x)
    for t in range(T):
        rt = min(r, t, T - 1 - t)
        out[t] = x[t - rt: t + rt + 1].mean(axis=0)
    return out


def direct_dft_magnitude(x, k):
    """|sum_t x_t exp(-2 pi i k t / T)| / T evaluated as a literal sum."""
    x = np.asarray(x, dtype=float).reshape(-1)
    T = x.shape[0]
    acc = 0.0 + 0.0j
    for t in range(T):
        acc += x[t] * np.exp(-2j * np.pi * k * t / T)
    return abs(acc) / T


def dirichlet_mean(alpha):
    alpha = np.asarray(alpha, dtype=float)
    return alpha / alpha.sum()


def dirichlet_mean_se(alpha, n_draws):
    """Per-coordinate standard error of the empirical mean of n_draws draws."""
    alpha = np.asarray(alpha, dtype=float)
    a0 = alpha.sum()
    var = alpha * (a0 - alpha) / (a0 * a0 * (a0 + 1.0))
    return np.sqrt(var / n_draws)
