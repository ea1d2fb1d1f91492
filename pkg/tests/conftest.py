import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tstopics import ArWord, Hyperparameters, ModelParams


def make_params(D, L, rng, m=1, p=1, a_values=None, v_scale=0.1, omega=0.8, sticky=0.85):
    """Hand-assembled well-behaved parameters for deterministic tests."""
    beta = np.full(L, 1.0 / L)
    phi = rng.dirichlet(np.full(L, 2.0), size=D)
    words = []
    for l in range(L):
        if a_values is not None and m == 1 and p == 1:
            A = np.array([[a_values[l]]])
        else:
            A = 0.5 * rng.standard_normal((m, m * p)) / np.sqrt(m * p)
        V = v_scale * np.eye(m)
        words.append(ArWord(A=A, V=V, omega=omega))
    pi_g = np.full((D + 1, D), (1.0 - sticky) / max(D - 1, 1))
    pi_g[0] = 1.0 / D
    for i in range(D):
        pi_g[1 + i, i] = sticky if D > 1 else 1.0
    pi_g /= pi_g.sum(axis=1, keepdims=True)
    return ModelParams(beta=beta, phi=phi, words=tuple(words), pi_g=pi_g)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
