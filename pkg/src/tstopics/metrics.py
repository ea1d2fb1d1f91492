"""Evaluation quantities: pairwise rank score, word-topic pointwise mutual
information, smoothed topic posteriors, per-series topic proportions, and the
FFT baseline features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data_io import moving_average_centered
from .errors import ParameterError, ShapeError
from .gibbs import collect_counts


@dataclass(frozen=True)
class RankInput:
    """A strict health ranking (permutation of 1..N, higher = more mass on
    the healthy topic) paired with integer severity grades."""

    health_rank: np.ndarray
    grades: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.health_rank, dtype=np.int64)
        g = np.asarray(self.grades, dtype=np.int64)
        object.__setattr__(self, "health_rank", h)
        object.__setattr__(self, "grades", g)
        if h.shape != g.shape or h.ndim != 1:
            raise ShapeError("health_rank and grades must be 1-d of equal length")
        if sorted(h.tolist()) != list(range(1, h.shape[0] + 1)):
            raise ParameterError("health_rank must be a permutation of 1..N")


@dataclass(frozen=True)
class RankScore:
    """Pairwise concordance score, its maximum, and score/max as a percent."""

    score: int
    max_score: int
    percent: float


def rank_score(inp: RankInput) -> RankScore:
    """Sum of grade differences over ordered pairs the ranking places above.

    score = sum_{n,m} I(H(n) > H(m)) (G_n - G_m); the maximum over rankings
    is sum_{n<m} |G_n - G_m|, attained by any grade-sorted ordering.
    """
    H = inp.health_rank
    G = inp.grades
    above = H[:, None] > H[None, :]
    diff = G[:, None] - G[None, :]
    score = int(np.sum(diff[above]))
    max_score = int(np.abs(diff).sum() // 2)
    percent = 100.0 * score / max_score if max_score > 0 else float("nan")
    return RankScore(score=score, max_score=max_score, percent=percent)


def healthy_topic_frequencies(samples: Sequence, topic: int) -> np.ndarray:
    """Per-series fraction of (sample, timestep) pairs spent in the topic."""
    if not samples:
        raise ParameterError("need at least one sample")
    n_series = len(samples[0][1]) if isinstance(samples[0], tuple) else len(samples[0])
    acc = np.zeros(n_series)
    for sample in samples:
        states = sample[1] if isinstance(sample, tuple) else sample
        for n, st in enumerate(states):
            acc[n] += np.mean(st.d == topic)
    return acc / len(samples)


def healthy_ranking(samples: Sequence, healthy_topic: int) -> np.ndarray:
    """Ranks 1..N, higher = more healthy-topic mass.

    Ties are broken deterministically by ingestion order: of two tied series,
    the earlier one receives the lower rank.
    """
    freqs = healthy_topic_frequencies(samples, healthy_topic)
    order = np.argsort(freqs, kind="stable")
    ranks = np.empty(freqs.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, freqs.shape[0] + 1)
    return ranks


@dataclass(frozen=True)
class WordTopicMi:
    """Pointwise mutual information and topic-given-word table, both (L, D)."""

    pmi: np.ndarray
    p_topic_given_word: np.ndarray


def pooled_word_start_counts(samples: Sequence, D: int, L: int) -> np.ndarray:
    """Aggregate word-start counts m[d, l] over emitted samples."""
    total = np.zeros((D, L), dtype=np.int64)
    for sample in samples:
        states = sample[1] if isinstance(sample, tuple) else sample
        total += collect_counts(states, D, L).m_dl
    return total


def word_topic_mi(counts: np.ndarray) -> WordTopicMi:
    """PMI(l, d) = log p(d,l) - log p(d) - log p(l) from pooled start counts.

    Cells with zero counts report -inf; rows for never-started words report
    NaN in the conditional table.
    """
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ParameterError("word-topic counts are all zero")
    p_dl = counts / total
    p_d = p_dl.sum(axis=1)
    p_l = p_dl.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(p_dl) - np.log(p_d)[:, None] - np.log(p_l)[None, :]
        cond = np.where(p_l[None, :] > 0, p_dl / p_l[None, :], np.nan)
    pmi = np.where(p_dl > 0, pmi, -np.inf)
    return WordTopicMi(pmi=pmi.T, p_topic_given_word=cond.T)


def smooth_topic_posterior(
    chains: Sequence,
    series_index: int,
    topic: int,
    smooth_window: int = 120,
) -> tuple:
    """Posterior P(d_t = topic) averaged over chains and samples, plus a
    centered moving-average smoothing of it.

    `chains` is a sequence of chains, each a sequence of emitted samples.
    """
    if not chains or not any(len(c) for c in chains):
        raise ParameterError("need at least one sample in at least one chain")
    acc = None
    count = 0
    for chain in chains:
        for sample in chain:
            states = sample[1] if isinstance(sample, tuple) else sample
            ind = (states[series_index].d == topic).astype(float)
            acc = ind if acc is None else acc + ind
            count += 1
    posterior = acc / count
    smoothed = moving_average_centered(posterior, smooth_window)
    return posterior, smoothed


def topic_proportion_features(samples: Sequence, D: int) -> np.ndarray:
    """Per-series topic occupancy proportions, (N, D), rows on the simplex."""
    if not samples:
        raise ParameterError("need at least one sample")
    states0 = samples[0][1] if isinstance(samples[0], tuple) else samples[0]
    N = len(states0)
    out = np.zeros((N, D))
    for sample in samples:
        states = sample[1] if isinstance(sample, tuple) else sample
        for n, st in enumerate(states):
            out[n] += np.bincount(st.d, minlength=D) / st.d.shape[0]
    return out / len(samples)


DEFAULT_PERIOD_GRID = tuple(range(4, 44, 4))


def fft_features(
    residuals: np.ndarray, period_grid_minutes: Sequence[int] = DEFAULT_PERIOD_GRID
) -> np.ndarray:
    """Magnitude of the DFT coefficient nearest each grid period, per channel.

    The coefficient at frequency 1/v cycles per minute is taken from the
    nearest rfft bin round(T/v) and normalized by T, so a unit sinusoid at an
    exact grid period scores 0.5.  Returns (n_periods,) for a univariate
    series, else (n_periods, m).
    """
    x = np.asarray(residuals, dtype=float)
    squeeze = x.ndim == 1
    y = x[:, None] if squeeze else x
    T = y.shape[0]
    periods = list(period_grid_minutes)
    if T < max(periods):
        raise ShapeError(f"series length {T} is shorter than the longest period {max(periods)}")
    spec = np.abs(np.fft.rfft(y, axis=0)) / T
    n_bins = spec.shape[0]
    out = np.empty((len(periods), y.shape[1]))
    for j, v in enumerate(periods):
        k = min(int(round(T / v)), n_bins - 1)
        out[j] = spec[k]
    return out[:, 0] if squeeze else out
