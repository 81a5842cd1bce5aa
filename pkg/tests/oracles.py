"""Slow, independent reference computations used to check the fast paths.

Nothing here imports from thalbench internals; each oracle follows a
different route from the code it checks.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
from scipy import stats as sps


def brute_dice(a_coords, b_coords) -> Fraction:
    a = {tuple(map(int, c)) for c in a_coords}
    b = {tuple(map(int, c)) for c in b_coords}
    if not a and not b:
        return Fraction(1)
    return Fraction(2 * len(a & b), len(a) + len(b))


def brute_directed(a_coords, b_coords, spacing=(1.0, 1.0, 1.0)) -> float:
    """Mean over a of the Euclidean distance to the nearest point of b, all pairs."""
    a = np.asarray(a_coords, dtype=float) * np.asarray(spacing)
    b = np.asarray(b_coords, dtype=float) * np.asarray(spacing)
    mins = []
    for start in range(0, len(a), 512):
        block = a[start:start + 512]
        d2 = ((block[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        mins.extend(np.sqrt(d2.min(axis=1)).tolist())
    return math.fsum(mins) / len(a)


def brute_ahd(a_coords, b_coords, spacing=(1.0, 1.0, 1.0)) -> float:
    return max(brute_directed(a_coords, b_coords, spacing),
               brute_directed(b_coords, a_coords, spacing))


def box_epsilon(vectors: np.ndarray, df: int) -> float:
    """Greenhouse-Geisser epsilon from per-subject double-centered vectors."""
    if df == 1:
        return 1.0
    s = np.cov(vectors, rowvar=False)
    return float(np.trace(s) ** 2 / (df * np.trace(s @ s)))


def textbook_rm_anova(data) -> dict:
    """Two-way within-subject ANOVA from the classical means decomposition."""
    y = np.asarray(data, dtype=float)
    n, a, b = y.shape
    g = y.mean()
    m_s = y.mean(axis=(1, 2))
    m_a = y.mean(axis=(0, 2))
    m_b = y.mean(axis=(0, 1))
    m_ab = y.mean(axis=0)
    m_sa = y.mean(axis=2)
    m_sb = y.mean(axis=1)
    ss_total = ((y - g) ** 2).sum()
    ss_s = a * b * ((m_s - g) ** 2).sum()
    ss_a = n * b * ((m_a - g) ** 2).sum()
    ss_b = n * a * ((m_b - g) ** 2).sum()
    ss_ab = n * ((m_ab - m_a[:, None] - m_b[None, :] + g) ** 2).sum()
    ss_as = b * ((m_sa - m_s[:, None] - m_a[None, :] + g) ** 2).sum()
    ss_bs = a * ((m_sb - m_s[:, None] - m_b[None, :] + g) ** 2).sum()
    ss_abs = ss_total - ss_s - ss_a - ss_b - ss_ab - ss_as - ss_bs
    err_total = ss_s + ss_as + ss_bs + ss_abs

    vec_a = m_sa - m_sa.mean(axis=1, keepdims=True)
    vec_b = m_sb - m_sb.mean(axis=1, keepdims=True)
    inter = y - m_sa[:, :, None] - m_sb[:, None, :] + m_s[:, None, None]
    vec_ab = inter.reshape(n, a * b)

    out = {}
    for name, ss, ss_err, df1, vecs in (
            ("A", ss_a, ss_as, a - 1, vec_a),
            ("B", ss_b, ss_bs, b - 1, vec_b),
            ("A:B", ss_ab, ss_abs, (a - 1) * (b - 1), vec_ab)):
        df2 = df1 * (n - 1)
        F = (ss / df1) / (ss_err / df2)
        eps = box_epsilon(vecs, df1)
        out[name] = {"F": F, "df_num": eps * df1, "df_den": eps * df2,
                     "p": float(sps.f.sf(F, eps * df1, eps * df2)),
                     "ges": ss / (ss + err_total), "epsilon": eps}
    return out


def pair_count_auc(scores, labels) -> Fraction:
    """AUC as the exact fraction of (positive, negative) pairs ranked correctly."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = Fraction(0)
    for p, q in itertools.product(pos, neg):
        if p > q:
            total += 1
        elif p == q:
            total += Fraction(1, 2)
    return total / (len(pos) * len(neg))


def central_difference(f, x, h=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(len(x)):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (f(x + step) - f(x - step)) / (2 * h)
    return grad


def pooled_t_p(a, b) -> float:
    """Two-sided pooled-variance t-test p for two independent samples."""
    return float(sps.ttest_ind(a, b, equal_var=True).pvalue)


def pattern_scores(n_subjects: int, offsets, seed: int = 0) -> np.ndarray:
    """Per-subject scores whose pairwise paired differences are either exactly
    zero-mean (no significance) or shifted by ``offsets`` (clear significance).

    Every method gets the same subject effect plus an alternating +/-0.01
    wobble whose sign pattern differs by method, so differences between
    unshifted methods have mean 0 and nonzero variance.
    """
    if n_subjects % 4:
        raise ValueError("n_subjects must be a multiple of 4")
    rng = np.random.default_rng(seed)
    base = rng.normal(0.8, 0.02, n_subjects)
    e = np.tile([0.01, -0.01], n_subjects // 2)
    patterns = [e, -e, np.roll(e, 1) * 0.5, np.tile([0.01, 0.01, -0.01, -0.01], n_subjects // 4)]
    cols = [base + off + patterns[i % len(patterns)] * (1 + i // len(patterns))
            for i, off in enumerate(offsets)]
    return np.column_stack(cols)
