"""Statistics for method comparison and clinical group analysis.

Tail probabilities of the t and F distributions come from the regularized
incomplete beta function (``scipy.special.betainc``).
"""
from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import betainc, expit

DEFAULT_MC_DRAWS = 1_000_000
DEFAULT_MC_SEED = 20230906
MC_CHUNK = 1 << 16


class DegenerateDesignError(ValueError):
    pass


# --------------------------------------------------------------------------
# distribution tails
# --------------------------------------------------------------------------

def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def f_sf(f: float, df_num: float, df_den: float) -> float:
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return float(betainc(df_den / 2.0, df_num / 2.0, df_den / (df_den + df_num * f)))


# --------------------------------------------------------------------------
# paired t-tests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p_raw: float
    p_adjusted: float
    mean_diff: float
    degenerate: bool = False


def bonferroni_adjust(p_values, m: int) -> np.ndarray:
    if m < 1:
        raise ValueError("family size must be >= 1")
    return np.minimum(1.0, m * np.asarray(p_values, dtype=float))


def paired_t_test(values_a, values_b, family_size: int = 1) -> TTestResult:
    """Two-sided paired t-test of ``a - b``.

    All-zero differences give t = 0, p = 1. Constant non-zero differences
    have no variance; the result is flagged ``degenerate`` with an infinite
    t of the sign of the mean and p = 0.
    """
    a = np.asarray(values_a, dtype=float)
    b = np.asarray(values_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length vectors")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    df = n - 1
    mean = float(np.mean(d))
    if not np.any(d):
        return TTestResult(0.0, df, 1.0, 1.0, 0.0)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        t = math.copysign(math.inf, mean)
        return TTestResult(t, df, 0.0, 0.0, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = t_two_sided_p(t, df)
    return TTestResult(t, df, p, float(bonferroni_adjust([p], family_size)[0]), mean)


# --------------------------------------------------------------------------
# two-way repeated-measures ANOVA
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectResult:
    F: float
    df_num: float
    df_den: float
    p: float
    ges: float
    epsilon: float
    ss: float
    ss_error: float


@dataclass(frozen=True)
class AnovaResult:
    """Effects keyed ``"A"``, ``"B"`` and ``"A:B"``; df are GG-corrected."""

    effects: dict
    n_subjects: int
    ss_subjects: float

    def __getitem__(self, key) -> EffectResult:
        return self.effects[key]


def _helmert(k: int) -> np.ndarray:
    """Orthonormal contrasts (k x k-1), columns orthogonal to the ones vector."""
    h = np.zeros((k, k - 1))
    for j in range(1, k):
        h[:j, j - 1] = 1.0
        h[j, j - 1] = -j
        h[:, j - 1] /= math.sqrt(j * (j + 1))
    return h


def rm_anova_2way(data) -> AnovaResult:
    """Fully within-subject two-way ANOVA on a subjects x A x B array.

    Each effect is tested on its orthonormal contrast scores. The
    Greenhouse-Geisser epsilon of those scores scales both dfs.
    Generalized eta squared is effect SS over effect SS plus every error SS
    (subjects included).
    """
    y = np.asarray(data, dtype=float)
    if y.ndim != 3:
        raise ValueError("expected a subjects x A x B array")
    if not np.all(np.isfinite(y)):
        raise ValueError("missing or non-finite cells; design must be balanced")
    n, a, b = y.shape
    if n < 2 or a < 2 or b < 2:
        raise ValueError("need >= 2 subjects and >= 2 levels per factor")

    flat = y.reshape(n, a * b)
    # contrast rounding leaves SS of order eps^2 * sum(y^2); treat that as zero
    tiny = 1e-13 * float(np.sum(flat ** 2))

    ones_a, ones_b = np.ones((a, 1)) / math.sqrt(a), np.ones((b, 1)) / math.sqrt(b)
    contrasts = {
        "A": np.kron(_helmert(a), ones_b),
        "B": np.kron(ones_a, _helmert(b)),
        "A:B": np.kron(_helmert(a), _helmert(b)),
    }
    subj_means = flat.mean(axis=1)
    ss_subjects = a * b * float(np.sum((subj_means - subj_means.mean()) ** 2))

    raw = {}
    for name, c in contrasts.items():
        z = flat @ c
        zbar = z.mean(axis=0)
        resid = z - zbar
        ss = n * float(zbar @ zbar)
        ss_err = float(np.sum(resid ** 2))
        q = c.shape[1]
        if q == 1:
            eps = 1.0
        else:
            s = resid.T @ resid / (n - 1)
            tr2 = float(np.trace(s @ s))
            eps = 1.0 if tr2 <= 0 else min(1.0, float(np.trace(s)) ** 2 / (q * tr2))
        raw[name] = (0.0 if ss <= tiny else ss, 0.0 if ss_err <= tiny else ss_err, q, eps)

    total_error = ss_subjects + sum(v[1] for v in raw.values())
    effects = {}
    for name, (ss, ss_err, q, eps) in raw.items():
        df1, df2 = q * eps, q * (n - 1) * eps
        if ss == 0.0:
            f, p = 0.0, 1.0
        elif ss_err == 0.0:
            f, p = math.inf, 0.0
        else:
            f = (ss / q) / (ss_err / (q * (n - 1)))
            p = f_sf(f, df1, df2)
        denom = ss + total_error
        ges = ss / denom if denom > 0 else 0.0
        effects[name] = EffectResult(f, df1, df2, p, ges, eps, ss, ss_err)
    return AnovaResult(effects, n, ss_subjects)


# --------------------------------------------------------------------------
# ANCOVA and Dunnett
# --------------------------------------------------------------------------

@dataclass
class AncovaResult:
    groups: tuple
    reference: str
    F: float
    df_num: int
    df_den: int
    p: float
    adjusted_means: dict
    adjusted_se: dict
    raw_means: dict
    group_sizes: dict
    residual_variance: float
    coefficients: dict
    covariate_means: dict
    column_names: tuple
    cov_beta: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    design: np.ndarray = field(repr=False)

    def covariate_coefficients(self) -> dict:
        return {k: self.coefficients[k] for k in self.covariate_means}

    def design_row(self, group: str) -> np.ndarray:
        """Design vector of ``group`` with covariates at their sample means."""
        row = np.zeros(len(self.column_names))
        row[0] = 1.0
        if group != self.reference:
            row[self.column_names.index(f"group[{group}]")] = 1.0
        for name, mean in self.covariate_means.items():
            row[self.column_names.index(name)] = mean
        return row


def _ols(x: np.ndarray, y: np.ndarray):
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    return beta, resid, float(resid @ resid)


def fit_ancova(volumes, groups, covariates: Mapping[str, Sequence[float]],
               reference: str = "HC", group_order: Sequence[str] | None = None
               ) -> AncovaResult:
    """OLS of volume on group (treatment coding vs ``reference``) + covariates.

    The group effect is the F test of the group block. Adjusted means are
    model predictions at the covariate sample means.
    """
    y = np.asarray(volumes, dtype=float)
    g = np.asarray(groups).astype(str)
    n = len(y)
    if len(g) != n:
        raise ValueError("volumes and groups differ in length")
    levels = list(group_order) if group_order is not None else sorted(set(g.tolist()))
    levels = [lv for lv in levels if np.any(g == lv)]
    if reference not in levels:
        raise ValueError(f"reference group {reference!r} not present")
    levels.remove(reference)
    levels.insert(0, reference)
    if len(levels) < 2:
        raise ValueError("ANCOVA needs at least 2 groups")
    sizes = {lv: int(np.sum(g == lv)) for lv in levels}
    small = [lv for lv, c in sizes.items() if c < 2]
    if small:
        raise ValueError(f"groups with fewer than 2 subjects: {small}")
    if np.any(~np.isin(g, levels)):
        raise ValueError("some subjects belong to groups outside group_order")

    cov_names = list(covariates)
    cov = np.column_stack([np.asarray(covariates[c], dtype=float) for c in cov_names]) \
        if cov_names else np.zeros((n, 0))
    if cov.shape[0] != n:
        raise ValueError("covariates differ in length from volumes")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(cov))):
        raise ValueError("non-finite volume or covariate")
    dummies = np.column_stack([(g == lv).astype(float) for lv in levels[1:]])
    x = np.column_stack([np.ones(n), dummies, cov])
    names = ("intercept",) + tuple(f"group[{lv}]" for lv in levels[1:]) + tuple(cov_names)
    p_cols = x.shape[1]
    if n <= p_cols:
        raise DegenerateDesignError(f"{n} subjects for {p_cols} parameters")
    # rank on the column-scaled design so covariates in mm^3 don't skew tolerance
    norms = np.linalg.norm(x, axis=0)
    if np.any(norms == 0) or np.linalg.matrix_rank(x / norms) < p_cols:
        raise DegenerateDesignError("design matrix is rank deficient")

    beta, resid, rss = _ols(x, y)
    df_den = n - p_cols
    sigma2 = rss / df_den
    xtx_inv = np.linalg.inv(x.T @ x)
    cov_beta = sigma2 * xtx_inv

    reduced = np.column_stack([np.ones(n), cov])
    _, _, rss_r = _ols(reduced, y)
    df_num = len(levels) - 1
    extra = max(rss_r - rss, 0.0)
    if extra == 0.0:
        f, p = 0.0, 1.0
    elif sigma2 == 0.0:
        f, p = math.inf, 0.0
    else:
        f = (extra / df_num) / sigma2
        p = f_sf(f, df_num, df_den)

    result = AncovaResult(
        groups=tuple(levels), reference=reference, F=f, df_num=df_num,
        df_den=df_den, p=p, adjusted_means={}, adjusted_se={},
        raw_means={lv: float(np.mean(y[g == lv])) for lv in levels},
        group_sizes=sizes, residual_variance=sigma2,
        coefficients=dict(zip(names, beta.tolist())),
        covariate_means={c: float(np.mean(cov[:, i])) for i, c in enumerate(cov_names)},
        column_names=names, cov_beta=cov_beta, residuals=resid, design=x,
    )
    for lv in levels:
        row = result.design_row(lv)
        result.adjusted_means[lv] = float(row @ beta)
        result.adjusted_se[lv] = float(math.sqrt(max(row @ cov_beta @ row, 0.0)))
    return result


@dataclass(frozen=True)
class DunnettComparison:
    treatment: str
    estimate: float
    se: float
    t: float
    p_familywise: float


@dataclass(frozen=True)
class DunnettResult:
    control: str
    comparisons: tuple
    critical_value: float
    df: int
    alpha: float
    draws: int
    seed: int

    def __getitem__(self, treatment) -> DunnettComparison:
        for c in self.comparisons:
            if c.treatment == treatment:
                return c
        raise KeyError(treatment)


_MAXT_CACHE: dict = {}
_MAXT_LOCK = threading.Lock()


def _max_abs_t_chunk(seed_seq, size, chol, df):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    z = rng.standard_normal((size, chol.shape[0])) @ chol.T
    w = np.sqrt(rng.chisquare(df, size) / df)
    return np.max(np.abs(z), axis=1) / w


def max_abs_t_samples(corr: np.ndarray, df: float, draws: int = DEFAULT_MC_DRAWS,
                      seed: int = DEFAULT_MC_SEED, workers: int = 1) -> np.ndarray:
    """Sorted Monte Carlo draws of max_i |T_i| for a multivariate t.

    Draws are split into fixed-size chunks, each with its own spawned seed,
    so the output does not depend on ``workers``.
    """
    # rounding makes the draws a pure function of the cache key
    corr = np.round(np.asarray(corr, dtype=float), 12)
    key = (corr.tobytes(), corr.shape, float(df), int(draws), int(seed))
    with _MAXT_LOCK:
        cached = _MAXT_CACHE.get(key)
        if cached is None:
            cached = _MAXT_CACHE[key] = _draw_max_abs_t(corr, df, draws, seed, workers)
            if len(_MAXT_CACHE) > 32:
                _MAXT_CACHE.clear()
                _MAXT_CACHE[key] = cached
    return cached


def _draw_max_abs_t(corr, df, draws, seed, workers):
    chol = np.linalg.cholesky(corr)
    n_chunks = -(-draws // MC_CHUNK)
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(MC_CHUNK, draws - i * MC_CHUNK) for i in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(lambda a: _max_abs_t_chunk(a[0], a[1], chol, df),
                              zip(seqs, sizes)))
    samples = np.sort(np.concatenate(parts))
    samples.flags.writeable = False
    return samples


def dunnett_test(ancova: AncovaResult, control: str | None = None, alpha: float = 0.05,
                 draws: int = DEFAULT_MC_DRAWS, seed: int = DEFAULT_MC_SEED,
                 workers: int = 1) -> DunnettResult:
    """Compare every group against ``control`` on covariate-adjusted means.

    Familywise p-values and the critical value come from the joint
    multivariate-t law of the comparison statistics, by seeded Monte Carlo.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    control = control or ancova.reference
    if control not in ancova.groups:
        raise ValueError(f"control group {control!r} not in ANCOVA")
    treatments = [g for g in ancova.groups if g != control]
    if not treatments:
        raise ValueError("need at least one treatment group")
    c_row = ancova.design_row(control)
    contrast = np.array([ancova.design_row(t) - c_row for t in treatments])
    beta = np.array([ancova.coefficients[k] for k in ancova.column_names])
    est = contrast @ beta
    v = contrast @ ancova.cov_beta @ contrast.T
    se = np.sqrt(np.diag(v))
    t = est / se
    corr = v / np.outer(se, se)
    samples = max_abs_t_samples(corr, ancova.df_den, draws, seed, workers)
    n = len(samples)
    comps = []
    for name, e, s, ti in zip(treatments, est, se, t):
        exceed = n - np.searchsorted(samples, abs(ti), side="left")
        comps.append(DunnettComparison(name, float(e), float(s), float(ti), exceed / n))
    crit = float(np.quantile(samples, 1 - alpha))
    return DunnettResult(control, tuple(comps), crit, ancova.df_den, alpha, draws, seed)


# --------------------------------------------------------------------------
# effect sizes
# --------------------------------------------------------------------------

def cohens_d(group_a, group_b) -> float:
    """Standardized mean difference; positive when ``group_a`` is larger."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("Cohen's d needs at least 2 values per group")
    pooled = ((na - 1) * np.var(a, ddof=1) + (nb - 1) * np.var(b, ddof=1)) / (na + nb - 2)
    if pooled <= 0:
        raise ZeroDivisionError("zero pooled variance")
    return float((a.mean() - b.mean()) / math.sqrt(pooled))


# --------------------------------------------------------------------------
# logistic regression and ROC
# --------------------------------------------------------------------------

def logistic_loglik(beta, x, y, ridge: float = 0.0) -> float:
    """Penalized log-likelihood; ``x`` includes the intercept column first."""
    eta = x @ beta
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * ridge * float(beta[1:] @ beta[1:])


def logistic_gradient(beta, x, y, ridge: float = 0.0) -> np.ndarray:
    g = x.T @ (y - expit(x @ beta))
    g[1:] -= ridge * beta[1:]
    return g


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coef: np.ndarray
    n_iter: int
    converged: bool
    grad_norm: float

    def decision_function(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.intercept + x @ self.coef

    def predict_proba(self, features) -> np.ndarray:
        return expit(self.decision_function(features))


def _check_binary(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    y = y.astype(float)
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    return y


def fit_logistic(features, labels, ridge: float = 1e-6, tol: float = 1e-8,
                 max_iter: int = 100) -> LogisticModel:
    """Maximum-likelihood logistic regression by damped Newton steps.

    Features are standardized internally (coefficients are reported on the
    input scale). The small ridge on non-intercept terms keeps the Hessian
    invertible under separation or constant columns.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = _check_binary(labels)
    if len(x) != len(y) or len(y) == 0:
        raise ValueError("features and labels differ in length")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite features")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    xs = np.column_stack([np.ones(len(x)), (x - mu) / sd])
    p = xs.shape[1]
    penalty = np.full(p, ridge)
    penalty[0] = 0.0

    beta = np.zeros(p)
    ll = logistic_loglik(beta, xs, y, ridge)
    grad = logistic_gradient(beta, xs, y, ridge)
    it = 0
    while it < max_iter and np.max(np.abs(grad)) >= tol:
        it += 1
        prob = expit(xs @ beta)
        w = prob * (1 - prob)
        hess = xs.T @ (xs * w[:, None]) + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            cand_ll = logistic_loglik(cand, xs, y, ridge)
            if cand_ll >= ll:
                break
            t *= 0.5
        else:
            break
        beta, ll = cand, cand_ll
        grad = logistic_gradient(beta, xs, y, ridge)
    gnorm = float(np.max(np.abs(grad)))
    coef = beta[1:] / sd
    intercept = float(beta[0] - coef @ mu)
    return LogisticModel(intercept, coef, it, gnorm < tol, gnorm)


@dataclass(frozen=True)
class RocResult:
    auc: float
    thresholds: np.ndarray
    sensitivity: np.ndarray
    specificity: np.ndarray
    model: LogisticModel | None = None


def roc_auc(scores, labels) -> RocResult:
    """Empirical ROC; AUC counts ties between classes as half-concordant."""
    s = np.asarray(scores, dtype=float)
    y = _check_binary(labels).astype(bool)
    if len(s) != len(y):
        raise ValueError("scores and labels differ in length")
    uniq, inv = np.unique(s, return_inverse=True)
    pos = np.bincount(inv, weights=y, minlength=len(uniq)).astype(np.int64)
    neg = np.bincount(inv, weights=~y, minlength=len(uniq)).astype(np.int64)
    neg_below = np.concatenate([[0], np.cumsum(neg)[:-1]])
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    # integer numerator: 2 * concordant + tied
    twice = 2 * int(np.dot(pos, neg_below)) + int(np.dot(pos, neg))
    auc = twice / (2 * n_pos * n_neg)

    # descending thresholds: predict positive when score >= threshold
    tp = np.concatenate([[0], np.cumsum(pos[::-1])])
    fp = np.concatenate([[0], np.cumsum(neg[::-1])])
    thresholds = np.concatenate([[np.inf], uniq[::-1]])
    return RocResult(auc, thresholds, tp / n_pos, 1.0 - fp / n_neg)


def roc_analysis(features, labels, **fit_kwargs) -> RocResult:
    """Fit a logistic model and score it in-sample."""
    model = fit_logistic(features, labels, **fit_kwargs)
    roc = roc_auc(model.decision_function(features), labels)
    return RocResult(roc.auc, roc.thresholds, roc.sensitivity, roc.specificity, model)
