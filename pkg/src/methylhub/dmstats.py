"""Regression-style anchors: Welch tests, BH-FDR, Pearson and partial correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import MethylhubError

Z_975 = 1.959963984540054  # two-sided 95%
TINY_P = np.finfo(float).tiny


@dataclass
class WelchResult:
    delta: float
    t_stat: float
    df: float
    p_value: float


@dataclass
class DiffMethResult:
    feature_id: str
    delta: float
    t_stat: float
    p_value: float
    q_value: float
    direction: str


@dataclass
class CorrelationResult:
    r: float
    n: int
    ci_low: float
    ci_high: float
    p_value: float
    df: int

    def to_dict(self) -> dict:
        return {"r": self.r, "n": self.n, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "p_value": self.p_value, "df": self.df}


def welch_arrays(x: np.ndarray, y: np.ndarray):
    """Row-wise Welch t for ``x`` (features x cases) against ``y`` (features x controls).

    Returns (delta, t, df, p) arrays. Rows where both groups are constant get
    t = 0, p = 1 when the means agree and t = +/-inf, p = tiny otherwise.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    nx, ny = x.shape[1], y.shape[1]
    if nx < 2 or ny < 2:
        raise MethylhubError("TOO_FEW_SAMPLES", f"group sizes {nx}, {ny}")
    mx, my = x.mean(axis=1), y.mean(axis=1)
    vx = x.var(axis=1, ddof=1) / nx
    vy = y.var(axis=1, ddof=1) / ny
    se2 = vx + vy
    delta = mx - my
    ok = se2 > 0
    t = np.zeros_like(delta)
    df = np.full_like(delta, nx + ny - 2.0)
    p = np.ones_like(delta)
    t[ok] = delta[ok] / np.sqrt(se2[ok])
    df[ok] = se2[ok] ** 2 / (vx[ok] ** 2 / (nx - 1) + vy[ok] ** 2 / (ny - 1))
    p[ok] = 2.0 * stats.t.sf(np.abs(t[ok]), df[ok])
    shifted = ~ok & (delta != 0)
    t[shifted] = np.sign(delta[shifted]) * np.inf
    p[shifted] = 0.0
    p = np.clip(p, TINY_P, 1.0)
    return delta, t, df, p


def welch_test(x, y) -> WelchResult:
    """Two-sided Welch test of case values ``x`` against control values ``y``."""
    d, t, df, p = welch_arrays(np.asarray(x, float)[None, :], np.asarray(y, float)[None, :])
    return WelchResult(float(d[0]), float(t[0]), float(df[0]), float(p[0]))


def permutation_pvalue(x, y, n_perm: int = 2000, seed: int = 0) -> float:
    """Two-sided label-shuffle p-value for |mean difference| (add-one corrected)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    pooled = np.concatenate([x, y])
    obs = abs(x.mean() - y.mean())
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(pooled)
        if abs(perm[: x.size].mean() - perm[x.size:].mean()) >= obs - 1e-12:
            hits += 1
    return (hits + 1) / (n_perm + 1)


def bh_fdr(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted q-values, in input order."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return p.copy()
    if np.any((p <= 0) | (p > 1)):
        raise MethylhubError("INVALID_P", "p-values must lie in (0, 1]")
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return q


def differential_methylation(values: np.ndarray, is_case: np.ndarray, feature_ids) -> list[DiffMethResult]:
    """Per-feature Welch test on a features x samples matrix, ordered by feature id."""
    is_case = np.asarray(is_case, dtype=bool)
    delta, t, _, p = welch_arrays(values[:, is_case], values[:, ~is_case])
    q = bh_fdr(p)
    rows = [
        DiffMethResult(fid, float(d), float(tt), float(pp), float(qq), "HYPER" if d > 0 else "HYPO")
        for fid, d, tt, pp, qq in zip(feature_ids, delta, t, p, q)
    ]
    rows.sort(key=lambda r: r.feature_id)
    return rows


def write_diffmeth(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("feature_id\tdelta\tt\tp\tq\tdirection\n")
        for r in rows:
            fh.write(f"{r.feature_id}\t{r.delta:.6g}\t{r.t_stat:.6g}\t{r.p_value:.6g}"
                     f"\t{r.q_value:.6g}\t{r.direction}\n")


def fisher_ci(r: float, n_eff: int) -> tuple[float, float]:
    """95% interval tanh(atanh(r) +/- z/sqrt(n_eff)); ``n_eff`` is n - 3 - #covariates."""
    if n_eff <= 0:
        return -1.0, 1.0
    if abs(r) >= 1.0:
        return r, r
    z = math.atanh(r)
    half = Z_975 / math.sqrt(n_eff)
    return math.tanh(z - half), math.tanh(z + half)


def _corr_result(r: float, n: int, n_cov: int) -> CorrelationResult:
    r = float(min(1.0, max(-1.0, r)))
    df = n - 2 - n_cov
    if abs(r) >= 1.0:
        p = 0.0
    else:
        t = r * math.sqrt(df / (1.0 - r * r))
        p = float(2.0 * stats.t.sf(abs(t), df))
    lo, hi = fisher_ci(r, n - 3 - n_cov)
    return CorrelationResult(r, n, min(lo, r), max(hi, r), p, df)


def _pearson_r(x, y) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx <= 0 or syy <= 0:
        raise MethylhubError("DEGENERATE_VECTOR", "zero variance input")
    return float(xc @ yc) / math.sqrt(sxx * syy)


def pearson(x, y) -> CorrelationResult:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise MethylhubError("DIMENSION_MISMATCH", f"{x.shape} vs {y.shape}")
    if x.size < 4:
        raise MethylhubError("TOO_FEW_SAMPLES", "pearson needs n >= 4")
    return _corr_result(_pearson_r(x, y), x.size, 0)


def partial_correlation(x, y, Z=None) -> CorrelationResult:
    """Correlation of x and y after regressing both on [1, Z]."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = x.size
    Z = np.empty((n, 0)) if Z is None else np.asarray(Z, float).reshape(n, -1)
    k = Z.shape[1]
    if k == 0:
        return pearson(x, y)
    if n <= k + 3:
        raise MethylhubError("TOO_FEW_SAMPLES", f"n={n} with {k} covariates")
    D = np.column_stack([np.ones(n), Z])
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise MethylhubError("RANK_DEFICIENT_DESIGN", "covariates are collinear")
    q, _ = np.linalg.qr(D)
    rx = x - q @ (q.T @ x)
    ry = y - q @ (q.T @ y)
    sxx, syy = float(rx @ rx), float(ry @ ry)
    scale = max(float(x @ x), float(y @ y), 1.0)
    # a vector inside the covariate span has no partial association
    if sxx <= 1e-24 * scale or syy <= 1e-24 * scale:
        return _corr_result(0.0, n, k)
    return _corr_result(float(rx @ ry) / math.sqrt(sxx * syy), n, k)
