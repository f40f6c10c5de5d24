"""Probe filtering, beta -> M transform, normalization and covariate removal."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import MethylhubError, config_from_dict
from .ingest import FLAG_TOKENS, AnnotationTable, BetaMatrix, SampleTable

NORMALIZE_MODES = ("NONE", "ZSCORE", "QUANTILE")
COVARIATES = ("age", "sex", "batch")


@dataclass
class QcPolicy:
    drop_flags: tuple = FLAG_TOKENS
    max_missing_fraction: float = 0.05
    clamp_epsilon: float = 1e-6
    normalize: str = "QUANTILE"
    residualize_covariates: tuple = ("batch",)

    def __post_init__(self):
        bad = (set(self.drop_flags) - set(FLAG_TOKENS)) | (set(self.residualize_covariates) - set(COVARIATES))
        if bad:
            raise MethylhubError("CONFIG_INVALID", f"unknown flags/covariates {sorted(bad)}")
        self.drop_flags =tuple(t for t in FLAG_TOKENS if t in set(self.drop_flags))
        self.residualize_covariates = tuple(
            c for c in COVARIATES if c in set(self.residualize_covariates)
        )
        if not 0.0 < self.clamp_epsilon < 0.5:
            raise MethylhubError("CONFIG_INVALID", "clamp_epsilon must be in (0, 0.5)")
        if not 0.0 <= self.max_missing_fraction <= 1.0:
            raise MethylhubError("CONFIG_INVALID", "max_missing_fraction must be in [0, 1]")
        if self.normalize not in NORMALIZE_MODES:
            raise MethylhubError("CONFIG_INVALID", f"normalize {self.normalize!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "QcPolicy":
        return config_from_dict(cls, d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drop_flags"] = list(self.drop_flags)
        d["residualize_covariates"] = list(self.residualize_covariates)
        return d


@dataclass
class QcReport:
    n_input: int = 0
    n_kept: int = 0
    dropped: dict = field(default_factory=dict)
    n_dropped: int = 0
    imputed_cells: int = 0
    policy: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


# MValueMatrix shares the container; values are unbounded.
def MValueMatrix(probe_ids, sample_ids, values, missing_mask=None) -> BetaMatrix:
    return BetaMatrix(probe_ids, sample_ids, values, missing_mask, bounded=False)


def filter_probes(m: BetaMatrix, ann: AnnotationTable, policy: QcPolicy):
    """Drop flagged or too-sparse probes, keeping the original order.

    A probe carrying several drop reasons is counted under each of them;
    ``n_dropped`` counts probes once.
    """
    missing = [p for p in m.probe_ids if p not in ann]
    if missing:
        raise MethylhubError("UNANNOTATED_PROBE", f"{len(missing)} probes, e.g. {missing[0]}")
    drop = set(policy.drop_flags)
    miss_frac = m.missing_mask.mean(axis=1) if m.shape[1] else np.zeros(m.shape[0])
    counts = {t: 0 for t in policy.drop_flags}
    counts["MISSINGNESS"] = 0
    keep = []
    for i, pid in enumerate(m.probe_ids):
        hit = sorted(ann[pid].flags & drop)
        for t in hit:
            counts[t] += 1
        too_sparse = miss_frac[i] > policy.max_missing_fraction
        if too_sparse:
            counts["MISSINGNESS"] += 1
        if not hit and not too_sparse:
            keep.append(i)
    counts = {k: v for k, v in counts.items() if v}
    report = QcReport(
        n_input=m.shape[0],
        n_kept=len(keep),
        dropped=counts,
        n_dropped=m.shape[0] - len(keep),
        policy=policy.to_dict(),
    )
    return m.take_probes(keep), report


def impute_probe_means(m: BetaMatrix) -> tuple[BetaMatrix, int]:
    """Fill masked cells with the probe's unmasked mean; the result has no mask."""
    n_missing = int(m.missing_mask.sum())
    if n_missing == 0:
        return m, 0
    means = m.row_means()
    if np.any(np.isnan(means)):
        raise MethylhubError("FULLY_MISSING_PROBE", "probe with no observed values")
    values = np.where(m.missing_mask, means[:, None], m.values)
    return type(m)(m.probe_ids, m.sample_ids, values, None, bounded=m.bounded), n_missing


def beta_to_m(m: BetaMatrix, eps: float = 1e-6) -> BetaMatrix:
    if not 0.0 < eps < 0.5:
        raise MethylhubError("CONFIG_INVALID", "epsilon must be in (0, 0.5)")
    b = np.clip(m.values, eps, 1.0 - eps)
    mv = np.log2(b / (1.0 - b))
    mv[m.missing_mask] = 0.0
    return MValueMatrix(m.probe_ids, m.sample_ids, mv, m.missing_mask.copy())


def _quantile(values: np.ndarray) -> np.ndarray:
    n_rows, n_cols = values.shape
    order = np.argsort(values, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(values, order, axis=0)
    reference = sorted_vals.mean(axis=1)
    csum = np.concatenate([[0.0], np.cumsum(reference)])
    out = np.empty_like(values)
    for j in range(n_cols):
        col = sorted_vals[:, j]
        # tie groups in sorted order share the mean of their reference slice
        starts = np.flatnonzero(np.concatenate([[True], col[1:] != col[:-1]]))
        ends = np.append(starts[1:], n_rows)
        group_means = (csum[ends] - csum[starts]) / (ends - starts)
        ranked = np.repeat(group_means, ends - starts)
        out[order[:, j], j] = ranked
    return out


def normalize(m: BetaMatrix, mode: str = "QUANTILE") -> BetaMatrix:
    """Per-sample normalization of an M-value matrix (columns = samples)."""
    if mode not in NORMALIZE_MODES:
        raise MethylhubError("CONFIG_INVALID", f"normalize {mode!r}")
    if mode == "NONE":
        return m
    if m.shape[0] < 2:
        raise MethylhubError("TOO_FEW_PROBES", "need >= 2 probes per sample")
    present = ~m.missing_mask
    if mode == "ZSCORE":
        cnt = present.sum(axis=0)
        vals = np.where(present, m.values, 0.0)
        mean = vals.sum(axis=0) / cnt
        var = (np.where(present, m.values - mean, 0.0) ** 2).sum(axis=0) / cnt
        bad = [m.sample_ids[j] for j in np.flatnonzero(~(var > 0))]
        if bad:
            raise MethylhubError("DEGENERATE_COLUMN", f"zero variance in {bad[:3]}")
        z = (m.values - mean) / np.sqrt(var)
        z[m.missing_mask] = 0.0
        return MValueMatrix(m.probe_ids, m.sample_ids, z, m.missing_mask.copy())
    if m.missing_mask.any():
        raise MethylhubError("MASKED_VALUES", "impute before quantile normalization")
    return MValueMatrix(m.probe_ids, m.sample_ids, _quantile(m.values))


def design_matrix(samples: SampleTable, covariates) -> np.ndarray:
    """Intercept, standardized age, and drop-first one-hot sex/batch columns."""
    n = len(samples)
    cols = [np.ones(n)]
    covariates = set(covariates)
    unknown = covariates - set(COVARIATES)
    if unknown:
        raise MethylhubError("CONFIG_INVALID", f"unknown covariates {sorted(unknown)}")
    if "age" in covariates:
        sd = samples.age.std()
        cols.append((samples.age - samples.age.mean()) / (sd if sd > 0 else 1.0))
    for name in ("sex", "batch"):
        if name in covariates:
            levels = sorted(set(getattr(samples, name)))
            vals = np.array(getattr(samples, name))
            cols.extend((vals == lev).astype(float) for lev in levels[1:])
    return np.column_stack(cols)


def residualize(m: BetaMatrix, samples: SampleTable, covariates=("batch",)) -> BetaMatrix:
    """Replace each probe row by its least-squares residual on the design."""
    samples = samples.aligned(m.sample_ids)
    X = design_matrix(samples, covariates)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise MethylhubError("RANK_DEFICIENT_DESIGN", f"covariates {sorted(covariates)}")
    q, _ = np.linalg.qr(X)
    resid = m.values - (m.values @ q) @ q.T
    return MValueMatrix(m.probe_ids, m.sample_ids, resid, m.missing_mask.copy())


def run_qc(beta: BetaMatrix, ann: AnnotationTable, samples: SampleTable,
           policy: QcPolicy | None = None) -> tuple[BetaMatrix, QcReport]:
    """filter -> impute -> M transform -> normalize -> residualize."""
    policy = policy or QcPolicy()
    kept, report = filter_probes(beta, ann, policy)
    if kept.shape[0] == 0:
        raise MethylhubError("NO_PROBES_LEFT", "every probe was filtered")
    kept, report.imputed_cells = impute_probe_means(kept)
    mv = beta_to_m(kept, policy.clamp_epsilon)
    mv = normalize(mv, policy.normalize)
    mv = residualize(mv, samples, policy.residualize_covariates)
    return mv, report
