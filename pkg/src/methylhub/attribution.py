"""Gradient attributions per fold, cross-fold consensus, probe and gene rankings.

Attributions are taken with respect to the network's standardized inputs and
of the pre-logistic output. Scores are absolute values averaged over the
evaluation samples; probes a fold model never saw score 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import MethylhubError
from .ingest import AnnotationTable
from .model import MlpModel, input_gradients

MODES = ("SALIENCY", "GRAD_X_INPUT", "INTEGRATED")
AGG_MODES = ("SUM", "MEAN", "MAX")


def sample_attributions(model: MlpModel, X_eval, mode="GRAD_X_INPUT", steps=32) -> np.ndarray:
    """Signed per-sample attributions over the model's own inputs (n x d_in).

    ``X_eval`` holds raw values for the model's ``feature_subset`` columns.
    INTEGRATED uses a midpoint Riemann sum from the all-zero standardized
    baseline, so its rows sum to roughly logit(x) - logit(baseline).
    """
    if mode not in MODES:
        raise MethylhubError("CONFIG_INVALID", f"attribution mode {mode!r}")
    if model is None or not model.weights:
        raise MethylhubError("UNTRAINED_MODEL", "no fitted weights")
    X_eval = np.atleast_2d(np.asarray(X_eval, float))
    if X_eval.shape[0] == 0:
        raise MethylhubError("EMPTY_INPUT", "no evaluation samples")
    if X_eval.shape[1] != model.d_in:
        raise MethylhubError("DIMENSION_MISMATCH", f"{X_eval.shape[1]} vs {model.d_in}")
    Z = model.standardize(X_eval)
    if mode == "SALIENCY":
        return input_gradients(model, Z)
    if mode == "GRAD_X_INPUT":
        return input_gradients(model, Z) * Z
    alphas = (np.arange(steps) + 0.5) / steps
    total = np.zeros_like(Z)
    for a in alphas:
        total += input_gradients(model, a * Z)
    return Z * total / steps


def attribute_fold(model: MlpModel, X_eval, mode="GRAD_X_INPUT", steps=32) -> np.ndarray:
    """Mean |attribution| per probe over rows of the full-width ``X_eval``."""
    X_eval = np.atleast_2d(np.asarray(X_eval, float))
    if model is None or not model.weights:
        raise MethylhubError("UNTRAINED_MODEL", "no fitted weights")
    if model.feature_subset.size and model.feature_subset.max() >= X_eval.shape[1]:
        raise MethylhubError("DIMENSION_MISMATCH", "feature_subset exceeds X_eval width")
    per_sample = sample_attributions(model, X_eval[:, model.feature_subset], mode, steps)
    scores = np.zeros(X_eval.shape[1])
    scores[model.feature_subset] = np.abs(per_sample).mean(axis=0)
    return scores


def rank_normalize(scores) -> np.ndarray:
    """Average ranks mapped to [0, 1], 1 for the top score."""
    scores = np.asarray(scores, float)
    if scores.size == 1:
        return np.ones(1)
    return (rankdata(scores) - 1.0) / (scores.size - 1.0)


def aggregate_across_folds(fold_scores, subsets=None) -> np.ndarray:
    """Mean over folds of within-fold rank-normalized scores.

    ``subsets[f]`` lists the probes fold ``f`` ranked; the others get that
    fold's lowest rank value.
    """
    fold_scores = [np.asarray(s, float) for s in fold_scores]
    if not fold_scores:
        raise MethylhubError("EMPTY_INPUT", "no folds to aggregate")
    d = fold_scores[0].size
    total = np.zeros(d)
    for f, s in enumerate(fold_scores):
        if s.size != d:
            raise MethylhubError("DIMENSION_MISMATCH", "folds cover different probe sets")
        sub = np.arange(d) if subsets is None else np.asarray(subsets[f], int)
        r = rank_normalize(s[sub]) if sub.size else np.zeros(0)
        fold_vals = np.full(d, r.min() if r.size else 0.0)
        fold_vals[sub] = r
        total += fold_vals
    return total / len(fold_scores)


def _order(scores, ids):
    return sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))


def top_probes(consensus, probe_ids, ann: AnnotationTable | None = None, k=50) -> list[dict]:
    genes = ann.genes_of(probe_ids) if ann is not None else [""] * len(probe_ids)
    return [
        {"rank": r + 1, "probe_id": probe_ids[i], "gene": genes[i], "consensus": float(consensus[i])}
        for r, i in enumerate(_order(consensus, probe_ids)[:k])
    ]


def gene_scores(consensus, probe_ids, ann: AnnotationTable, agg_mode="SUM") -> dict:
    """gene -> (score, probe_count); intergenic probes are left out."""
    if agg_mode not in AGG_MODES:
        raise MethylhubError("CONFIG_INVALID", f"agg_mode {agg_mode!r}")
    fn = {"SUM": np.sum, "MEAN": np.mean, "MAX": np.max}[agg_mode]
    consensus = np.asarray(consensus, float)
    return {
        g: (float(fn(consensus[idx])), len(idx))
        for g, idx in ann.gene_index(probe_ids).items()
    }


def aggregate_genes(consensus, probe_ids, ann: AnnotationTable, agg_mode="SUM", k=20) -> list[dict]:
    scores = gene_scores(consensus, probe_ids, ann, agg_mode)
    order = sorted(scores, key=lambda g: (-scores[g][0], g))
    return [
        {"rank": r + 1, "gene": g, "probe_count": scores[g][1], "score": scores[g][0],
         "agg_mode": agg_mode}
        for r, g in enumerate(order[:k])
    ]


@dataclass
class AttributionResult:
    probe_ids: list
    mode: str
    fold_scores: list
    fold_subsets: list
    consensus: np.ndarray
    agg_mode: str = "SUM"
    meta: dict = field(default_factory=dict)

    def probe_table(self, ann, k=50):
        return top_probes(self.consensus, self.probe_ids, ann, k)

    def gene_table(self, ann, k=20, agg_mode=None):
        return aggregate_genes(self.consensus, self.probe_ids, ann, agg_mode or self.agg_mode, k)

    def fold_consensus(self, f: int) -> np.ndarray:
        """Rank-normalized scores of a single fold (its own consensus)."""
        return aggregate_across_folds([self.fold_scores[f]], [self.fold_subsets[f]])

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "agg_mode": self.agg_mode,
            "sign": "absolute",
            "probe_ids": list(self.probe_ids),
            "fold_scores": [np.asarray(s).tolist() for s in self.fold_scores],
            "fold_subsets": [np.asarray(s).tolist() for s in self.fold_subsets],
            "consensus": np.asarray(self.consensus).tolist(),
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributionResult":
        return cls(d["probe_ids"], d["mode"], [np.asarray(s) for s in d["fold_scores"]],
                   [np.asarray(s, int) for s in d["fold_subsets"]],
                   np.asarray(d["consensus"]), d.get("agg_mode", "SUM"))

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")


def attribute_cv(cv, X, probe_ids, mode="GRAD_X_INPUT", agg_mode="SUM", steps=32) -> AttributionResult:
    """Attribute every outer-fold model on its own untouched test samples."""
    fold_scores, subsets = [], []
    for f in cv.folds:
        fold_scores.append(attribute_fold(f.model, X[f.test_idx], mode, steps))
        subsets.append(f.model.feature_subset)
    consensus = aggregate_across_folds(fold_scores, subsets)
    return AttributionResult(list(probe_ids), mode, fold_scores, subsets, consensus, agg_mode)


def write_probe_table(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank\tprobe_id\tgene\tconsensus\n")
        for r in rows:
            fh.write(f"{r['rank']}\t{r['probe_id']}\t{r['gene']}\t{r['consensus']:.6f}\n")


def write_gene_table(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank\tgene\tprobe_count\tscore\tagg_mode\n")
        for r in rows:
            fh.write(f"{r['rank']}\t{r['gene']}\t{r['probe_count']}\t{r['score']:.6f}\t{r['agg_mode']}\n")
