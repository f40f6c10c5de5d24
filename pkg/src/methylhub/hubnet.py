"""Gene-module bipartite graph, weighted-degree hub scores, top-k stability.

Edge rule: gene ``g`` connects to module ``m`` when ``g`` is a listed member
of ``m`` or when |rho| >= tau, where rho is the Pearson correlation between
the gene's profile (mean M over its probes) and the module's activity with
``g``'s own probes left out. The weight is A(g) * |rho|, A(g) being the
gene's attribution score divided by the largest gene score.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import MethylhubError
from .ingest import AnnotationTable, BetaMatrix, ModuleSet


def gene_profiles(m: BetaMatrix, ann: AnnotationTable) -> tuple[list, np.ndarray]:
    """Per-gene mean M across the gene's probes (genes x samples)."""
    index = ann.gene_index(m.probe_ids)
    genes = list(index)
    prof = np.vstack([m.values[idx].mean(axis=0) for idx in index.values()]) if genes \
        else np.empty((0, m.shape[1]))
    return genes, prof


def zscore_rows(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row z-scores (population sd); constant rows become 0 and are flagged."""
    a = np.atleast_2d(a)
    mu = a.mean(axis=1, keepdims=True)
    sd = a.std(axis=1, keepdims=True)
    degenerate = (sd[:, 0] <= 1e-12 * np.maximum(1.0, np.abs(mu[:, 0])))
    z = np.zeros_like(a)
    ok = ~degenerate
    z[ok] = (a[ok] - mu[ok]) / sd[ok]
    return z, degenerate


def module_activity(m: BetaMatrix, ann: AnnotationTable, mods: ModuleSet, exclude_gene=None):
    """Return (module_ids, modules x samples activity, degenerate module ids).

    Activity is the mean M over all probes of the module's member genes,
    z-scored across samples.
    """
    index = ann.gene_index(m.probe_ids)
    rows = []
    for mod in mods:
        idx = [i for g in mod.genes if g != exclude_gene for i in index.get(g, [])]
        if not idx:
            raise MethylhubError("EMPTY_MODULE_AFTER_EXCLUSION",
                                 f"{mod.module_id} without {exclude_gene!r}")
        rows.append(m.values[idx].mean(axis=0))
    z, degenerate = zscore_rows(np.vstack(rows))
    return mods.ids, z, [mid for mid, d in zip(mods.ids, degenerate) if d]


def _corr_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlation of each row of ``a`` with the matching row of ``b``; 0 if degenerate."""
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    num = (ac * bc).sum(axis=1)
    den = np.sqrt((ac * ac).sum(axis=1) * (bc * bc).sum(axis=1))
    scale = np.maximum(np.abs(a).max(axis=1), 1.0) * np.maximum(np.abs(b).max(axis=1), 1.0)
    ok = den > 1e-12 * scale * a.shape[1]
    out = np.zeros(a.shape[0])
    out[ok] = num[ok] / den[ok]
    return np.clip(out, -1.0, 1.0)


@dataclass
class GeneModuleGraph:
    genes: list
    modules: list
    edges: dict  # (gene, module) -> weight
    rho: dict  # (gene, module) -> correlation behind the edge
    attribution: dict  # gene -> A(g) in [0, 1]
    params: dict = field(default_factory=dict)
    hub_score: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(w < 0 for w in self.edges.values()):
            raise MethylhubError("INVALID_GRAPH", "negative edge weight")
        if not self.hub_score:
            self.hub_score = weighted_degree(self)

    def module_count(self, gene) -> int:
        return sum(1 for (g, _) in self.edges if g == gene)

    def to_dict(self) -> dict:
        return {
            "genes": list(self.genes),
            "modules": list(self.modules),
            "edges": [[g, mm, w, self.rho[(g, mm)]] for (g, mm), w in sorted(self.edges.items())],
            "params": self.params,
        }


def weighted_degree(graph: GeneModuleGraph) -> dict:
    """Sum of incident edge weights per gene, reduced in sorted-key order."""
    score = {g: 0.0 for g in graph.genes}
    for (g, _), w in sorted(graph.edges.items()):
        score[g] += w
    return score


def build_graph(gene_scores: dict, m: BetaMatrix, ann: AnnotationTable, mods: ModuleSet,
                tau: float = 0.3) -> GeneModuleGraph:
    """Bipartite graph over the scored genes that have probes in ``m``.

    ``gene_scores`` maps gene -> score or (score, probe_count). A member gene
    that is its module's only surviving gene has no leave-one-out activity;
    its membership edge is kept with rho = 0.
    """
    if not gene_scores:
        raise MethylhubError("EMPTY_INPUT", "no gene scores")
    if not 0.0 <= tau < 1.0:
        raise MethylhubError("CONFIG_INVALID", "tau must be in [0, 1)")
    raw = {g: float(v[0] if isinstance(v, (tuple, list)) else v) for g, v in gene_scores.items()}
    if any(v < 0 for v in raw.values()):
        raise MethylhubError("CONFIG_INVALID", "attribution scores must be >= 0")
    index = ann.gene_index(m.probe_ids)
    genes = sorted(g for g in raw if g in index)
    if not genes:
        raise MethylhubError("EMPTY_INPUT", "no scored gene has probes after QC")
    top = max(raw[g] for g in genes)
    A = {g: (raw[g] / top if top > 0 else 0.0) for g in genes}

    gpos = {g: i for i, g in enumerate(genes)}
    sums = {g: m.values[idx].sum(axis=0) for g, idx in index.items()}
    counts = {g: len(idx) for g, idx in index.items()}
    prof = np.vstack([sums[g] / counts[g] for g in genes])

    edges, rho, empty_loo = {}, {}, []
    for mod in mods:
        present = [g for g in dict.fromkeys(mod.genes) if g in index]
        if not present:
            raise MethylhubError("EMPTY_MODULE_AFTER_EXCLUSION", f"{mod.module_id}: no genes survive QC")
        S = np.sum([sums[g] for g in present], axis=0)
        N = sum(counts[g] for g in present)
        # non-members see the full module activity
        full = np.broadcast_to(S / N, prof.shape)
        r_all = _corr_rows(prof, full)
        for g in genes:
            if g in present:
                continue
            r = float(r_all[gpos[g]])
            if abs(r) >= tau:
                edges[(g, mod.module_id)] = A[g] * abs(r)
                rho[(g, mod.module_id)] = r
        for g in present:
            if g not in gpos:
                continue
            n_loo = N - counts[g]
            if n_loo == 0:
                r = 0.0
                empty_loo.append([g, mod.module_id])
            else:
                loo = (S - sums[g]) / n_loo
                r = float(_corr_rows(prof[gpos[g]][None, :], loo[None, :])[0])
            edges[(g, mod.module_id)] = A[g] * abs(r)
            rho[(g, mod.module_id)] = r
    params = {"tau": tau, "membership_rule": "member OR |rho| >= tau",
              "weight": "A(g) * |rho|", "empty_leave_one_out": empty_loo}
    return GeneModuleGraph(genes, mods.ids, edges, rho, A, params)


def hub_scores(graph: GeneModuleGraph) -> list[tuple[str, float]]:
    """Genes by descending weighted degree, ties by symbol."""
    return sorted(graph.hub_score.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass
class StabilityReport:
    k: int
    top_sets: list
    pairwise: list
    mean_jaccard: float

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "top_sets": self.top_sets, "pairwise": self.pairwise,
                           "mean_jaccard": self.mean_jaccard}, indent=1, sort_keys=True) + "\n"


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def jaccard_stability(per_fold_rankings, k: int = 20) -> StabilityReport:
    """Mean pairwise Jaccard of the top-``k`` sets of each fold's ranking."""
    if len(per_fold_rankings) < 2:
        raise MethylhubError("TOO_FEW_FOLDS", "need >= 2 rankings")
    if any(len(r) < k for r in per_fold_rankings):
        raise MethylhubError("K_TOO_LARGE", f"a ranking has fewer than {k} genes")
    tops = [list(r[:k]) for r in per_fold_rankings]
    F = len(tops)
    mat = np.eye(F)
    vals = []
    for i, j in itertools.combinations(range(F), 2):
        mat[i, j] = mat[j, i] = jaccard(tops[i], tops[j])
        vals.append(mat[i, j])
    return StabilityReport(k, [sorted(t) for t in tops], mat.tolist(), float(np.mean(vals)))


def write_hubs(graph: GeneModuleGraph, path, k: int = 20):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank\tgene\thub_score\tmodule_count\n")
        for r, (g, s) in enumerate(hub_scores(graph)[:k], start=1):
            fh.write(f"{r}\t{g}\t{s:.6f}\t{graph.module_count(g)}\n")


def module_rows(graph: GeneModuleGraph, mods: ModuleSet, k: int = 20) -> list[dict]:
    """Per module: top-k hubs that are listed members, and the mean edge weight."""
    ranked = [g for g, _ in hub_scores(graph)[:k]]
    rows = []
    for mod in mods:
        w = [v for (g, mm), v in sorted(graph.edges.items()) if mm == mod.module_id]
        members = set(mod.genes)
        rows.append({
            "module": mod.module_id,
            "hubs": [g for g in ranked if g in members],
            "mean_edge_weight": float(np.mean(w)) if w else 0.0,
        })
    return rows


def write_modules_table(graph: GeneModuleGraph, mods: ModuleSet, path, k: int = 20):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("module\tmember_hubs\tmean_edge_weight\n")
        for r in module_rows(graph, mods, k):
            fh.write(f"{r['module']}\t{','.join(r['hubs'])}\t{r['mean_edge_weight']:.6f}\n")
