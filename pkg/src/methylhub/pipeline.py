"""Two-tier orchestration: ingest -> qc -> nested CV -> attribution -> hubs -> stats.

Tier 1 ranks probes and genes by cross-fold gradient attribution; Tier 2
ranks genes by weighted degree in the gene-module graph. A correlation block
relates the top Tier-1 gene's methylation profile to the top hub's activity.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import attribution as attr
from . import dmstats, hubnet, ingest, model, qc, synth
from .errors import MethylhubError

REPORT_FILES = (
    "report.json", "qc_report.json", "cv_result.json", "probes_top.tsv", "genes_top.tsv",
    "hubs.tsv", "modules.tsv", "stability.json", "diffmeth.tsv", "roc_points.tsv",
)
INPUT_KEYS = ("beta", "annotation", "samples", "modules")


@contextmanager
def stage(name: str):
    """Tag any MethylhubError raised inside with the stage name."""
    try:
        yield
    except MethylhubError as exc:
        if exc.stage is None:
            exc.stage = name
        raise


@dataclass
class PipelineConfig:
    inputs: dict | None = None
    synth: synth.SynthConfig | None = None
    qc: qc.QcPolicy = field(default_factory=qc.QcPolicy)
    train: model.TrainConfig = field(default_factory=model.TrainConfig)
    attribution_mode: str = "GRAD_X_INPUT"
    agg_mode: str = "SUM"
    ig_steps: int = 32
    k_probes: int = 50
    k_genes: int = 20
    tau: float = 0.3
    k_hubs: int = 20
    out_dir: str = "methylhub_out"
    seed: int | None = None

    def __post_init__(self):
        if (self.inputs is None) == (self.synth is None):
            raise MethylhubError("CONFIG_INVALID", "give exactly one of inputs / synth")
        if self.attribution_mode not in attr.MODES:
            raise MethylhubError("CONFIG_INVALID", f"attribution_mode {self.attribution_mode!r}")
        if self.agg_mode not in attr.AGG_MODES:
            raise MethylhubError("CONFIG_INVALID", f"agg_mode {self.agg_mode!r}")
        if self.seed is not None:
            self.train.seed = int(self.seed)
            if self.synth is not None:
                self.synth.seed = int(self.seed)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "PipelineConfig":
        d = dict(d)
        inputs = d.pop("inputs", None)
        if inputs is not None and base_dir is not None:
            inputs = {k: str(Path(base_dir, v)) if v else v for k, v in inputs.items()}
        syn = d.pop("synth", None)
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise MethylhubError("CONFIG_INVALID", f"unknown config keys {unknown}")
        return cls(
            inputs=inputs,
            synth=synth.SynthConfig.from_dict(syn) if syn is not None else None,
            qc=qc.QcPolicy.from_dict(d.pop("qc", None)),
            train=model.TrainConfig.from_dict(d.pop("train", None)),
            **d,
        )

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs,
            "synth": self.synth.to_dict() if self.synth else None,
            "qc": self.qc.to_dict(),
            "train": self.train.to_dict(),
            "attribution_mode": self.attribution_mode,
            "agg_mode": self.agg_mode,
            "ig_steps": self.ig_steps,
            "k_probes": self.k_probes,
            "k_genes": self.k_genes,
            "tau": self.tau,
            "k_hubs": self.k_hubs,
            "seed": self.seed,
        }


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MethylhubError("FILE_NOT_FOUND", str(path))
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MethylhubError("CONFIG_INVALID", f"{path}: {exc}") from None


def load_inputs(inputs: dict):
    missing = [k for k in INPUT_KEYS if not inputs.get(k)]
    if missing:
        raise MethylhubError("FILE_NOT_FOUND", f"no path for {', '.join(missing)}")
    matrix = ingest.load_beta_matrix(inputs["beta"])
    ann = ingest.load_annotation(inputs["annotation"])
    samples = ingest.load_samples(inputs["samples"])
    mods = ingest.load_modules(inputs["modules"])
    return matrix, ann, samples, mods


def gene_profile(m, ann, gene) -> np.ndarray:
    idx = ann.gene_index(m.probe_ids).get(gene)
    if not idx:
        raise MethylhubError("GENE_NOT_FOUND", f"{gene!r} has no probes after QC")
    return m.values[idx].mean(axis=0)


def gene_activity(m, ann, gene) -> np.ndarray:
    """Mean M over the gene's probes, z-scored across samples."""
    z, _ = hubnet.zscore_rows(gene_profile(m, ann, gene)[None, :])
    return z[0]


def report_axis(effector_gene: str, hub_gene: str, m, ann, samples) -> dict:
    """Correlate an effector gene's methylation with a hub gene's activity."""
    samples = samples.aligned(m.sample_ids)
    eff = gene_profile(m, ann, effector_gene)
    hub_act = gene_activity(m, ann, hub_gene)
    hub_prof = gene_profile(m, ann, hub_gene)
    out = {"effector_gene": effector_gene, "hub_gene": hub_gene, "flags": []}
    is_case = samples.is_case
    for key, vec in (("effector", eff), ("hub", hub_prof)):
        w = dmstats.welch_test(vec[is_case], vec[~is_case])
        out[f"{key}_diff"] = {"delta": w.delta, "t": w.t_stat, "p_value": w.p_value,
                              "direction": "HYPER" if w.delta > 0 else "HYPO"}
    if effector_gene == hub_gene:
        out["flags"].append("SELF_AXIS")
        out["pearson"] = dmstats.CorrelationResult(1.0, eff.size, 1.0, 1.0, 0.0, eff.size - 2).to_dict()
        out["partial"] = None
        return out
    out["pearson"] = dmstats.pearson(eff, hub_act).to_dict()
    Z = np.column_stack([samples.age, (np.array(samples.sex) == "F").astype(float)])
    out["partial"] = dmstats.partial_correlation(eff, hub_act, Z).to_dict()
    out["partial"]["covariates"] = ["age", "sex"]
    return out


def hub_ranking_for(gene_scores: dict, m, ann, mods, tau) -> tuple[hubnet.GeneModuleGraph, list]:
    g = hubnet.build_graph(gene_scores, m, ann, mods, tau)
    return g, [name for name, _ in hubnet.hub_scores(g)]


def run_tier2(res: attr.AttributionResult, m, ann, mods, cfg: PipelineConfig):
    """Consensus graph plus per-fold graphs for the top-k stability."""
    scores = attr.gene_scores(res.consensus, res.probe_ids, ann, cfg.agg_mode)
    graph, _ = hub_ranking_for(scores, m, ann, mods, cfg.tau)
    per_fold = []
    for f in range(len(res.fold_scores)):
        fs = attr.gene_scores(res.fold_consensus(f), res.probe_ids, ann, cfg.agg_mode)
        per_fold.append(hub_ranking_for(fs, m, ann, mods, cfg.tau)[1])
    k = min(cfg.k_hubs, min(len(r) for r in per_fold))
    stability = hubnet.jaccard_stability(per_fold, k)
    return graph, stability


def write_roc(points, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("threshold\tfpr\ttpr\n")
        for thr, fpr, tpr in points:
            fh.write(f"{thr:.6g}\t{fpr:.6f}\t{tpr:.6f}\n")


def _dump(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def truth_check(truth: synth.SyntheticTruth, probe_rows, gene_rows, hub_rank: list) -> dict:
    top_probes = {r["probe_id"] for r in probe_rows}
    top_genes = {r["gene"] for r in gene_rows}
    return {
        "effectors_in_top_probes": sum(p in top_probes for p in truth.effector_probes),
        "n_effectors": len(truth.effector_probes),
        "hub_genes": truth.hub_genes,
        "hubs_in_tier1_genes": [h for h in truth.hub_genes if h in top_genes],
        "hub_tier2_ranks": {h: (hub_rank.index(h) + 1 if h in hub_rank else None)
                            for h in truth.hub_genes},
    }


def run_pipeline(cfg: PipelineConfig, workers: int | None = None) -> dict:
    """Run both tiers, write every artifact into ``cfg.out_dir``, return the report."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=1):
        return _run(cfg, out, workers)


def _run(cfg: PipelineConfig, out: Path, workers) -> dict:
    truth = None
    with stage("INGEST"):
        if cfg.synth is not None:
            beta, ann, samples, mods, truth = synth.generate(cfg.synth)
            synth.write_dataset(out / "inputs", beta, ann, samples, mods, truth)
        else:
            beta, ann, samples, mods = load_inputs(cfg.inputs)
        samples = samples.aligned(beta.sample_ids)
        samples.require_both_labels()

    with stage("QC"):
        mv, qc_report = qc.run_qc(beta, ann, samples, cfg.qc)
        (out / "qc_report.json").write_text(qc_report.to_json())
        ingest.write_matrix_tsv(mv, out / "mvalues.tsv")

    with stage("TRAIN"):
        X, y = mv.values.T, samples.is_case
        cv = model.nested_cv(X, y, cfg.train, mv.sample_ids, workers=workers)
        cv.write(out, feature_ids=mv.probe_ids)
        write_roc(model.pooled_roc(cv, y), out / "roc_points.tsv")

    with stage("ATTRIBUTE"):
        res = attr.attribute_cv(cv, X, mv.probe_ids, cfg.attribution_mode, cfg.agg_mode, cfg.ig_steps)
        res.write_json(out / "attribution.json")
        probe_rows = res.probe_table(ann, cfg.k_probes)
        gene_rows = res.gene_table(ann, cfg.k_genes)
        attr.write_probe_table(probe_rows, out / "probes_top.tsv")
        attr.write_gene_table(gene_rows, out / "genes_top.tsv")

    with stage("HUBS"):
        graph, stability = run_tier2(res, mv, ann, mods, cfg)
        hubnet.write_hubs(graph, out / "hubs.tsv", cfg.k_hubs)
        hubnet.write_modules_table(graph, mods, out / "modules.tsv", cfg.k_hubs)
        (out / "stability.json").write_text(stability.to_json())
        hub_rank = hubnet.hub_scores(graph)
        hub_rows = [{"rank": r, "gene": g, "hub_score": s, "module_count": graph.module_count(g)}
                    for r, (g, s) in enumerate(hub_rank[: cfg.k_hubs], start=1)]

    with stage("STATS"):
        diff = dmstats.differential_methylation(mv.values, y, mv.probe_ids)
        dmstats.write_diffmeth(diff, out / "diffmeth.tsv")
        focus = list(dict.fromkeys([r["gene"] for r in gene_rows] + [r["gene"] for r in hub_rows]))
        prof = np.vstack([gene_profile(mv, ann, g) for g in focus])
        gene_diff = dmstats.differential_methylation(prof, y, focus)
        axis = None
        if gene_rows and hub_rows:
            axis = report_axis(gene_rows[0]["gene"], hub_rows[0]["gene"], mv, ann, samples)

    report = {
        "config": cfg.to_dict(),
        "n_samples": len(samples),
        "labels": samples.counts(),
        "qc": {"n_input": qc_report.n_input, "n_kept": qc_report.n_kept,
               "dropped": qc_report.dropped, "imputed_cells": qc_report.imputed_cells},
        "tier1": {
            "mean_auroc": cv.mean_auroc,
            "sd_auroc": cv.sd_auroc,
            "pooled_auroc": cv.pooled_auroc,
            "fold_aurocs": cv.fold_aurocs,
            "fold_hyperparams": [f.hyperparams for f in cv.folds],
            "attribution_mode": cfg.attribution_mode,
            "attribution_sign": "absolute",
            "agg_mode": cfg.agg_mode,
            "agg_note": "SUM favours genes with many probes" if cfg.agg_mode == "SUM" else "",
            "top_probes": probe_rows,
            "top_genes": gene_rows,
        },
        "tier2": {
            "tau": cfg.tau,
            "top_hubs": hub_rows,
            "modules": hubnet.module_rows(graph, mods, cfg.k_hubs),
            "stability": {"k": stability.k, "mean_jaccard": stability.mean_jaccard,
                          "pairwise": stability.pairwise},
            "empty_leave_one_out": graph.params["empty_leave_one_out"],
        },
        "gene_diffmeth": [vars(r) for r in gene_diff],
        "axis": axis,
    }
    if truth is not None:
        report["synthetic_truth"] = truth_check(truth, probe_rows, gene_rows, [g for g, _ in hub_rank])
    _dump(report, out / "report.json")
    return report
