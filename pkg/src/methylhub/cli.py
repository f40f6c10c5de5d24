"""``methylhub <subcommand> --config <path> [--seed N] [--out DIR]``.

Stages chain through the output directory: ``qc`` writes ``mvalues.tsv``,
``train`` reads it and writes ``cv_result.json`` plus fold weights,
``attribute`` reads those and writes ``attribution.json``, ``hubs`` reads
that. ``pipeline`` runs everything in one go.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attribution as attr
from . import dmstats, hubnet, ingest, model, qc, synth
from .errors import MethylhubError
from .pipeline import PipelineConfig, load_config, run_pipeline, run_tier2, stage, write_roc

SUBCOMMANDS = ("synth", "qc", "stats", "train", "attribute", "hubs", "pipeline")


def _config(args) -> tuple[dict, Path]:
    if args.config:
        return load_config(args.config), Path(args.config).resolve().parent
    return {}, Path.cwd()


def _inputs(cfg: dict, base: Path, out: Path) -> dict:
    given = cfg.get("inputs") or {}
    defaults = {k: out / synth.FILES[k] for k in ("beta", "annotation", "samples", "modules")}
    return {k: str((base / given[k]).resolve()) if given.get(k) else str(defaults[k].resolve())
            for k in defaults}


def _mvalues(cfg: dict, base: Path, out: Path) -> ingest.BetaMatrix:
    path = base / cfg["mvalues"] if cfg.get("mvalues") else out / "mvalues.tsv"
    return ingest.read_matrix_tsv(path, bounded=False)


def cmd_synth(args, cfg, base, out):
    sc = synth.SynthConfig.from_dict(cfg.get("synth"))
    if args.seed is not None:
        sc.seed = args.seed
    with stage("SYNTH"):
        paths = synth.write_dataset(out, *synth.generate(sc))
    print(json.dumps(paths, indent=1))


def cmd_qc(args, cfg, base, out):
    paths = _inputs(cfg, base, out)
    with stage("INGEST"):
        beta = ingest.load_beta_matrix(paths["beta"])
        ann = ingest.load_annotation(paths["annotation"])
        samples = ingest.load_samples(paths["samples"])
    with stage("QC"):
        mv, report = qc.run_qc(beta, ann, samples, qc.QcPolicy.from_dict(cfg.get("qc")))
        ingest.write_matrix_tsv(mv, out / "mvalues.tsv")
        (out / "qc_report.json").write_text(report.to_json())
    print(f"kept {report.n_kept}/{report.n_input} probes")


def cmd_stats(args, cfg, base, out):
    paths = _inputs(cfg, base, out)
    with stage("INGEST"):
        mv = _mvalues(cfg, base, out)
        samples = ingest.load_samples(paths["samples"]).aligned(mv.sample_ids)
    with stage("STATS"):
        rows = dmstats.differential_methylation(mv.values, samples.is_case, mv.probe_ids)
        dmstats.write_diffmeth(rows, out / "diffmeth.tsv")
    print(f"wrote {len(rows)} rows to {out / 'diffmeth.tsv'}")


def cmd_train(args, cfg, base, out):
    paths = _inputs(cfg, base, out)
    tc = model.TrainConfig.from_dict(cfg.get("train"))
    if args.seed is not None:
        tc.seed = args.seed
    with stage("INGEST"):
        mv = _mvalues(cfg, base, out)
        samples = ingest.load_samples(paths["samples"]).aligned(mv.sample_ids)
        samples.require_both_labels()
    with stage("TRAIN"):
        cv = model.nested_cv(mv.values.T, samples.is_case, tc, mv.sample_ids)
        cv.write(out, feature_ids=mv.probe_ids)
        write_roc(model.pooled_roc(cv, samples.is_case), out / "roc_points.tsv")
    print(f"mean AUROC {cv.mean_auroc:.4f} (pooled {cv.pooled_auroc:.4f})")


def load_cv(out: Path, sample_ids) -> model.CvResult:
    """Rebuild a CvResult from ``cv_result.json`` and the fold weight files."""
    d = load_config(out / "cv_result.json")
    pos = {s: i for i, s in enumerate(sample_ids)}
    folds = []
    for fd in d["folds"]:
        w = load_config(out / f"weights_fold{fd['fold']}.json")
        try:
            test_idx = np.array([pos[s] for s in fd["test_ids"]], dtype=int)
        except KeyError as exc:
            raise MethylhubError("UNKNOWN_SAMPLE", f"fold {fd['fold']}: {exc}") from None
        folds.append(model.FoldResult(
            fd["fold"], fd["auroc"], fd["hyperparams"], model.MlpModel.from_dict(w),
            test_idx, fd["test_ids"], np.asarray(fd["test_scores"]), fd["inner_cv"],
        ))
    return model.CvResult(folds, d["pooled_auroc"], d["config"])


def _pipeline_cfg(cfg: dict, base: Path, out: Path, args) -> PipelineConfig:
    cfg = dict(cfg)
    cfg.setdefault("out_dir", str(out))
    if getattr(args, "synth_defaults", False):
        cfg.pop("inputs", None)
        cfg.setdefault("synth", {})
    if args.seed is not None:
        cfg["seed"] = args.seed
    return PipelineConfig.from_dict(cfg, base_dir=base)


def _stage_cfg(args, cfg, base, out) -> PipelineConfig:
    d = {k: v for k, v in cfg.items() if k != "synth"}
    d["inputs"] = _inputs(cfg, base, out)
    return _pipeline_cfg(d, Path("/"), out, args)


def cmd_attribute(args, cfg, base, out):
    pc = _stage_cfg(args, cfg, base, out)
    with stage("INGEST"):
        mv = _mvalues(cfg, base, out)
        ann = ingest.load_annotation(pc.inputs["annotation"])
        cv = load_cv(out, mv.sample_ids)
    with stage("ATTRIBUTE"):
        res = attr.attribute_cv(cv, mv.values.T, mv.probe_ids, pc.attribution_mode,
                                pc.agg_mode, pc.ig_steps)
        res.write_json(out / "attribution.json")
        attr.write_probe_table(res.probe_table(ann, pc.k_probes), out / "probes_top.tsv")
        attr.write_gene_table(res.gene_table(ann, pc.k_genes), out / "genes_top.tsv")
    print(f"wrote {out / 'probes_top.tsv'} and {out / 'genes_top.tsv'}")


def cmd_hubs(args, cfg, base, out):
    pc = _stage_cfg(args, cfg, base, out)
    with stage("INGEST"):
        mv = _mvalues(cfg, base, out)
        ann = ingest.load_annotation(pc.inputs["annotation"])
        mods = ingest.load_modules(pc.inputs["modules"])
        res = attr.AttributionResult.from_dict(load_config(out / "attribution.json"))
        if res.probe_ids != mv.probe_ids:
            raise MethylhubError("DIMENSION_MISMATCH", "attribution.json does not match mvalues.tsv")
    with stage("HUBS"):
        graph, stability = run_tier2(res, mv, ann, mods, pc)
        hubnet.write_hubs(graph, out / "hubs.tsv", pc.k_hubs)
        hubnet.write_modules_table(graph, mods, out / "modules.tsv", pc.k_hubs)
        (out / "stability.json").write_text(stability.to_json())
    print(f"mean top-{stability.k} Jaccard {stability.mean_jaccard:.3f}")


def cmd_pipeline(args, cfg, base, out):
    pc = _pipeline_cfg(cfg, base, out, args)
    pc.out_dir = str(out)
    report = run_pipeline(pc)
    t1, t2 = report["tier1"], report["tier2"]
    print(f"mean AUROC {t1['mean_auroc']:.4f}; top gene {t1['top_genes'][0]['gene'] if t1['top_genes'] else '-'}; "
          f"top hub {t2['top_hubs'][0]['gene'] if t2['top_hubs'] else '-'}; "
          f"hub Jaccard {t2['stability']['mean_jaccard']:.3f}")


COMMANDS = {
    "synth": cmd_synth, "qc": cmd_qc, "stats": cmd_stats, "train": cmd_train,
    "attribute": cmd_attribute, "hubs": cmd_hubs, "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="methylhub", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="methylhub_out", help="output directory")
        if name == "pipeline":
            sp.add_argument("--synth-defaults", action="store_true",
                            help="generate the default synthetic cohort instead of reading inputs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg, base = _config(args)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, base, out)
    except MethylhubError as exc:
        if exc.stage is None:
            exc.stage = "CONFIG"
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
