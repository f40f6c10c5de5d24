"""Synthetic case/control methylomes with planted effectors and hubs.

Effector probes carry a large case shift. Hub genes carry only a small case
shift, but in cases their probes load on the latent factors of every module
they belong to, so they sit centrally in the gene-module graph while staying
marginally weak. Module members load on their own module's factor (again
cases only) with no mean shift. Everything else is decoy noise.

In a case sample, a factor-loaded probe is
``base + sd * (sqrt(1 - lam^2) * e + lam * f) + shift``; ``f`` is the module
factor (for hubs, the sum of their modules' factors over sqrt(#modules)), so
loading changes correlation structure but not the marginal variance.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import MethylhubError, config_from_dict
from .ingest import (
    CASE, CONTROL, FLAG_TOKENS, AnnotationTable, BetaMatrix, Module, ModuleSet,
    ProbeAnnotation, SampleTable, write_annotation, write_beta_matrix,
    write_modules, write_samples,
)

FILES = {
    "beta": "beta.tsv",
    "annotation": "annotation.tsv",
    "samples": "samples.tsv",
    "modules": "modules.gmt",
    "truth": "truth.json",
}


@dataclass
class SynthConfig:
    seed: int = 1
    n_probes: int = 2000
    n_cases: int = 111
    n_controls: int = 95
    probes_per_gene: tuple = (1, 8)
    intergenic_fraction: float = 0.05
    n_modules: int = 5
    genes_per_module: int = 12
    n_effector_probes: int = 20
    effector_shift: float = 0.10
    n_hub_genes: int = 3
    modules_per_hub: int = 3
    hub_shift: float = 0.02
    hub_loading: float = 0.6
    low_mode_mean: float = 0.15
    high_mode_mean: float = 0.85
    high_mode_weight: float = 0.5
    baseline_sd: float = 0.05
    noise_sd: float = 0.03
    n_batches: int = 2
    batch_offset: float = 0.0
    flag_fraction: float = 0.03
    missing_fraction: float = 0.001

    def __post_init__(self):
        self.probes_per_gene = tuple(self.probes_per_gene)
        lo, hi = self.probes_per_gene
        checks = [
            (1 <= lo <= hi, "probes_per_gene must satisfy 1 <= lo <= hi"),
            (self.n_probes >= 10, "n_probes too small"),
            (self.n_cases >= 2 and self.n_controls >= 2, "need >= 2 samples per class"),
            (self.n_modules >= 1 and self.genes_per_module >= 2, "module sizes"),
            (self.modules_per_hub >= 3 or self.n_hub_genes == 0, "hubs need >= 3 modules"),
            (self.modules_per_hub <= self.n_modules or self.n_hub_genes == 0,
             "modules_per_hub exceeds n_modules"),
            (0 <= self.hub_loading <= 1, "hub_loading must be in [0, 1]"),
            (0 <= self.effector_shift < 1 and 0 <= self.hub_shift < 1, "shifts in [0, 1)"),
            (0 <= self.intergenic_fraction < 1, "intergenic_fraction in [0, 1)"),
            (0 <= self.flag_fraction < 1 and 0 <= self.missing_fraction < 1, "fractions"),
            (0 < self.low_mode_mean < 1 and 0 < self.high_mode_mean < 1, "mode means"),
            (self.noise_sd >= 0 and self.baseline_sd >= 0, "sd must be >= 0"),
            (self.n_batches >= 1, "n_batches >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise MethylhubError("CONFIG_INVALID", msg)

    @classmethod
    def from_dict(cls, d: dict | None) -> "SynthConfig":
        return config_from_dict(cls, d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probes_per_gene"] = list(self.probes_per_gene)
        return d


@dataclass
class SyntheticTruth:
    effector_probes: list
    hub_genes: list
    modules: dict
    hub_modules: dict
    effector_genes: list
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTruth":
        return cls(**d)


def _layout(cfg: SynthConfig, rng):
    """Probe -> gene assignment; returns (genes_of_probe, gene_names, chrom_of_gene)."""
    n_inter = int(round(cfg.intergenic_fraction * cfg.n_probes))
    n_genic = cfg.n_probes - n_inter
    lo, hi = cfg.probes_per_gene
    sizes = []
    while sum(sizes) < n_genic:
        sizes.append(int(rng.integers(lo, hi + 1)))
    sizes[-1] -= sum(sizes) - n_genic
    genes = [f"G{i + 1:04d}" for i in range(len(sizes))]
    units = [[g] * s for g, s in zip(genes, sizes)] + [[""] for _ in range(n_inter)]
    order = rng.permutation(len(units))
    gene_of_probe = [g for u in order for g in units[u]]
    chrom = {g: f"chr{int(rng.integers(1, 23))}" for g in genes}
    return gene_of_probe, genes, chrom


def generate(cfg: SynthConfig | None = None):
    """Return (BetaMatrix, AnnotationTable, SampleTable, ModuleSet, SyntheticTruth)."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    gene_of_probe, genes, chrom = _layout(cfg, rng)
    probe_ids = [f"cg{i + 1:08d}" for i in range(cfg.n_probes)]
    probes_of = {}
    for i, g in enumerate(gene_of_probe):
        if g:
            probes_of.setdefault(g, []).append(i)

    # roles: hubs, then fresh members per module, then effector genes
    pool = [genes[i] for i in rng.permutation(len(genes))]
    need = cfg.n_hub_genes + cfg.n_modules * cfg.genes_per_module
    if need > len(pool):
        raise MethylhubError("CONFIG_INVALID", f"{len(pool)} genes cannot fill the modules")
    hubs = sorted(pool[: cfg.n_hub_genes])
    pool = pool[cfg.n_hub_genes:]
    members = {f"M{k + 1}": [] for k in range(cfg.n_modules)}
    mod_ids = list(members)
    hub_modules = {}
    for h in hubs:
        chosen = sorted(rng.choice(cfg.n_modules, size=cfg.modules_per_hub, replace=False))
        hub_modules[h] = [mod_ids[k] for k in chosen]
        for k in chosen:
            members[mod_ids[k]].append(h)
    for mid in mod_ids:
        while len(members[mid]) < cfg.genes_per_module:
            if not pool:
                raise MethylhubError("CONFIG_INVALID", "not enough genes for modules")
            members[mid].append(pool.pop())
    effector_genes, effector_idx = [], []
    while len(effector_idx) < cfg.n_effector_probes:
        if not pool:
            raise MethylhubError("CONFIG_INVALID", "not enough genes for effectors")
        g = pool.pop()
        effector_genes.append(g)
        effector_idx.extend(probes_of[g][: cfg.n_effector_probes - len(effector_idx)])
    effector_idx = sorted(effector_idx)

    # samples
    n = cfg.n_cases + cfg.n_controls
    labels = np.array([CASE] * cfg.n_cases + [CONTROL] * cfg.n_controls)[rng.permutation(n)]
    is_case = labels == CASE
    age = np.clip(np.round(rng.normal(45.0, 12.0, size=n)), 18, 90)
    sex = np.where(rng.random(n) < 0.5, "F", "M")
    batch_idx = rng.integers(0, cfg.n_batches, size=n)
    samples = SampleTable(
        [f"S{i + 1:03d}" for i in range(n)], list(labels), age, list(sex),
        [f"B{b + 1}" for b in batch_idx],
    )

    # values
    high = rng.random(cfg.n_probes) < cfg.high_mode_weight
    # a planted gene shifts all its probes one way; hyper from the low mode,
    # hypo from the high mode, so the shift has room before clipping
    for g in effector_genes + hubs:
        high[probes_of[g]] = rng.random() < 0.5
    base = np.where(high, cfg.high_mode_mean, cfg.low_mode_mean)
    base = np.clip(base + rng.normal(0.0, cfg.baseline_sd, cfg.n_probes), 0.02, 0.98)
    sign = np.where(high, -1.0, 1.0)
    noise = rng.normal(0.0, 1.0, size=(cfg.n_probes, n))
    factors = rng.normal(0.0, 1.0, size=(cfg.n_modules, n)) * is_case
    lam = cfg.hub_loading
    loaded = np.zeros((cfg.n_probes, n))
    is_loaded = np.zeros(cfg.n_probes, dtype=bool)
    for k, mid in enumerate(mod_ids):
        for g in members[mid]:
            if g in hub_modules:
                continue
            loaded[probes_of[g]] = factors[k]
            is_loaded[probes_of[g]] = True
    for h in hubs:
        ks = [mod_ids.index(m) for m in hub_modules[h]]
        loaded[probes_of[h]] = factors[ks].sum(axis=0) / math.sqrt(len(ks))
        is_loaded[probes_of[h]] = True
    mix = np.where(is_loaded[:, None] & is_case[None, :],
                   math.sqrt(1.0 - lam * lam) * noise + lam * loaded, noise)
    beta = base[:, None] + cfg.noise_sd * mix
    shift = np.zeros(cfg.n_probes)
    shift[effector_idx] = cfg.effector_shift
    hub_idx = sorted(i for h in hubs for i in probes_of[h])
    shift[hub_idx] = cfg.hub_shift
    beta += (sign * shift)[:, None] * is_case[None, :]
    beta += cfg.batch_offset * (batch_idx > 0)[None, :]
    beta = np.round(np.clip(beta, 0.0, 1.0), 6)

    # decoys get the QC flags and missing cells
    special = set(effector_idx) | set(hub_idx) | set(np.flatnonzero(is_loaded))
    decoys = np.array([i for i in range(cfg.n_probes) if i not in special], dtype=int)
    flagged = rng.random(decoys.size) < cfg.flag_fraction
    flag_choice = rng.integers(0, len(FLAG_TOKENS), size=decoys.size)
    flags = {int(i): frozenset([FLAG_TOKENS[c]]) for i, c, f in zip(decoys, flag_choice, flagged) if f}
    mask = np.zeros_like(beta, dtype=bool)
    mask[decoys] = rng.random((decoys.size, n)) < cfg.missing_fraction

    matrix = BetaMatrix(probe_ids, samples.sample_ids, beta, mask)
    ann = AnnotationTable(
        ProbeAnnotation(pid, g, chrom.get(g, f"chr{1 + i % 22}"), flags.get(i, frozenset()))
        for i, (pid, g) in enumerate(zip(probe_ids, gene_of_probe))
    )
    modules = ModuleSet([
        Module(mid, f"synthetic module {k + 1}", tuple(members[mid]))
        for k, mid in enumerate(mod_ids)
    ])
    truth = SyntheticTruth(
        effector_probes=[probe_ids[i] for i in effector_idx],
        hub_genes=hubs,
        modules={mid: list(members[mid]) for mid in mod_ids},
        hub_modules=hub_modules,
        effector_genes=sorted(effector_genes),
        params=cfg.to_dict(),
    )
    return matrix, ann, samples, modules, truth


def write_dataset(out_dir, matrix, ann, samples, modules, truth) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v) for k, v in FILES.items()}
    write_beta_matrix(matrix, paths["beta"])
    write_annotation(ann, paths["annotation"])
    write_samples(samples, paths["samples"])
    write_modules(modules, paths["modules"])
    with open(paths["truth"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(truth.to_json())
    return paths
