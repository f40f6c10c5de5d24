"""Readers and writers for the tab-separated input formats.

Formats
-------
beta matrix   ``probe_id<TAB>s1<TAB>s2...`` then one row per probe, cells
              decimal or ``NA``.
annotation    ``probe_id<TAB>gene<TAB>chromosome<TAB>flags``; flags are
              ``;``-separated tokens from LOW_QUALITY, CROSS_REACTIVE, SNP.
samples       ``sample_id<TAB>label<TAB>age<TAB>sex<TAB>batch``.
modules       GMT, ``module_id<TAB>description<TAB>gene<TAB>gene...``.

Nothing is imputed or normalized here; missing cells travel as a mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MethylhubError

FLAG_TOKENS = ("LOW_QUALITY", "CROSS_REACTIVE", "SNP")
CASE, CONTROL = "CASE", "CONTROL"
NA = "NA"


def _check_unique(ids, what):
    seen = set()
    for i in ids:
        if i in seen:
            raise MethylhubError("DUPLICATE_ID", f"duplicate {what} {i!r}")
        seen.add(i)


@dataclass
class BetaMatrix:
    """Probes x samples methylation fractions with a missing-value mask."""

    probe_ids: list[str]
    sample_ids: list[str]
    values: np.ndarray
    missing_mask: np.ndarray = None
    bounded: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.probe_ids = list(self.probe_ids)
        self.sample_ids = list(self.sample_ids)
        self.values = np.asarray(self.values, dtype=float)
        if self.missing_mask is None:
            self.missing_mask = np.zeros(self.values.shape, dtype=bool)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        shape = (len(self.probe_ids), len(self.sample_ids))
        if self.values.shape != shape or self.missing_mask.shape != shape:
            raise MethylhubError(
                "SHAPE_MISMATCH", f"values {self.values.shape} vs ids {shape}"
            )
        _check_unique(self.probe_ids, "probe id")
        _check_unique(self.sample_ids, "sample id")
        if self.bounded:
            present = self.values[~self.missing_mask]
            if present.size and (
                not np.all(np.isfinite(present))
                or present.min() < 0.0
                or present.max() > 1.0
            ):
                raise MethylhubError("VALUE_OUT_OF_RANGE", "beta outside [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def probe_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.probe_ids)}

    def row_means(self) -> np.ndarray:
        """Per-probe mean over unmasked cells (NaN for fully masked rows)."""
        present = ~self.missing_mask
        counts = present.sum(axis=1)
        sums = np.where(present, self.values, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return sums / counts

    def take_probes(self, idx) -> "BetaMatrix":
        idx = np.asarray(idx, dtype=int)
        return type(self)(
            [self.probe_ids[i] for i in idx],
            self.sample_ids,
            self.values[idx],
            self.missing_mask[idx],
            bounded=self.bounded,
        )


@dataclass(frozen=True)
class ProbeAnnotation:
    probe_id: str
    gene: str
    chromosome: str
    flags: frozenset = frozenset()


class AnnotationTable:
    """Ordered probe annotation rows keyed by probe id."""

    def __init__(self, rows):
        self.rows = list(rows)
        _check_unique([r.probe_id for r in self.rows], "probe id")
        self.by_id = {r.probe_id: r for r in self.rows}

    def __len__(self):
        return len(self.rows)

    def __contains__(self, probe_id):
        return probe_id in self.by_id

    def __getitem__(self, probe_id) -> ProbeAnnotation:
        return self.by_id[probe_id]

    def genes_of(self, probe_ids) -> list[str]:
        return [self.by_id[p].gene if p in self.by_id else "" for p in probe_ids]

    def gene_index(self, probe_ids) -> dict[str, list[int]]:
        """Map gene -> positions in ``probe_ids``; intergenic probes omitted.

        Genes appear in order of first occurrence.
        """
        out: dict[str, list[int]] = {}
        for i, g in enumerate(self.genes_of(probe_ids)):
            if g:
                out.setdefault(g, []).append(i)
        return out


@dataclass
class SampleTable:
    sample_ids: list[str]
    labels: list[str]
    age: np.ndarray
    sex: list[str]
    batch: list[str]

    def __post_init__(self):
        self.age = np.asarray(self.age, dtype=float)
        _check_unique(self.sample_ids, "sample id")
        n = len(self.sample_ids)
        if not (len(self.labels) == len(self.sex) == len(self.batch) == len(self.age) == n):
            raise MethylhubError("MALFORMED_ROW", "sample columns differ in length")
        for lab in self.labels:
            if lab not in (CASE, CONTROL):
                raise MethylhubError("UNKNOWN_LABEL", repr(lab))

    def __len__(self):
        return len(self.sample_ids)

    @property
    def is_case(self) -> np.ndarray:
        return np.array([lab == CASE for lab in self.labels])

    def counts(self) -> dict[str, int]:
        return {CASE: self.labels.count(CASE), CONTROL: self.labels.count(CONTROL)}

    def require_both_labels(self):
        c = self.counts()
        if c[CASE] == 0 or c[CONTROL] == 0:
            raise MethylhubError("SINGLE_CLASS", f"label counts {c}")

    def aligned(self, sample_ids) -> "SampleTable":
        """Reorder rows to follow ``sample_ids`` (e.g. a matrix header)."""
        pos = {s: i for i, s in enumerate(self.sample_ids)}
        missing = [s for s in sample_ids if s not in pos]
        if missing:
            raise MethylhubError("UNKNOWN_SAMPLE", f"no metadata for {missing[:3]}")
        idx = [pos[s] for s in sample_ids]
        return SampleTable(
            [self.sample_ids[i] for i in idx],
            [self.labels[i] for i in idx],
            self.age[idx],
            [self.sex[i] for i in idx],
            [self.batch[i] for i in idx],
        )

    def with_labels(self, labels) -> "SampleTable":
        return SampleTable(list(self.sample_ids), list(labels), self.age.copy(),
                           list(self.sex), list(self.batch))


@dataclass(frozen=True)
class Module:
    module_id: str
    description: str
    genes: tuple


@dataclass
class ModuleSet:
    modules: list[Module]

    def __post_init__(self):
        _check_unique([m.module_id for m in self.modules], "module id")
        for m in self.modules:
            if len(set(m.genes)) < 2:
                raise MethylhubError("MODULE_TOO_SMALL", m.module_id)

    def __iter__(self):
        return iter(self.modules)

    def __len__(self):
        return len(self.modules)

    @property
    def ids(self) -> list[str]:
        return [m.module_id for m in self.modules]


# -- readers -------------------------------------------------------------


def _lines(path):
    path = Path(path)
    if not path.is_file():
        raise MethylhubError("FILE_NOT_FOUND", str(path))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield lineno, line


def read_matrix_tsv(path, bounded=True) -> BetaMatrix:
    """Parse a probes x samples TSV; ``bounded`` enforces the [0,1] range."""
    it = _lines(path)
    try:
        _, header = next(it)
    except StopIteration:
        raise MethylhubError("MALFORMED_ROW", f"{path}: empty file") from None
    cols = header.split("\t")
    if cols[0] != "probe_id" or len(cols) < 2:
        raise MethylhubError("MALFORMED_ROW", f"{path}: bad header")
    sample_ids = cols[1:]
    _check_unique(sample_ids, "sample id")
    n = len(sample_ids)
    probe_ids, rows, masks = [], [], []
    for lineno, line in it:
        cells = line.split("\t")
        if len(cells) != n + 1:
            raise MethylhubError(
                "MALFORMED_ROW", f"{path}:{lineno}: {len(cells)} cells, expected {n + 1}"
            )
        row = np.empty(n)
        mask = np.zeros(n, dtype=bool)
        for j, cell in enumerate(cells[1:]):
            if cell == NA:
                mask[j] = True
                row[j] = 0.0
                continue
            try:
                v = float(cell)
            except ValueError:
                raise MethylhubError(
                    "MALFORMED_ROW", f"{path}:{lineno}: non-numeric cell {cell!r}"
                ) from None
            if math.isnan(v):
                raise MethylhubError("MALFORMED_ROW", f"{path}:{lineno}: NaN cell")
            if bounded and not 0.0 <= v <= 1.0:
                raise MethylhubError(
                    "VALUE_OUT_OF_RANGE", f"{path}:{lineno}: {cell} not in [0,1]"
                )
            row[j] = v
        probe_ids.append(cells[0])
        rows.append(row)
        masks.append(mask)
    _check_unique(probe_ids, "probe id")
    values = np.vstack(rows) if rows else np.empty((0, n))
    mask = np.vstack(masks) if masks else np.empty((0, n), dtype=bool)
    return BetaMatrix(probe_ids, sample_ids, values, mask, bounded=bounded)


def load_beta_matrix(path) -> BetaMatrix:
    return read_matrix_tsv(path, bounded=True)


def load_annotation(path) -> AnnotationTable:
    rows = []
    for lineno, line in _lines(path):
        cells = line.split("\t")
        if cells[0] == "probe_id" and not rows:
            continue
        if len(cells) == 3:
            cells.append("")
        if len(cells) != 4:
            raise MethylhubError("MALFORMED_ROW", f"{path}:{lineno}: expected 4 columns")
        probe_id, gene, chrom, flag_field = (c.strip() for c in cells)
        flags = set()
        for tok in flag_field.split(";"):
            tok = tok.strip()
            if not tok:
                continue
            if tok not in FLAG_TOKENS:
                raise MethylhubError("UNKNOWN_FLAG", f"{path}:{lineno}: {tok!r}")
            flags.add(tok)
        rows.append(ProbeAnnotation(probe_id, gene, chrom, frozenset(flags)))
    return AnnotationTable(rows)


def load_samples(path) -> SampleTable:
    ids, labels, ages, sexes, batches = [], [], [], [], []
    for lineno, line in _lines(path):
        cells = [c.strip() for c in line.split("\t")]
        if cells[0] == "sample_id" and not ids:
            continue
        if len(cells) != 5:
            raise MethylhubError("MALFORMED_ROW", f"{path}:{lineno}: expected 5 columns")
        sid, label, age, sex, batch = cells
        label = label.upper()
        if label not in (CASE, CONTROL):
            raise MethylhubError("UNKNOWN_LABEL", f"{path}:{lineno}: {cells[1]!r}")
        try:
            age_v = float(age)
        except ValueError:
            raise MethylhubError("MALFORMED_ROW", f"{path}:{lineno}: age {age!r}") from None
        if not age_v >= 0:
            raise MethylhubError("MALFORMED_ROW", f"{path}:{lineno}: negative age")
        if sex not in ("M", "F"):
            raise MethylhubError("MALFORMED_ROW", f"{path}:{lineno}: sex {sex!r}")
        ids.append(sid)
        labels.append(label)
        ages.append(age_v)
        sexes.append(sex)
        batches.append(batch)
    return SampleTable(ids, labels, np.array(ages), sexes, batches)


def load_modules(path) -> ModuleSet:
    mods = []
    for lineno, line in _lines(path):
        cells = line.split("\t")
        if len(cells) < 2:
            raise MethylhubError("MALFORMED_ROW", f"{path}:{lineno}: no description")
        genes = tuple(g.strip() for g in cells[2:] if g.strip())
        if len(set(genes)) < 2:
            raise MethylhubError("MODULE_TOO_SMALL", f"{path}:{lineno}: {cells[0]}")
        mods.append(Module(cells[0].strip(), cells[1].strip(), genes))
    return ModuleSet(mods)


# -- writers -------------------------------------------------------------


def format_value(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_matrix_tsv(m: BetaMatrix, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["probe_id", *m.sample_ids]) + "\n")
        for pid, row, mask in zip(m.probe_ids, m.values, m.missing_mask):
            cells = [NA if mk else format_value(v) for v, mk in zip(row, mask)]
            fh.write(pid + "\t" + "\t".join(cells) + "\n")


write_beta_matrix = write_matrix_tsv


def write_annotation(table: AnnotationTable, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("probe_id\tgene\tchromosome\tflags\n")
        for r in table.rows:
            flags = ";".join(t for t in FLAG_TOKENS if t in r.flags)
            fh.write(f"{r.probe_id}\t{r.gene}\t{r.chromosome}\t{flags}\n")


def _fmt_age(a: float) -> str:
    return str(int(a)) if float(a).is_integer() else f"{a:.1f}"


def write_samples(samples: SampleTable, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_id\tlabel\tage\tsex\tbatch\n")
        for sid, lab, age, sex, batch in zip(
            samples.sample_ids, samples.labels, samples.age, samples.sex, samples.batch
        ):
            fh.write(f"{sid}\t{lab.lower()}\t{_fmt_age(age)}\t{sex}\t{batch}\n")


def write_modules(mods: ModuleSet, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for m in mods:
            fh.write("\t".join([m.module_id, m.description, *m.genes]) + "\n")
