import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from methylhub import ingest
from methylhub.errors import MethylhubError
from conftest import write_text


def test_constant_matrix(tmp_path):
    p = write_text(tmp_path / "b.tsv", "probe_id\tS1\tS2\n" + "".join(f"cg{i}\t0.5\t0.5\n" for i in range(3)))
    m = ingest.load_beta_matrix(p)
    assert m.shape == (3, 2)
    assert np.all(m.values == 0.5)
    assert not m.missing_mask.any()


def test_na_cell_is_masked_and_ignored_by_mean(tmp_path):
    p = write_text(tmp_path / "b.tsv", "probe_id\tS1\tS2\ncg1\t0.2\tNA\ncg2\t0.4\t0.6\n")
    m = ingest.load_beta_matrix(p)
    assert m.missing_mask.sum() == 1 and m.missing_mask[0, 1]
    np.testing.assert_allclose(m.row_means(), [0.2, 0.5])


@pytest.mark.parametrize("body, code", [
    ("cg1\t1.2\t0.1\n", "VALUE_OUT_OF_RANGE"),
    ("cg1\t-0.1\t0.1\n", "VALUE_OUT_OF_RANGE"),
    ("cg1\t0.1\n", "MALFORMED_ROW"),
    ("cg1\t0.1\t0.2\t0.3\n", "MALFORMED_ROW"),
    ("cg1\tabc\t0.2\n", "MALFORMED_ROW"),
    ("cg1\t0.1\t0.2\ncg1\t0.3\t0.4\n", "DUPLICATE_ID"),
])
def test_matrix_errors(tmp_path, body, code):
    p = write_text(tmp_path / "b.tsv", "probe_id\tS1\tS2\n" + body)
    with pytest.raises(MethylhubError) as exc:
        ingest.load_beta_matrix(p)
    assert exc.value.code == code


def test_duplicate_sample_and_missing_file(tmp_path):
    p = write_text(tmp_path / "b.tsv", "probe_id\tS1\tS1\ncg1\t0.1\t0.2\n")
    with pytest.raises(MethylhubError, match="DUPLICATE_ID"):
        ingest.load_beta_matrix(p)
    with pytest.raises(MethylhubError, match="FILE_NOT_FOUND"):
        ingest.load_beta_matrix(tmp_path / "nope.tsv")


def test_annotation_flags(tmp_path):
    p = write_text(tmp_path / "a.tsv",
                   "cg0001\tVAMP4\tchr1\t\ncg0002\tPTPRN2\tchr7\tSNP;CROSS_REACTIVE\ncg0003\t\tchr2\t\n")
    ann = ingest.load_annotation(p)
    assert ann["cg0001"].flags == frozenset()
    assert ann["cg0002"].flags == {"SNP", "CROSS_REACTIVE"}
    assert ann.gene_index(["cg0001", "cg0002", "cg0003"]) == {"VAMP4": [0], "PTPRN2": [1]}


def test_annotation_errors(tmp_path):
    p = write_text(tmp_path / "a.tsv", "cg1\tG\tchr1\tBAD\n")
    with pytest.raises(MethylhubError, match="UNKNOWN_FLAG"):
        ingest.load_annotation(p)
    p = write_text(tmp_path / "a.tsv", "cg1\tG\tchr1\t\ncg1\tH\tchr2\t\n")
    with pytest.raises(MethylhubError, match="DUPLICATE_ID"):
        ingest.load_annotation(p)


def test_samples_cohort_counts(tmp_path):
    rows = [f"S{i}\t{'case' if i < 111 else 'CONTROL'}\t40\tF\tB1\n" for i in range(206)]
    st_ = ingest.load_samples(write_text(tmp_path / "s.tsv", "".join(rows)))
    assert st_.counts() == {"CASE": 111, "CONTROL": 95}


@pytest.mark.parametrize("body, code", [
    ("S1\tpatient\t40\tF\tB1\n", "UNKNOWN_LABEL"),
    ("S1\tcase\t40\tF\tB1\nS1\tcontrol\t41\tM\tB1\n", "DUPLICATE_ID"),
    ("S1\tcase\t40\tX\tB1\n", "MALFORMED_ROW"),
    ("S1\tcase\t-3\tF\tB1\n", "MALFORMED_ROW"),
])
def test_samples_errors(tmp_path, body, code):
    with pytest.raises(MethylhubError) as exc:
        ingest.load_samples(write_text(tmp_path / "s.tsv", body))
    assert exc.value.code == code


def test_single_class_rejected(tmp_path):
    s = ingest.load_samples(write_text(tmp_path / "s.tsv", "S1\tcase\t40\tF\tB1\nS2\tcase\t41\tM\tB1\n"))
    with pytest.raises(MethylhubError, match="SINGLE_CLASS"):
        s.require_both_labels()


def test_gmt(tmp_path):
    mods = ingest.load_modules(write_text(tmp_path / "m.gmt", "M1\tsynaptic\tVAMP4\tCYFIP2\tROBO3\n"))
    assert mods.ids == ["M1"]
    assert list(mods)[0].genes == ("VAMP4", "CYFIP2", "ROBO3")
    with pytest.raises(MethylhubError, match="MODULE_TOO_SMALL"):
        ingest.load_modules(write_text(tmp_path / "m.gmt", "M1\tx\tVAMP4\n"))
    with pytest.raises(MethylhubError, match="DUPLICATE_ID"):
        ingest.load_modules(write_text(tmp_path / "m.gmt", "M1\tx\tA\tB\nM1\ty\tC\tD\n"))


cells = st.one_of(st.just("NA"), st.integers(0, 10**6).map(lambda k: f"{k / 1e6:.6f}"))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.data())
def test_matrix_round_trip(tmp_path_factory, n_probes, n_samples, data):
    body = "probe_id\t" + "\t".join(f"S{j}" for j in range(n_samples)) + "\n"
    for i in range(n_probes):
        row = data.draw(st.lists(cells, min_size=n_samples, max_size=n_samples))
        body += f"cg{i:04d}\t" + "\t".join(row) + "\n"
    d = tmp_path_factory.mktemp("rt")
    src = write_text(d / "in.tsv", body)
    ingest.write_beta_matrix(ingest.load_beta_matrix(src), d / "out.tsv")
    assert (d / "out.tsv").read_bytes() == src.read_bytes()
