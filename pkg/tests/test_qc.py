import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from methylhub import qc
from methylhub.errors import MethylhubError
from methylhub.ingest import AnnotationTable, BetaMatrix, FLAG_TOKENS, ProbeAnnotation, SampleTable


def beta(values, mask=None):
    values = np.asarray(values, float)
    return BetaMatrix([f"cg{i}" for i in range(values.shape[0])],
                      [f"S{j}" for j in range(values.shape[1])], values, mask)


def annotate(m, flags=None):
    flags = flags or {}
    return AnnotationTable(ProbeAnnotation(p, "G", "chr1", frozenset(flags.get(p, ()))) for p in m.probe_ids)


def samples(n, batch=None, age=None, sex=None):
    return SampleTable([f"S{j}" for j in range(n)], ["CASE", "CONTROL"] * (n // 2) + ["CASE"] * (n % 2),
                       np.asarray(age if age is not None else np.full(n, 40.0), float),
                       list(sex or ["F"] * n), list(batch or ["B1"] * n))


def test_filter_drops_flagged():
    m = beta(np.full((5, 4), 0.5))
    ann = annotate(m, {"cg1": {"SNP"}, "cg3": {"CROSS_REACTIVE"}})
    kept, rep = qc.filter_probes(m, ann, qc.QcPolicy())
    assert kept.probe_ids == ["cg0", "cg2", "cg4"]
    assert rep.dropped == {"SNP": 1, "CROSS_REACTIVE": 1}


def test_filter_missingness():
    mask = np.zeros((2, 10), bool)
    mask[0, 0] = True
    kept, rep = qc.filter_probes(beta(np.full((2, 10), 0.5), mask), annotate(beta(np.zeros((2, 10)))),
                                 qc.QcPolicy(max_missing_fraction=0.05))
    assert kept.probe_ids == ["cg1"]
    assert rep.dropped == {"MISSINGNESS": 1}


def test_filter_identity_policy():
    m = beta(np.full((3, 2), 0.5), np.array([[1, 1], [0, 0], [1, 0]], bool))
    ann = annotate(m, {"cg0": set(FLAG_TOKENS)})
    kept, _ = qc.filter_probes(m, ann, qc.QcPolicy(drop_flags=[], max_missing_fraction=1.0))
    assert kept.probe_ids == m.probe_ids


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_filter_matches_set_algebra(data):
    n_p, n_s = data.draw(st.integers(1, 12)), data.draw(st.integers(1, 8))
    mask = data.draw(arrays(bool, (n_p, n_s)))
    flags = [data.draw(st.frozensets(st.sampled_from(FLAG_TOKENS))) for _ in range(n_p)]
    drop = data.draw(st.frozensets(st.sampled_from(FLAG_TOKENS)))
    cap = data.draw(st.sampled_from([0.0, 0.05, 0.25, 0.5, 1.0]))
    m = beta(np.full((n_p, n_s), 0.3), mask)
    ann = annotate(m, dict(zip(m.probe_ids, flags)))
    kept, rep = qc.filter_probes(m, ann, qc.QcPolicy(drop_flags=sorted(drop), max_missing_fraction=cap))
    expected = {p for p, f, row in zip(m.probe_ids, flags, mask) if not (f & drop) and row.mean() <= cap}
    assert set(kept.probe_ids) == expected
    assert rep.n_dropped == n_p - len(expected)


def test_unannotated_probe():
    m = beta(np.full((2, 2), 0.5))
    with pytest.raises(MethylhubError, match="UNANNOTATED_PROBE"):
        qc.filter_probes(m, AnnotationTable([]), qc.QcPolicy())


def test_m_transform_values():
    mv = qc.beta_to_m(beta([[0.5, 0.8, 0.0]]), eps=1e-6).values[0]
    assert mv[0] == 0.0
    assert mv[1] == pytest.approx(2.0, abs=1e-12)
    assert mv[2] == pytest.approx(math.log2(1e-6 / (1 - 1e-6)))
    assert mv[2] == pytest.approx(-19.93, abs=0.005)


@given(st.floats(0, 1), st.floats(0, 1))
def test_m_transform_monotone_and_antisymmetric(a, b):
    eps = 1e-6
    mv = qc.beta_to_m(beta([[a, b, 1 - a]]), eps).values[0]
    assert mv[0] == pytest.approx(-mv[2], abs=1e-9)
    ca, cb = np.clip([a, b], eps, 1 - eps)
    if ca < cb:
        assert mv[0] < mv[1]
    assert abs(mv[0]) <= math.log2((1 - eps) / eps) + 1e-9


def test_quantile_example():
    out = qc.normalize(qc.MValueMatrix(["a", "b", "c"], ["S1", "S2"], np.array([[1., 4], [2, 5], [3, 6]])))
    np.testing.assert_allclose(out.values, [[2.5, 2.5], [3.5, 3.5], [4.5, 4.5]])


def test_quantile_ties_share_rank_mean():
    v = np.array([[1., 10], [1, 20], [3, 30]])
    out = qc.normalize(qc.MValueMatrix(["a", "b", "c"], ["S1", "S2"], v)).values
    # reference ranks: 5.5, 10.5, 16.5; the tie in S1 covers ranks 1-2
    np.testing.assert_allclose(out[:, 0], [8.0, 8.0, 16.5])
    np.testing.assert_allclose(out[:, 1], [5.5, 10.5, 16.5])


finite = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(2, 12), st.integers(1, 6)), elements=finite, unique=True))
def test_quantile_properties(v):
    # tie averaging moves the reference, so idempotence needs distinct values per column
    assume(all(len(np.unique(c)) == len(c) for c in v.T))
    m = qc.MValueMatrix([f"p{i}" for i in range(v.shape[0])], [f"s{j}" for j in range(v.shape[1])], v)
    once = qc.normalize(m, "QUANTILE").values
    twice = qc.normalize(qc.MValueMatrix(m.probe_ids, m.sample_ids, once), "QUANTILE").values
    np.testing.assert_allclose(twice, once, atol=1e-12)
    s = np.sort(once, axis=0)
    np.testing.assert_allclose(s, np.repeat(s[:, :1], v.shape[1], axis=1), atol=1e-12)


def test_normalize_none_and_zscore():
    m = qc.MValueMatrix(["a", "b", "c"], ["S1", "S2"], np.array([[1., 2], [2, 2], [3, 2]]))
    assert qc.normalize(m, "NONE") is m
    with pytest.raises(MethylhubError, match="DEGENERATE_COLUMN"):
        qc.normalize(m, "ZSCORE")
    z = qc.normalize(qc.MValueMatrix(["a", "b", "c"], ["S1"], np.array([[1.], [2], [6]])), "ZSCORE").values
    assert z.mean() == pytest.approx(0, abs=1e-12) and z.var() == pytest.approx(1)


def test_residualize_batch_fixture():
    s = samples(4, batch=["A", "A", "B", "B"])
    m = qc.MValueMatrix(["p", "q"], s.sample_ids, np.array([[1., 1, 3, 3], [1, 2, 3, 4]]))
    r = qc.residualize(m, s, ["batch"]).values
    np.testing.assert_allclose(r, [[0, 0, 0, 0], [-0.5, 0.5, -0.5, 0.5]], atol=1e-12)


def test_residualize_intercept_only_and_age_span(rng):
    age = rng.uniform(20, 70, 10)
    s = samples(10, age=age)
    v = np.vstack([rng.normal(size=10), age])
    m = qc.MValueMatrix(["p", "a"], s.sample_ids, v)
    r0 = qc.residualize(m, s, []).values
    np.testing.assert_allclose(r0, v - v.mean(axis=1, keepdims=True), atol=1e-12)
    r = qc.residualize(m, s, ["age"]).values
    assert np.linalg.norm(r[1]) <= 1e-8 * np.linalg.norm(age)


def test_rank_deficient_design():
    s = samples(4, batch=["A", "A", "B", "B"], sex=["F", "F", "M", "M"])
    m = qc.MValueMatrix(["p"], s.sample_ids, np.ones((1, 4)))
    with pytest.raises(MethylhubError, match="RANK_DEFICIENT_DESIGN"):
        qc.residualize(m, s, ["sex", "batch"])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_residualize_orthogonal_and_idempotent(seed):
    r = np.random.default_rng(seed)
    n = 12
    s = samples(n, batch=list(r.choice(["A", "B", "C"], n)), age=r.uniform(20, 70, n),
                sex=list(r.choice(["F", "M"], n)))
    cov = ["age", "sex", "batch"]
    X = qc.design_matrix(s, cov)
    assume(np.linalg.matrix_rank(X) == X.shape[1])
    m = qc.MValueMatrix(["p", "q", "r"], s.sample_ids, r.normal(size=(3, n)))
    once = qc.residualize(m, s, cov)
    twice = qc.residualize(once, s, cov).values
    np.testing.assert_allclose(twice, once.values, atol=1e-10)
    dots = np.abs(once.values @ X)
    assert np.all(dots <= 1e-8 * np.linalg.norm(m.values, axis=1)[:, None] * np.linalg.norm(X, axis=0))


def test_run_qc_imputes_before_quantile():
    v = np.array([[0.2, 0.4, 0.3, 0.5], [0.7, 0.6, 0.9, 0.8], [0.1, 0.1, 0.2, 0.3]])
    mask = np.zeros_like(v, bool)
    mask[0, 1] = True
    m = beta(v, mask)
    mv, rep = qc.run_qc(m, annotate(m), samples(4), qc.QcPolicy(max_missing_fraction=0.5))
    assert rep.imputed_cells == 1
    assert not mv.missing_mask.any()
    assert np.isfinite(mv.values).all()


def test_policy_validation():
    with pytest.raises(MethylhubError, match="CONFIG_INVALID"):
        qc.QcPolicy(clamp_epsilon=0.5)
    with pytest.raises(MethylhubError, match="CONFIG_INVALID"):
        qc.QcPolicy(max_missing_fraction=1.5)


def test_policy_rejects_unknown_names():
    with pytest.raises(MethylhubError, match="CONFIG_INVALID"):
        qc.QcPolicy(drop_flags=["BAD"])
    with pytest.raises(MethylhubError, match="CONFIG_INVALID"):
        qc.QcPolicy.from_dict({"residualize_covariates": ["height"]})
