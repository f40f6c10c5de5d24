import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from methylhub import hubnet
from methylhub.errors import MethylhubError
from methylhub.ingest import AnnotationTable, Module, ModuleSet, ProbeAnnotation
from methylhub.qc import MValueMatrix


def dataset(genes_of_probe, values):
    ids = [f"p{i}" for i in range(len(genes_of_probe))]
    ann = AnnotationTable(ProbeAnnotation(p, g, "chr1", frozenset()) for p, g in zip(ids, genes_of_probe))
    m = MValueMatrix(ids, [f"S{j}" for j in range(values.shape[1])], np.asarray(values, float))
    return m, ann


def modules(members):
    return ModuleSet([Module(mid, "", tuple(genes)) for mid, genes in members.items()])


def test_activity_hand_fixture():
    m, ann = dataset(["G1", "G1", "G2"], np.array([[1., 3], [3, 5], [0, 2]]))
    ids, z, degenerate = hubnet.module_activity(m, ann, modules({"M1": ["G1", "G2"]}))
    # probe means per sample are 4/3 and 10/3, z-scored over two samples
    np.testing.assert_allclose(z, [[-1.0, 1.0]])
    assert degenerate == []


def test_activity_degenerate_and_empty():
    m, ann = dataset(["G1", "G2", "G3"], np.array([[1., 1, 1], [2, 2, 2], [0, 1, 2]]))
    _, z, degenerate = hubnet.module_activity(m, ann, modules({"M1": ["G1", "G2"], "M2": ["G2", "G3"]}))
    assert degenerate == ["M1"] and np.all(z[0] == 0)
    with pytest.raises(MethylhubError, match="EMPTY_MODULE_AFTER_EXCLUSION"):
        hubnet.module_activity(m, ann, modules({"M1": ["G1", "G9"]}), exclude_gene="G1")


def graph_from(rho, A, members=()):
    edges = {k: A[k[0]] * abs(r) for k, r in rho.items()}
    genes = sorted(A)
    mods = sorted({mm for _, mm in rho})
    return hubnet.GeneModuleGraph(genes, mods, edges, dict(rho), dict(A))


def test_hand_graph_against_enumeration():
    A = {"g1": 1.0, "g2": 0.5, "g3": 0.2}
    rho = {("g1", "M1"): 0.9, ("g1", "M2"): -0.5, ("g2", "M1"): 0.5, ("g3", "M2"): 0.9}
    g = graph_from(rho, A)
    expected = {"g1": 0.9 + 0.5, "g2": 0.25, "g3": 0.18}
    for gene, v in expected.items():
        assert g.hub_score[gene] == pytest.approx(v)
    brute = {gene: sum(g.edges.get((gene, mm), 0.0) for mm in g.modules) for gene in g.genes}
    assert brute == g.hub_score
    assert [x for x, _ in hubnet.hub_scores(g)] == ["g1", "g2", "g3"]


def test_trivial_hub_scores():
    g = hubnet.GeneModuleGraph(["g", "h"], ["M1", "M2"], {("g", "M1"): 0.5, ("g", "M2"): 0.3},
                               {("g", "M1"): 0.5, ("g", "M2"): 0.3}, {"g": 1.0, "h": 1.0})
    assert g.hub_score == {"g": pytest.approx(0.8), "h": 0.0}
    with pytest.raises(MethylhubError, match="INVALID_GRAPH"):
        hubnet.GeneModuleGraph(["g"], ["M1"], {("g", "M1"): -0.1}, {("g", "M1"): -0.1}, {"g": 1.0})


def random_dataset(seed, n_genes=8, n_samples=15):
    r = np.random.default_rng(seed)
    genes = [f"G{i}" for i in range(n_genes)]
    per = r.integers(1, 4, n_genes)
    gop = [g for g, k in zip(genes, per) for _ in range(k)]
    shared = r.normal(size=n_samples)
    values = r.normal(size=(len(gop), n_samples)) + r.uniform(-1, 1, (len(gop), 1)) * shared
    m, ann = dataset(gop, values)
    mods = modules({"M1": genes[:3], "M2": genes[2:5], "M3": genes[5:8]})
    scores = {g: float(r.uniform(0, 3)) for g in genes}
    return m, ann, mods, scores


def oracle_edges(scores, m, ann, mods, tau):
    genes, prof = hubnet.gene_profiles(m, ann)
    top = max(scores[g] for g in genes)
    out = {}
    for gi, g in enumerate(genes):
        for mod in mods:
            member = g in mod.genes
            _, z, _ = hubnet.module_activity(m, ann, ModuleSet([mod]), exclude_gene=g if member else None)
            rho = np.corrcoef(prof[gi], z[0])[0, 1]
            if member or abs(rho) >= tau:
                out[(g, mod.module_id)] = scores[g] / top * abs(rho)
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.2, 0.3, 0.6]))
def test_build_graph_matches_brute_force(seed, tau):
    m, ann, mods, scores = random_dataset(seed)
    g = hubnet.build_graph(scores, m, ann, mods, tau)
    want = oracle_edges(scores, m, ann, mods, tau)
    # pairs that sit exactly at the threshold may flip with rounding; ignore them
    near = {k for k, r in g.rho.items() if abs(abs(r) - tau) < 1e-12}
    assert set(g.edges) - near == set(want) - near
    for k in want:
        if k in g.edges:
            assert g.edges[k] == pytest.approx(want[k], abs=1e-12)
    assert g.hub_score == hubnet.weighted_degree(g)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_raising_tau_never_raises_scores(seed):
    m, ann, mods, scores = random_dataset(seed)
    prev = None
    for tau in (0.0, 0.1, 0.3, 0.5, 0.9):
        hs = hubnet.build_graph(scores, m, ann, mods, tau).hub_score
        if prev is not None:
            assert all(hs[g] <= prev[g] + 1e-15 for g in hs)
        prev = hs


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_score_scaling_keeps_ranking(seed, c):
    m, ann, mods, scores = random_dataset(seed)
    a = [g for g, _ in hubnet.hub_scores(hubnet.build_graph(scores, m, ann, mods))]
    b = [g for g, _ in hubnet.hub_scores(hubnet.build_graph({k: c * v for k, v in scores.items()},
                                                            m, ann, mods))]
    assert a == b


def test_zero_attribution_gene_is_isolated_in_weight():
    m, ann, mods, scores = random_dataset(3)
    scores["G0"] = 0.0
    g = hubnet.build_graph(scores, m, ann, mods)
    assert g.hub_score["G0"] == 0.0
    assert all(w == 0 for (gene, _), w in g.edges.items() if gene == "G0")


def test_single_perfect_membership_scores_one():
    shared = np.array([0.0, 1, 3, 2, 5])
    m, ann = dataset(["G1", "G2", "G3"], np.vstack([shared, 2 * shared + 1, -shared]))
    g = hubnet.build_graph({"G1": 2.0, "G2": 1.0, "G3": 1.0}, m, ann,
                           modules({"M1": ["G1", "G2"]}), tau=0.99)
    assert g.rho[("G1", "M1")] == pytest.approx(1.0)
    # G3 is perfectly anti-correlated, so it connects as a non-member too
    assert g.hub_score["G1"] == pytest.approx(1.0)
    assert g.hub_score["G3"] == pytest.approx(0.5)


def test_jaccard_examples():
    assert hubnet.jaccard_stability([list("ABC"), list("ABD")], 3).mean_jaccard == 0.5
    assert hubnet.jaccard_stability([list("ABC")] * 3, 3).mean_jaccard == 1.0
    assert hubnet.jaccard_stability([list("ABC"), list("DEF")], 3).mean_jaccard == 0.0
    with pytest.raises(MethylhubError, match="TOO_FEW_FOLDS"):
        hubnet.jaccard_stability([list("ABC")], 3)
    with pytest.raises(MethylhubError, match="K_TOO_LARGE"):
        hubnet.jaccard_stability([list("AB"), list("ABC")], 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.permutations(list("ABCDEFGH")), min_size=2, max_size=5), st.integers(1, 8),
       st.permutations(list("abcdefgh")))
def test_jaccard_bounds_and_relabeling(rankings, k, relabel):
    rep = hubnet.jaccard_stability(rankings, k)
    assert 0.0 <= rep.mean_jaccard <= 1.0
    F = len(rankings)
    assert rep.mean_jaccard == pytest.approx(np.mean([rep.pairwise[i][j] for i in range(F) for j in range(i + 1, F)]))
    mapping = dict(zip("ABCDEFGH", relabel))
    other = hubnet.jaccard_stability([[mapping[x] for x in r] for r in rankings], k)
    assert other.mean_jaccard == rep.mean_jaccard
