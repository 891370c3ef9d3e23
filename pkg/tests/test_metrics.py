import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import auroc_pairs
from specleak.graph import Graph
from specleak.metrics import (
    auroc,
    build_link_eval,
    cohesion_recall_bounds_check,
    edge_metrics,
    island_recalls,
    predicted_components,
    score_pairs,
)
from specleak.rng import substream


def test_perfect_reconstruction():
    g = Graph.from_edges(5, [(0, 1), (1, 2), (3, 4)])
    m = edge_metrics(g, g.edges)
    assert (m.node_coverage, m.precision, m.recall, m.f1, m.island_cohesion) == (1, 1, 1, 1, 1)
    assert m.boundary_ratio == 0


def test_hand_enumerated_cohesion():
    g = Graph.from_edges(6, [(1, 2), (2, 3), (1, 3), (4, 5)])
    pred = [(1, 2), (2, 3), (4, 5)]
    m = edge_metrics(g, pred, islands=[[1, 2, 3], [4, 5]])
    assert m.island_cohesion == pytest.approx(0.75)
    assert m.recall == pytest.approx(0.75)
    assert m.boundary_ratio == 0
    assert m.precision == 1.0
    rec = island_recalls(g, pred, [[1, 2, 3], [4, 5]])
    assert rec == [(3, pytest.approx(2 / 3)), (1, 1.0)]


def test_singleton_islands_flag():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    m = edge_metrics(g, [], islands=[[0], [1], [2]])
    assert m.island_cohesion == 1.0
    assert "cohesion-undefined-no-internal-truth-edges" in m.flags


def test_no_induced_truth_flag():
    g = Graph.from_edges(4, [(0, 1)])
    m = edge_metrics(g, [(2, 3)])
    assert m.recall == 1.0 and "no-truth-edges-on-recovered-nodes" in m.flags
    assert m.precision == 0.0


def test_invalid_predictions():
    g = Graph.from_edges(3, [(0, 1)])
    with pytest.raises(ValueError):
        edge_metrics(g, [(0, 5)])
    with pytest.raises(ValueError):
        edge_metrics(g, [(1, 1)])
    with pytest.raises(ValueError):
        edge_metrics(g, [(0, 1)], nodes=[0])


def test_default_islands_are_prediction_components():
    comps = predicted_components(6, np.array([0, 1, 2, 4]), np.array([[0, 1], [2, 4]]))
    assert [c.tolist() for c in comps] == [[0, 1], [2, 4]]


def random_case(seed, n=15):
    rng = np.random.default_rng(seed)
    iu = np.stack(np.triu_indices(n, 1), 1)
    truth = Graph.from_edges(n, iu[rng.random(len(iu)) < 0.3])
    pred = iu[rng.random(len(iu)) < 0.3]
    lab = rng.integers(0, 4, size=n)
    return truth, pred, [np.flatnonzero(lab == c) for c in np.unique(lab)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_bounds_hold(seed):
    assert cohesion_recall_bounds_check(*random_case(seed))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_recall_equals_cohesion_without_boundary(seed):
    truth, pred, _ = random_case(seed)
    m = edge_metrics(truth, pred, islands=[np.arange(15)])
    assert m.boundary_ratio == 0 and m.recall == pytest.approx(m.island_cohesion, abs=1e-12)


def test_upper_bound_tight_when_boundary_recovered():
    g = Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    islands = [[0, 1, 2], [3, 4, 5]]
    pred = [(2, 3), (0, 1)]  # the single boundary edge plus one internal edge
    m = edge_metrics(g, pred, islands=islands)
    assert m.recall == pytest.approx(m.boundary_ratio + (1 - m.boundary_ratio) * m.island_cohesion)


def test_link_eval_merged_is_inapplicable():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert not build_link_eval(g, [np.arange(4)], substream(0, "l")).applicable


def test_link_eval_four_fragments():
    # four triangles joined by seven cross edges
    edges = []
    for c in range(4):
        b = 3 * c
        edges += [(b, b + 1), (b + 1, b + 2), (b, b + 2)]
    cross = [(2, 3), (5, 6), (8, 9), (11, 0), (1, 4), (7, 10), (0, 6)]
    g = Graph.from_edges(12, edges + cross)
    islands = [np.arange(3 * c, 3 * c + 3) for c in range(4)]
    les = build_link_eval(g, islands, substream(1, "l"))
    assert les.applicable
    assert {tuple(p) for p in les.positives.tolist()} == {tuple(sorted(e)) for e in cross}
    assert len(les.negatives) == 7
    lab = np.repeat(np.arange(4), 3)
    truth = g.edge_set()
    for u, w in les.negatives.tolist():
        assert lab[u] != lab[w] and (u, w) not in truth
    again = build_link_eval(g, islands, substream(1, "l"))
    assert np.array_equal(again.negatives, les.negatives)


def test_auroc_examples():
    assert auroc([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert auroc([0.5, 0.5], [0.5, 0.5]) == 0.5
    assert auroc([0.9, 0.4], [0.6, 0.1]) == 0.75
    with pytest.raises(ValueError):
        auroc([], [0.1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_auroc_matches_pair_counting(pos, neg):
    assert auroc(pos, neg) == pytest.approx(auroc_pairs(pos, neg), abs=1e-12)


def test_score_pairs_sources():
    pairs = np.array([[0, 1], [1, 2]])
    assert score_pairs(pairs, probabilities={(0, 1): 0.7}).tolist() == [0.7, 0.0]
    emb = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    s = score_pairs(pairs, embedding=emb, nodes=np.array([0, 1, 2]))
    assert s[0] == pytest.approx(1 / np.sqrt(2)) and s[1] == 0.0
