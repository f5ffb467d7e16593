import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from foodhier.dataset_io import SplitSpec, SyntheticSpec, split_dataset, synthesize_dataset
from foodhier.hierarchy import (
    APParams,
    ClusteringError,
    Hierarchy,
    _availability,
    _responsibility,
    affinity_propagation,
    build_hierarchy,
    cluster_label_of,
    cluster_similarity,
)
from foodhier.similarity import SimilarityMatrix, similarity_matrix


def two_blocks():
    S = np.full((6, 6), 0.05)
    S[:3, :3] = 0.95
    S[3:, 3:] = 0.95
    np.fill_diagonal(S, 1.0)
    return S


def check_structure(res, n):
    assert res.exemplars
    assert len(res.assignment) == n
    for e in res.exemplars:
        assert res.assignment[e] == e
    assert set(res.assignment) == set(res.exemplars)


def test_single_point():
    res = affinity_propagation(np.array([[1.0]]))
    assert res.exemplars == [0] and res.assignment == [0]


def test_two_groups():
    S = two_blocks()
    res = affinity_propagation(S)
    check_structure(res, 6)
    assert res.converged
    assert len(res.exemplars) == 2
    # every point sits with the exemplar it is most similar to
    ex = np.array(res.exemplars)
    for i in range(6):
        assert S[i, res.assignment[i]] == S[i, ex].max()
    labels = res.labels
    assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1 and labels[0] != labels[3]


def test_high_preference_gives_singletons():
    S = np.full((5, 5), 0.3)
    np.fill_diagonal(S, 1.0)
    res, state = affinity_propagation(S, APParams(preference=10.0), return_state=True)
    assert res.exemplars == [0, 1, 2, 3, 4]
    assert np.all(np.diag(state.r) + np.diag(state.a) > 0)


@pytest.mark.parametrize("S", [np.zeros((0, 0)), np.array([[1.0, 0.2], [0.3, 1.0]]), np.ones((2, 3))])
def test_bad_inputs(S):
    with pytest.raises(ClusteringError):
        affinity_propagation(S)


def test_message_updates_match_definition():
    rng = np.random.Generator(np.random.PCG64(4))
    n = 5
    s = rng.uniform(size=(n, n))
    a = rng.uniform(-1, 0, size=(n, n))
    r = _responsibility(s, a)
    for i in range(n):
        for k in range(n):
            others = [a[i, kk] + s[i, kk] for kk in range(n) if kk != k]
            assert r[i, k] == pytest.approx(s[i, k] - max(others), abs=1e-14)
    av = _availability(r)
    for i in range(n):
        for k in range(n):
            pos = sum(max(0.0, r[ii, k]) for ii in range(n) if ii not in (i, k))
            expected = pos if i == k else min(0.0, r[k, k] + pos)
            assert av[i, k] == pytest.approx(expected, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 12), seed=st.integers(0, 2**32), damping=st.floats(0.5, 0.9))
def test_random_inputs_keep_invariants(n, seed, damping):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.uniform(size=(n, n))
    S = (x + x.T) / 2
    np.fill_diagonal(S, 1.0)
    res, state = affinity_propagation(S, APParams(damping=damping, max_iter=200), return_state=True)
    check_structure(res, n)
    assert np.all(np.isfinite(state.r)) and np.all(np.isfinite(state.a))
    again = affinity_propagation(S, APParams(damping=damping, max_iter=200))
    assert again.exemplars == res.exemplars and again.assignment == res.assignment


def test_no_exemplar_fallback():
    # one iteration is not enough to make any r(k,k) + a(k,k) positive here
    S = np.full((4, 4), 0.5)
    np.fill_diagonal(S, 1.0)
    res = affinity_propagation(S, APParams(preference=-5.0, max_iter=1, stable_iters=1))
    check_structure(res, 4)
    assert len(res.exemplars) == 1 and not res.converged


def test_cluster_similarity_mean_linkage():
    S = np.array(
        [
            [1.0, 0.9, 0.2],
            [0.9, 1.0, 0.4],
            [0.2, 0.4, 1.0],
        ]
    )
    sim = SimilarityMatrix(["a", "b", "c"], S)
    res = affinity_propagation(sim, APParams(preference=0.5))
    assert res.labels.tolist() == [0, 0, 1]
    cs = cluster_similarity(sim, res)
    assert cs.values[0, 1] == pytest.approx(0.3, abs=1e-15)
    assert np.all(np.diag(cs.values) == 1.0)


def test_cluster_similarity_singletons():
    S = two_blocks()
    sim = SimilarityMatrix(list("abcdef"), S)
    res = affinity_propagation(sim, APParams(preference=10.0))
    cs = cluster_similarity(sim, res)
    assert np.array_equal(cs.values[~np.eye(6, dtype=bool)], S[~np.eye(6, dtype=bool)])


def _planted(seed, **kw):
    ds, groups = synthesize_dataset(SyntheticSpec(seed=seed, **kw))
    train, _, _ = split_dataset(ds, SplitSpec(seed=seed))
    return similarity_matrix(train), groups


def test_planted_two_groups():
    sim, groups = _planted(1, n_categories=4, n_groups=2, dim=16, samples_per_category=50)
    h = build_hierarchy(sim, 2)
    assert h.level_size(2) == 2
    ari = adjusted_rand_score([groups[c] for c in h.categories], h.level_labels(2))
    assert ari == 1.0


def test_every_category_has_one_parent():
    sim, _ = _planted(2)
    h = build_hierarchy(sim, 2)
    members = [m for node in h.nodes[2] for m in node.members]
    assert sorted(members) == sorted(h.categories)
    for node in h.nodes[2]:
        assert node.exemplar in node.members


def test_three_levels():
    sim, _ = _planted(3, n_categories=24, n_groups=6)
    h = build_hierarchy(sim, 3)
    assert h.n_levels == 3
    assert h.level_size(3) <= h.level_size(2) <= h.level_size(1)
    for cat in h.categories:
        l2 = cluster_label_of(h, cat, 2)
        assert cluster_label_of(h, cat, 3) == h.parents[3][l2]


def test_cluster_label_of():
    sim, _ = _planted(4)
    h = build_hierarchy(sim, 2)
    assert cluster_label_of(h, "c07", 1) == 7
    for node in h.nodes[2]:
        labels = {cluster_label_of(h, m, 2) for m in node.members}
        assert labels == {node.id}
    with pytest.raises(KeyError):
        cluster_label_of(h, "nope", 1)
    with pytest.raises(ValueError):
        cluster_label_of(h, "c00", 3)


def test_levels_below_two_rejected():
    sim, _ = _planted(0, n_categories=4, n_groups=2)
    with pytest.raises(ValueError):
        build_hierarchy(sim, 1)


def test_hierarchy_json_round_trip(tmp_path):
    sim, _ = _planted(5, n_categories=24, n_groups=6)
    h = build_hierarchy(sim, 3)
    h.save(tmp_path / "h.json")
    back = Hierarchy.load(tmp_path / "h.json")
    assert back.to_json() == h.to_json()
    for t in (1, 2, 3):
        assert np.array_equal(back.level_labels(t), h.level_labels(t))


@pytest.mark.parametrize("seed", range(10))
def test_planted_recovery_many_seeds(seed):
    sim, groups = _planted(seed)
    h = build_hierarchy(sim, 2)
    assert adjusted_rand_score([groups[c] for c in h.categories], h.level_labels(2)) >= 0.9
