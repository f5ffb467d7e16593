import numpy as np

from foodhier.hierarchy import ClusterNode, Hierarchy
from foodhier.multitask import init_model


def random_hierarchy(rng, n1, n2):
    """Two-level tree with ``n2`` non-empty clusters over ``n1`` categories."""
    parent = np.concatenate([np.arange(n2), rng.integers(0, n2, n1 - n2)])
    rng.shuffle(parent)
    cats = [f"k{i:02d}" for i in range(n1)]
    nodes = []
    for j in range(n2):
        members = [cats[i] for i in np.flatnonzero(parent == j)]
        nodes.append(ClusterNode(2, j, members[0], members))
    return Hierarchy(cats, {2: nodes}, {2: parent.tolist()})


def random_instance(seed, max_dim=32, max_n1=10, max_n2=4, hidden=None):
    """Random (model, batch, hierarchy) with non-trivial parameters."""
    rng = np.random.Generator(np.random.PCG64(seed))
    dim = int(rng.integers(1, max_dim + 1))
    n1 = int(rng.integers(2, max_n1 + 1))
    n2 = int(rng.integers(1, min(max_n2, n1) + 1))
    if hidden is None:
        hidden = int(rng.integers(2, 9)) if seed % 2 else None
    hier = random_hierarchy(rng, n1, n2)
    model = init_model(dim, [n1, n2], list(rng.uniform(0.05, 1.0, 2)), hidden or None, seed=seed)
    for k in model.params:
        model.params[k] = rng.normal(0, 0.5, model.params[k].shape)
    b = int(rng.integers(1, 8))
    X = rng.normal(size=(b, dim))
    y = rng.integers(0, n1, b)
    return model, (X, y), hier


def max_relative_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), np.finfo(float).tiny)
    return float(np.max(np.abs(analytic - numeric) / denom))
