"""Affinity propagation over category similarity and the multi-level label tree."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .similarity import SimilarityMatrix


JITTER_SEED = 0


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class APParams:
    preference: Union[float, str] = "median"
    damping: float = 0.5
    max_iter: int = 500
    stable_iters: int = 15

    def __post_init__(self):
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must lie in [0, 1)")
        if self.max_iter < 1 or self.stable_iters < 1:
            raise ValueError("max_iter and stable_iters must be >= 1")
        if isinstance(self.preference, str) and self.preference not in ("median", "min"):
            raise ValueError(f"unknown preference policy {self.preference!r}")


@dataclass
class ClusteringResult:
    exemplars: list[int]
    assignment: list[int]  # point index -> exemplar index
    n_iterations: int
    converged: bool
    preference: float = float("nan")

    @property
    def labels(self) -> np.ndarray:
        """Dense cluster id per point, clusters ordered by exemplar index."""
        pos = {e: i for i, e in enumerate(self.exemplars)}
        return np.array([pos[e] for e in self.assignment], dtype=np.int64)

    def members(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.exemplars]
        for i, c in enumerate(self.labels):
            out[c].append(i)
        return out


@dataclass
class _State:
    s: np.ndarray
    r: np.ndarray
    a: np.ndarray
    iteration: int = 0


def _resolve_preference(values: np.ndarray, preference) -> float:
    n = values.shape[0]
    if not isinstance(preference, str):
        return float(preference)
    if n == 1:
        return float(values[0, 0])
    off = values[~np.eye(n, dtype=bool)]
    return float(np.median(off) if preference == "median" else off.min())


def _responsibility(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    # r(i,k) = s(i,k) - max_{k' != k} (a(i,k') + s(i,k'))
    n = s.shape[0]
    rows = np.arange(n)
    tot = a + s
    first = np.argmax(tot, axis=1)  # lowest index on ties
    best = tot[rows, first]
    tot[rows, first] = -np.inf
    second = tot.max(axis=1)
    r = s - best[:, None]
    r[rows, first] = s[rows, first] - second
    return r


def _availability(r: np.ndarray) -> np.ndarray:
    # a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))
    # a(k,k) = sum_{i' != k} max(0, r(i',k))
    n = r.shape[0]
    rp = np.maximum(r, 0.0)
    diag = np.diag(r).copy()
    rp[np.arange(n), np.arange(n)] = diag
    col = rp.sum(axis=0)
    a = col[None, :] - rp
    dA = np.diag(a).copy()
    a = np.minimum(a, 0.0)
    a[np.arange(n), np.arange(n)] = dA
    return a


def affinity_propagation(
    sim: Union[SimilarityMatrix, np.ndarray],
    params: APParams = APParams(),
    return_state: bool = False,
):
    """Cluster by exchanging responsibility and availability messages.

    Messages start at zero and are updated alternately, each damped as
    ``damping * old + (1 - damping) * new``. A point is an exemplar when
    ``r(k,k) + a(k,k) > 0``. Iteration stops once a non-empty exemplar set
    has stayed the same for ``stable_iters`` consecutive iterations, or at
    ``max_iter``. Non-exemplars join the exemplar with the highest
    similarity, lowest index on ties.
    """
    values = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ClusteringError("similarity matrix must be square")
    n = values.shape[0]
    if n == 0:
        raise ClusteringError("empty similarity matrix")
    if not np.all(np.isfinite(values)):
        raise ClusteringError("similarity matrix has non-finite entries")
    if not np.allclose(values, values.T, rtol=0.0, atol=1e-12):
        raise ClusteringError("similarity matrix is not symmetric")

    pref = _resolve_preference(values, params.preference)
    s = values.copy()
    s[np.arange(n), np.arange(n)] = pref
    # exact ties make the messages oscillate; break them with a fixed-seed
    # perturbation at rounding-error scale
    jitter = np.random.Generator(np.random.PCG64(JITTER_SEED)).standard_normal((n, n))
    s_msg = s + (np.finfo(np.float64).eps * np.abs(s) + 100 * np.finfo(np.float64).tiny) * jitter
    state = _State(s=s_msg, r=np.zeros_like(s), a=np.zeros_like(s))

    if n == 1:
        res = ClusteringResult([0], [0], 0, True, pref)
        return (res, state) if return_state else res

    lam = params.damping
    prev: Optional[tuple] = None
    stable = 0
    converged = False
    while state.iteration < params.max_iter:
        state.r = lam * state.r + (1.0 - lam) * _responsibility(s_msg, state.a)
        state.a = lam * state.a + (1.0 - lam) * _availability(state.r)
        state.iteration += 1
        ex = tuple(np.flatnonzero(np.diag(state.r) + np.diag(state.a) > 0).tolist())
        stable = stable + 1 if ex == prev else 1
        prev = ex
        if ex and stable >= params.stable_iters:
            converged = True
            break

    exemplars = list(np.flatnonzero(np.diag(state.r) + np.diag(state.a) > 0))
    if not exemplars:
        # degenerate: one cluster around the strongest candidate
        k = int(np.argmax(np.diag(state.r) + np.diag(state.a)))
        exemplars = [k]
        converged = False
    exemplars = [int(e) for e in exemplars]
    ex_arr = np.array(exemplars)
    choice = ex_arr[np.argmax(s[:, ex_arr], axis=1)]
    choice[ex_arr] = ex_arr
    res = ClusteringResult(exemplars, [int(c) for c in choice], state.iteration, converged, pref)
    return (res, state) if return_state else res


def cluster_similarity(sim: SimilarityMatrix, clusters: ClusteringResult, names=None) -> SimilarityMatrix:
    """Mean pairwise member similarity between clusters, unit diagonal."""
    groups = clusters.members()
    m = len(groups)
    values = np.eye(m)
    for u in range(m):
        for v in range(u + 1, m):
            block = sim.values[np.ix_(groups[u], groups[v])]
            values[u, v] = values[v, u] = float(block.mean())
    if names is None:
        names = [sim.labels[e] for e in clusters.exemplars]
    return SimilarityMatrix(list(names), values)


@dataclass
class ClusterNode:
    level: int
    id: int
    exemplar: str
    members: list[str]


@dataclass
class Hierarchy:
    """Label tree: level 1 holds categories, level t >= 2 holds clusters.

    ``parents[t]`` (t >= 2) maps each level-(t-1) node id to its level-t
    cluster id.
    """

    categories: list[str]
    nodes: dict[int, list[ClusterNode]]
    parents: dict[int, list[int]]
    params: dict = field(default_factory=dict)
    _lookup: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._index = {c: i for i, c in enumerate(self.categories)}
        # category -> label at every level, precomputed for O(1) lookup
        table = [np.arange(len(self.categories))]
        for t in range(2, self.n_levels + 1):
            table.append(np.asarray(self.parents[t], dtype=np.int64)[table[-1]])
        self._lookup = np.stack(table)

    @property
    def n_levels(self) -> int:
        return 1 + len(self.nodes)

    def level_size(self, level: int) -> int:
        if level == 1:
            return len(self.categories)
        return len(self.nodes[level])

    @property
    def level_sizes(self) -> list[int]:
        return [self.level_size(t) for t in range(1, self.n_levels + 1)]

    def level_labels(self, level: int) -> np.ndarray:
        """Level-``level`` label for every category index."""
        self._check_level(level)
        return self._lookup[level - 1]

    def _check_level(self, level: int) -> None:
        if not (1 <= level <= self.n_levels):
            raise ValueError(f"level {level} outside 1..{self.n_levels}")

    def to_json(self) -> dict:
        clusters = []
        for t in sorted(self.nodes):
            for node in self.nodes[t]:
                clusters.append(
                    {"level": t, "id": node.id, "exemplar": node.exemplar, "members": list(node.members)}
                )
        return {
            "levels": self.n_levels,
            "categories": list(self.categories),
            "clusters": clusters,
            "params": self.params,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Hierarchy":
        categories = list(obj["categories"])
        levels = int(obj["levels"])
        nodes: dict[int, list[ClusterNode]] = {t: [] for t in range(2, levels + 1)}
        for c in obj["clusters"]:
            nodes[int(c["level"])].append(
                ClusterNode(int(c["level"]), int(c["id"]), c["exemplar"], list(c["members"]))
            )
        parents: dict[int, list[int]] = {}
        prev_names = categories
        for t in range(2, levels + 1):
            nodes[t].sort(key=lambda nd: nd.id)
            pos = {name: i for i, name in enumerate(prev_names)}
            parent = [-1] * len(prev_names)
            for node in nodes[t]:
                for m in node.members:
                    if m not in pos:
                        raise ValueError(f"unknown member {m!r} at level {t}")
                    parent[pos[m]] = node.id
            if min(parent, default=0) < 0:
                raise ValueError(f"level {t} clusters do not cover level {t - 1}")
            parents[t] = parent
            prev_names = [node_name(t, nd.id) for nd in nodes[t]]
        return cls(categories, nodes, parents, dict(obj.get("params", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Hierarchy":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def node_name(level: int, ident: int) -> str:
    return f"L{level}:{ident}"


def build_hierarchy(sim: SimilarityMatrix, levels: int = 2, params: APParams = APParams()) -> Hierarchy:
    """Level 2 clusters categories; each further level clusters the one below."""
    if levels < 2:
        raise ValueError("a hierarchy needs at least 2 levels")
    nodes: dict[int, list[ClusterNode]] = {}
    parents: dict[int, list[int]] = {}
    run_info = []
    current = sim
    names = list(sim.labels)
    for t in range(2, levels + 1):
        res = affinity_propagation(current, params)
        members = res.members()
        nodes[t] = [
            ClusterNode(t, cid, names[ex], [names[i] for i in members[cid]])
            for cid, ex in enumerate(res.exemplars)
        ]
        parents[t] = res.labels.tolist()
        run_info.append(
            {
                "level": t,
                "preference": res.preference,
                "iterations": res.n_iterations,
                "converged": res.converged,
            }
        )
        next_names = [node_name(t, cid) for cid in range(len(res.exemplars))]
        current = cluster_similarity(current, res, names=next_names)
        names = next_names
    info = {
        "preference": params.preference,
        "damping": params.damping,
        "max_iter": params.max_iter,
        "stable_iters": params.stable_iters,
        "iterations": [r["iterations"] for r in run_info],
        "converged": all(r["converged"] for r in run_info),
        "runs": run_info,
    }
    return Hierarchy(list(sim.labels), nodes, parents, info)


def cluster_label_of(h: Hierarchy, category: str, level: int) -> int:
    if category not in h._index:
        raise KeyError(f"unknown category {category!r}")
    h._check_level(level)
    return int(h._lookup[level - 1, h._index[category]])


def flat_hierarchy(categories) -> Hierarchy:
    """Single-level tree for flat classification."""
    return Hierarchy(list(categories), {}, {})
