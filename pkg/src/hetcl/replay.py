"""Diversity-aware replay sampling and buffer management.

Stage 1 picks, per class, the training nodes with the fewest other-class
nodes inside a distance threshold (coverage maximization). Stage 2 pools
the neighbors of the buffered target nodes over every relation, ranks them
by total degree and keeps the top ones per node type. The replay subgraph
is the subgraph induced by all buffered nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .hgraph import HeteroGraph, MetapathNeighborIndex, build_neighbor_index, induced_subgraph
from .rng import stream

AUTO = "auto"
_EXACT_LIMIT = 2000


def _pairwise_dist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.sqrt(np.maximum(sq, 0.0))


def auto_threshold(features: np.ndarray, seed: int = 0) -> float:
    """Mean pairwise Euclidean distance (seeded 2000-node sample above that size)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] > _EXACT_LIMIT:
        pick = np.sort(stream(seed, "dthresh").choice(x.shape[0], _EXACT_LIMIT, replace=False))
        x = x[pick]
    n = x.shape[0]
    if n < 2:
        return 1.0
    d = _pairwise_dist(x, x)
    mean = d[np.triu_indices(n, 1)].mean()
    return float(mean) if mean > 0 else 1.0


def conflict_counts(features, labels, d_thresh: float) -> np.ndarray:
    """|N(v)|: other-class nodes strictly closer than ``d_thresh``."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    n = x.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for lo in range(0, n, 1024):
        d = _pairwise_dist(x[lo:lo + 1024], x)
        other = y[lo:lo + 1024, None] != y[None, :]
        out[lo:lo + 1024] = ((d < d_thresh) & other).sum(1)
    return out


def coverage_maximization(features, labels, d_thresh, e: int, ids=None,
                          seed: int = 0) -> np.ndarray:
    """Per class, the ``e`` nodes with the smallest conflict count.

    Ties break on ascending id. ``ids`` names the rows (defaults to row
    positions); the returned array holds ids, grouped by ascending class.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    ids = np.arange(len(y)) if ids is None else np.asarray(ids, dtype=np.int64)
    if len(y) == 0:
        return np.zeros(0, dtype=np.int64)
    if isinstance(d_thresh, str):
        d_thresh = auto_threshold(x, seed)
    if e < 1:
        raise ValueError("e must be >= 1")
    counts = conflict_counts(x, y, d_thresh)
    chosen = []
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        order = np.lexsort((ids[members], counts[members]))
        chosen.append(ids[members[order[:e]]])
    return np.concatenate(chosen)


def collect_candidates(graph: HeteroGraph, targets, r: int, target_type=None) -> dict:
    """Nodes adjacent to any target via relation ``r``, either direction.

    ``targets`` are ids of ``target_type`` (default: the graph's target
    type). Returns {node type: sorted id array}.
    """
    tgt = graph.target if target_type is None else target_type
    rel = graph.schema.relations[r]
    targets = np.asarray(list(targets), dtype=np.int64)
    e = graph.edges[r]
    found = {}
    if rel.src == tgt:
        hit = np.isin(e[:, 0], targets)
        found.setdefault(rel.dst, []).append(e[hit, 1])
    if rel.dst == tgt:
        hit = np.isin(e[:, 1], targets)
        found.setdefault(rel.src, []).append(e[hit, 0])
    out = {}
    for tau, parts in found.items():
        ids = np.unique(np.concatenate(parts))
        if tau == tgt:
            # a target only counts as its own candidate through a self-loop
            loops = set(e[(e[:, 0] == e[:, 1]) & np.isin(e[:, 0], targets), 0].tolist())
            ids = np.array([i for i in ids if i not in set(targets.tolist()) or i in loops],
                           dtype=np.int64)
        out[tau] = ids
    return out


def importance_scores(graph: HeteroGraph, tau: int, candidates) -> dict:
    """pi(v) = total degree of v summed over every relation type, full graph."""
    deg = graph.total_degree(tau)
    return {int(v): int(deg[v]) for v in candidates}


def select_topk(candidates, scores: dict, budget: int) -> np.ndarray:
    """Highest-scoring ``budget`` candidates; ties on ascending id."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    cands = sorted(set(int(c) for c in candidates), key=lambda v: (-scores[v], v))
    return np.array(cands[:budget], dtype=np.int64)


@dataclass
class Buffer:
    node_type: int
    capacity: int | None
    ids: list = field(default_factory=list)
    tasks: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)


@dataclass
class MemoryState:
    buffers: dict                    # type id -> Buffer
    replay: object = None            # Subgraph of the full graph, or None
    replay_index: MetapathNeighborIndex | None = None

    @classmethod
    def empty(cls, graph: HeteroGraph, target_capacity=None, other_capacity: int = 200):
        bufs = {}
        for tau in range(len(graph.schema.node_types)):
            cap = target_capacity if tau == graph.target else other_capacity
            bufs[tau] = Buffer(tau, cap)
        return cls(bufs)

    def is_empty(self) -> bool:
        return self.replay is None

    def replay_nodes(self) -> np.ndarray:
        """Target ids inside the replay subgraph (all of them are buffered)."""
        if self.replay is None:
            return np.zeros(0, dtype=np.int64)
        return np.arange(self.replay.graph.num_nodes(self.replay.graph.target))

    def replay_labels(self) -> np.ndarray:
        g = self.replay.graph
        return g.labels[self.replay_nodes()]

    def copy(self) -> "MemoryState":
        bufs = {t: Buffer(b.node_type, b.capacity, list(b.ids), list(b.tasks))
                for t, b in self.buffers.items()}
        return MemoryState(bufs, self.replay, self.replay_index)


def _append_targets(buf: Buffer, new_ids, task: int):
    for v in new_ids:
        buf.ids.append(int(v))
        buf.tasks.append(task)
    if buf.capacity is not None and len(buf.ids) > buf.capacity:
        drop = len(buf.ids) - buf.capacity
        del buf.ids[:drop], buf.tasks[:drop]


def expand_neighbors(state: MemoryState, graph: HeteroGraph, task: int):
    """Refill every non-target buffer from candidates of the target buffer."""
    tgt = graph.target
    targets = state.buffers[tgt].ids
    pooled = {}
    for r in range(len(graph.schema.relations)):
        for tau, ids in collect_candidates(graph, targets, r).items():
            if tau != tgt:
                pooled.setdefault(tau, set()).update(ids.tolist())
    for tau, buf in state.buffers.items():
        if tau == tgt:
            continue
        cands = sorted(pooled.get(tau, ()))
        cap = len(cands) if buf.capacity is None else buf.capacity
        chosen = select_topk(cands, importance_scores(graph, tau, cands), cap)
        buf.ids = chosen.tolist()
        buf.tasks = [task] * len(buf.ids)


def rebuild_replay(state: MemoryState, graph: HeteroGraph):
    keep = {tau: buf.ids for tau, buf in state.buffers.items()}
    if not keep[graph.target]:
        state.replay, state.replay_index = None, None
        return
    state.replay = induced_subgraph(graph, keep)
    state.replay_index = build_neighbor_index(state.replay.graph)


def update_memory(state: MemoryState, graph: HeteroGraph, train_ids, e: int,
                  task: int, d_thresh=AUTO, seed: int = 0,
                  features=None) -> MemoryState:
    """Add ``e`` coverage-maximizing nodes per class, refill neighbors, rebuild.

    ``train_ids`` are full-graph target ids of the finished task. Distances
    use raw target features unless ``features`` (rows aligned with
    ``train_ids``, e.g. model embeddings) is given.
    """
    state = state.copy()
    train_ids = np.asarray(train_ids, dtype=np.int64)
    x = graph.features[graph.target][train_ids] if features is None else features
    picked = coverage_maximization(x, graph.labels[train_ids], d_thresh, e,
                                   ids=train_ids, seed=seed)
    _append_targets(state.buffers[graph.target], picked, task)
    expand_neighbors(state, graph, task)
    rebuild_replay(state, graph)
    return state


def update_memory_random(state: MemoryState, graph: HeteroGraph, train_ids, e: int,
                         task: int, rng: np.random.Generator) -> MemoryState:
    """Uniform per-class target sampling, no neighbor expansion (naive replay)."""
    state = state.copy()
    train_ids = np.asarray(train_ids, dtype=np.int64)
    y = graph.labels[train_ids]
    picked = []
    for c in np.unique(y):
        members = train_ids[y == c]
        k = min(e, members.size)
        picked.append(np.sort(rng.choice(members, size=k, replace=False)))
    _append_targets(state.buffers[graph.target], np.concatenate(picked), task)
    rebuild_replay(state, graph)
    return state


def replay_loss(logits, labels) -> ad.Tensor:
    """Mean cross-entropy over buffered target nodes; 0 for an empty buffer."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return ad.Tensor(0.0)
    return cross_entropy(logits, labels)


def cross_entropy(logits, labels) -> ad.Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    logp = ad.log_softmax(logits, axis=1)
    picked = logp[np.arange(labels.size), labels]
    return ad.scale(ad.reduce_mean(picked), -1.0)


def dump_buffers(state: MemoryState, graph: HeteroGraph, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_type", "node_id", "task_added"])
        for tau in sorted(state.buffers):
            buf = state.buffers[tau]
            for v, t in zip(buf.ids, buf.tasks):
                w.writerow([graph.schema.node_types[tau], v, t])
