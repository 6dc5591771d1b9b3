"""Typed heterogeneous graph store.

Node ids are local to their type. A "global" node reference is the pair
``(type_id, local_id)``. Edges are stored directed, one ``(E, 2)`` int array
per relation; degree and candidate logic treat them in both directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Structural problem with a graph or schema."""


@dataclass(frozen=True)
class Relation:
    name: str
    src: int
    dst: int


@dataclass(frozen=True)
class Metapath:
    """Alternating node types / relation types, e.g. M -directed-> D -directed-> M.

    ``types`` has one more entry than ``relations``.
    """
    types: tuple
    relations: tuple

    def __post_init__(self):
        if len(self.types) != len(self.relations) + 1:
            raise GraphError("metapath needs len(types) == len(relations) + 1")
        if len(self.relations) < 2:
            raise GraphError("metapath must have at least 2 hops")


@dataclass(frozen=True)
class Schema:
    node_types: tuple
    relations: tuple
    target: int
    metapaths: tuple = ()

    def __post_init__(self):
        n_types = len(self.node_types)
        if len(set(self.node_types)) != n_types:
            raise GraphError("duplicate node type names")
        if len({r.name for r in self.relations}) != len(self.relations):
            raise GraphError("duplicate relation names")
        if n_types + len(self.relations) <= 2:
            raise GraphError(
                f"not heterogeneous: {n_types} node types + "
                f"{len(self.relations)} relations <= 2")
        if not 0 <= self.target < n_types:
            raise GraphError(f"target type {self.target} out of range")
        for r in self.relations:
            if not (0 <= r.src < n_types and 0 <= r.dst < n_types):
                raise GraphError(f"relation {r.name} has an undeclared endpoint type")
        for mp in self.metapaths:
            self._check_metapath(mp)

    def _check_metapath(self, mp: Metapath):
        if mp.types[0] != self.target or mp.types[-1] != self.target:
            raise GraphError("metapath must start and end at the target type")
        for i, rid in enumerate(mp.relations):
            if not 0 <= rid < len(self.relations):
                raise GraphError(f"metapath relation {rid} out of range")
            rel = self.relations[rid]
            a, b = mp.types[i], mp.types[i + 1]
            if {a, b} != {rel.src, rel.dst} and not (a == rel.src and b == rel.dst):
                raise GraphError(
                    f"metapath step {self.node_types[a]}-{rel.name}-"
                    f"{self.node_types[b]} does not match relation signature")

    def type_id(self, name: str) -> int:
        try:
            return self.node_types.index(name)
        except ValueError:
            raise GraphError(f"unknown node type '{name}'") from None

    def relation_id(self, name: str) -> int:
        for i, r in enumerate(self.relations):
            if r.name == name:
                return i
        raise GraphError(f"unknown relation '{name}'")

    def metapath_name(self, m: int) -> str:
        mp = self.metapaths[m]
        parts = [self.node_types[mp.types[0]]]
        for rid, t in zip(mp.relations, mp.types[1:]):
            parts += [self.relations[rid].name, self.node_types[t]]
        return "-".join(parts)


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    schema: Schema
    features: tuple      # per type, (n_tau, d_tau) float64
    labels: np.ndarray   # target type only, -1 = unlabeled
    edges: tuple         # per relation, (E_r, 2) int64

    def num_nodes(self, tau: int | None = None) -> int:
        if tau is None:
            return sum(f.shape[0] for f in self.features)
        return self.features[tau].shape[0]

    def num_edges(self, r: int | None = None) -> int:
        if r is None:
            return sum(e.shape[0] for e in self.edges)
        return self.edges[r].shape[0]

    @property
    def target(self) -> int:
        return self.schema.target

    @cached_property
    def _degrees(self) -> tuple:
        out = []
        for r, rel in enumerate(self.schema.relations):
            per_type = [np.zeros(self.num_nodes(t), dtype=np.int64)
                        for t in range(len(self.schema.node_types))]
            e = self.edges[r]
            np.add.at(per_type[rel.src], e[:, 0], 1)
            np.add.at(per_type[rel.dst], e[:, 1], 1)
            out.append(per_type)
        return tuple(out)

    def degree(self, v: tuple, r: int) -> int:
        """Edges of relation ``r`` incident to ``v`` = (type, id), both directions."""
        tau, i = v
        _check_ref(self, tau, i)
        if not 0 <= r < len(self.schema.relations):
            raise GraphError(f"relation {r} out of range")
        return int(self._degrees[r][tau][i])

    def degree_array(self, tau: int, r: int) -> np.ndarray:
        return self._degrees[r][tau]

    def total_degree(self, tau: int) -> np.ndarray:
        """Sum over all relations of per-relation degree, for every node of ``tau``."""
        out = np.zeros(self.num_nodes(tau), dtype=np.int64)
        for r in range(len(self.schema.relations)):
            out += self._degrees[r][tau]
        return out

    def adjacency(self, r: int, src_type: int, dst_type: int) -> sp.csr_matrix:
        """Sparse count matrix for traversing relation ``r`` from src_type to dst_type."""
        rel = self.schema.relations[r]
        e = self.edges[r]
        shape = (self.num_nodes(src_type), self.num_nodes(dst_type))
        mats = []
        if rel.src == src_type and rel.dst == dst_type:
            mats.append(sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=shape))
        if rel.dst == src_type and rel.src == dst_type and (rel.src != rel.dst or not mats):
            mats.append(sp.csr_matrix((np.ones(len(e)), (e[:, 1], e[:, 0])), shape=shape))
        if not mats:
            raise GraphError(f"relation {rel.name} cannot connect {src_type}->{dst_type}")
        return sum(mats[1:], mats[0]).tocsr()

    def equals(self, other: "HeteroGraph") -> bool:
        if self.schema != other.schema:
            return False
        same = all(np.array_equal(a, b) for a, b in zip(self.features, other.features))
        same = same and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges))
        return same and np.array_equal(self.labels, other.labels)


def _check_ref(graph: HeteroGraph, tau: int, i: int):
    if not 0 <= tau < len(graph.schema.node_types):
        raise GraphError(f"node type {tau} out of range")
    if not 0 <= i < graph.num_nodes(tau):
        raise GraphError(f"node {i} out of range for type {graph.schema.node_types[tau]}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_graph(schema: Schema, features: dict, edges: dict,
                labels=None) -> HeteroGraph:
    """Validate tables and freeze them into a HeteroGraph.

    ``features`` maps type name -> (n, d) array; ``edges`` maps relation name
    -> iterable of (src, dst); ``labels`` is the target-type label vector.
    """
    feats = []
    for name in schema.node_types:
        if name not in features:
            raise GraphError(f"missing feature table for type '{name}'")
        f = np.array(features[name], dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        if f.ndim != 2:
            raise ValueError(f"features of '{name}' must be 2-D, got shape {f.shape}")
        feats.append(_frozen(f))
    unknown = set(features) - set(schema.node_types)
    if unknown:
        raise GraphError(f"feature tables for unknown types: {sorted(unknown)}")

    n_target = feats[schema.target].shape[0]
    if labels is None:
        lab = np.full(n_target, -1, dtype=np.int64)
    else:
        lab = np.array(labels, dtype=np.int64).reshape(-1)
        if lab.shape[0] != n_target:
            raise ValueError(f"label vector has {lab.shape[0]} entries, "
                             f"target type has {n_target} nodes")

    ed = []
    for rel in schema.relations:
        raw = edges.get(rel.name, [])
        e = np.array(raw, dtype=np.int64).reshape(-1, 2)
        ns, nd = feats[rel.src].shape[0], feats[rel.dst].shape[0]
        bad = np.flatnonzero((e[:, 0] < 0) | (e[:, 0] >= ns) | (e[:, 1] < 0) | (e[:, 1] >= nd))
        if bad.size:
            k = int(bad[0])
            raise GraphError(f"relation '{rel.name}' edge {k} ({e[k, 0]}, {e[k, 1]}) "
                             f"has an out-of-range endpoint")
        ed.append(_frozen(e))
    unknown = set(edges) - {r.name for r in schema.relations}
    if unknown:
        raise GraphError(f"edge tables for unknown relations: {sorted(unknown)}")
    return HeteroGraph(schema, tuple(feats), _frozen(lab), tuple(ed))


@dataclass(frozen=True, eq=False)
class MetapathNeighborIndex:
    """Per metapath, CSR neighbor lists over target nodes, with instance counts."""
    indptr: tuple
    indices: tuple
    counts: tuple

    @property
    def num_metapaths(self) -> int:
        return len(self.indptr)

    def neighbors(self, m: int, v: int) -> dict:
        lo, hi = self.indptr[m][v], self.indptr[m][v + 1]
        return {int(u): int(c) for u, c in zip(self.indices[m][lo:hi], self.counts[m][lo:hi])}

    def flat(self, m: int, nodes) -> tuple:
        """(segment ids, neighbor ids) for the given query nodes, in order."""
        nodes = np.asarray(nodes, dtype=np.int64)
        ptr, idx = self.indptr[m], self.indices[m]
        lens = ptr[nodes + 1] - ptr[nodes]
        seg = np.repeat(np.arange(len(nodes)), lens)
        starts = np.repeat(ptr[nodes], lens)
        offs = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
        return seg, idx[starts + offs]


def metapath_counts(graph: HeteroGraph, mp: Metapath) -> sp.csr_matrix:
    """Target x target matrix of metapath instance counts."""
    mat = None
    for i, rid in enumerate(mp.relations):
        step = graph.adjacency(rid, mp.types[i], mp.types[i + 1])
        mat = step if mat is None else (mat @ step).tocsr()
    return mat


def build_neighbor_index(graph: HeteroGraph) -> MetapathNeighborIndex:
    """Exact metapath neighborhoods; isolated nodes get {v} with count 0."""
    n = graph.num_nodes(graph.target)
    ptrs, idxs, cnts = [], [], []
    for mp in graph.schema.metapaths:
        mat = metapath_counts(graph, mp).tocsr()
        mat.eliminate_zeros()
        mat.sort_indices()
        empty = np.flatnonzero(np.diff(mat.indptr) == 0)
        if empty.size:
            mat = (mat + sp.csr_matrix((np.full(empty.size, 1e-300), (empty, empty)),
                                       shape=(n, n))).tocsr()
            mat.sort_indices()
        counts = np.rint(mat.data).astype(np.int64)
        ptrs.append(_frozen(mat.indptr.astype(np.int64)))
        idxs.append(_frozen(mat.indices.astype(np.int64)))
        cnts.append(_frozen(counts))
    return MetapathNeighborIndex(tuple(ptrs), tuple(idxs), tuple(cnts))


def metapath_neighbors(graph: HeteroGraph, mp: Metapath | int, v: int) -> dict:
    """{neighbor id: instance count} for target node ``v`` along ``mp``."""
    if isinstance(mp, int):
        mp = graph.schema.metapaths[mp]
    _check_ref(graph, graph.target, v)
    row = metapath_counts(graph, mp).getrow(v)
    out = {int(u): int(round(c)) for u, c in zip(row.indices, row.data) if c != 0}
    return out or {v: 0}


@dataclass(frozen=True, eq=False)
class Subgraph:
    graph: HeteroGraph
    node_map: tuple   # per type, sorted original ids; new id = position

    def to_new(self, tau: int, old_ids) -> np.ndarray:
        old_ids = np.asarray(old_ids, dtype=np.int64)
        pos = np.searchsorted(self.node_map[tau], old_ids)
        ok = (pos < len(self.node_map[tau])) & (self.node_map[tau][np.minimum(pos, len(self.node_map[tau]) - 1)] == old_ids)
        if not np.all(ok):
            raise GraphError("id not present in subgraph")
        return pos


def induced_subgraph(graph: HeteroGraph, keep: dict) -> Subgraph:
    """Keep the listed nodes per type and every edge between kept nodes.

    ``keep`` maps type id -> iterable of local ids; missing types keep nothing.
    """
    schema = graph.schema
    node_map = []
    for tau in range(len(schema.node_types)):
        ids = np.unique(np.asarray(list(keep.get(tau, ())), dtype=np.int64))
        if ids.size and (ids[0] < 0 or ids[-1] >= graph.num_nodes(tau)):
            raise GraphError(f"kept id out of range for type {schema.node_types[tau]}")
        node_map.append(_frozen(ids))
    if node_map[schema.target].size == 0:
        raise GraphError("induced subgraph has no target-type nodes")

    remap = []
    for tau, ids in enumerate(node_map):
        m = np.full(graph.num_nodes(tau), -1, dtype=np.int64)
        m[ids] = np.arange(ids.size)
        remap.append(m)

    feats = {schema.node_types[t]: graph.features[t][ids] for t, ids in enumerate(node_map)}
    edges = {}
    for r, rel in enumerate(schema.relations):
        e = graph.edges[r]
        s, d = remap[rel.src][e[:, 0]], remap[rel.dst][e[:, 1]]
        ok = (s >= 0) & (d >= 0)
        edges[rel.name] = np.stack([s[ok], d[ok]], axis=1)
    labels = graph.labels[node_map[schema.target]]
    sub = build_graph(schema, feats, edges, labels)
    return Subgraph(sub, tuple(node_map))
