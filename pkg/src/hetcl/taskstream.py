"""Task streams: class-based partitioning, synthetic graphs and dataset I/O."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .hgraph import (GraphError, HeteroGraph, Metapath, MetapathNeighborIndex,
                     Relation, Schema, build_graph, build_neighbor_index,
                     induced_subgraph)
from .rng import stream


class InsufficientClassesError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


class SchemaError(GraphError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    index: int
    classes: tuple
    train: np.ndarray    # target-type ids in the full graph, ascending
    test: np.ndarray


@dataclass(frozen=True, eq=False)
class TaskView:
    """One task (or a union of tasks) cut out of the full graph.

    The subgraph keeps every non-target node and only the target nodes whose
    label belongs to the view's classes. ``train``/``test`` are subgraph ids.
    """
    tasks: tuple
    classes: tuple
    graph: HeteroGraph
    index: MetapathNeighborIndex
    target_map: np.ndarray   # subgraph target id -> full graph id
    train: np.ndarray
    test: np.ndarray

    @property
    def train_labels(self) -> np.ndarray:
        return self.graph.labels[self.train]

    @property
    def test_labels(self) -> np.ndarray:
        return self.graph.labels[self.test]

    @property
    def train_full_ids(self) -> np.ndarray:
        return self.target_map[self.train]


class TaskSequence:
    """Ordered class-disjoint tasks over one shared graph.

    Every task view handed out is logged to ``access_log`` as
    ``(clock, tasks, purpose)``; the trainer advances ``clock`` so tests can
    audit that training never touched earlier tasks' raw data.
    """

    def __init__(self, graph: HeteroGraph, tasks: list, classes_per_task: int):
        self.graph = graph
        self.tasks = list(tasks)
        self.classes_per_task = classes_per_task
        labeled = graph.labels[graph.labels >= 0]
        self.num_classes = int(labeled.max()) + 1 if labeled.size else 0
        self.clock = None
        self.access_log = []
        self._views = {}

    def __len__(self):
        return len(self.tasks)

    def view(self, tasks, purpose: str = "train") -> TaskView:
        key = tuple(sorted({tasks} if isinstance(tasks, int) else set(tasks)))
        self.access_log.append((self.clock, key, purpose))
        if key not in self._views:
            self._views[key] = self._build_view(key)
        return self._views[key]

    def _build_view(self, key: tuple) -> TaskView:
        g = self.graph
        specs = [self.tasks[t] for t in key]
        classes = tuple(sorted(c for s in specs for c in s.classes))
        tgt = np.flatnonzero(np.isin(g.labels, classes))
        keep = {tau: np.arange(g.num_nodes(tau)) for tau in range(len(g.schema.node_types))}
        keep[g.target] = tgt
        sub = induced_subgraph(g, keep)
        train = np.sort(np.concatenate([s.train for s in specs]))
        test = np.sort(np.concatenate([s.test for s in specs]))
        return TaskView(
            tasks=key, classes=classes, graph=sub.graph,
            index=build_neighbor_index(sub.graph),
            target_map=sub.node_map[g.target],
            train=sub.to_new(g.target, train), test=sub.to_new(g.target, test))


def partition_by_classes(graph: HeteroGraph, classes_per_task: int,
                         train_fraction: float = 0.6, seed: int = 0,
                         shuffle_classes: bool = False) -> TaskSequence:
    """Chunk the sorted label set into tasks, then split each class train/test."""
    labels = graph.labels
    classes = sorted(int(c) for c in np.unique(labels[labels >= 0]))
    if len(classes) < 2 * classes_per_task:
        raise InsufficientClassesError(
            f"{len(classes)} classes cannot form 2 tasks of {classes_per_task}")
    rng = stream(seed, "split")
    if shuffle_classes:
        classes = [classes[i] for i in rng.permutation(len(classes))]
    n_tasks = len(classes) // classes_per_task
    dropped = classes[n_tasks * classes_per_task:]
    if dropped:
        warnings.warn(f"dropping leftover classes {dropped}", stacklevel=2)

    tasks = []
    for t in range(n_tasks):
        chunk = tuple(sorted(classes[t * classes_per_task:(t + 1) * classes_per_task]))
        train, test = [], []
        for c in chunk:
            ids = np.flatnonzero(labels == c)
            ids = ids[rng.permutation(ids.size)]
            k = int(np.floor(train_fraction * ids.size))
            train.append(ids[:k])
            test.append(ids[k:])
        tasks.append(TaskSpec(t, chunk, np.sort(np.concatenate(train)),
                              np.sort(np.concatenate(test))))
    return TaskSequence(graph, tasks, classes_per_task)


# ---------------------------------------------------------------- synthetic

@dataclass
class SyntheticConfig:
    num_node_types: int = 3
    nodes_per_type: tuple = (600, 60, 60)
    num_classes: int = 6
    classes_per_task: int = 2
    feature_dims: tuple = (16, 8, 8)
    cohesion: float = 1.0
    class_separation: float = 1.0
    task_overlap: float = 0.0
    edge_density: tuple = (3.0, 3.0)
    homophily: float = 0.8
    informative_aux: tuple = ()
    seed: int = 0

    def __post_init__(self):
        self.nodes_per_type = tuple(int(x) for x in _as_tuple(self.nodes_per_type))
        self.feature_dims = tuple(int(x) for x in _as_tuple(self.feature_dims))
        self.edge_density = tuple(float(x) for x in _as_tuple(self.edge_density))
        self.informative_aux = tuple(int(x) for x in _as_tuple(self.informative_aux))
        k = self.num_node_types
        if k < 2:
            raise ValueError("need at least 2 node types")
        if len(self.nodes_per_type) != k or len(self.feature_dims) != k:
            raise ValueError("nodes_per_type and feature_dims need one entry per node type")
        if len(self.edge_density) != k - 1:
            raise ValueError("edge_density needs one entry per auxiliary relation")
        if min(self.nodes_per_type) < 1 or min(self.feature_dims) < 1:
            raise ValueError("counts must be positive")
        if self.num_classes < 1 or self.classes_per_task < 1:
            raise ValueError("class counts must be positive")
        if self.cohesion <= 0:
            raise ValueError("cohesion must be > 0")
        if not 0.0 <= self.task_overlap <= 1.0:
            raise ValueError("task_overlap must lie in [0, 1]")
        if not 0.0 <= self.homophily <= 1.0:
            raise ValueError("homophily must lie in [0, 1]")
        if min(self.edge_density) < 0:
            raise ValueError("edge densities must be >= 0")
        if any(not 1 <= k < self.num_node_types for k in self.informative_aux):
            raise ValueError("informative_aux entries must be auxiliary type indices")


# 6 classes / 3 two-way tasks where each task's classes are homophilous
# through a different auxiliary type than the first task's, so shared
# semantic attention drifts under plain finetuning
BENCHMARK_STREAM = dict(task_overlap=0.7, cohesion=1.5, homophily=0.8, informative_aux=(1, 2, 2))


def _as_tuple(x):
    if isinstance(x, str):
        return tuple(p for p in x.split(",") if p.strip())
    if np.isscalar(x):
        return (x,)
    return tuple(x)


def synthetic_schema(cfg: SyntheticConfig) -> Schema:
    names = ("target",) + tuple(f"aux{k}" for k in range(1, cfg.num_node_types))
    rels = tuple(Relation(f"target_aux{k}", 0, k) for k in range(1, cfg.num_node_types))
    mps = tuple(Metapath((0, k, 0), (k - 1, k - 1)) for k in range(1, cfg.num_node_types))
    return Schema(names, rels, 0, mps)


def generate_synthetic(cfg: SyntheticConfig) -> HeteroGraph:
    """Gaussian class clusters on the target type, class-homophilous hub wiring.

    Each target node sends ~Poisson(density) edges (at least one) to every
    auxiliary type. With probability ``homophily`` an edge goes to a hub
    owned by the node's class (auxiliary node j is owned by class j mod C),
    otherwise to a uniformly random auxiliary node.

    ``task_overlap`` mixes a per-position prototype into the class means:
    class c leans toward prototype c mod classes_per_task, so the k-th class
    of every task lives in a similar feature region.
    """
    rng = stream(cfg.seed, "generate")
    schema = synthetic_schema(cfg)
    n_t, C = cfg.nodes_per_type[0], cfg.num_classes
    labels = rng.permutation(np.arange(n_t) % C)
    d0 = cfg.feature_dims[0]
    own = rng.standard_normal((C, d0))
    protos = rng.standard_normal((cfg.classes_per_task, d0))
    rho = cfg.task_overlap
    means = cfg.class_separation * (np.sqrt(rho) * protos[np.arange(C) % cfg.classes_per_task]
                                    + np.sqrt(1 - rho) * own)
    feats = {"target": means[labels] + cfg.cohesion * rng.standard_normal((n_t, d0))}
    edges = {}
    groups = np.arange(C) // cfg.classes_per_task
    for k in range(1, cfg.num_node_types):
        if cfg.informative_aux:
            sched = np.array(cfg.informative_aux)[groups % len(cfg.informative_aux)]
            h_class = np.where(sched == k, cfg.homophily, 0.0)
        else:
            h_class = np.full(C, cfg.homophily)
        n_a = cfg.nodes_per_type[k]
        feats[f"aux{k}"] = rng.standard_normal((n_a, cfg.feature_dims[k]))
        owner = np.arange(n_a) % C
        hubs = [np.flatnonzero(owner == c) for c in range(C)]
        deg = np.maximum(1, rng.poisson(cfg.edge_density[k - 1], size=n_t))
        pairs = set()
        for v in range(n_t):
            for _ in range(deg[v]):
                pool = hubs[labels[v]]
                if rng.random() < h_class[labels[v]] and pool.size:
                    u = pool[rng.integers(pool.size)]
                else:
                    u = rng.integers(n_a)
                pairs.add((v, int(u)))
        edges[f"target_aux{k}"] = sorted(pairs)
    return build_graph(schema, feats, edges, labels)


# --------------------------------------------------------------------- I/O

def save_dataset(graph: HeteroGraph, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    s = graph.schema
    lines = [f"node_type {n}" for n in s.node_types]
    lines += [f"relation {r.name} {s.node_types[r.src]} {s.node_types[r.dst]}" for r in s.relations]
    lines.append(f"target {s.node_types[s.target]}")
    (d / "types.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")

    mp_lines = []
    for mp in s.metapaths:
        parts = [s.node_types[mp.types[0]]]
        for rid, t in zip(mp.relations, mp.types[1:]):
            parts += [s.relations[rid].name, s.node_types[t]]
        mp_lines.append(" ".join(parts))
    (d / "metapaths.cfg").write_text("".join(l + "\n" for l in mp_lines), encoding="utf-8")

    for tau, name in enumerate(s.node_types):
        f = graph.features[tau]
        with open(d / f"nodes_{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["id"] + [f"f{j}" for j in range(f.shape[1])]
            if tau == s.target:
                header.append("label")
            w.writerow(header)
            for i in range(f.shape[0]):
                row = [i] + [repr(float(x)) for x in f[i]]
                if tau == s.target:
                    row.append(int(graph.labels[i]))
                w.writerow(row)
    for r, rel in enumerate(s.relations):
        with open(d / f"edges_{rel.name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst"])
            w.writerows(graph.edges[r].tolist())
    return d


def _read_cfg(path: Path):
    if not path.exists():
        raise SchemaError(f"missing {path.name}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def load_dataset(directory) -> HeteroGraph:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetFormatError(f"dataset directory {d} does not exist")
    types, rels, target = [], [], None
    for lineno, tok in _read_cfg(d / "types.cfg"):
        if tok[0] == "node_type" and len(tok) == 2:
            types.append(tok[1])
        elif tok[0] == "relation" and len(tok) == 4:
            rels.append(tok[1:])
        elif tok[0] == "target" and len(tok) == 2:
            target = tok[1]
        else:
            raise SchemaError(f"types.cfg:{lineno}: cannot parse {' '.join(tok)!r}")
    if target is None:
        raise SchemaError("types.cfg: no target line")

    def tid(name, where):
        if name not in types:
            raise SchemaError(f"{where}: unknown node type '{name}'")
        return types.index(name)

    relations = tuple(Relation(n, tid(a, "types.cfg"), tid(b, "types.cfg")) for n, a, b in rels)
    rel_names = [r.name for r in relations]
    metapaths = []
    mp_file = d / "metapaths.cfg"
    if mp_file.exists():
        for lineno, tok in _read_cfg(mp_file):
            where = f"metapaths.cfg:{lineno}"
            if len(tok) < 5 or len(tok) % 2 == 0:
                raise SchemaError(f"{where}: malformed metapath")
            for r in tok[1::2]:
                if r not in rel_names:
                    raise SchemaError(f"{where}: unknown relation '{r}'")
            try:
                metapaths.append(Metapath(tuple(tid(t, where) for t in tok[0::2]),
                                          tuple(rel_names.index(r) for r in tok[1::2])))
            except GraphError as exc:
                raise SchemaError(f"{where}: {exc}") from None
    schema = Schema(tuple(types), relations, tid(target, "types.cfg"), tuple(metapaths))

    feats, labels = {}, None
    for tau, name in enumerate(types):
        path = d / f"nodes_{name}.csv"
        header, rows = _read_csv(path)
        if not header or header[0] != "id":
            raise SchemaError(f"{path.name}: header must start with 'id'")
        has_label = header[-1] == "label"
        if tau == schema.target and not has_label:
            raise SchemaError(f"{path.name}: target type needs a label column")
        n_feat = len(header) - 1 - int(has_label)
        f = np.zeros((len(rows), n_feat))
        lab = np.full(len(rows), -1, dtype=np.int64)
        for k, (lineno, row) in enumerate(rows):
            try:
                if len(row) != len(header) or int(row[0]) != k:
                    raise ValueError("wrong width or non-consecutive id")
                f[k] = [float(x) for x in row[1:1 + n_feat]]
                if has_label:
                    lab[k] = int(row[-1])
            except ValueError as exc:
                raise DatasetFormatError(f"{path.name}:{lineno}: {exc}") from None
        feats[name] = f
        if tau == schema.target:
            labels = lab

    edges = {}
    for rel in relations:
        path = d / f"edges_{rel.name}.csv"
        header, rows = _read_csv(path)
        if header != ["src", "dst"]:
            raise SchemaError(f"{path.name}: header must be 'src,dst'")
        e = np.zeros((len(rows), 2), dtype=np.int64)
        for k, (lineno, row) in enumerate(rows):
            try:
                if len(row) != 2:
                    raise ValueError("expected 2 columns")
                e[k] = [int(row[0]), int(row[1])]
            except ValueError as exc:
                raise DatasetFormatError(f"{path.name}:{lineno}: {exc}") from None
        edges[rel.name] = e
    return build_graph(schema, feats, edges, labels)


def _read_csv(path: Path):
    if not path.exists():
        raise SchemaError(f"missing {path.name}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [(reader.line_num, row) for row in reader if row]
    return header, rows


def synthetic_fields() -> list:
    return [f.name for f in fields(SyntheticConfig)]
