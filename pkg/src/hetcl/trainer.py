"""Continual training loop over a task sequence for each strategy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, ParamSet, value_and_grad
from .distill import (DistillConfig, TeacherRegistry, general_attention_vectors,
                      logit_distillation_loss, pairwise_semantic_loss,
                      semantic_distillation_loss, soft_predictions)
from .meta import MetaConfig, inner_update, select_meta_examples
from .model import ModelConfig, forward, init_params, predict
from .replay import (AUTO, MemoryState, cross_entropy, replay_loss, update_memory,
                     update_memory_random)
from .rng import stream as rng_stream
from .taskstream import TaskSequence, TaskView

log = logging.getLogger(__name__)

STRATEGIES = ("hero", "finetune", "jointtrain", "naive_er")


class TrainingError(RuntimeError):
    pass


@dataclass
class BufferConfig:
    per_class: int = 10
    target_capacity: int | None = None
    other_capacity: int = 200
    distance: str = "features"      # features | embedding
    d_thresh: object = AUTO

    def __post_init__(self):
        if self.per_class < 1:
            raise ValueError("buffer per_class must be >= 1")
        if self.distance not in ("features", "embedding"):
            raise ValueError(f"unknown buffer distance {self.distance!r}")


@dataclass
class TrainConfig:
    strategy: str = "hero"
    lr: float = 0.005
    epochs: int = 200
    patience: int = 100
    lambda_er: float = 1.0
    lambda_kd: float = 0.1
    replay_enabled: bool = True
    hidden: int = 16
    activation: str = "none"
    seed: int = 0
    distill: DistillConfig = field(default_factory=DistillConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be positive")
        if self.lambda_er < 0 or self.lambda_kd < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


class Adam:
    """First/second-moment adaptive step with bias correction."""

    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.reset()

    def reset(self):
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: ParamSet, grads: ParamSet) -> ParamSet:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            out[k] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return ParamSet(out)


@dataclass
class TeacherTargets:
    """Frozen teacher outputs on the current task's training nodes."""
    soft: list
    semantic: list
    pairwise: list


@dataclass
class RunResult:
    matrix: np.ndarray            # T x T, NaN above the diagonal
    params: ParamSet
    memory: MemoryState
    teachers: TeacherRegistry
    losses: list                  # dict rows, one per epoch
    registry_sizes: list = field(default_factory=list)
    buffer_sizes: list = field(default_factory=list)


def model_config(stream: TaskSequence, cfg: TrainConfig) -> ModelConfig:
    return ModelConfig(hidden=cfg.hidden, num_classes=stream.num_classes,
                       num_metapaths=len(stream.graph.schema.metapaths),
                       activation=cfg.activation)


def teacher_targets(view: TaskView, teachers: TeacherRegistry, mcfg: ModelConfig,
                    dcfg: DistillConfig) -> TeacherTargets:
    soft, sem, pair = [], [], []
    for snap in teachers.snapshots:
        out = forward(view.graph, view.index, view.train, snap, mcfg)
        soft.append(soft_predictions(out.logits.data, dcfg.temperature))
        sem.append(out.semantic.data)
        if dcfg.semantic_mode == "pairwise":
            pair.append(general_attention_vectors(out.hidden.data, snap["cls.W"]).data)
    return TeacherTargets(soft, sem, pair)


def joint_loss_fn(view: TaskView, memory: MemoryState | None, targets: TeacherTargets | None,
                  cfg: TrainConfig, mcfg: ModelConfig, record: dict, past_views=()):
    """Build p -> L_task + l_er * L_er + l_kd * (l_logit * L_logit + l_sem * L_sem).

    Terms with zero weight or nothing to work on are skipped entirely.
    ``past_views`` (joint training only) extend the task term: cross-entropy
    is pooled over the training nodes of every view, each node evaluated on
    its own task subgraph. Term values are written into ``record``.
    """
    dcfg = cfg.distill
    use_er = memory is not None and not memory.is_empty() and cfg.lambda_er > 0
    use_kd = targets is not None and targets.soft and cfg.lambda_kd > 0

    def fn(p):
        term = "task"
        try:
            out = forward(view.graph, view.index, view.train, p, mcfg)
            total = cross_entropy(out.logits, view.train_labels)
            if past_views:
                n = view.train.size
                total = ad.scale(total, n)
                for pv in past_views:
                    pout = forward(pv.graph, pv.index, pv.train, p, mcfg)
                    total = total + ad.scale(cross_entropy(pout.logits, pv.train_labels),
                                             pv.train.size)
                    n += pv.train.size
                total = ad.scale(total, 1.0 / n)
            record.update(task=total.item(), er=0.0, logit=0.0, sem=0.0)
            if use_er:
                term = "replay"
                rg = memory.replay.graph
                r_out = forward(rg, memory.replay_index, memory.replay_nodes(), p, mcfg)
                l_er = replay_loss(r_out.logits, memory.replay_labels())
                record["er"] = l_er.item()
                total = total + cfg.lambda_er * l_er
            if use_kd:
                term = "logit"
                n_t = len(targets.soft)
                l_logit = logit_distillation_loss(
                    targets.soft, soft_predictions(out.logits, dcfg.temperature),
                    dcfg.temperature, dcfg.teacher_reduction)
                term = "sem"
                if dcfg.semantic_mode == "metapath":
                    parts = [semantic_distillation_loss(s, out.semantic) for s in targets.semantic]
                else:
                    alpha_s = general_attention_vectors(out.hidden, p["cls.W"])
                    parts = [pairwise_semantic_loss(a, alpha_s) for a in targets.pairwise]
                l_sem = parts[0]
                for extra in parts[1:]:
                    l_sem = l_sem + extra
                if dcfg.teacher_reduction == "mean":
                    l_sem = ad.scale(l_sem, 1.0 / n_t)
                record["logit"], record["sem"] = l_logit.item(), l_sem.item()
                kd = dcfg.lambda_logit * l_logit + dcfg.lambda_sem * l_sem
                total = total + cfg.lambda_kd * kd
        except NumericError as exc:
            raise TrainingError(f"non-finite value in the '{term}' loss term: {exc}") from exc
        if not np.isfinite(total.item()):
            raise TrainingError(f"non-finite joint loss (last term '{term}')")
        record["joint"] = total.item()
        return total

    return fn


def train_task(params: ParamSet, view: TaskView, memory: MemoryState | None,
               teachers: TeacherRegistry | None, cfg: TrainConfig, mcfg: ModelConfig,
               task: int, losses: list | None = None, past_views=()) -> ParamSet:
    """Train on one task view; HERO adds the inner step and the extra loss terms."""
    hero = cfg.strategy == "hero"
    targets = None
    if hero and teachers is not None and len(teachers):
        targets = teacher_targets(view, teachers, mcfg, cfg.distill)
    mem = memory if cfg.strategy in ("hero", "naive_er") and cfg.replay_enabled else None

    meta_fn = None
    if hero and cfg.meta.enabled:
        tgt = view.graph.target
        meta_ids = select_meta_examples(view.train, view.graph.features[tgt][view.train],
                                        view.train_labels, cfg.meta.shots,
                                        cfg.buffer.d_thresh, seed=cfg.seed)
        meta_y = view.graph.labels[meta_ids]

        def meta_fn(p):
            return cross_entropy(forward(view.graph, view.index, meta_ids, p, mcfg).logits, meta_y)

    record = {}
    fn = joint_loss_fn(view, mem, targets, cfg, mcfg, record, past_views)
    opt = Adam(cfg.lr)
    best, stale = np.inf, 0
    for epoch in range(cfg.epochs):
        if meta_fn is not None:
            params = inner_update(params, meta_fn, cfg.meta.alpha)
        loss, grads = value_and_grad(fn, params)
        params = opt.step(params, grads)
        if losses is not None:
            losses.append({"task_index": task, "epoch": epoch, "L_task": record["task"],
                           "L_er": record["er"], "L_logit": record["logit"],
                           "L_sem": record["sem"], "L_joint": record["joint"]})
        if loss < best - 1e-6:
            best, stale = loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return params


def accuracy(params: ParamSet, view: TaskView, mcfg: ModelConfig) -> float:
    if view.test.size == 0:
        raise ValueError("task has an empty test set")
    out = forward(view.graph, view.index, view.test, params, mcfg)
    pred = predict(out.logits, view.classes)
    return float(np.mean(pred == view.test_labels))


def evaluate(params: ParamSet, stream: TaskSequence, task: int, mcfg: ModelConfig) -> float:
    return accuracy(params, stream.view(task, "eval"), mcfg)


def run_sequence(stream: TaskSequence, cfg: TrainConfig, params: ParamSet | None = None) -> RunResult:
    """Train on tasks in order, filling row t of the accuracy matrix after each."""
    mcfg = model_config(stream, cfg)
    g = stream.graph
    if params is None:
        params = init_params(mcfg, g.schema, [f.shape[1] for f in g.features], cfg.seed)
    T = len(stream)
    matrix = np.full((T, T), np.nan)
    memory = MemoryState.empty(g, cfg.buffer.target_capacity, cfg.buffer.other_capacity)
    teachers = TeacherRegistry(cfg.distill.window)
    replay_rng = rng_stream(cfg.seed, "replay")
    losses, sizes, bsizes = [], [], []

    for t in range(T):
        stream.clock = t
        view = stream.view(t, "train")
        past = [stream.view(j, "train") for j in range(t)] if cfg.strategy == "jointtrain" else []
        params = train_task(params, view, memory, teachers, cfg, mcfg, t, losses, past)
        for j in range(t + 1):
            matrix[t, j] = evaluate(params, stream, j, mcfg)

        if cfg.strategy == "hero" and cfg.replay_enabled:
            feats = None
            if cfg.buffer.distance == "embedding":
                feats = forward(view.graph, view.index, view.train, params, mcfg).hidden.data
            memory = update_memory(memory, g, view.train_full_ids, cfg.buffer.per_class, t,
                                   cfg.buffer.d_thresh, seed=cfg.seed, features=feats)
        elif cfg.strategy == "naive_er" and cfg.replay_enabled:
            memory = update_memory_random(memory, g, view.train_full_ids,
                                          cfg.buffer.per_class, t, replay_rng)
        if cfg.strategy == "hero":
            teachers.register(params, t)
        sizes.append(len(teachers))
        bsizes.append({tau: len(b) for tau, b in memory.buffers.items()})
    stream.clock = None
    return RunResult(matrix, params, memory, teachers, losses, sizes, bsizes)
