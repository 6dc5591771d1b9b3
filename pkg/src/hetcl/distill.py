"""Logit-level and semantic-level distillation from frozen teacher snapshots."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, ShapeError, Tensor

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class DistillConfig:
    temperature: float = 1.0
    lambda_logit: float = 1.0
    lambda_sem: float = 10.0
    semantic_mode: str = "metapath"     # metapath | pairwise
    teacher_reduction: str = "mean"     # mean | sum over the teacher window
    window: int = 3

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.lambda_logit < 0 or self.lambda_sem < 0:
            raise ValueError("distillation weights must be >= 0")
        if self.semantic_mode not in ("metapath", "pairwise"):
            raise ValueError(f"unknown semantic_mode {self.semantic_mode!r}")
        if self.teacher_reduction not in ("mean", "sum"):
            raise ValueError(f"unknown teacher_reduction {self.teacher_reduction!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class TeacherRegistry:
    """Sliding window of frozen parameter snapshots, oldest evicted first."""
    window: int = 3
    entries: list = field(default_factory=list)   # (task, ParamSet)

    def register(self, params: ParamSet, task: int) -> "TeacherRegistry":
        self.entries.append((task, params.copy()))
        self.entries.sort(key=lambda x: x[0])
        while len(self.entries) > self.window:
            self.entries.pop(0)
        return self

    def __len__(self):
        return len(self.entries)

    @property
    def tasks(self) -> list:
        return [t for t, _ in self.entries]

    @property
    def snapshots(self) -> list:
        return [p for _, p in self.entries]


def register_teacher(reg: TeacherRegistry, params: ParamSet, task: int) -> TeacherRegistry:
    return reg.register(params, task)


class DistillDomainError(ValueError):
    pass


def soft_predictions(logits, t: float):
    """Row-wise softmax of logits / t. Returns a Tensor for Tensor input, else an array."""
    if t <= 0:
        raise DistillDomainError(f"temperature must be > 0, got {t}")
    if isinstance(logits, Tensor):
        return ad.softmax(ad.scale(logits, 1.0 / t), axis=1)
    x = np.asarray(logits, dtype=np.float64) / t
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def logit_distillation_loss(teacher_dists, student_dist, t: float,
                            reduction: str = "mean") -> Tensor:
    """t^2 * KL(P_teacher || P_student), node-mean, then mean (or sum) over teachers.

    ``student_dist`` may be a Tensor (differentiable) or an array; teacher
    distributions are constants. Student probabilities are floored at 1e-12
    inside the log.
    """
    if not teacher_dists:
        return Tensor(0.0)
    student = student_dist if isinstance(student_dist, Tensor) else Tensor(student_dist)
    if np.any(student.data < EPS):
        log.debug("student probabilities below %.0e were clamped", EPS)
    log_s = ad.log(ad.clip_min(student, EPS))
    total = None
    for pt in teacher_dists:
        pt = np.asarray(pt, dtype=np.float64)
        if pt.shape != student.shape:
            raise ShapeError(f"teacher {pt.shape} vs student {student.shape}")
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(pt > 0, pt * np.log(np.maximum(pt, EPS)), 0.0)
        # sum_c p_t log p_t - sum_c p_t log p_s, averaged over nodes
        cross = ad.reduce_sum(ad.mul(log_s, pt), axis=1)
        kl = ad.sub(ent.sum(axis=1), cross)
        term = ad.scale(ad.reduce_mean(kl), t * t)
        total = term if total is None else total + term
    if reduction == "mean":
        total = ad.scale(total, 1.0 / len(teacher_dists))
    return total


def semantic_distillation_loss(teacher_S, student_S) -> Tensor:
    """Sum over metapaths of the Euclidean distance between attention columns."""
    s = student_S if isinstance(student_S, Tensor) else Tensor(student_S)
    t = np.asarray(teacher_S.data if isinstance(teacher_S, Tensor) else teacher_S,
                   dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"semantic attention shapes differ: {t.shape} vs {s.shape}")
    return ad.reduce_sum(ad.l2_norm(ad.sub(t, s), axis=0))


def general_attention_vectors(H, W_last):
    """alpha_i = softmax_j((H_i W)^T tanh(H_j W)) for attention-free backbones."""
    H = H if isinstance(H, Tensor) else Tensor(H)
    W = W_last if isinstance(W_last, Tensor) else Tensor(W_last)
    hw = ad.matmul(H, W)
    scores = ad.matmul(hw, ad.transpose(ad.tanh(hw)))
    return ad.softmax(scores, axis=1)


def pairwise_semantic_loss(teacher_alpha, student_alpha) -> Tensor:
    """Sum over nodes of the Euclidean distance between attention rows."""
    s = student_alpha if isinstance(student_alpha, Tensor) else Tensor(student_alpha)
    t = np.asarray(teacher_alpha.data if isinstance(teacher_alpha, Tensor) else teacher_alpha)
    if t.shape != s.shape:
        raise ShapeError(f"attention shapes differ: {t.shape} vs {s.shape}")
    return ad.reduce_sum(ad.l2_norm(ad.sub(t, s), axis=1))


def combined_kd_loss(logit_term, semantic_term, cfg: DistillConfig):
    return cfg.lambda_logit * logit_term + cfg.lambda_sem * semantic_term
