"""Fast adaptation: one plain gradient step on a small coverage-selected set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NumericError, ParamSet, value_and_grad
from .replay import AUTO, coverage_maximization


@dataclass
class MetaConfig:
    alpha: float = 0.005
    shots: int = 10
    enabled: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("meta alpha must be >= 0")
        if self.shots < 1:
            raise ValueError("meta shots must be >= 1")


def select_meta_examples(train_ids, features, labels, e: int, d_thresh=AUTO,
                         seed: int = 0) -> np.ndarray:
    """Coverage maximization over the task's training nodes, ``e`` per class."""
    return coverage_maximization(features, labels, d_thresh, e, ids=train_ids, seed=seed)


def inner_update(params: ParamSet, loss_fn, alpha: float) -> ParamSet:
    """theta_fast = theta - alpha * grad L_E(theta); ``params`` is left untouched."""
    _, grads = value_and_grad(loss_fn, params)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite inner gradient for '{k}'")
    return params.axpy(-alpha, grads)
