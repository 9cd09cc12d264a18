"""Per-task training: Balanced Softmax cross-entropy, manual backprop, plain SGD.

Only the task adapter and the head rows of the current task's classes are
trainable. The loss is a softmax over the current task's classes only.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .adapter_model import (
    LN_EPS,
    AdapterParams,
    ModelState,
    backbone_forward,
    gelu,
    gelu_grad,
)

DIVERGENCE_LIMIT = 1e6


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassPriors:
    pi: dict[int, float]

    def log_prior(self, class_order: Sequence[int]) -> np.ndarray:
        try:
            return np.log(np.array([self.pi[int(c)] for c in class_order], dtype=np.float64))
        except KeyError as exc:
            raise ValueError(f"no prior for class {exc.args[0]}") from None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.07
    epochs: int = 20
    batch_size: int = 16
    weight_decay: float = 5e-4
    use_balanced_softmax: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


@dataclass
class Gradients:
    w_down: np.ndarray
    w_up: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    head_weight: np.ndarray  # full head shape; rows outside the task are zero
    head_bias: np.ndarray


def class_priors(labels) -> ClassPriors:
    labels = [int(c) for c in labels]
    if not labels:
        raise ValueError("cannot compute priors of an empty label list")
    counts = Counter(labels)
    total = len(labels)
    return ClassPriors({c: n / total for c, n in sorted(counts.items())})


def balanced_logits(z, priors: ClassPriors, class_order: Sequence[int]) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != len(class_order):
        raise ValueError(f"logit length {z.shape[-1]} != number of classes {len(class_order)}")
    return z + priors.log_prior(class_order)


def softmax_cross_entropy(z, targets) -> tuple[float, np.ndarray]:
    """Mean CE over rows of ``z`` and its gradient w.r.t. ``z``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets))
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    n = z.shape[0]
    loss = -float(np.mean(log_p[np.arange(n), targets]))
    grad = np.exp(log_p)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def _task_targets(labels, task_classes: Sequence[int]) -> np.ndarray:
    index = {int(c): i for i, c in enumerate(task_classes)}
    try:
        return np.array([index[int(y)] for y in labels], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} is not one of the task classes") from None


def loss_and_gradients_features(state: ModelState, feats: np.ndarray, labels, priors: ClassPriors,
                                task_classes: Sequence[int], use_bsm: bool) -> tuple[float, Gradients]:
    """Same as :func:`loss_and_gradients` with backbone features precomputed."""
    a = state.adapter
    head = state.head
    if feats.shape[0] == 0:
        raise ValueError("empty batch")
    targets = _task_targets(labels, task_classes)
    rows = head.rows_of(task_classes)

    mu = feats.mean(axis=1, keepdims=True)
    centered = feats - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + LN_EPS)
    xhat = centered * inv_std
    ln = xhat * a.ln_gain + a.ln_bias
    h = ln @ a.w_down.T
    act = gelu(h)
    f = feats + a.scale * (act @ a.w_up.T)

    w_task = head.weight[rows]
    z = f @ w_task.T + head.bias[rows]
    if use_bsm:
        z = balanced_logits(z, priors, task_classes)
    loss, dz = softmax_cross_entropy(z, targets)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")

    head_weight = np.zeros_like(head.weight)
    head_bias = np.zeros_like(head.bias)
    head_weight[rows] = dz.T @ f
    head_bias[rows] = dz.sum(axis=0)
    df = dz @ w_task
    g_up = a.scale * (df.T @ act)
    dh = a.scale * (df @ a.w_up) * gelu_grad(h)
    g_down = dh.T @ ln
    dln = dh @ a.w_down
    g_gain = (dln * xhat).sum(axis=0)
    g_bias = dln.sum(axis=0)
    return loss, Gradients(g_down, g_up, g_gain, g_bias, head_weight, head_bias)


def loss_and_gradients(state: ModelState, batch, priors: ClassPriors, task_classes: Sequence[int],
                       use_bsm: bool) -> tuple[float, Gradients]:
    """Mean (balanced) softmax CE over ``batch`` = list of (input, class id) and
    exact gradients for the adapter and the task's head rows."""
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    x = np.array([np.asarray(xi, dtype=np.float64) for xi, _ in batch])
    labels = [y for _, y in batch]
    feats = backbone_forward(state.backbone, x)
    return loss_and_gradients_features(state, feats, labels, priors, task_classes, use_bsm)


def sgd_step(p, g, lr: float, weight_decay: float = 0.0):
    """p <- p - lr * (g + weight_decay * p)."""
    p_arr = np.asarray(p, dtype=np.float64)
    g_arr = np.asarray(g, dtype=np.float64)
    if p_arr.shape != g_arr.shape:
        raise ValueError(f"parameter shape {p_arr.shape} != gradient shape {g_arr.shape}")
    out = p_arr - lr * (g_arr + weight_decay * p_arr)
    return float(out) if out.ndim == 0 else out


def apply_gradients(state: ModelState, grads: Gradients, rows: np.ndarray, lr: float,
                    weight_decay: float) -> None:
    """In-place SGD on the adapter and the given head rows.

    Weight decay applies to the adapter matrices and head weights only.
    """
    a = state.adapter
    a.w_down = sgd_step(a.w_down, grads.w_down, lr, weight_decay)
    a.w_up = sgd_step(a.w_up, grads.w_up, lr, weight_decay)
    a.ln_gain = sgd_step(a.ln_gain, grads.ln_gain, lr)
    a.ln_bias = sgd_step(a.ln_bias, grads.ln_bias, lr)
    head = state.head
    weight = head.weight.copy()
    bias = head.bias.copy()
    weight[rows] = sgd_step(weight[rows], grads.head_weight[rows], lr, weight_decay)
    bias[rows] = sgd_step(bias[rows], grads.head_bias[rows], lr)
    head.weight = weight
    head.bias = bias


def init_task_adapter(base: AdapterParams, rng: np.random.Generator) -> AdapterParams:
    """Fresh projections, layer-norm terms copied from the current base."""
    return AdapterParams.init(base.dim, base.hidden_dim, rng, scale=base.scale,
                              ln_gain=base.ln_gain, ln_bias=base.ln_bias)


def train_task(state: ModelState, task_data, task_classes: Sequence[int], cfg: TrainConfig,
               trace: list | None = None, init: AdapterParams | None = None,
               on_batch: Callable[[int, int, float], None] | None = None) -> AdapterParams:
    """Train a new adapter for one task and return it.

    ``task_data`` is ``(inputs, labels)``. ``state.adapter`` (the merged base) is
    left untouched; the head rows of ``task_classes`` are updated in place on
    ``state.head``. Training starts from ``init`` when given, otherwise from a
    fresh adapter drawn with ``cfg.seed``. Each batch appends ``(epoch, batch, loss)`` to ``trace``.
    """
    x, labels = task_data
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.shape[0] != labels.shape[0] or x.shape[0] == 0:
        raise ValueError("task data must be non-empty with one label per input")
    task_classes = [int(c) for c in task_classes]
    _task_targets(labels, task_classes)
    rows = state.head.rows_of(task_classes)

    rng = np.random.default_rng(cfg.seed)
    adapter = init_task_adapter(state.adapter, rng) if init is None else init.copy()
    work = ModelState(state.backbone, adapter, state.head)
    priors = class_priors(labels)
    missing = [c for c in task_classes if c not in priors.pi]
    if missing and cfg.use_balanced_softmax:
        raise ValueError(f"task classes without training samples: {missing}")
    feats = backbone_forward(state.backbone, x)

    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                loss, grads = loss_and_gradients_features(
                    work, feats[idx], labels[idx], priors, task_classes, cfg.use_balanced_softmax)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from None
            if loss > DIVERGENCE_LIMIT:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: loss {loss:.3e} exceeds limit")
            if trace is not None:
                trace.append((epoch, b, loss))
            if on_batch is not None:
                on_batch(epoch, b, loss)
            apply_gradients(work, grads, rows, cfg.learning_rate, cfg.weight_decay)
    return adapter


def format_trace(trace) -> str:
    return "".join(f"{e} {b} {loss!r}\n" for e, b, loss in trace)
