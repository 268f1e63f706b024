"""Offline phase: joint minibatch ADAM over all WD-GNN parameters."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable

import numpy as np

from .architecture import WdGnnParams, wdgnn_backward, wdgnn_forward
from .graph import Gso

logger = logging.getLogger(__name__)

ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of the true class over all leading positions.

    ``logits`` is ``(..., C)`` and ``labels`` the matching ``(...)`` integer
    array. The gradient is ``(softmax - onehot) / count``.
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ValueError(f"labels {labels.shape} do not match logits {logits.shape}")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"label outside [0, {n_classes})")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    count = max(labels.size, 1)
    picked = np.take_along_axis(log_p, labels[..., None].astype(int), axis=-1)
    loss = -float(picked.sum()) / count
    grad = np.exp(log_p)
    np.put_along_axis(
        grad,
        labels[..., None].astype(int),
        np.take_along_axis(grad, labels[..., None].astype(int), axis=-1) - 1.0,
        axis=-1,
    )
    return loss, grad / count


def mse_loss(
    pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean of (optionally weighted) squared errors and its gradient."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    if mask is None:
        count = diff.size
        return float(np.sum(diff**2)) / count, 2.0 * diff / count
    mask = np.broadcast_to(np.asarray(mask, dtype=float), diff.shape)
    count = float(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(diff)
    return float(np.sum(mask * diff**2)) / count, 2.0 * mask * diff / count


# ---------------------------------------------------------------------------
# tasks: how model outputs are scored
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeClassification:
    """Cross-entropy on the class scores read at a fixed set of nodes.

    Targets are ``(B,)`` (one label shared by all read nodes) or ``(B, n_nodes)``.
    """

    nodes: tuple[int, ...]
    metric_name: str = "accuracy"
    higher_is_better: bool = True

    def _labels(self, out, targets):
        targets = np.asarray(targets)
        if targets.ndim == out.ndim - 2:
            targets = np.repeat(targets[..., None], len(self.nodes), axis=-1)
        return targets

    def loss(self, out: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
        idx = list(self.nodes)
        logits = out[..., idx, :]
        value, g = cross_entropy_loss(logits, self._labels(out, targets))
        grad = np.zeros_like(out)
        grad[..., idx, :] = g
        return value, grad

    def metric(self, out: np.ndarray, targets: np.ndarray) -> float:
        return accuracy(out[..., list(self.nodes), :], self._labels(out, targets))

    def local_loss(self, outs: np.ndarray, target) -> tuple[np.ndarray, np.ndarray]:
        """Per-node losses for one sample.

        ``outs[i]`` is the ``(N, C)`` output computed with node ``i``'s own
        parameters; node ``i`` only scores its own row. Nodes outside
        ``nodes`` have zero loss.
        """
        n = outs.shape[0]
        labels = np.broadcast_to(np.asarray(target), (len(self.nodes),))
        values, grads = np.zeros(n), np.zeros_like(outs)
        for node, label in zip(self.nodes, labels):
            values[node], g = cross_entropy_loss(outs[node, node], np.asarray(label))
            grads[node, node] = g
        return values, grads


@dataclass(frozen=True)
class Regression:
    """Squared error at every node, or only at ``nodes`` when given.

    Targets have the same shape as the output restricted to those nodes.
    """

    nodes: tuple[int, ...] | None = None
    metric_name: str = "rmse"
    higher_is_better: bool = False

    def loss(self, out: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
        if self.nodes is None:
            return mse_loss(out, targets)
        idx = list(self.nodes)
        value, g = mse_loss(out[..., idx, :], targets)
        grad = np.zeros_like(out)
        grad[..., idx, :] = g
        return value, grad

    def metric(self, out: np.ndarray, targets: np.ndarray) -> float:
        pred = out if self.nodes is None else out[..., list(self.nodes), :]
        return float(np.sqrt(np.mean((pred - np.asarray(targets)) ** 2)))

    def local_loss(self, outs: np.ndarray, target) -> tuple[np.ndarray, np.ndarray]:
        """Per-node squared error of each node's own row (see NodeClassification)."""
        n = outs.shape[0]
        nodes = range(n) if self.nodes is None else self.nodes
        target = np.asarray(target, dtype=float).reshape(len(nodes), -1)
        values, grads = np.zeros(n), np.zeros_like(outs)
        for row, node in enumerate(nodes):
            values[node], grads[node, node] = mse_loss(outs[node, node], target[row])
        return values, grads


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == labels))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Graph signals with targets.

    ``graph`` is one shared GSO or a per-sample stack ``(B, N, N)``.
    ``wide_stacks`` optionally holds precomputed ``(B, K+1, N, F)`` inputs for
    the wide branch (delayed filters).
    """

    signals: np.ndarray
    targets: np.ndarray
    graph: Gso | np.ndarray
    wide_stacks: np.ndarray | None = None

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=float)
        self.targets = np.asarray(self.targets)
        if self.signals.ndim != 3:
            raise ValueError("signals must be (n_samples, n_nodes, n_features)")
        if len(self.targets) != len(self.signals):
            raise ValueError("signals and targets differ in length")
        g = self.graph_entries
        if g.shape[-1] != self.signals.shape[1]:
            raise ValueError("graph size does not match signal node count")
        if g.ndim == 3 and len(g) != len(self.signals):
            raise ValueError("per-sample graphs differ in count from signals")

    def __len__(self) -> int:
        return len(self.signals)

    @property
    def graph_entries(self) -> np.ndarray:
        return self.graph.entries if isinstance(self.graph, Gso) else np.asarray(self.graph)

    @property
    def shared_graph(self) -> bool:
        return self.graph_entries.ndim == 2

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.signals[idx],
            self.targets[idx],
            self.graph if self.shared_graph else self.graph_entries[idx],
            None if self.wide_stacks is None else self.wide_stacks[idx],
        )

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None]:
        sub = self.subset(idx)
        stacks = None if sub.wide_stacks is None else np.moveaxis(sub.wide_stacks, 1, 0)
        return sub.graph_entries, sub.signals, sub.targets, stacks

    def split(self, fractions, seed=None) -> list["Dataset"]:
        """Shuffle and cut into consecutive parts with the given fractions."""
        order = np.random.default_rng(seed).permutation(len(self))
        cuts = np.round(np.cumsum(fractions) / np.sum(fractions) * len(self)).astype(int)
        parts, start = [], 0
        for stop in cuts:
            parts.append(self.subset(order[start:stop]))
            start = stop
        return parts


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = ADAM_EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected ADAM update; returns new arrays and a new state.

    Only keys present in ``grads`` are updated.
    """
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params = dict(params)
    m_new, v_new = dict(state.m), dict(state.v)
    for key, g in grads.items():
        p = np.asarray(params[key], dtype=float)
        g = np.asarray(g, dtype=float)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {key!r} has shape {g.shape}, param {p.shape}")
        m = state.m.get(key, np.zeros_like(p))
        v = state.v.get(key, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_new[key], v_new[key] = m, v
        new_params[key] = p - state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return new_params, AdamState(
        state.learning_rate, state.beta1, state.beta2, state.eps, t, m_new, v_new
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 50
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float


def batch_loss_and_grads(
    params: WdGnnParams, task, s, x, targets, wide_stacks=None
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    out, cache = wdgnn_forward(s, x, params, wide_stack=wide_stacks)
    loss, upstream = task.loss(out, targets)
    return loss, wdgnn_backward(cache, s, params, upstream), out


def predict(params: WdGnnParams, data: Dataset, batch_size: int = 500) -> np.ndarray:
    outs = []
    for start in range(0, len(data), batch_size):
        s, x, _, stacks = data.batch(np.arange(start, min(start + batch_size, len(data))))
        outs.append(wdgnn_forward(s, x, params, wide_stack=stacks)[0])
    return np.concatenate(outs, axis=0)


def evaluate(params: WdGnnParams, data: Dataset, task) -> tuple[float, float]:
    out = predict(params, data)
    return task.loss(out, data.targets)[0], task.metric(out, data.targets)


def train_offline(
    data: Dataset,
    template: WdGnnParams,
    config: TrainConfig,
    task,
    validation: Dataset | None = None,
    train_keys: set[str] | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[WdGnnParams, list[EpochRecord]]:
    """Minimize the mean task loss with shuffled minibatch ADAM.

    Every tensor of ``template`` (or those named in ``train_keys``) is
    updated jointly. When ``validation`` is not given, a fraction of ``data``
    is held out. The parameters with the best validation loss are returned.
    """
    if len(data) == 0:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(config.seed)
    if validation is None and config.validation_fraction > 0:
        n_val = max(1, int(round(config.validation_fraction * len(data))))
        order = rng.permutation(len(data))
        validation, data = data.subset(order[:n_val]), data.subset(order[n_val:])
    if config.batch_size > len(data):
        raise TrainingError(f"batch_size {config.batch_size} exceeds {len(data)} samples")
    arrays = template.arrays()
    keys = set(arrays) if train_keys is None else set(train_keys) & set(arrays)
    state = AdamState(config.learning_rate, config.beta1, config.beta2)
    params = template
    best, best_val = template, np.inf
    history: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            s, x, y, stacks = data.batch(idx)
            loss, grads, _ = batch_loss_and_grads(params, task, s, x, y, stacks)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch start {start}")
            arrays, state = adam_step(state, arrays, {k: grads[k] for k in keys})
            params = params.with_arrays(arrays)
            total += loss * len(idx)
        train_loss = total / len(data)
        if validation is not None and len(validation):
            val_loss, val_metric = evaluate(params, validation, task)
        else:
            val_loss, val_metric = train_loss, float("nan")
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        record = EpochRecord(epoch, train_loss, val_loss, val_metric)
        history.append(record)
        logger.debug("epoch %d train %.4f val %.4f metric %.4f", *vars(record).values())
        if on_epoch is not None:
            on_epoch(record)
        if val_loss < best_val:
            best, best_val = params, val_loss
    return best, history


def write_history_csv(history: list[EpochRecord], path: str | PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_metric)])
