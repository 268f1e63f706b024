"""Online phase: retrain the wide taps per observed sample.

The deep branch, the mixing scalars and the readout stay frozen. Two update
rules are provided:

* centralized: ``A <- A - gamma * grad_A J_t``;
* distributed: every node keeps its own copy ``A_i``, mixes its neighbors'
  copies with doubly stochastic weights and takes a step on its local loss,
  ``A_i <- sum_j W_ij A_j - gamma * grad_{A_i} J_{i,t}``.

Because the output is affine in the wide taps, the output seen by node ``i``
is ``base + alpha_W (Z A_i) W_r`` with ``Z`` the shifted-signal stack and
``base`` the frozen remainder, so all ``N`` local evaluations share one
deep forward pass.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .architecture import (
    ArchitectureError,
    FilterTaps,
    WdGnnParams,
    shift_stack,
    wdgnn_forward,
    wide_gradient,
)
from .graph import ConsensusWeights, Gso, metropolis_weights

logger = logging.getLogger(__name__)

MODES = ("centralized", "distributed")


class OnlineError(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeParams:
    """Per-node copies of the wide taps, stacked as ``(N, K+1, F, G)``."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.array(self.taps, dtype=float)
        if t.ndim != 4:
            raise OnlineError(f"node taps must be (N, K+1, F, G), got {t.shape}")
        object.__setattr__(self, "taps", t)

    @property
    def n(self) -> int:
        return self.taps.shape[0]

    @classmethod
    def replicate(cls, taps: FilterTaps | np.ndarray, n: int) -> "NodeParams":
        t = taps.taps if isinstance(taps, FilterTaps) else np.asarray(taps, dtype=float)
        return cls(np.repeat(t[None], n, axis=0))

    def mean(self) -> np.ndarray:
        return self.taps.mean(axis=0)

    def node(self, i: int) -> FilterTaps:
        return FilterTaps(self.taps[i])


@dataclass
class OnlineRecord:
    t: int
    loss: float
    metric: float
    disagreement: float
    dist_to_opt: float | None
    gamma: float


@dataclass
class OnlineTrace:
    records: list[OnlineRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records]
        )

    def to_csv(self, path: str | PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "loss", "metric", "disagreement", "dist_to_opt", "gamma"])
            for r in self.records:
                w.writerow([
                    r.t,
                    repr(r.loss),
                    repr(r.metric),
                    repr(r.disagreement),
                    "" if r.dist_to_opt is None else repr(r.dist_to_opt),
                    repr(r.gamma),
                ])


@dataclass(frozen=True)
class OnlineSample:
    """One observation ``(S_t, X_t)`` with its feedback.

    ``wide_stack`` overrides the wide-branch input stack ``(K+1, N, F)``
    (delayed filters); ``optimum`` is the current minimizer when known.
    """

    graph: Gso | np.ndarray
    signal: np.ndarray
    target: object
    wide_stack: np.ndarray | None = None
    optimum: np.ndarray | None = None


def consensus_disagreement(locals_: NodeParams) -> float:
    """Largest Frobenius distance between two nodes' tap sets."""
    if locals_.n < 2:
        return 0.0
    return float(pdist(locals_.taps.reshape(locals_.n, -1)).max())


def _require_wide(params: WdGnnParams) -> None:
    if params.wide is None:
        raise OnlineError("online learning needs a wide branch")


def _graph(s) -> np.ndarray:
    return s.entries if isinstance(s, Gso) else np.asarray(s, dtype=float)


def centralized_online_step(
    params: WdGnnParams,
    s_t,
    x_t: np.ndarray,
    loss_t: Callable[[np.ndarray], tuple[float, np.ndarray]],
    gamma: float,
    wide_stack: np.ndarray | None = None,
) -> tuple[WdGnnParams, float, np.ndarray]:
    """One gradient step on the wide taps.

    ``loss_t`` maps the model output to ``(value, d value / d output)``.
    Returns the updated parameters, the loss before the step and the output.
    """
    _require_wide(params)
    out, cache = wdgnn_forward(s_t, x_t, params, wide_stack=wide_stack)
    value, upstream = loss_t(out)
    grad = wide_gradient(cache, params, upstream)
    if not np.all(np.isfinite(grad)):
        raise OnlineError("non-finite wide gradient")
    return params.with_wide(params.wide.taps - gamma * grad), float(value), out


class LocalView:
    """Outputs of every node's local model on one sample.

    ``outputs()[i]`` is the full ``(N, G_out)`` output computed with ``A_i``.
    """

    def __init__(self, params: WdGnnParams, s_t, x_t, locals_: NodeParams, wide_stack=None):
        _require_wide(params)
        if locals_.taps.shape[1:] != params.wide.taps.shape:
            raise OnlineError("local taps do not match the wide branch shape")
        s = _graph(s_t)
        if locals_.n != s.shape[-1]:
            raise OnlineError(f"{locals_.n} local copies for a graph of {s.shape[-1]} nodes")
        self.params = params
        zero = params.with_wide(np.zeros_like(params.wide.taps))
        # frozen remainder: everything but the wide branch
        self.base, _ = wdgnn_forward(s, x_t, zero, wide_stack=wide_stack)
        self.stack = (
            shift_stack(s, x_t, params.wide.k_order) if wide_stack is None else wide_stack
        )
        if self.stack.shape[1] != locals_.n:
            raise ArchitectureError("wide stack does not match the graph size")
        self.locals = locals_

    def outputs(self) -> np.ndarray:
        wide = np.einsum("knf,ikfg->ing", self.stack, self.locals.taps)
        return self.base[None] + self.params.alpha_w * (wide @ self.params.readout_w)

    def own_outputs(self, outs: np.ndarray | None = None) -> np.ndarray:
        """Row ``i`` of node ``i``'s output: what each node would report."""
        outs = self.outputs() if outs is None else outs
        idx = np.arange(self.locals.n)
        return outs[idx, idx]

    def gradients(self, upstream: np.ndarray) -> np.ndarray:
        """``grad_{A_i}`` for per-node output gradients ``upstream[i]``."""
        d_mixed = upstream @ self.params.readout_w.T
        return self.params.alpha_w * np.einsum("knf,ing->ikfg", self.stack, d_mixed)


def distributed_online_step(
    locals_: NodeParams,
    w_t: ConsensusWeights,
    s_t,
    x_t: np.ndarray,
    local_losses: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    gamma: float,
    params: WdGnnParams,
    wide_stack: np.ndarray | None = None,
) -> tuple[NodeParams, np.ndarray, np.ndarray]:
    """Consensus mixing followed by a local gradient step at every node.

    ``local_losses`` receives the ``(N, N, G_out)`` per-node outputs and
    returns per-node loss values ``(N,)`` and their output gradients.
    Gradients are taken at the time-``t`` copies, before mixing. Returns
    the new copies, the per-node losses and the per-node outputs.
    """
    s = _graph(s_t)
    w_t.check(Gso(s) if not isinstance(s_t, Gso) else s_t)
    view = LocalView(params, s, x_t, locals_, wide_stack)
    outs = view.outputs()
    values, upstream = local_losses(outs)
    grads = view.gradients(upstream)
    if not np.all(np.isfinite(grads)):
        raise OnlineError("non-finite local gradient")
    mixed = np.tensordot(w_t.entries, locals_.taps, axes=(1, 0))
    return NodeParams(mixed - gamma * grads), np.asarray(values), outs


def run_online(
    mode: str,
    stream: Iterable[OnlineSample],
    trained: WdGnnParams,
    gamma: float,
    task,
    weights_rule: Callable[[Gso], ConsensusWeights] = metropolis_weights,
    on_step: Callable[[OnlineRecord], None] | None = None,
    initial_locals: NodeParams | None = None,
) -> tuple[WdGnnParams | NodeParams, OnlineTrace]:
    """Process a stream once, one update per sample.

    Each record holds the loss, metric and distance to the sample's optimum
    of the iterate *before* the update on that sample. In distributed mode
    the metric reads node ``i``'s row from its own model, the loss is the
    sum of local losses and the distance is the worst node's. Local copies
    start from the trained wide taps unless ``initial_locals`` is given.
    Returns the final parameters (``NodeParams`` in distributed mode).
    """
    if mode not in MODES:
        raise OnlineError(f"unknown mode {mode!r}; expected one of {MODES}")
    if gamma < 0:
        raise OnlineError("gamma must be nonnegative")
    _require_wide(trained)
    if mode == "distributed" and not hasattr(task, "local_loss"):
        raise OnlineError("distributed mode needs a task with per-node losses")
    trace = OnlineTrace()
    params: WdGnnParams = trained
    locals_: NodeParams | None = initial_locals
    for t, sample in enumerate(stream):
        s = _graph(sample.graph)
        if mode == "centralized":
            dist = (
                None
                if sample.optimum is None
                else float(np.linalg.norm(params.wide.taps - sample.optimum))
            )
            params, loss, out = centralized_online_step(
                params,
                s,
                sample.signal,
                lambda o: task.loss(o, sample.target),
                gamma,
                sample.wide_stack,
            )
            metric = task.metric(out, sample.target)
            disagreement = 0.0
        else:
            if locals_ is None:
                locals_ = NodeParams.replicate(trained.wide, s.shape[-1])
            dist = (
                None
                if sample.optimum is None
                else float(
                    np.linalg.norm(
                        (locals_.taps - sample.optimum).reshape(locals_.n, -1), axis=1
                    ).max()
                )
            )
            disagreement = consensus_disagreement(locals_)
            w = weights_rule(Gso(s))
            locals_, values, view_outs = distributed_online_step(
                locals_,
                w,
                s,
                sample.signal,
                lambda o: task.local_loss(o, sample.target),
                gamma,
                trained,
                sample.wide_stack,
            )
            idx = np.arange(view_outs.shape[0])
            own = view_outs[idx, idx]
            loss = float(values.sum())
            metric = task.metric(own, sample.target)
        if not np.isfinite(loss):
            raise OnlineError(f"non-finite online loss at step {t}")
        record = OnlineRecord(t, float(loss), float(metric), disagreement, dist, float(gamma))
        trace.records.append(record)
        if on_step is not None:
            on_step(record)
    if not trace.records:
        raise OnlineError("online stream is empty")
    return (params if mode == "centralized" else locals_), trace


def predict_local(
    params: WdGnnParams, locals_: NodeParams, s, x: np.ndarray, wide_stack=None
) -> np.ndarray:
    """Outputs where node ``i`` evaluates with its own copy ``A_i``.

    ``x`` may be batched ``(B, N, F)``; the result is ``(B, N, G_out)``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return LocalView(params, s, x, locals_, wide_stack).own_outputs()
    _require_wide(params)
    s_arr = _graph(s)
    zero = params.with_wide(np.zeros_like(params.wide.taps))
    base, _ = wdgnn_forward(s_arr, x, zero)
    stack = shift_stack(s_arr, x, params.wide.k_order) if wide_stack is None else wide_stack
    # node i's row only: sum_k Z_k[b, i, :] @ A_i[k]
    wide = np.einsum("kbif,ikfg->big", stack, locals_.taps)
    return base + params.alpha_w * (wide @ params.readout_w)


def iterate_stream(
    graphs: Sequence, signals: np.ndarray, targets: Sequence, optima: Sequence | None = None
) -> list[OnlineSample]:
    """Zip per-step graphs (or one shared graph), signals and targets."""
    n = len(signals)
    if not isinstance(graphs, (list, tuple)) and not (
        isinstance(graphs, np.ndarray) and graphs.ndim == 3
    ):
        graphs = [graphs] * n
    if len(graphs) != n or len(targets) != n:
        raise OnlineError("graphs, signals and targets differ in length")
    return [
        OnlineSample(g, x, y, optimum=None if optima is None else optima[t])
        for t, (g, x, y) in enumerate(zip(graphs, signals, targets))
    ]
