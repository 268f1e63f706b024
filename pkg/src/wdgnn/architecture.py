"""Wide (graph filter) and deep (GNN) branches, their mix, and manual backprop.

Shapes
------
Signals are ``(..., N, F)`` with optional leading batch axis. A GSO is either
a :class:`~wdgnn.graph.Gso`, a dense ``(N, N)`` array, or a per-sample stack
``(B, N, N)``. Filter taps are stored as one ``(K+1, F_in, F_out)`` array.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from os import PathLike
from typing import Sequence

import numpy as np

from .graph import Gso

NONLINEARITIES = ("relu", "tanh", "identity")
GERSHGORIN_GRID = 1001


class ArchitectureError(ValueError):
    pass


def _entries(s) -> np.ndarray:
    return s.entries if isinstance(s, Gso) else np.asarray(s, dtype=float)


def _shift(s: np.ndarray, x: np.ndarray) -> np.ndarray:
    if s.ndim == 2 and x.ndim == 3:
        # one GEMM for the whole batch instead of B small ones
        b, n, f = x.shape
        out = s @ x.transpose(1, 0, 2).reshape(n, b * f)
        return out.reshape(n, b, f).transpose(1, 0, 2)
    return s @ x


def _shift_transpose(s: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _shift(np.swapaxes(s, -1, -2), x)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def nonlinearity_apply(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "identity":
        return np.asarray(x, dtype=float).copy()
    raise ArchitectureError(f"unknown nonlinearity {kind!r}")


def nonlinearity_derivative(kind: str, x: np.ndarray) -> np.ndarray:
    """Entrywise derivative; the ReLU kink at 0 gets derivative 0."""
    if kind == "relu":
        return (np.asarray(x) > 0).astype(float)
    if kind == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if kind == "identity":
        return np.ones_like(x, dtype=float)
    raise ArchitectureError(f"unknown nonlinearity {kind!r}")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterTaps:
    """``K+1`` tap matrices ``A_k`` of shape ``(f_in, f_out)``, stacked."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.array(self.taps, dtype=float)
        if t.ndim != 3:
            raise ArchitectureError(f"taps must be (K+1, f_in, f_out), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ArchitectureError("non-finite filter taps")
        object.__setattr__(self, "taps", t)

    @property
    def k_order(self) -> int:
        return self.taps.shape[0] - 1

    @property
    def f_in(self) -> int:
        return self.taps.shape[1]

    @property
    def f_out(self) -> int:
        return self.taps.shape[2]

    @classmethod
    def initialize(cls, k_order: int, f_in: int, f_out: int, rng) -> "FilterTaps":
        bound = 1.0 / np.sqrt(f_in * (k_order + 1))
        return cls(rng.uniform(-bound, bound, size=(k_order + 1, f_in, f_out)))

    @classmethod
    def scalar(cls, coefficients: Sequence[float]) -> "FilterTaps":
        return cls(np.asarray(coefficients, dtype=float).reshape(-1, 1, 1))


@dataclass(frozen=True)
class GnnParams:
    """Layers of graph filters with pointwise nonlinearities.

    ``biases`` optionally adds a per-feature offset (shared by all nodes)
    before each nonlinearity; ``None`` entries mean no bias for that layer.
    """

    layers: tuple[FilterTaps, ...]
    nonlinearities: tuple[str, ...]
    biases: tuple[np.ndarray | None, ...] | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if isinstance(self.nonlinearities, str):
            nl = (self.nonlinearities,) * len(layers)
        else:
            nl = tuple(self.nonlinearities)
        if not layers or len(nl) != len(layers):
            raise ArchitectureError("need one nonlinearity per layer and >= 1 layer")
        for kind in nl:
            if kind not in NONLINEARITIES:
                raise ArchitectureError(f"unknown nonlinearity {kind!r}")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.f_out != nxt.f_in:
                raise ArchitectureError("layer feature dimensions do not chain")
        biases = (None,) * len(layers) if self.biases is None else tuple(self.biases)
        if len(biases) != len(layers):
            raise ArchitectureError("need one bias entry per layer")
        checked = []
        for layer, b in zip(layers, biases):
            if b is not None:
                b = np.array(b, dtype=float)
                if b.shape != (layer.f_out,):
                    raise ArchitectureError(f"bias shape {b.shape} != ({layer.f_out},)")
            checked.append(b)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "nonlinearities", nl)
        object.__setattr__(self, "biases", tuple(checked))

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0].f_in,) + tuple(t.f_out for t in self.layers)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def has_bias(self) -> bool:
        return any(b is not None for b in self.biases)


@dataclass(frozen=True)
class WdGnnParams:
    """Wide filter, deep GNN, mixing scalars and a shared per-node readout.

    Either branch may be ``None``: ``deep=None`` is a plain graph filter and
    ``wide=None`` a plain GNN. The readout maps the ``G`` mixed features to
    ``G_out`` outputs with the same affine map at every node.
    """

    wide: FilterTaps | None
    deep: GnnParams | None
    alpha_w: float = 1.0
    alpha_d: float = 1.0
    beta: float = 0.0
    readout_w: np.ndarray | None = None
    readout_b: np.ndarray | None = None

    def __post_init__(self):
        if self.wide is None and self.deep is None:
            raise ArchitectureError("at least one branch is required")
        if self.wide is not None and self.deep is not None:
            if self.wide.f_out != self.deep.dims[-1]:
                raise ArchitectureError(
                    f"wide outputs {self.wide.f_out} features, deep {self.deep.dims[-1]}"
                )
            if self.wide.f_in != self.deep.dims[0]:
                raise ArchitectureError("wide and deep branches disagree on input features")
        g = self.n_features_mixed
        w = np.eye(g) if self.readout_w is None else np.array(self.readout_w, dtype=float)
        if w.ndim != 2 or w.shape[0] != g:
            raise ArchitectureError(f"readout must have {g} input rows, got {w.shape}")
        b = np.zeros(w.shape[1]) if self.readout_b is None else np.array(self.readout_b, dtype=float)
        if b.shape != (w.shape[1],):
            raise ArchitectureError("readout bias shape mismatch")
        object.__setattr__(self, "readout_w", w)
        object.__setattr__(self, "readout_b", b)
        object.__setattr__(self, "alpha_w", float(self.alpha_w))
        object.__setattr__(self, "alpha_d", float(self.alpha_d))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n_features_in(self) -> int:
        return self.wide.f_in if self.wide is not None else self.deep.dims[0]

    @property
    def n_features_mixed(self) -> int:
        return self.wide.f_out if self.wide is not None else self.deep.dims[-1]

    @property
    def n_outputs(self) -> int:
        return self.readout_w.shape[1]

    @property
    def kind(self) -> str:
        if self.deep is None:
            return "filter"
        if self.wide is None:
            return "gnn"
        return "wdgnn"

    @classmethod
    def initialize(
        cls,
        f_in: int,
        g: int,
        n_outputs: int | None,
        *,
        wide_k: int = 3,
        deep_features: Sequence[int] = (),
        deep_k: int = 3,
        nonlinearity: str = "relu",
        kind: str = "wdgnn",
        deep_bias: bool = False,
        seed=None,
    ) -> "WdGnnParams":
        """Random initialization with fan-in scaled uniform taps.

        ``deep_features`` lists the hidden widths ``F_1..F_{L-1}``; the last
        deep layer always outputs ``g`` features. ``n_outputs=None`` keeps an
        identity readout.
        """
        if kind not in ("wdgnn", "gnn", "filter"):
            raise ArchitectureError(f"unknown architecture kind {kind!r}")
        rng = np.random.default_rng(seed)
        wide = deep = None
        if kind in ("wdgnn", "filter"):
            wide = FilterTaps.initialize(wide_k, f_in, g, rng)
        if kind in ("wdgnn", "gnn"):
            dims = [f_in, *deep_features, g]
            layers = tuple(
                FilterTaps.initialize(deep_k, a, b, rng) for a, b in zip(dims, dims[1:])
            )
            biases = tuple(np.zeros(t.f_out) for t in layers) if deep_bias else None
            deep = GnnParams(layers, nonlinearity, biases)
        if n_outputs is None:
            w, b = np.eye(g), np.zeros(g)
        else:
            bound = 1.0 / np.sqrt(g)
            w, b = rng.uniform(-bound, bound, size=(g, n_outputs)), np.zeros(n_outputs)
        return cls(
            wide,
            deep,
            alpha_w=1.0 if wide is not None else 0.0,
            alpha_d=1.0 if deep is not None else 0.0,
            beta=0.0,
            readout_w=w,
            readout_b=b,
        )

    # -- flat parameter views used by the optimizers --------------------------

    def arrays(self) -> dict[str, np.ndarray]:
        """Copies of every parameter tensor keyed by name."""
        out: dict[str, np.ndarray] = {}
        if self.wide is not None:
            out["wide"] = self.wide.taps.copy()
            out["alpha_w"] = np.array(self.alpha_w)
        if self.deep is not None:
            for i, layer in enumerate(self.deep.layers):
                out[f"deep.{i}"] = layer.taps.copy()
                if self.deep.biases[i] is not None:
                    out[f"deep_bias.{i}"] = self.deep.biases[i].copy()
            out["alpha_d"] = np.array(self.alpha_d)
        out["beta"] = np.array(self.beta)
        out["readout_w"] = self.readout_w.copy()
        out["readout_b"] = self.readout_b.copy()
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "WdGnnParams":
        """New parameters with the named tensors replaced."""
        wide, deep = self.wide, self.deep
        if "wide" in arrays:
            wide = FilterTaps(arrays["wide"])
        if deep is not None and any(k.startswith("deep") for k in arrays):
            layers = tuple(
                FilterTaps(arrays.get(f"deep.{i}", layer.taps))
                for i, layer in enumerate(deep.layers)
            )
            biases = tuple(
                arrays.get(f"deep_bias.{i}", b) if b is not None else None
                for i, b in enumerate(deep.biases)
            )
            deep = GnnParams(layers, deep.nonlinearities, biases)
        return replace(
            self,
            wide=wide,
            deep=deep,
            alpha_w=float(arrays.get("alpha_w", self.alpha_w)),
            alpha_d=float(arrays.get("alpha_d", self.alpha_d)),
            beta=float(arrays.get("beta", self.beta)),
            readout_w=arrays.get("readout_w", self.readout_w),
            readout_b=arrays.get("readout_b", self.readout_b),
        )

    def with_wide(self, taps: np.ndarray | FilterTaps) -> "WdGnnParams":
        if not isinstance(taps, FilterTaps):
            taps = FilterTaps(taps)
        return replace(self, wide=taps)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    """Intermediate values kept for the backward pass."""

    s: np.ndarray
    x: np.ndarray
    wide_stack: np.ndarray | None = None
    wide_out: np.ndarray | None = None
    deep_stacks: list[np.ndarray] = field(default_factory=list)
    deep_pre: list[np.ndarray] = field(default_factory=list)
    deep_out: np.ndarray | None = None
    mixed: np.ndarray | None = None


def _check_signal(s: np.ndarray, x: np.ndarray, f_in: int | None = None) -> None:
    n = s.shape[-1]
    if x.ndim < 2 or x.shape[-2] != n:
        raise ArchitectureError(f"signal shape {x.shape} does not match {n} nodes")
    if f_in is not None and x.shape[-1] != f_in:
        raise ArchitectureError(f"signal has {x.shape[-1]} features, expected {f_in}")


def shift_stack(s, x: np.ndarray, k_order: int) -> np.ndarray:
    """``[X, S X, ..., S^K X]`` built by repeated shifts, shape ``(K+1, ..., N, F)``."""
    s = _entries(s)
    x = np.asarray(x, dtype=float)
    _check_signal(s, x)
    out = np.empty((k_order + 1,) + x.shape)
    out[0] = x
    for k in range(1, k_order + 1):
        out[k] = _shift(s, out[k - 1])
    return out


def delayed_shift_stack(history: Sequence[tuple], k_order: int) -> np.ndarray:
    """Stack ``Z_k = S_t S_{t-1} ... S_{t-k+1} X_{t-k}`` from newest-first history."""
    if len(history) < k_order + 1:
        raise ArchitectureError(
            f"delayed filter of order {k_order} needs {k_order + 1} history entries, "
            f"got {len(history)}"
        )
    shifts = [_entries(s) for s, _ in history[: k_order + 1]]
    signals = [np.asarray(x, dtype=float) for _, x in history[: k_order + 1]]
    n = shifts[0].shape[-1]
    for s, x in zip(shifts, signals):
        if s.shape[-1] != n:
            raise ArchitectureError("history mixes graphs of different sizes")
        _check_signal(s, x)
    out = np.empty((k_order + 1,) + signals[0].shape)
    out[0] = signals[0]
    for k in range(1, k_order + 1):
        z = signals[k]
        for j in range(k - 1, -1, -1):
            z = _shift(shifts[j], z)
        out[k] = z
    return out


def apply_taps(stack: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """``sum_k stack[k] @ taps[k]``."""
    if stack.shape[0] != taps.shape[0] or stack.shape[-1] != taps.shape[1]:
        raise ArchitectureError(
            f"stack {stack.shape} incompatible with taps {taps.shape}"
        )
    return np.tensordot(np.moveaxis(stack, 0, -2), taps, axes=([-2, -1], [0, 1]))


def _tap_gradient(stack: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    lead = list(range(1, stack.ndim - 1))
    return np.tensordot(stack, upstream, axes=(lead, list(range(upstream.ndim - 1))))


def filter_forward(s, x: np.ndarray, taps: FilterTaps) -> tuple[np.ndarray, ForwardCache]:
    """Graph filter ``sum_k S^k X A_k`` via repeated shifts."""
    s_arr = _entries(s)
    x = np.asarray(x, dtype=float)
    _check_signal(s_arr, x, taps.f_in)
    stack = shift_stack(s_arr, x, taps.k_order)
    y = apply_taps(stack, taps.taps)
    return y, ForwardCache(s=s_arr, x=x, wide_stack=stack, wide_out=y)


def delayed_filter_forward(history: Sequence[tuple], taps: FilterTaps) -> np.ndarray:
    """Graph filter over a newest-first ``(S_tau, X_tau)`` history."""
    return apply_taps(delayed_shift_stack(history, taps.k_order), taps.taps)


def gnn_forward(s, x: np.ndarray, params: GnnParams) -> tuple[np.ndarray, ForwardCache]:
    s_arr = _entries(s)
    x = np.asarray(x, dtype=float)
    cache = ForwardCache(s=s_arr, x=x)
    h = x
    for layer, kind, bias in zip(params.layers, params.nonlinearities, params.biases):
        if h.shape[-1] != layer.f_in:
            raise ArchitectureError(
                f"layer expects {layer.f_in} features, got {h.shape[-1]}"
            )
        stack = shift_stack(s_arr, h, layer.k_order)
        pre = apply_taps(stack, layer.taps)
        if bias is not None:
            pre = pre + bias
        h = nonlinearity_apply(kind, pre)
        cache.deep_stacks.append(stack)
        cache.deep_pre.append(pre)
    cache.deep_out = h
    return h, cache


def wdgnn_forward(
    s, x: np.ndarray, params: WdGnnParams, wide_stack: np.ndarray | None = None
) -> tuple[np.ndarray, ForwardCache]:
    """Mixed output ``(alpha_W A(X) + alpha_D Phi(X) + beta) W_r + b_r``.

    ``wide_stack`` replaces the wide branch's shifted signals, which is how
    the delayed filter enters (see :func:`delayed_shift_stack`).
    """
    s_arr = _entries(s)
    x = np.asarray(x, dtype=float)
    _check_signal(s_arr, x, params.n_features_in)
    cache = ForwardCache(s=s_arr, x=x)
    mixed = params.beta
    if params.wide is not None:
        stack = wide_stack if wide_stack is not None else shift_stack(
            s_arr, x, params.wide.k_order
        )
        cache.wide_stack = stack
        cache.wide_out = apply_taps(stack, params.wide.taps)
        mixed = mixed + params.alpha_w * cache.wide_out
    if params.deep is not None:
        deep_out, deep_cache = gnn_forward(s_arr, x, params.deep)
        cache.deep_stacks = deep_cache.deep_stacks
        cache.deep_pre = deep_cache.deep_pre
        cache.deep_out = deep_out
        mixed = mixed + params.alpha_d * deep_out
    cache.mixed = mixed
    return mixed @ params.readout_w + params.readout_b, cache


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _check_cache(cache: ForwardCache, params: WdGnnParams) -> None:
    if cache.mixed is None or cache.mixed.shape[-1] != params.n_features_mixed:
        raise ArchitectureError("cache was not produced by wdgnn_forward with these params")
    if (params.wide is None) != (cache.wide_out is None):
        raise ArchitectureError("cache/params disagree on the wide branch")
    if params.deep is not None and len(cache.deep_pre) != params.deep.n_layers:
        raise ArchitectureError("cache/params disagree on the number of deep layers")


def wide_gradient(cache: ForwardCache, params: WdGnnParams, upstream: np.ndarray) -> np.ndarray:
    """Gradient of the loss with respect to the wide taps only."""
    _check_cache(cache, params)
    d_mixed = upstream @ params.readout_w.T
    return params.alpha_w * _tap_gradient(cache.wide_stack, d_mixed)


def wdgnn_backward(
    cache: ForwardCache, s, params: WdGnnParams, upstream: np.ndarray
) -> dict[str, np.ndarray]:
    """Reverse-mode gradients for every parameter tensor, keyed as ``params.arrays()``.

    ``upstream`` is the loss gradient with respect to the model output and
    has the output's shape. Gradients are summed over any batch axis.
    """
    _check_cache(cache, params)
    s_arr = _entries(s)
    upstream = np.asarray(upstream, dtype=float)
    out_shape = cache.mixed.shape[:-1] + (params.n_outputs,)
    if upstream.shape != out_shape:
        raise ArchitectureError(f"upstream shape {upstream.shape} != output {out_shape}")
    flat_mixed = cache.mixed.reshape(-1, cache.mixed.shape[-1])
    flat_up = upstream.reshape(-1, upstream.shape[-1])
    grads: dict[str, np.ndarray] = {
        "readout_w": flat_mixed.T @ flat_up,
        "readout_b": flat_up.sum(axis=0),
    }
    d_mixed = upstream @ params.readout_w.T
    grads["beta"] = np.array(d_mixed.sum())
    if params.wide is not None:
        grads["alpha_w"] = np.array(np.sum(d_mixed * cache.wide_out))
        grads["wide"] = params.alpha_w * _tap_gradient(cache.wide_stack, d_mixed)
    if params.deep is not None:
        grads["alpha_d"] = np.array(np.sum(d_mixed * cache.deep_out))
        d_h = params.alpha_d * d_mixed
        for i in range(params.deep.n_layers - 1, -1, -1):
            layer = params.deep.layers[i]
            kind = params.deep.nonlinearities[i]
            d_pre = d_h * nonlinearity_derivative(kind, cache.deep_pre[i])
            grads[f"deep.{i}"] = _tap_gradient(cache.deep_stacks[i], d_pre)
            if params.deep.biases[i] is not None:
                grads[f"deep_bias.{i}"] = d_pre.reshape(-1, d_pre.shape[-1]).sum(axis=0)
            if i == 0:
                break
            # Horner: sum_k (S^T)^k d_pre B_k^T
            taps = layer.taps
            d_h = d_pre @ taps[-1].T
            for k in range(layer.k_order - 1, -1, -1):
                d_h = _shift_transpose(s_arr, d_h) + d_pre @ taps[k].T
    return grads


# ---------------------------------------------------------------------------
# spectral diagnostics
# ---------------------------------------------------------------------------


def frequency_response(taps: FilterTaps, lam) -> np.ndarray:
    """``a_fg(lambda) = sum_k [A_k]_fg lambda^k``; vectorized over ``lam``."""
    lam = np.asarray(lam, dtype=float)
    powers = lam[..., None] ** np.arange(taps.k_order + 1)
    return np.tensordot(powers, taps.taps, axes=([-1], [0]))


def frequency_response_derivative(taps: FilterTaps, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    k = np.arange(1, taps.k_order + 1)
    powers = k * lam[..., None] ** (k - 1)
    return np.tensordot(powers, taps.taps[1:], axes=([-1], [0]))


def gershgorin_interval(s) -> tuple[float, float]:
    a = _entries(s)
    radius = np.abs(a).sum(axis=1) - np.abs(np.diag(a))
    return float(np.min(np.diag(a) - radius)), float(np.max(np.diag(a) + radius))


def integral_lipschitz_estimate(
    taps: FilterTaps,
    lambda_lo: float | None = None,
    lambda_hi: float | None = None,
    grid: int = GERSHGORIN_GRID,
    eigenvalues: np.ndarray | None = None,
) -> float:
    """Largest ``|lambda a'_fg(lambda)|`` over a grid or over given eigenvalues."""
    if eigenvalues is not None:
        lam = np.asarray(eigenvalues, dtype=float)
    else:
        if lambda_lo is None or lambda_hi is None or lambda_lo > lambda_hi or grid < 2:
            raise ArchitectureError("need lambda_lo <= lambda_hi and grid >= 2")
        lam = np.linspace(lambda_lo, lambda_hi, grid)
    if taps.k_order == 0:
        return 0.0
    deriv = frequency_response_derivative(taps, lam)
    return float(np.max(np.abs(lam[:, None, None] * deriv)))


def all_filters(params: WdGnnParams) -> list[FilterTaps]:
    filters = [] if params.wide is None else [params.wide]
    if params.deep is not None:
        filters.extend(params.deep.layers)
    return filters


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _pack(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}


def _unpack(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])


def save_params(params: WdGnnParams, path: str | PathLike) -> None:
    """Write a JSON checkpoint; floats use shortest round-trip repr."""
    doc = {
        "format": "wdgnn-checkpoint/1",
        "kind": params.kind,
        "dims": {
            "f_in": params.n_features_in,
            "g": params.n_features_mixed,
            "g_out": params.n_outputs,
            "deep": list(params.deep.dims) if params.deep is not None else None,
        },
        "wide": _pack(params.wide.taps) if params.wide is not None else None,
        "deep": None
        if params.deep is None
        else {
            "nonlinearities": list(params.deep.nonlinearities),
            "layers": [_pack(t.taps) for t in params.deep.layers],
            "biases": [None if b is None else _pack(b) for b in params.deep.biases],
        },
        "alpha_w": params.alpha_w,
        "alpha_d": params.alpha_d,
        "beta": params.beta,
        "readout_w": _pack(params.readout_w),
        "readout_b": _pack(params.readout_b),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path: str | PathLike) -> WdGnnParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "wdgnn-checkpoint/1":
        raise ArchitectureError(f"unrecognized checkpoint format {doc.get('format')!r}")
    wide = FilterTaps(_unpack(doc["wide"])) if doc["wide"] is not None else None
    deep = None
    if doc["deep"] is not None:
        biases = doc["deep"].get("biases")
        deep = GnnParams(
            tuple(FilterTaps(_unpack(t)) for t in doc["deep"]["layers"]),
            tuple(doc["deep"]["nonlinearities"]),
            None if biases is None else tuple(None if b is None else _unpack(b) for b in biases),
        )
    return WdGnnParams(
        wide,
        deep,
        alpha_w=doc["alpha_w"],
        alpha_d=doc["alpha_d"],
        beta=doc["beta"],
        readout_w=_unpack(doc["readout_w"]),
        readout_b=_unpack(doc["readout_b"]),
    )
