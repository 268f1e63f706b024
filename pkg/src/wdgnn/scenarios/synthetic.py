"""Time-varying quadratic tracking problems with known optima.

A wide-only, single-output model sees ``X_t`` on ``S_t`` and must reproduce
``y_t = Z_t A°_t`` where ``Z_t`` is the shifted-signal stack. The loss
``J_t(A) = mean_i ([Z_t A]_i - y_{t,i})^2`` is the mean of the node-local
squared errors, so its unique minimizer is ``A°_t`` whenever ``Z_t`` has
full column rank, and its Hessian ``(2/N) Z_t^T Z_t`` gives the exact
smoothness and strong-convexity constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..analysis import (
    ConvergenceRow,
    c_epsilon_constant,
    centralized_tracking_bound,
    distributed_tracking_bound,
)
from ..architecture import FilterTaps, WdGnnParams, shift_stack
from ..graph import Gso, metropolis_weights, normalize_adjacency, smallest_weight
from ..online import (
    NodeParams,
    OnlineSample,
    consensus_disagreement,
    distributed_online_step,
    run_online,
)
from ..training import Regression


@dataclass(frozen=True)
class QuadraticStream:
    samples: list[OnlineSample]
    optima: list[np.ndarray]
    c_s: np.ndarray
    c_c: np.ndarray
    template: WdGnnParams

    def task(self) -> Regression:
        return Regression()

    def rates(self, gamma: float) -> np.ndarray:
        return np.maximum(np.abs(1 - gamma * self.c_s), np.abs(1 - gamma * self.c_c))

    @property
    def drift(self) -> float:
        if len(self.optima) < 2:
            return 0.0
        return float(max(np.linalg.norm(b - a) for a, b in zip(self.optima, self.optima[1:])))


def ring_with_chords(n: int, n_chords: int, rng) -> Gso:
    """Cycle graph plus random extra edges; always connected."""
    a = np.zeros((n, n))
    idx = np.arange(n)
    a[idx, (idx + 1) % n] = a[(idx + 1) % n, idx] = 1.0
    added = 0
    while added < n_chords:
        i, j = rng.choice(n, size=2, replace=False)
        if a[i, j] == 0:
            a[i, j] = a[j, i] = 1.0
            added += 1
    return Gso(a)


def switching_graphs(n: int, n_graphs: int = 2, n_chords: int = 3, seed=None) -> list[Gso]:
    """Connected graphs cycled in order, so every recurring edge returns
    within ``n_graphs`` steps (``C_d = n_graphs``)."""
    rng = np.random.default_rng(seed)
    return [normalize_adjacency(ring_with_chords(n, n_chords, rng)) for _ in range(n_graphs)]


def quadratic_stream(
    n: int = 10,
    k_order: int = 3,
    steps: int = 200,
    drift: float = 0.0,
    graphs: list[Gso] | None = None,
    vary_signal: bool = True,
    seed=None,
) -> QuadraticStream:
    """Stream of ``steps`` samples; ``A°`` moves by exactly ``drift`` per step.

    ``graphs`` are used cyclically (one static random graph by default).
    With ``vary_signal=False`` the same ``X`` is reused, which together with
    ``drift=0`` and one graph makes the problem time-invariant.
    """
    rng = np.random.default_rng(seed)
    if graphs is None:
        graphs = switching_graphs(n, 1, n_chords=n // 2, seed=rng)
    optimum = rng.normal(size=(k_order + 1, 1, 1))
    x = rng.normal(size=(n, 1))
    samples, optima, c_s, c_c = [], [], [], []
    for t in range(steps):
        g = graphs[t % len(graphs)]
        if vary_signal and t > 0:
            x = rng.normal(size=(n, 1))
        stack = shift_stack(g, x, k_order)
        z = np.moveaxis(stack, 0, -2).reshape(n, -1)
        lam = np.linalg.eigvalsh(2.0 / n * z.T @ z)
        y = z @ optimum.reshape(-1, 1)
        samples.append(OnlineSample(g, x, y, optimum=optimum.copy()))
        optima.append(optimum.copy())
        c_s.append(lam[-1])
        c_c.append(lam[0])
        if drift > 0:
            step = rng.normal(size=optimum.shape)
            optimum = optimum + drift * step / np.linalg.norm(step)
    template = WdGnnParams(FilterTaps(np.zeros((k_order + 1, 1, 1))), None, alpha_w=1.0)
    return QuadraticStream(samples, optima, np.array(c_s), np.array(c_c), template)


def default_gamma(stream: QuadraticStream, fraction: float = 0.5) -> float:
    """``fraction * 2 / max C_s``, inside the admissible step range."""
    return float(fraction * 2.0 / stream.c_s.max())


def track_centralized(stream: QuadraticStream, gamma: float) -> list[ConvergenceRow]:
    """Centralized tracking errors against the centralized bound.

    Row ``t`` compares ``||A_{t+1} - A*_{t+1}||`` with the bound after the
    update on sample ``t``.
    """
    _, trace = run_online("centralized", stream.samples, stream.template, gamma, stream.task())
    errors = trace.column("dist_to_opt")
    rates = stream.rates(gamma)
    c_b = stream.drift
    bound = centralized_tracking_bound(errors[0], rates, c_b)
    return [
        ConvergenceRow(
            t, float(errors[t + 1]), float(bound[t]), float(rates[t]), c_b,
            float(stream.c_s[t]), float(stream.c_c[t]), 0.0, 1, float(gamma), 0.0,
        )
        for t in range(len(errors) - 1)
    ]


def random_locals(stream: QuadraticStream, n: int, scale: float = 1.0, seed=None) -> NodeParams:
    shape = (n,) + stream.template.wide.taps.shape
    return NodeParams(scale * np.random.default_rng(seed).normal(size=shape))


def track_distributed(
    stream: QuadraticStream,
    gamma: float,
    c_d: int,
    initial: NodeParams | None = None,
) -> list[ConvergenceRow]:
    """Distributed tracking: worst node error and disagreement per step.

    ``L`` is the largest local gradient norm met along the run, raised if
    needed so that every initial copy satisfies ``||A_i0|| <= gamma L``.
    ``eps`` is the smallest Metropolis weight over the graphs.
    """
    task = stream.task()
    params = stream.template
    n = stream.samples[0].signal.shape[0]
    k = params.wide.k_order
    locals_ = initial if initial is not None else NodeParams.replicate(params.wide, n)
    errors, disagreements, lipschitz = [], [], 0.0
    eps = 1.0
    a0 = float(np.linalg.norm(locals_.taps.reshape(n, -1), axis=1).max())
    mean0 = float(np.linalg.norm(locals_.mean() - stream.optima[0]))
    for sample in stream.samples:
        g = sample.graph
        w = metropolis_weights(g)
        eps = min(eps, smallest_weight(w))
        errors.append(
            float(np.linalg.norm((locals_.taps - sample.optimum).reshape(n, -1), axis=1).max())
        )
        disagreements.append(consensus_disagreement(locals_))
        z = shift_stack(g, sample.signal, k)[:, :, 0].T  # (N, K+1)
        resid = np.einsum("ik,ik->i", z, locals_.taps.reshape(n, -1)) - sample.target[:, 0]
        lipschitz = max(lipschitz, float(np.max(2 * np.abs(resid) * np.linalg.norm(z, axis=1))))
        locals_, _, _ = distributed_online_step(
            locals_, w, g, sample.signal,
            lambda o, y=sample.target: task.local_loss(o, y), gamma, params,
        )
    lipschitz = max(lipschitz, a0 / gamma)
    rates = stream.rates(gamma)
    c_eps = c_epsilon_constant(n, eps, c_d)
    c_b = stream.drift
    bound = distributed_tracking_bound(
        mean0, rates, c_b, gamma, lipschitz, float(stream.c_s.max()), c_eps
    )
    return [
        ConvergenceRow(
            t, errors[t + 1], float(bound[t]), float(rates[t]), c_b,
            float(stream.c_s[t]), float(stream.c_c[t]), c_eps, c_d, float(gamma), lipschitz,
            disagreements[t + 1],
        )
        for t in range(len(errors) - 1)
    ]
