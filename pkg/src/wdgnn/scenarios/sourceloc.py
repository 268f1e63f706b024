"""Source localization: classify which community a diffused delta started in."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..analysis import smoothness_from_data
from ..architecture import WdGnnParams
from ..graph import Gso, community_labels, drop_edges, normalize_adjacency, sbm_generate
from ..online import NodeParams, OnlineTrace, iterate_stream, predict_local, run_online
from ..training import (
    Dataset,
    EpochRecord,
    NodeClassification,
    TrainConfig,
    evaluate,
    train_offline,
)

DEFAULT_NOISE_STD = 1e-3


@dataclass(frozen=True)
class SourceLocScenario:
    graph: Gso
    sources: tuple[int, ...]
    detectors: tuple[int, ...]
    communities: np.ndarray
    noise_std: float = DEFAULT_NOISE_STD
    max_diffusion_time: int = 30

    @property
    def n_classes(self) -> int:
        return len(self.sources)

    def task(self) -> NodeClassification:
        return NodeClassification(self.detectors)


def make_scenario(
    n: int = 50,
    communities: int = 5,
    p_intra: float = 0.8,
    p_inter: float = 0.2,
    noise_std: float = DEFAULT_NOISE_STD,
    max_diffusion_time: int = 30,
    seed=None,
) -> SourceLocScenario:
    """SBM graph, normalized adjacency, one source and one detector per community."""
    rng = np.random.default_rng(seed)
    graph = normalize_adjacency(sbm_generate(n, communities, p_intra, p_inter, seed=rng))
    labels = community_labels(n, communities)
    sources, detectors = [], []
    for c in range(communities):
        members = np.flatnonzero(labels == c)
        src, det = rng.choice(members, size=2, replace=False)
        sources.append(int(src))
        detectors.append(int(det))
    return SourceLocScenario(
        graph, tuple(sources), tuple(detectors), labels, noise_std, max_diffusion_time
    )


def diffuse_signal(s: Gso, source: int, t: int, noise_std: float = 0.0, seed=None) -> np.ndarray:
    """``S^t delta_source + noise`` as an ``(N, 1)`` graph signal."""
    if not 0 <= source < s.n:
        raise ValueError(f"source {source} outside graph of {s.n} nodes")
    if t < 0:
        raise ValueError("diffusion time must be nonnegative")
    x = np.zeros(s.n)
    x[source] = 1.0
    for _ in range(t):
        x = s.entries @ x
    if noise_std > 0:
        x = x + np.random.default_rng(seed).normal(0.0, noise_std, size=s.n)
    return x[:, None]


def gen_dataset(scenario: SourceLocScenario, n_samples: int, seed=None) -> Dataset:
    """Samples with uniformly random source and diffusion time in ``[0, t_max]``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    s = scenario.graph.entries
    n = scenario.graph.n
    t_max = scenario.max_diffusion_time
    # all powers S^t delta_s for every source, computed once
    powers = np.empty((t_max + 1, n, len(scenario.sources)))
    powers[0] = np.eye(n)[:, list(scenario.sources)]
    for t in range(1, t_max + 1):
        powers[t] = s @ powers[t - 1]
    which = rng.integers(0, len(scenario.sources), size=n_samples)
    times = rng.integers(0, t_max + 1, size=n_samples)
    signals = powers[times, :, which] + rng.normal(0.0, scenario.noise_std, size=(n_samples, n))
    return Dataset(signals[:, :, None], which.astype(int), scenario.graph)


def gen_splits(
    scenario: SourceLocScenario, sizes=(10_000, 2_500, 1_000), seed=None
) -> tuple[Dataset, Dataset, Dataset]:
    full = gen_dataset(scenario, int(sum(sizes)), seed=seed)
    idx = np.cumsum((0,) + tuple(sizes))
    return tuple(full.subset(np.arange(a, b)) for a, b in zip(idx, idx[1:]))


def sourceloc_accuracy(detector_logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of (sample, detector) pairs whose argmax equals the label.

    ``detector_logits`` is ``(B, n_detectors, n_classes)``; ``labels`` is
    ``(B,)`` (shared by all detectors) or ``(B, n_detectors)``.
    """
    labels = np.asarray(labels)
    if labels.ndim == detector_logits.ndim - 2:
        labels = labels[:, None]
    hits = np.argmax(detector_logits, axis=-1) == labels
    return float(hits.mean(axis=0).mean())


def perturbed_graph(s: Gso, p: float, seed=None) -> Gso:
    """Edge-dropped subgraph of the training GSO, used as is at test time.

    The surviving entries keep their trained-graph values; the spectral
    radius is not restored, so weaker diffusion is part of the perturbation.
    """
    return drop_edges(s, p, seed=seed)


def online_step_size(
    params: WdGnnParams, scenario: SourceLocScenario, graph: Gso, signals, mode: str
) -> float:
    """Curvature rule ``1 / C_s`` for the centralized loss.

    The centralized loss averages cross-entropy over the detectors, so each
    read row has curvature at most ``1 / (2 d)``. A distributed step moves
    the node average by ``gamma * d / N`` times the centralized gradient, so
    the distributed step is scaled up by ``N / d`` to match.
    """
    d = len(scenario.detectors)
    c_s = smoothness_from_data(params, graph, signals, scenario.detectors, 1.0 / (2 * d))
    gamma = 1.0 / c_s
    if mode == "distributed":
        gamma *= graph.n / d
    return float(gamma)


def online_accuracy(
    params, locals_: NodeParams | None, scenario: SourceLocScenario, graph: Gso, data: Dataset
) -> float:
    """Test accuracy of a centralized model or of per-node local copies."""
    task = scenario.task()
    if locals_ is None:
        return evaluate(params, Dataset(data.signals, data.targets, graph), task)[1]
    return task.metric(predict_local(params, locals_, graph, data.signals), data.targets)


@dataclass
class SourceLocSetup:
    """A trained model with the data it was trained and will be tested on."""

    scenario: SourceLocScenario
    params: WdGnnParams
    history: list[EpochRecord]
    train: Dataset
    test: Dataset
    online: Dataset
    rng: np.random.Generator

    def perturbed(self, p: float) -> Gso:
        return perturbed_graph(self.scenario.graph, p, seed=self.rng.integers(0, 2**32))


def prepare_sourceloc(
    template: WdGnnParams,
    train_config: TrainConfig,
    *,
    sizes=(10_000, 2_500, 1_000),
    n_online: int = 1_000,
    scenario_kwargs=None,
    seed: int = 0,
) -> SourceLocSetup:
    """Draw a scenario and its splits from ``seed`` and train offline."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**32, size=3)
    scenario = make_scenario(**(scenario_kwargs or {}), seed=seeds[0])
    train, valid, test = gen_splits(scenario, sizes, seed=seeds[1])
    params, history = train_offline(
        train, template, train_config, scenario.task(), validation=valid
    )
    online = gen_dataset(scenario, max(n_online, 1), seed=seeds[2])
    return SourceLocSetup(scenario, params, history, train, test, online, rng)


@dataclass
class SourceLocRun:
    """Metrics and traces of one seed; ``metrics`` maps condition to accuracy."""

    metrics: dict[str, float]
    history: list[EpochRecord]
    traces: dict[str, OnlineTrace] = field(default_factory=dict)
    gammas: dict[str, float] = field(default_factory=dict)
    params: WdGnnParams | None = None


def adapt_online(
    setup: SourceLocSetup, graph: Gso, modes, gamma: float | None, n_steps: int | None = None
) -> tuple[dict[str, float], dict[str, OnlineTrace], dict[str, float]]:
    """Run each online mode on ``graph`` and report test accuracy afterwards."""
    online = setup.online if n_steps is None else setup.online.subset(np.arange(n_steps))
    stream = iterate_stream(graph, online.signals, online.targets)
    acc, traces, gammas = {}, {}, {}
    for mode in modes:
        g = gamma if gamma is not None else online_step_size(
            setup.params, setup.scenario, graph, setup.train.signals[:200], mode
        )
        final, trace = run_online(mode, stream, setup.params, g, setup.scenario.task())
        if mode == "centralized":
            acc[mode] = online_accuracy(final, None, setup.scenario, graph, setup.test)
        else:
            acc[mode] = online_accuracy(setup.params, final, setup.scenario, graph, setup.test)
        traces[mode], gammas[mode] = trace, g
    return acc, traces, gammas


def run_sourceloc(
    template: WdGnnParams,
    train_config: TrainConfig,
    *,
    sizes=(10_000, 2_500, 1_000),
    n_online: int = 1_000,
    drop_p: float = 0.3,
    modes=("centralized", "distributed"),
    gamma: float | None = None,
    scenario_kwargs=None,
    seed: int = 0,
) -> SourceLocRun:
    """Train on the clean graph, test clean and perturbed, then adapt online.

    The perturbed graph is drawn once per seed and fixed; online samples are
    fresh draws diffused on the clean graph but processed on the perturbed
    one. ``gamma=None`` picks the curvature rule of :func:`online_step_size`.
    """
    setup = prepare_sourceloc(
        template, train_config, sizes=sizes, n_online=n_online,
        scenario_kwargs=scenario_kwargs, seed=seed,
    )
    task = setup.scenario.task()
    metrics = {"clean": evaluate(setup.params, setup.test, task)[1]}
    s_hat = setup.perturbed(drop_p)
    metrics["perturbed"] = online_accuracy(setup.params, None, setup.scenario, s_hat, setup.test)
    acc, traces, gammas = adapt_online(setup, s_hat, modes, gamma)
    metrics.update(acc)
    return SourceLocRun(metrics, setup.history, traces, gammas, setup.params)


def accuracy_vs_steps(
    params: WdGnnParams,
    scenario: SourceLocScenario,
    graph: Gso,
    online: Dataset,
    test: Dataset,
    mode: str,
    gamma: float,
    checkpoints,
) -> list[tuple[int, float]]:
    """Test accuracy after each checkpoint number of online steps."""
    checkpoints = sorted(set(int(c) for c in checkpoints))
    if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] > len(online)):
        raise ValueError("checkpoints must lie in [0, number of online samples]")
    task = scenario.task()
    current, locals_, done, out = params, None, 0, []
    for c in checkpoints:
        if c > done:
            stream = iterate_stream(graph, online.signals[done:c], online.targets[done:c])
            if mode == "centralized":
                current, _ = run_online(mode, stream, current, gamma, task)
            else:
                locals_, _ = run_online(mode, stream, params, gamma, task, initial_locals=locals_)
            done = c
        out.append((c, online_accuracy(current, locals_, scenario, graph, test)))
    return out
