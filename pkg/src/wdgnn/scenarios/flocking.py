"""Flocking: learn a decentralized acceleration controller by imitation.

Agents follow double-integrator dynamics. A centralized expert aligns
velocities and keeps agents apart with the potential
``V = 1/||d||^2 + log ||d||^2`` (active within ``cutoff``); the network sees
only local relative features and a communication graph of radius ``r``.
The wide branch uses the delayed filter, so it needs one exchange per step.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable

import numpy as np

from ..architecture import WdGnnParams, delayed_shift_stack, wdgnn_forward
from ..graph import Gso, metropolis_weights
from ..online import (
    NodeParams,
    OnlineRecord,
    OnlineTrace,
    centralized_online_step,
    consensus_disagreement,
    distributed_online_step,
)
from ..training import Dataset, Regression

logger = logging.getLogger(__name__)

N_FEATURES = 6
MODES = ("offline", "centralized-online", "distributed-online")


class FlockingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SwarmConfig:
    """Swarm geometry and timing. ``init_radius=None`` means ``0.5 sqrt(N)`` m."""

    n_agents: int = 50
    comm_radius: float = 2.0
    sample_time: float = 0.01
    duration: float = 2.0
    max_accel: float = 10.0
    init_velocity: float = 3.0
    min_init_spacing: float = 0.1
    cutoff: float = 2.0
    init_radius: float | None = None
    max_init_retries: int = 100_000

    def __post_init__(self):
        for name in (
            "comm_radius",
            "sample_time",
            "duration",
            "max_accel",
            "init_velocity",
            "min_init_spacing",
            "cutoff",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_agents < 2:
            raise ValueError("need at least two agents")
        if self.init_radius is not None and self.init_radius <= 0:
            raise ValueError("init_radius must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.sample_time))

    @property
    def radius(self) -> float:
        return 0.5 * np.sqrt(self.n_agents) if self.init_radius is None else self.init_radius


@dataclass(frozen=True)
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        p = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2 or v.shape != p.shape:
            raise FlockingError("positions and velocities must both be (N, 2)")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise FlockingError("non-finite swarm state")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "velocities", v)

    @property
    def n(self) -> int:
        return len(self.positions)


def _differences(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    delta = p[:, None, :] - p[None, :, :]
    return delta, np.linalg.norm(delta, axis=-1)


def initial_state(config: SwarmConfig, rng) -> SwarmState:
    """Uniform positions in a disc with a minimum spacing, uniform velocities."""
    radius = config.radius
    pts: list[np.ndarray] = []
    tries = 0
    while len(pts) < config.n_agents:
        tries += 1
        if tries > config.max_init_retries:
            raise FlockingError(
                f"could not place {config.n_agents} agents with spacing "
                f"{config.min_init_spacing} in radius {radius}"
            )
        r = radius * np.sqrt(rng.uniform())
        theta = rng.uniform(0, 2 * np.pi)
        cand = np.array([r * np.cos(theta), r * np.sin(theta)])
        if all(np.linalg.norm(cand - q) >= config.min_init_spacing for q in pts):
            pts.append(cand)
    v = rng.uniform(-config.init_velocity, config.init_velocity, size=(config.n_agents, 2))
    return SwarmState(np.array(pts), v)


def build_communication_graph(state: SwarmState, r: float) -> Gso:
    """0/1 adjacency with an edge iff two agents are within ``r`` (inclusive)."""
    if r <= 0:
        raise ValueError("communication radius must be positive")
    _, dist = _differences(state.positions)
    a = (dist <= r).astype(float)
    np.fill_diagonal(a, 0.0)
    return Gso(a)


def normalized_graph(a: Gso) -> Gso:
    """Adjacency scaled to unit spectral radius (zero matrix stays zero).

    Uses LAPACK's symmetric eigensolver because it runs once per simulated
    step.
    """
    rho = np.abs(np.linalg.eigvalsh(a.entries)).max()
    return a if rho == 0 else Gso(a.entries / rho)


def collision_potential_gradient(p_i, p_j, cutoff: float) -> np.ndarray:
    """``grad_{p_i} V`` with ``V = 1/||d||^2 + log ||d||^2`` inside ``cutoff``."""
    d = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    r2 = float(d @ d)
    if r2 == 0:
        raise FlockingError("coincident positions")
    if r2 > cutoff**2:
        return np.zeros(2)
    return -2 * d / r2**2 + 2 * d / r2


def _potential_gradients(p: np.ndarray, cutoff: float) -> np.ndarray:
    delta, dist = _differences(p)
    off = ~np.eye(len(p), dtype=bool)
    if np.any(dist[off] == 0):
        raise FlockingError("coincident positions")
    r2 = np.where(off, dist**2, 1.0)
    active = off & (dist <= cutoff)
    coef = np.where(active, -2 / r2**2 + 2 / r2, 0.0)
    return (coef[..., None] * delta).sum(axis=1)


def optimal_controller(state: SwarmState, cutoff: float, max_accel: float = 10.0) -> np.ndarray:
    """Centralized expert ``-sum_j (v_i - v_j) - sum_j grad V``, clipped."""
    v = state.velocities
    align = state.n * v - v.sum(axis=0)
    u = -align - _potential_gradients(state.positions, cutoff)
    return np.clip(u, -max_accel, max_accel)


def step_dynamics(state: SwarmState, u: np.ndarray, t_s: float) -> SwarmState:
    u = np.asarray(u, dtype=float)
    if u.shape != state.positions.shape:
        raise FlockingError(f"acceleration shape {u.shape} != {state.positions.shape}")
    if not np.all(np.isfinite(u)):
        raise FlockingError("non-finite accelerations")
    p = state.positions + state.velocities * t_s + u * t_s**2 / 2
    return SwarmState(p, state.velocities + u * t_s)


def flocking_features(state: SwarmState, graph: Gso) -> np.ndarray:
    """Per agent ``[sum (v_i - v_j), sum d/||d||^4, sum d/||d||^2]`` over neighbors."""
    adj = graph.entries != 0
    np.fill_diagonal(adj, False)
    v = state.velocities
    delta, dist = _differences(state.positions)
    if np.any(dist[adj] == 0):
        raise FlockingError("coincident neighboring positions")
    r2 = np.where(adj, dist**2, 1.0)
    mask = adj[..., None]
    deg = adj.sum(axis=1, keepdims=True)
    f_vel = deg * v - adj.astype(float) @ v
    f_rep = np.where(mask, delta / r2[..., None] ** 2, 0.0).sum(axis=1)
    f_att = np.where(mask, delta / r2[..., None], 0.0).sum(axis=1)
    return np.concatenate([f_vel, f_rep, f_att], axis=1)


def per_step_variation(velocities: np.ndarray) -> float:
    dev = velocities - velocities.mean(axis=0)
    return float((dev**2).sum() / len(velocities))


def velocity_variation(trajectory) -> tuple[float, float]:
    """Total (sum over the given states) and final per-step velocity variation."""
    if len(trajectory) == 0:
        raise FlockingError("empty trajectory")
    per = [per_step_variation(s.velocities) for s in trajectory]
    return float(sum(per)), per[-1]


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------


class ExpertPolicy:
    """Plug-in that bypasses the network and returns the expert's action."""

    def __init__(self, config: SwarmConfig):
        self.config = config

    def __call__(self, state: SwarmState) -> np.ndarray:
        return optimal_controller(state, self.config.cutoff, self.config.max_accel)


@dataclass
class _Step:
    graph: Gso
    features: np.ndarray


class _History:
    """Newest-first ``(S, X)`` pairs, padded with zero signals at the start."""

    def __init__(self, k_order: int):
        self.k_order = k_order
        self.items: deque = deque(maxlen=k_order + 1)

    def push(self, step: _Step) -> None:
        if not self.items:
            zero = np.zeros_like(step.features)
            for _ in range(self.k_order):
                self.items.appendleft((step.graph.entries, zero))
        self.items.appendleft((step.graph.entries, step.features))

    def stack(self) -> np.ndarray:
        return delayed_shift_stack(list(self.items), self.k_order)


def _observe(state: SwarmState, config: SwarmConfig) -> _Step:
    adj = build_communication_graph(state, config.comm_radius)
    return _Step(normalized_graph(adj), flocking_features(state, adj))


def _lookahead_loss(v: np.ndarray, u_raw: np.ndarray, config: SwarmConfig, members=None):
    """Velocity variation after one step of ``u`` and its gradient in ``u_raw``.

    Clipping enters through its almost-everywhere derivative.
    """
    idx = np.arange(len(v)) if members is None else np.flatnonzero(members)
    u = np.clip(u_raw[idx], -config.max_accel, config.max_accel)
    v_next = v[idx] + u * config.sample_time
    dev = v_next - v_next.mean(axis=0)
    value = float((dev**2).sum() / len(idx))
    grad = np.zeros_like(u_raw)
    inside = np.abs(u_raw[idx]) < config.max_accel
    grad[idx] = 2 * config.sample_time * dev / len(idx) * inside
    return value, grad


def _local_lookahead(v, adj, config):
    closed = adj | np.eye(len(v), dtype=bool)

    def losses(outs: np.ndarray):
        values = np.zeros(len(v))
        grads = np.zeros_like(outs)
        for i in range(len(v)):
            values[i], grads[i] = _lookahead_loss(v, outs[i], config, closed[i])
        return values, grads

    return losses


@dataclass
class FlockingResult:
    states: list[SwarmState]
    actions: list[np.ndarray]
    total_variation: float
    final_variation: float
    trace: OnlineTrace = field(default_factory=OnlineTrace)
    params: WdGnnParams | NodeParams | None = None

    def to_csv(self, path: str | PathLike) -> None:
        """Per step and agent: ``t, agent, px, py, vx, vy, ux, uy``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "agent", "px", "py", "vx", "vy", "ux", "uy"])
            for t, (s, u) in enumerate(zip(self.states, self.actions)):
                for i in range(s.n):
                    w.writerow([t, i, *map(repr, s.positions[i]), *map(repr, s.velocities[i]),
                                *map(repr, u[i])])


def run_flocking(
    policy: WdGnnParams | Callable[[SwarmState], np.ndarray],
    config: SwarmConfig,
    mode: str = "offline",
    gamma: float = 0.0,
    seed=None,
    state: SwarmState | None = None,
    on_step: Callable[[int, SwarmState, np.ndarray], None] | None = None,
) -> FlockingResult:
    """Closed-loop rollout of ``config.steps`` steps from a seeded start.

    ``policy`` is either trained parameters or a callable on the state
    (e.g. :class:`ExpertPolicy`). Online modes update the wide taps after
    every action with the one-step-lookahead velocity variation: over all
    agents (centralized) or over each agent's closed neighborhood
    (distributed). Reported variations exclude the initial state.
    """
    if mode not in MODES:
        raise FlockingError(f"unknown mode {mode!r}; expected one of {MODES}")
    if state is None:
        state = initial_state(config, np.random.default_rng(seed))
    network = isinstance(policy, WdGnnParams)
    if not network and mode != "offline":
        raise FlockingError("online modes need a trained network policy")
    if network and policy.wide is None and mode != "offline":
        raise FlockingError("online modes need a wide branch")
    params = policy
    locals_ = None
    if network and mode == "distributed-online":
        locals_ = NodeParams.replicate(policy.wide, config.n_agents)
    history = _History(policy.wide.k_order if network and policy.wide is not None else 0)
    states, actions = [state], []
    trace = OnlineTrace()
    for t in range(config.steps):
        if network:
            step = _observe(state, config)
            history.push(step)
            stack = history.stack() if params.wide is not None else None
            s, x = step.graph.entries, step.features
            if mode == "offline":
                u_raw, _ = wdgnn_forward(s, x, params, wide_stack=stack)
                loss, dis = np.nan, 0.0
            elif mode == "centralized-online":
                v = state.velocities
                params, loss, u_raw = centralized_online_step(
                    params, s, x, lambda o: _lookahead_loss(v, o, config), gamma, stack
                )
                dis = 0.0
            else:
                adj = step.graph.entries != 0
                dis = consensus_disagreement(locals_)
                locals_, values, outs = distributed_online_step(
                    locals_,
                    metropolis_weights(step.graph),
                    step.graph,
                    x,
                    _local_lookahead(state.velocities, adj, config),
                    gamma,
                    policy,
                    stack,
                )
                idx = np.arange(config.n_agents)
                u_raw = outs[idx, idx]
                loss = float(values.sum())
            u = np.clip(u_raw, -config.max_accel, config.max_accel)
            if mode != "offline":
                trace.records.append(
                    OnlineRecord(t, float(loss), per_step_variation(state.velocities), dis,
                                 None, float(gamma))
                )
        else:
            u = np.asarray(policy(state), dtype=float)
        try:
            state = step_dynamics(state, u, config.sample_time)
        except FlockingError as exc:
            raise FlockingError(f"rollout blew up at step {t}: {exc}") from exc
        actions.append(u)
        states.append(state)
        if on_step is not None:
            on_step(t, state, u)
    actions.append(np.zeros_like(actions[-1]))
    total, final = velocity_variation(states[1:])
    final_params = locals_ if mode == "distributed-online" else (params if network else None)
    return FlockingResult(states, actions, total, final, trace, final_params)


def gen_flocking_dataset(
    config: SwarmConfig,
    n_trajectories: int,
    seed=None,
    k_order: int = 3,
    record_every: int = 1,
) -> Dataset:
    """Expert rollouts recorded as ``(features, graph, delayed stack, action)``.

    Every ``record_every``-th step is kept. Graph stacks are stored in
    float32 to bound memory; shifted stacks are computed in float64 first.
    """
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    rng = np.random.default_rng(seed)
    expert = ExpertPolicy(config)
    signals, graphs, stacks, targets = [], [], [], []
    for _ in range(n_trajectories):
        state = initial_state(config, rng)
        history = _History(k_order)
        for t in range(config.steps):
            step = _observe(state, config)
            history.push(step)
            u = expert(state)
            if t % record_every == 0:
                signals.append(step.features)
                graphs.append(step.graph.entries.astype(np.float32))
                stacks.append(history.stack())
                targets.append(u)
            state = step_dynamics(state, u, config.sample_time)
    return Dataset(
        np.array(signals), np.array(targets), np.array(graphs), np.array(stacks)
    )


def flocking_task() -> Regression:
    return Regression()
