"""Experiment configuration: ``key = value`` text with ``[section]`` headers.

Keys may also be written dotted (``online.gamma = 0.1``) outside any
section. Comments start with ``#``. Lists are comma separated. ``auto``
for ``online.gamma`` selects the scenario's step-size rule.

Every scenario has a preset holding the documented hyperparameters; file
entries override it. Unknown sections or keys, malformed values and
inconsistent settings raise :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field, fields, replace
from os import PathLike
from pathlib import Path

from .architecture import NONLINEARITIES
from .training import TrainConfig

SCENARIOS = ("sourceloc", "flocking", "movielens", "synthetic")
ONLINE_MODES = ("centralized", "distributed")
KINDS = ("wdgnn", "filter", "gnn")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSection:
    scenario: str = "sourceloc"
    seeds: tuple[int, ...] = (0,)
    out: str = ""


@dataclass(frozen=True)
class ArchitectureSection:
    kind: str = "wdgnn"
    features: int = 32
    wide_k: int = 5
    deep_features: tuple[int, ...] = (32,)
    deep_k: int = 5
    nonlinearity: str = "relu"
    deep_bias: bool = True


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 100
    batch_size: int = 50
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass(frozen=True)
class OnlineSection:
    modes: tuple[str, ...] = ONLINE_MODES
    gamma: float | None = None
    steps: int = 1000


@dataclass(frozen=True)
class PerturbationSection:
    p: float = 0.3
    sweep: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class DataSection:
    sizes: tuple[int, ...] = (10_000, 2_500, 1_000)
    noise_std: float = 1e-3
    n_nodes: int = 50
    communities: int = 5
    n_agents: int = 50
    duration: float = 2.0
    record_every: int = 1
    path: str = ""
    target_movie: int = 50
    transfer_movie: int = 258
    test_fraction: float = 0.1


@dataclass(frozen=True)
class SweepSection:
    checkpoints: tuple[int, ...] = (0, 100, 200, 400, 600, 800, 1000)


@dataclass(frozen=True)
class BoundsSection:
    instances: int = 200
    epsilons: tuple[float, ...] = (0.005, 0.01, 0.02, 0.03, 0.05)
    stream_steps: int = 300
    drift: float = 1e-3


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    architecture: ArchitectureSection = field(default_factory=ArchitectureSection)
    train: TrainSection = field(default_factory=TrainSection)
    online: OnlineSection = field(default_factory=OnlineSection)
    perturbation: PerturbationSection = field(default_factory=PerturbationSection)
    data: DataSection = field(default_factory=DataSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)

    def train_config(self, seed: int) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=t.epochs,
            batch_size=t.batch_size,
            learning_rate=t.learning_rate,
            beta1=t.beta1,
            beta2=t.beta2,
            seed=seed,
        )

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, experiment=replace(self.experiment, seeds=tuple(seeds)))


def preset(scenario: str) -> ExperimentConfig:
    """Documented defaults for each scenario."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    base = ExperimentConfig(experiment=ExperimentSection(scenario=scenario))
    if scenario == "flocking":
        return replace(
            base,
            architecture=ArchitectureSection(
                features=32, wide_k=3, deep_features=(), deep_k=3,
                nonlinearity="tanh", deep_bias=False,
            ),
            train=TrainSection(epochs=30, batch_size=20, learning_rate=5e-4),
            online=OnlineSection(gamma=FLOCKING_GAMMA, steps=0),
            data=replace(base.data, sizes=(400, 40, 40), record_every=2),
        )
    if scenario == "movielens":
        return replace(
            base,
            architecture=ArchitectureSection(
                features=64, wide_k=5, deep_features=(), deep_k=5,
                nonlinearity="relu", deep_bias=False,
            ),
            train=TrainSection(epochs=30, batch_size=5, learning_rate=5e-3),
            online=OnlineSection(modes=("centralized",), gamma=5e-3, steps=400),
        )
    return base


# chosen by a validation sweep over rollouts disjoint from the test seeds
FLOCKING_GAMMA = 0.1


def _is_tuple(tp) -> bool:
    return typing.get_origin(tp) is tuple


def _is_optional(tp) -> bool:
    return typing.get_origin(tp) in (typing.Union, types.UnionType) and type(None) in typing.get_args(tp)


def _convert(raw: str, tp, where: str):
    raw = raw.strip()
    try:
        if _is_optional(tp):
            if raw.lower() in ("auto", "none", ""):
                return None
            (inner,) = [a for a in typing.get_args(tp) if a is not type(None)]
            return _convert(raw, inner, where)
        if _is_tuple(tp):
            inner = typing.get_args(tp)[0]
            items = [p for p in (s.strip() for s in raw.split(",")) if p]
            return tuple(_convert(p, inner, where) for p in items)
        if tp is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
    except ValueError:
        pass
    raise ConfigError(f"{where}: cannot read {raw!r} as {getattr(tp, '__name__', tp)}")


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _read_entries(text: str) -> dict[str, tuple[int, str]]:
    """Map ``section.key`` to ``(line number, raw value)``."""
    entries: dict[str, tuple[int, str]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                raise ConfigError(f"line {lineno}: malformed section header")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if "." not in key:
            if section is None:
                raise ConfigError(f"line {lineno}: key {key!r} outside any section")
            key = f"{section}.{key}"
        elif section is not None:
            raise ConfigError(f"line {lineno}: dotted key {key!r} inside [{section}]")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = (lineno, value)
    return entries


def parse_config_text(text: str, scenario: str | None = None) -> ExperimentConfig:
    """Parse config text on top of the scenario preset.

    ``scenario`` is the default when the text does not set
    ``experiment.scenario``; a conflicting value is an error.
    """
    entries = _read_entries(text)
    sections = {f.name: f for f in fields(ExperimentConfig)}
    for key, (lineno, _) in entries.items():
        sec, name = key.split(".", 1)
        if sec not in sections:
            raise ConfigError(f"line {lineno}: unknown section {sec!r}")
        known = {f.name for f in fields(_section_type(sec))}
        if name not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    chosen = scenario
    if "experiment.scenario" in entries:
        lineno, raw = entries["experiment.scenario"]
        named = raw.strip()
        if scenario is not None and named != scenario:
            raise ConfigError(
                f"line {lineno}: config is for {named!r} but {scenario!r} was requested"
            )
        chosen = named
    config = preset(chosen or "sourceloc")
    updates = {}
    for f in fields(ExperimentConfig):
        current = getattr(config, f.name)
        hints = typing.get_type_hints(type(current))
        changes = {}
        for key, (lineno, raw) in entries.items():
            sec, name = key.split(".", 1)
            if sec == f.name:
                changes[name] = _convert(raw, hints[name], f"line {lineno} ({key})")
        updates[f.name] = replace(current, **changes)
    config = replace(config, **updates)
    validate(config)
    return config


def _section_type(name: str):
    return typing.get_type_hints(ExperimentConfig)[name]


def parse_config(path: str | PathLike, scenario: str | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), scenario)


def serialize(config: ExperimentConfig) -> str:
    """Canonical text form; parsing it gives back an equal config."""
    lines = []
    for f in fields(ExperimentConfig):
        section = getattr(config, f.name)
        lines.append(f"[{f.name}]")
        for sf in fields(section):
            lines.append(f"{sf.name} = {_format(getattr(section, sf.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(config: ExperimentConfig) -> str:
    """Short digest of the canonical form, ignoring seeds and output dir."""
    neutral = replace(config, experiment=replace(config.experiment, seeds=(0,), out=""))
    return hashlib.sha256(serialize(neutral).encode()).hexdigest()[:12]


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(config: ExperimentConfig) -> None:
    """Raise :class:`ConfigError` for any out-of-range or inconsistent field."""
    e, a, t, o = config.experiment, config.architecture, config.train, config.online
    p, d, s, b = config.perturbation, config.data, config.sweep, config.bounds
    _check(e.scenario in SCENARIOS, f"experiment.scenario must be one of {SCENARIOS}")
    _check(len(e.seeds) > 0, "experiment.seeds must list at least one seed")
    _check(all(x >= 0 for x in e.seeds), "experiment.seeds must be nonnegative")
    _check(len(set(e.seeds)) == len(e.seeds), "experiment.seeds must be distinct")
    _check(a.kind in KINDS, f"architecture.kind must be one of {KINDS}")
    _check(a.nonlinearity in NONLINEARITIES, f"architecture.nonlinearity must be one of {tuple(NONLINEARITIES)}")
    _check(a.features >= 1, "architecture.features must be >= 1")
    _check(a.wide_k >= 0 and a.deep_k >= 0, "filter orders must be >= 0")
    _check(all(f >= 1 for f in a.deep_features), "architecture.deep_features must be >= 1")
    _check(t.epochs >= 1, "train.epochs must be >= 1")
    _check(t.batch_size >= 1, "train.batch_size must be >= 1")
    _check(t.learning_rate > 0, "train.learning_rate must be > 0")
    _check(0 <= t.beta1 < 1 and 0 <= t.beta2 < 1, "train.beta1 and train.beta2 must lie in [0, 1)")
    _check(all(m in ONLINE_MODES for m in o.modes), f"online.modes must be drawn from {ONLINE_MODES}")
    _check(len(set(o.modes)) == len(o.modes), "online.modes must be distinct")
    _check(o.gamma is None or o.gamma > 0, "online.gamma must be > 0 (or auto)")
    _check(o.steps >= 0, "online.steps must be >= 0")
    _check(0 <= p.p <= 1, "perturbation.p must lie in [0, 1]")
    _check(all(0 <= x <= 1 for x in p.sweep), "perturbation.sweep values must lie in [0, 1]")
    _check(len(d.sizes) == 3 and all(x >= 1 for x in d.sizes), "data.sizes needs three positive counts")
    _check(d.noise_std >= 0, "data.noise_std must be >= 0")
    _check(d.n_nodes >= 2 * d.communities and d.communities >= 1, "data.n_nodes must allow two nodes per community")
    _check(d.n_agents >= 2, "data.n_agents must be >= 2")
    _check(d.duration > 0, "data.duration must be > 0")
    _check(d.record_every >= 1, "data.record_every must be >= 1")
    _check(0 < d.test_fraction < 1, "data.test_fraction must lie in (0, 1)")
    _check(all(c >= 0 for c in s.checkpoints), "sweep.checkpoints must be >= 0")
    _check(b.instances >= 1 and b.stream_steps >= 2, "bounds.instances >= 1 and bounds.stream_steps >= 2 required")
    _check(all(0 < x < 1 for x in b.epsilons), "bounds.epsilons must lie in (0, 1)")
    _check(b.drift >= 0, "bounds.drift must be >= 0")
    if e.scenario == "movielens":
        _check(
            "distributed" not in o.modes,
            "distributed online learning is not available for movielens; use centralized",
        )
    if e.scenario == "sourceloc" and o.modes:
        _check(o.steps >= 1, "online.steps must be >= 1 when online modes are set")


def as_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)
