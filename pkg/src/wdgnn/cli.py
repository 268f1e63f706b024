"""Command-line experiment runner.

Usage::

    wdgnn SUBCOMMAND [--config PATH] [--seed N] [--out DIR]

Each run writes into ``OUT/SUBCOMMAND-HASH`` where ``HASH`` digests the
config (without seeds): per-seed CSVs and manifests named by hash and seed,
plus a merged metrics CSV. The default output root is ``$WDGNN_OUT`` or
``./wdgnn-runs``.

Exit codes: 0 success, 1 usage, 2 invalid configuration or data,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analysis import stability_trial, weight_product_deviation, write_rows_csv
from .architecture import WdGnnParams
from .config import ConfigError, ExperimentConfig, config_hash, parse_config, preset, serialize
from .graph import metropolis_weights
from .scenarios.movielens import RatingsError
from .training import write_history_csv

logger = logging.getLogger("wdgnn")

ENV_OUT = "WDGNN_OUT"
DEFAULT_OUT = "wdgnn-runs"
EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

SUBCOMMANDS = {
    "sourceloc": "sourceloc",
    "flocking": "flocking",
    "movielens": "movielens",
    "stability-sweep": "sourceloc",
    "convergence-sweep": "sourceloc",
    "bounds": "synthetic",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="wdgnn",
        description="Wide and deep graph neural network experiments.",
    )
    parser.add_argument("subcommand", choices=sorted(SUBCOMMANDS), metavar="SUBCOMMAND",
                        help="one of: " + ", ".join(SUBCOMMANDS))
    parser.add_argument("--config", type=Path, help="experiment config file")
    parser.add_argument("--seed", type=int, help="run only this seed")
    parser.add_argument("--out", type=Path, help=f"output root (default ${ENV_OUT} or ./{DEFAULT_OUT})")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


class RunContext:
    """Names files by config hash and seed inside one run directory."""

    def __init__(self, subcommand: str, config: ExperimentConfig, root: Path):
        self.subcommand = subcommand
        self.config = config
        self.hash = config_hash(config)
        self.dir = root / f"{subcommand}-{self.hash}"

    def path(self, name: str, seed: int | None = None, ext: str = "csv") -> Path:
        tag = f"{self.hash}" if seed is None else f"{self.hash}_seed{seed}"
        return self.dir / f"{name}_{tag}.{ext}"


def model_template(config: ExperimentConfig, f_in: int, n_outputs: int, seed: int, kind=None):
    a = config.architecture
    return WdGnnParams.initialize(
        f_in,
        a.features,
        n_outputs,
        wide_k=a.wide_k,
        deep_features=a.deep_features,
        deep_k=a.deep_k,
        nonlinearity=a.nonlinearity,
        kind=kind or a.kind,
        deep_bias=a.deep_bias,
        seed=seed,
    )


def _need_wide(config: ExperimentConfig) -> None:
    if config.online.modes and config.architecture.kind == "gnn":
        raise ConfigError("online learning retrains the wide part; architecture.kind = gnn has none")


# ---------------------------------------------------------------------------
# subcommands: each returns metric rows for one seed
# ---------------------------------------------------------------------------


def _sourceloc_setup(config: ExperimentConfig, seed: int):
    from .scenarios.sourceloc import prepare_sourceloc

    d = config.data
    template = model_template(config, 1, d.communities, seed)
    return prepare_sourceloc(
        template,
        config.train_config(seed),
        sizes=d.sizes,
        n_online=config.online.steps,
        scenario_kwargs=dict(n=d.n_nodes, communities=d.communities, noise_std=d.noise_std),
        seed=seed,
    )


def cmd_sourceloc(ctx: RunContext, seed: int) -> list[list]:
    from .scenarios.sourceloc import adapt_online, online_accuracy
    from .training import evaluate

    config = ctx.config
    _need_wide(config)
    setup = _sourceloc_setup(config, seed)
    task = setup.scenario.task()
    write_history_csv(setup.history, ctx.path("history", seed))
    rows = [[seed, "clean", "accuracy", evaluate(setup.params, setup.test, task)[1]]]
    s_hat = setup.perturbed(config.perturbation.p)
    rows.append([seed, "perturbed", "accuracy",
                 online_accuracy(setup.params, None, setup.scenario, s_hat, setup.test)])
    acc, traces, gammas = adapt_online(setup, s_hat, config.online.modes, config.online.gamma)
    for mode in config.online.modes:
        rows.append([seed, mode, "accuracy", acc[mode]])
        rows.append([seed, mode, "gamma", gammas[mode]])
        traces[mode].to_csv(ctx.path(f"trace_{mode}", seed))
    return rows


def cmd_stability_sweep(ctx: RunContext, seed: int) -> list[list]:
    from .scenarios.sourceloc import adapt_online, online_accuracy

    config = ctx.config
    _need_wide(config)
    setup = _sourceloc_setup(config, seed)
    rows = []
    for p in config.perturbation.sweep:
        s_hat = setup.perturbed(p)
        rows.append([seed, f"offline@p={p}", "accuracy",
                     online_accuracy(setup.params, None, setup.scenario, s_hat, setup.test)])
        acc, _, _ = adapt_online(setup, s_hat, config.online.modes, config.online.gamma)
        for mode in config.online.modes:
            rows.append([seed, f"{mode}@p={p}", "accuracy", acc[mode]])
    return rows


def cmd_convergence_sweep(ctx: RunContext, seed: int) -> list[list]:
    from .scenarios.sourceloc import accuracy_vs_steps, online_step_size

    config = ctx.config
    _need_wide(config)
    if not config.online.modes:
        raise ConfigError("convergence-sweep needs at least one online mode")
    setup = _sourceloc_setup(config, seed)
    s_hat = setup.perturbed(config.perturbation.p)
    checkpoints = [c for c in config.sweep.checkpoints if c <= len(setup.online)]
    rows = []
    for mode in config.online.modes:
        gamma = config.online.gamma
        if gamma is None:
            gamma = online_step_size(
                setup.params, setup.scenario, s_hat, setup.train.signals[:200], mode
            )
        for step, acc in accuracy_vs_steps(
            setup.params, setup.scenario, s_hat, setup.online, setup.test, mode, gamma, checkpoints
        ):
            rows.append([seed, f"{mode}@step={step}", "accuracy", acc])
    return rows


def cmd_flocking(ctx: RunContext, seed: int) -> list[list]:
    from .scenarios.flocking import (
        ExpertPolicy,
        SwarmConfig,
        flocking_task,
        gen_flocking_dataset,
        run_flocking,
    )
    from .training import train_offline

    config = ctx.config
    _need_wide(config)
    d = config.data
    swarm = SwarmConfig(n_agents=d.n_agents, duration=d.duration)
    seeds = np.random.default_rng(seed).integers(0, 2**32, size=4)
    k = config.architecture.wide_k
    train = gen_flocking_dataset(swarm, d.sizes[0], seed=seeds[0], k_order=k, record_every=d.record_every)
    valid = gen_flocking_dataset(swarm, d.sizes[1], seed=seeds[1], k_order=k, record_every=d.record_every)
    kinds = [config.architecture.kind]
    if "filter" not in kinds:
        kinds.append("filter")  # linear baseline
    models = {}
    for kind in kinds:
        template = model_template(config, 6, 2, int(seeds[2]), kind=kind)
        models[kind], history = train_offline(
            train, template, config.train_config(seed), flocking_task(), validation=valid
        )
        write_history_csv(history, ctx.path(f"history_{kind}", seed))
    del train, valid
    test_rng = np.random.default_rng(seeds[3])
    test_seeds = test_rng.integers(0, 2**32, size=d.sizes[2])
    policies: list[tuple[str, Callable]] = [("expert", lambda s: run_flocking(ExpertPolicy(swarm), swarm, seed=s))]
    for kind in kinds:
        policies.append((kind, lambda s, m=models[kind]: run_flocking(m, swarm, seed=s)))
    main = models[config.architecture.kind]
    for mode in config.online.modes:
        gamma = config.online.gamma
        if gamma is None:
            raise ConfigError("flocking needs a numeric online.gamma")
        policies.append((f"{mode}-online", lambda s, g=gamma, md=f"{mode}-online":
                         run_flocking(main, swarm, mode=md, gamma=g, seed=s)))
    rows = []
    for name, rollout in policies:
        totals, finals = [], []
        for i, s in enumerate(test_seeds):
            result = rollout(int(s))
            totals.append(result.total_variation)
            finals.append(result.final_variation)
            if i == 0:
                result.to_csv(ctx.path(f"trajectory_{name}", seed))
        rows.append([seed, name, "total_variation", float(np.mean(totals))])
        rows.append([seed, name, "final_variation", float(np.mean(finals))])
    return rows


def movielens_path(config: ExperimentConfig) -> Path:
    from .scenarios.movielens import default_path

    path = Path(config.data.path) if config.data.path else default_path()
    if path is None or not path.is_file():
        raise ConfigError(
            "the 100k ratings file was not found; set data.path or $WDGNN_MOVIELENS"
        )
    return path


def cmd_movielens(ctx: RunContext, seed: int) -> list[list]:
    from .scenarios.movielens import (
        build_similarity_graph,
        parse_movielens,
        recommendation_dataset,
        recommendation_task,
        run_recommendation,
        split_users,
    )
    from .training import train_offline

    config = ctx.config
    _need_wide(config)
    d = config.data
    ratings = parse_movielens(movielens_path(config))
    rng = np.random.default_rng(seed)
    target = ratings.column(d.target_movie)
    train_users, test_users = split_users(ratings, target, d.test_fraction, seed=rng.integers(0, 2**32))
    # similarities from training users only
    graph, keep = build_similarity_graph(
        type(ratings)(
            np.where(np.isin(np.arange(ratings.n_users), test_users)[:, None], 0.0, ratings.values),
            ratings.mask & ~np.isin(np.arange(ratings.n_users), test_users)[:, None],
            ratings.movie_ids,
            ratings.titles,
        )
    )
    ratings = ratings.restrict(keep)
    target = ratings.column(d.target_movie)
    transfer = ratings.column(d.transfer_movie)
    train = recommendation_dataset(ratings, graph, target, train_users)
    template = model_template(config, 1, 1, int(rng.integers(0, 2**31)))
    params, history = train_offline(train, template, config.train_config(seed), recommendation_task(target))
    write_history_csv(history, ctx.path("history", seed))
    rows = []
    rmse, _ = run_recommendation(params, ratings, graph, target, "offline", users=test_users)
    rows.append([seed, "offline", "rmse", rmse])
    transfer_users = rng.permutation(np.flatnonzero(ratings.mask[:, transfer]))[: config.online.steps]
    rmse, _ = run_recommendation(params, ratings, graph, transfer, "offline", users=transfer_users)
    rows.append([seed, "transfer-offline", "rmse", rmse])
    for mode in config.online.modes:
        gamma = config.online.gamma if config.online.gamma is not None else config.train.learning_rate
        rmse, trace = run_recommendation(params, ratings, graph, target, "online", gamma, test_users)
        rows.append([seed, mode, "rmse", rmse])
        rmse, trace = run_recommendation(
            params, ratings, graph, transfer, "online", gamma, transfer_users
        )
        rows.append([seed, f"transfer-{mode}", "rmse", rmse])
        trace.to_csv(ctx.path(f"trace_transfer_{mode}", seed))
    return rows


def cmd_bounds(ctx: RunContext, seed: int) -> list[list]:
    from .scenarios.synthetic import (
        default_gamma,
        quadratic_stream,
        random_locals,
        switching_graphs,
        track_centralized,
        track_distributed,
    )

    b = ctx.config.bounds
    rng = np.random.default_rng(seed)
    trial_seeds = rng.integers(0, 2**32, size=b.instances)
    reports = []
    for i, s in enumerate(trial_seeds):
        eps = b.epsilons[i % len(b.epsilons)]
        n = int(np.random.default_rng(s).integers(6, 11))
        reports.append(stability_trial(n, eps, seed=s))
    write_csv(
        ctx.path("stability", seed),
        ["instance", "epsilon", "empirical_diff", "bound", "allowance", "c_l", "c_psi", "n", "x_norm", "dominated"],
        [[i, r.epsilon, r.empirical_diff, r.bound, r.allowance, r.c_l, r.c_psi, r.n, r.x_norm, r.dominated]
         for i, r in enumerate(reports)],
    )
    rows = [[seed, "stability", "dominated_fraction", float(np.mean([r.dominated for r in reports]))]]

    stream = quadratic_stream(steps=b.stream_steps, drift=b.drift, seed=rng.integers(0, 2**32))
    central = track_centralized(stream, default_gamma(stream))
    write_rows_csv(central, ctx.path("centralized", seed))
    rows.append([seed, "centralized", "violations", sum(r.tracking_error > r.bound for r in central)])
    rows.append([seed, "centralized", "final_error", central[-1].tracking_error])

    graphs = switching_graphs(10, 2, seed=rng.integers(0, 2**32))
    stream = quadratic_stream(graphs=graphs, steps=b.stream_steps, drift=b.drift, seed=rng.integers(0, 2**32))
    dist = track_distributed(stream, default_gamma(stream), len(graphs),
                             random_locals(stream, 10, seed=rng.integers(0, 2**32)))
    write_rows_csv(dist, ctx.path("distributed", seed))
    rows.append([seed, "distributed", "violations", sum(r.tracking_error > r.bound for r in dist)])
    rows.append([seed, "distributed", "final_error", dist[-1].tracking_error])
    rows.append([seed, "distributed", "final_disagreement", dist[-1].disagreement])

    lemma_rows = []
    weights = [metropolis_weights(g) for g in graphs]
    for length in (2, 4, 8, 16, 32, 64):
        seq = [weights[t % len(weights)] for t in range(length)]
        dev, bound = weight_product_deviation(seq, c_d=len(weights))
        lemma_rows.append([length, dev, bound])
    write_csv(ctx.path("lemma", seed), ["length", "deviation", "bound"], lemma_rows)
    rows.append([seed, "lemma", "violations", sum(dev > bound for _, dev, bound in lemma_rows)])
    return rows


COMMANDS = {
    "sourceloc": cmd_sourceloc,
    "flocking": cmd_flocking,
    "movielens": cmd_movielens,
    "stability-sweep": cmd_stability_sweep,
    "convergence-sweep": cmd_convergence_sweep,
    "bounds": cmd_bounds,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def load_config(subcommand: str, path: Path | None, seed: int | None) -> ExperimentConfig:
    scenario = SUBCOMMANDS[subcommand]
    config = preset(scenario) if path is None else parse_config(path, scenario)
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be nonnegative")
        config = config.with_seeds((seed,))
    return config


def run(subcommand: str, config: ExperimentConfig, out_root: Path) -> Path:
    """Run every seed, write per-seed files and the merged metrics CSV."""
    if subcommand not in COMMANDS:
        raise UsageError(f"unknown subcommand {subcommand!r}")
    if subcommand == "movielens":
        movielens_path(config)
    ctx = RunContext(subcommand, config, out_root)
    ctx.dir.mkdir(parents=True, exist_ok=True)
    (ctx.dir / f"config_{ctx.hash}.txt").write_text(serialize(config))
    all_rows = []
    for seed in config.experiment.seeds:
        start = time.perf_counter()
        logger.info("%s seed %d", subcommand, seed)
        rows = COMMANDS[subcommand](ctx, seed)
        wall = time.perf_counter() - start
        write_csv(ctx.path("metrics", seed), ["seed", "condition", "metric", "value"], rows)
        manifest = {
            "subcommand": subcommand,
            "seed": seed,
            "config_hash": ctx.hash,
            "wall_time_s": round(wall, 3),
            "version": __version__,
            "files": sorted(p.name for p in ctx.dir.glob(f"*_seed{seed}.csv")),
        }
        ctx.path("manifest", seed, "json").write_text(json.dumps(manifest, indent=2) + "\n")
        all_rows.extend(rows)
    seeds = "-".join(str(s) for s in config.experiment.seeds)
    write_csv(
        ctx.dir / f"metrics_{ctx.hash}_seeds{seeds}.csv",
        ["seed", "condition", "metric", "value"],
        all_rows,
    )
    return ctx.dir


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"wdgnn: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        config = load_config(args.subcommand, args.config, args.seed)
        out_root = args.out or Path(config.experiment.out or os.environ.get(ENV_OUT, DEFAULT_OUT))
        out_dir = run(args.subcommand, config, out_root)
    except (ConfigError, RatingsError) as err:
        print(f"wdgnn: invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # noqa: BLE001 - reported as a runtime failure
        logger.debug("runtime failure", exc_info=True)
        print(f"wdgnn: run failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out_dir)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
