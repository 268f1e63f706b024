import csv
import json

import numpy as np
import pytest

from wdgnn.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from wdgnn.scenarios.movielens import synthetic_ratings, write_ratings

TINY_SOURCELOC = """
[architecture]
features = 4
wide_k = 2
deep_features = 4
deep_k = 2
[train]
epochs = 2
batch_size = 10
[online]
steps = 5
[data]
sizes = 40, 10, 10
n_nodes = 20
[perturbation]
sweep = 0.0, 0.3
[sweep]
checkpoints = 0, 5
"""

TINY_FLOCKING = """
[architecture]
features = 4
wide_k = 1
[train]
epochs = 1
batch_size = 5
[data]
sizes = 1, 1, 1
n_agents = 6
duration = 0.1
"""

TINY_BOUNDS = """
[bounds]
instances = 4
stream_steps = 20
"""


def tiny_movielens(tmp_path):
    path = tmp_path / "u.data"
    write_ratings(synthetic_ratings(120, 30, seed=0), path)
    return f"""
[architecture]
features = 4
wide_k = 1
deep_k = 1
[train]
epochs = 1
batch_size = 5
[online]
steps = 20
[data]
path = {path}
target_movie = 1
transfer_movie = 2
test_fraction = 0.2
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path / "out")])


def read_metrics(run_dir):
    (merged,) = run_dir.glob("metrics_*_seeds*.csv")
    with open(merged) as fh:
        return list(csv.DictReader(fh))


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert main(["teleport"]) == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_no_subcommand(self):
        assert main([]) == EXIT_USAGE

    def test_bad_flag(self):
        assert main(["bounds", "--seed", "x"]) == EXIT_USAGE


class TestValidation:
    def test_bad_config(self, tmp_path, capsys):
        cfg = write(tmp_path, "online.gamma = -1")
        assert run(tmp_path, "sourceloc", "--config", cfg) == EXIT_INVALID
        assert "gamma" in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_movielens_distributed(self, tmp_path):
        cfg = write(tmp_path, "online.modes = distributed")
        assert run(tmp_path, "movielens", "--config", cfg) == EXIT_INVALID

    def test_movielens_missing_file(self, tmp_path, monkeypatch):
        monkeypatch.delenv("WDGNN_MOVIELENS", raising=False)
        assert run(tmp_path, "movielens") == EXIT_INVALID
        assert not (tmp_path / "out").exists()

    def test_negative_seed(self, tmp_path):
        assert run(tmp_path, "bounds", "--seed", "-3") == EXIT_INVALID

    def test_gnn_online_rejected(self, tmp_path):
        cfg = write(tmp_path, TINY_SOURCELOC.replace("features = 4\nwide_k", "kind = gnn\nfeatures = 4\nwide_k"))
        assert run(tmp_path, "sourceloc", "--config", cfg) == EXIT_INVALID


def test_runtime_failure(tmp_path):
    # batch larger than the training split fails inside training
    cfg = write(tmp_path, TINY_SOURCELOC.replace("batch_size = 10", "batch_size = 500"))
    assert run(tmp_path, "sourceloc", "--config", cfg) == EXIT_RUNTIME


def test_sourceloc_two_seeds(tmp_path, capsys):
    cfg = write(tmp_path, TINY_SOURCELOC + "[experiment]\nseeds = 0, 1\n")
    assert run(tmp_path, "sourceloc", "--config", cfg) == EXIT_OK
    (run_dir,) = (tmp_path / "out").iterdir()
    assert capsys.readouterr().out.strip() == str(run_dir)
    manifests = sorted(run_dir.glob("manifest_*.json"))
    assert len(manifests) == 2
    info = json.loads(manifests[0].read_text())
    assert info["seed"] == 0 and info["config_hash"] in run_dir.name
    assert all(name.endswith("_seed0.csv") for name in info["files"])
    rows = read_metrics(run_dir)
    by_condition = {}
    for r in rows:
        by_condition.setdefault((r["condition"], r["metric"]), []).append(r["seed"])
    assert by_condition and all(sorted(v) == ["0", "1"] for v in by_condition.values())
    # every per-seed file names the hash and the seed
    for path in run_dir.iterdir():
        assert info["config_hash"] in path.name


def test_seed_flag_overrides(tmp_path):
    cfg = write(tmp_path, TINY_BOUNDS + "[experiment]\nseeds = 0, 1\n")
    assert run(tmp_path, "bounds", "--config", cfg, "--seed", "7") == EXIT_OK
    (run_dir,) = (tmp_path / "out").iterdir()
    assert [p.name.split("_")[-1] for p in run_dir.glob("manifest_*")] == ["seed7.json"]


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("WDGNN_OUT", str(tmp_path / "env"))
    cfg = write(tmp_path, TINY_BOUNDS)
    assert main(["bounds", "--config", cfg]) == EXIT_OK
    assert len(list((tmp_path / "env").iterdir())) == 1


def csv_bytes(run_dir):
    return {p.name: p.read_bytes() for p in sorted(run_dir.glob("*.csv"))}


@pytest.mark.parametrize(
    "subcommand, text",
    [
        ("sourceloc", TINY_SOURCELOC),
        ("stability-sweep", TINY_SOURCELOC),
        ("convergence-sweep", TINY_SOURCELOC),
        ("flocking", TINY_FLOCKING),
        ("bounds", TINY_BOUNDS),
        ("movielens", None),
    ],
)
def test_rerun_byte_identical(tmp_path, subcommand, text):
    text = tiny_movielens(tmp_path) if text is None else text
    cfg = write(tmp_path, text)
    outs = []
    for i in range(2):
        assert main([subcommand, "--config", cfg, "--out", str(tmp_path / f"out{i}")]) == EXIT_OK
        (run_dir,) = (tmp_path / f"out{i}").iterdir()
        outs.append(csv_bytes(run_dir))
    assert outs[0] and outs[0] == outs[1]


def test_seeds_only_change_seeded_outputs(tmp_path):
    cfg_a = write(tmp_path, TINY_BOUNDS + "[experiment]\nseeds = 3\n", "a.cfg")
    cfg_b = write(tmp_path, TINY_BOUNDS + "[experiment]\nseeds = 4\n", "b.cfg")
    assert main(["bounds", "--config", cfg_a, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["bounds", "--config", cfg_b, "--out", str(tmp_path / "b")]) == EXIT_OK
    (a,), (b,) = (tmp_path / "a").iterdir(), (tmp_path / "b").iterdir()
    assert a.name == b.name
    assert {p.name for p in a.glob("config_*")} == {p.name for p in b.glob("config_*")}
    assert all("seed3" in p.name for p in a.glob("*.csv") if "seeds" not in p.name)


def test_flocking_conditions(tmp_path):
    cfg = write(tmp_path, TINY_FLOCKING)
    assert run(tmp_path, "flocking", "--config", cfg) == EXIT_OK
    (run_dir,) = (tmp_path / "out").iterdir()
    conditions = {r["condition"] for r in read_metrics(run_dir)}
    assert conditions == {"expert", "wdgnn", "filter", "centralized-online", "distributed-online"}


def test_movielens_conditions(tmp_path):
    cfg = write(tmp_path, tiny_movielens(tmp_path))
    assert run(tmp_path, "movielens", "--config", cfg) == EXIT_OK
    (run_dir,) = (tmp_path / "out").iterdir()
    rows = read_metrics(run_dir)
    assert {r["condition"] for r in rows} == {"offline", "transfer-offline", "centralized", "transfer-centralized"}
    assert all(np.isfinite(float(r["value"])) for r in rows)


def test_inputs_untouched(tmp_path):
    text = tiny_movielens(tmp_path)
    cfg = write(tmp_path, text)
    data = (tmp_path / "u.data").read_bytes()
    assert run(tmp_path, "movielens", "--config", cfg) == EXIT_OK
    assert (tmp_path / "u.data").read_bytes() == data
    assert (tmp_path / "run.cfg").read_text() == text
