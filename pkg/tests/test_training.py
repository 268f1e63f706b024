import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_graph, random_wdgnn
from wdgnn.architecture import FilterTaps, WdGnnParams
from wdgnn.graph import Gso, normalize_adjacency
from wdgnn.training import (
    AdamState,
    Dataset,
    NodeClassification,
    Regression,
    TrainConfig,
    TrainingError,
    accuracy,
    adam_step,
    batch_loss_and_grads,
    cross_entropy_loss,
    mse_loss,
    predict,
    train_offline,
    write_history_csv,
)


def complete_graph(n, normalize=False):
    g = Gso(np.ones((n, n)) - np.eye(n))
    return normalize_adjacency(g) if normalize else g


class TestCrossEntropy:
    def test_uniform(self):
        loss, _ = cross_entropy_loss(np.zeros((3, 5)), np.array([0, 2, 4]))
        assert loss == pytest.approx(np.log(5), abs=1e-12)

    def test_margin_limit(self):
        losses = [cross_entropy_loss(np.array([[m, 0.0, 0.0]]), np.array([0]))[0] for m in (1, 10, 40)]
        assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-15

    def test_gradient_finite_differences(self, rng):
        logits = rng.normal(size=(4, 3))
        labels = rng.integers(0, 3, size=4)
        _, grad = cross_entropy_loss(logits, labels)
        fd = np.zeros_like(logits)
        h = 1e-6
        for idx in np.ndindex(logits.shape):
            plus, minus = logits.copy(), logits.copy()
            plus[idx] += h
            minus[idx] -= h
            fd[idx] = (cross_entropy_loss(plus, labels)[0] - cross_entropy_loss(minus, labels)[0]) / (2 * h)
        assert np.linalg.norm(fd - grad) / np.linalg.norm(grad) < 1e-6

    def test_large_logits_stable(self):
        loss, grad = cross_entropy_loss(np.array([[1e4, 0.0]]), np.array([1]))
        assert loss == pytest.approx(1e4) and np.all(np.isfinite(grad))

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(ValueError):
            cross_entropy_loss(np.zeros((2, 3)), np.array([0, -1]))


class TestMse:
    def test_equal(self):
        assert mse_loss(np.ones((2, 3)), np.ones((2, 3)))[0] == 0

    def test_unit_difference(self):
        loss, grad = mse_loss(np.ones((2, 3)), np.zeros((2, 3)))
        assert loss == 1
        np.testing.assert_allclose(grad, 2 / 6)

    def test_single_entry_mask(self):
        mask = np.zeros((2, 2))
        mask[1, 0] = 1
        loss, grad = mse_loss(np.array([[5.0, 5], [3, 5]]), np.zeros((2, 2)), mask)
        assert loss == 9
        assert grad[1, 0] == 6 and np.count_nonzero(grad) == 1

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros(3), np.zeros(4))


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        new, state = adam_step(AdamState(0.1), p, {"w": np.zeros(2)})
        np.testing.assert_array_equal(new["w"], p["w"])
        assert state.step == 1

    def test_first_step_sign(self):
        g = np.array([3.0, -0.01, 1e-3])
        new, _ = adam_step(AdamState(0.01), {"w": np.zeros(3)}, {"w": g})
        np.testing.assert_allclose(new["w"], -0.01 * np.sign(g), rtol=1e-4)

    def test_scalar_oracle(self):
        lr, b1, b2, eps, g, p = 0.05, 0.9, 0.999, 1e-8, 0.7, 1.5
        m = v = 0.0
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        params, state = {"w": np.array(1.5)}, AdamState(lr, b1, b2, eps)
        for _ in range(2):
            params, state = adam_step(state, params, {"w": np.array(g)})
        assert abs(float(params["w"]) - p) < 1e-12

    def test_untouched_keys(self):
        new, _ = adam_step(AdamState(0.1), {"a": np.ones(2), "b": np.ones(2)}, {"a": np.ones(2)})
        np.testing.assert_array_equal(new["b"], 1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})

    @given(st.floats(-10, 10), st.floats(1e-4, 1))
    def test_deterministic(self, g, lr):
        a = adam_step(AdamState(lr), {"w": np.ones(1)}, {"w": np.array([g])})[0]
        b = adam_step(AdamState(lr), {"w": np.ones(1)}, {"w": np.array([g])})[0]
        assert a["w"][0] == b["w"][0]


def separable_dataset(n_samples=60, seed=0):
    """Two classes on K3 told apart by the sign of the mean signal."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n_samples)
    signs = np.where(labels == 1, 1.0, -1.0)
    x = signs[:, None, None] * (1.0 + rng.random((n_samples, 3, 1)))
    return Dataset(x, labels, complete_graph(3, normalize=True))


class TestTrainOffline:
    def test_separable_reaches_full_accuracy(self):
        data = separable_dataset()
        template = WdGnnParams.initialize(1, 4, 2, wide_k=1, deep_features=(), kind="filter", seed=3)
        config = TrainConfig(epochs=200, batch_size=10, learning_rate=1e-2, validation_fraction=0.0)
        task = NodeClassification((0, 1, 2))
        params, history = train_offline(data, template, config, task)
        assert len(history) == 200
        assert accuracy(predict(params, data)[:, [0, 1, 2]], np.repeat(data.targets[:, None], 3, 1)) == 1.0

    def test_zero_learning_rate(self):
        data = separable_dataset()
        template = WdGnnParams.initialize(1, 4, 2, wide_k=1, deep_features=(3,), seed=1)
        params, _ = train_offline(data, template, TrainConfig(epochs=3, batch_size=10, learning_rate=0.0), NodeClassification((0,)))
        for key, value in template.arrays().items():
            np.testing.assert_array_equal(params.arrays()[key], value)

    def test_same_seed_identical(self):
        data = separable_dataset()
        template = WdGnnParams.initialize(1, 4, 2, wide_k=2, deep_features=(3,), seed=1)
        cfg = TrainConfig(epochs=5, batch_size=8, seed=42)
        runs = [train_offline(data, template, cfg, NodeClassification((0,))) for _ in range(2)]
        assert runs[0][1] == runs[1][1]
        for key, value in runs[0][0].arrays().items():
            np.testing.assert_array_equal(runs[1][0].arrays()[key], value)

    def test_joint_update(self, rng):
        params = random_wdgnn(rng)
        g = random_graph(5, rng)
        x = rng.normal(size=(4, 5, 2))
        y = rng.normal(size=(4, 5, 2))
        _, grads, _ = batch_loss_and_grads(params, Regression(), g, x, y)
        new, _ = adam_step(AdamState(1e-3), params.arrays(), grads)
        changed = params.with_arrays(new)
        assert np.linalg.norm(changed.wide.taps - params.wide.taps) > 0
        assert all(np.linalg.norm(a.taps - b.taps) > 0 for a, b in zip(changed.deep.layers, params.deep.layers))
        assert changed.alpha_w != params.alpha_w and changed.alpha_d != params.alpha_d

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self):
        data = Dataset(np.full((4, 3, 1), 1e200), np.ones((4, 3, 1)), complete_graph(3))
        template = WdGnnParams.initialize(1, 2, 1, wide_k=1, kind="filter", seed=0)
        with pytest.raises(TrainingError, match="non-finite"):
            train_offline(data, template, TrainConfig(epochs=2, batch_size=2, validation_fraction=0), Regression())

    def test_batch_too_large(self):
        template = WdGnnParams.initialize(1, 2, 2, kind="filter", seed=0)
        with pytest.raises(TrainingError):
            train_offline(separable_dataset(10), template, TrainConfig(batch_size=50), NodeClassification((0,)))

    def test_best_validation_returned(self):
        data = separable_dataset()
        template = WdGnnParams.initialize(1, 4, 2, wide_k=1, kind="filter", seed=3)
        seen = []
        params, history = train_offline(
            data, template, TrainConfig(epochs=10, batch_size=10, learning_rate=0.5),
            NodeClassification((0,)), on_epoch=seen.append,
        )
        assert seen == history
        best = min(history, key=lambda r: r.val_loss)
        assert best.val_loss == min(r.val_loss for r in history)


class TestConfigValidation:
    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1}, {"validation_fraction": 1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestDataset:
    def test_mismatches(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 3)), np.zeros(2), complete_graph(3))
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 3, 1)), np.zeros(3), complete_graph(3))
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 4, 1)), np.zeros(2), complete_graph(3))

    def test_split_partitions(self):
        data = separable_dataset(50)
        parts = data.split([0.6, 0.2, 0.2], seed=0)
        assert [len(p) for p in parts] == [30, 10, 10]
        values = np.sort(np.concatenate([p.signals.ravel() for p in parts]))
        np.testing.assert_array_equal(values, np.sort(data.signals.ravel()))

    def test_per_sample_graphs(self, rng):
        graphs = np.stack([random_graph(4, rng).entries for _ in range(3)])
        data = Dataset(rng.normal(size=(3, 4, 1)), np.zeros(3), graphs)
        assert not data.shared_graph and data.subset([0, 2]).graph_entries.shape == (2, 4, 4)


def test_local_loss_only_own_row():
    task = Regression()
    outs = np.zeros((3, 3, 1))
    outs[0, 1] = 100.0
    values, grads = task.local_loss(outs, np.zeros((3, 1)))
    np.testing.assert_array_equal(values, 0)
    assert not np.any(grads)


def test_history_csv(tmp_path):
    data = separable_dataset()
    template = WdGnnParams.initialize(1, 2, 2, wide_k=1, kind="filter", seed=0)
    _, history = train_offline(data, template, TrainConfig(epochs=2, batch_size=10), NodeClassification((0,)))
    write_history_csv(history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_metric" and len(lines) == 3
