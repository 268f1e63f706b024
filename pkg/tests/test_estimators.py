import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from conftest import random_graph
from wdgnn.estimators import WideDeepGNNClassifier, WideDeepGNNRegressor

SMALL = dict(features=4, wide_k=2, deep_features=(3,), deep_k=2, epochs=15, batch_size=10, random_state=0)


@pytest.fixture
def graph():
    return random_graph(6, np.random.default_rng(0))


def sign_problem(n_samples=80, seed=1):
    rng = np.random.default_rng(seed)
    y = rng.choice(["neg", "pos"], size=n_samples)
    x = np.where(y == "pos", 1.0, -1.0)[:, None] * (0.5 + rng.random((n_samples, 6)))
    return x, y


class TestClassifier:
    def test_fit_predict(self, graph):
        x, y = sign_problem()
        clf = WideDeepGNNClassifier(graph.entries, **SMALL, learning_rate=2e-2).fit(x, y)
        assert set(clf.classes_) == {"neg", "pos"}
        assert clf.n_features_in_ == 1
        proba = clf.predict_proba(x)
        assert proba.shape == (80, 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1)
        assert clf.score(x, y) > 0.9
        assert set(clf.predict(x)) <= {"neg", "pos"}

    def test_clone_and_params(self, graph):
        clf = WideDeepGNNClassifier(graph, **SMALL)
        params = clf.get_params()
        assert params["features"] == 4 and params["graph"] is graph
        twin = clone(clf)
        assert twin.get_params()["epochs"] == 15
        clf.set_params(epochs=3)
        assert clf.epochs == 3

    def test_deterministic(self, graph):
        x, y = sign_problem()
        a = WideDeepGNNClassifier(graph, **SMALL).fit(x, y).predict_proba(x)
        b = WideDeepGNNClassifier(graph, **SMALL).fit(x, y).predict_proba(x)
        np.testing.assert_array_equal(a, b)

    def test_partial_fit_only_wide(self, graph):
        x, y = sign_problem()
        clf = WideDeepGNNClassifier(graph, **SMALL).fit(x, y)
        before = clf.params_.arrays()
        clf.partial_fit(x[:5], y[:5])
        after = clf.params_.arrays()
        assert not np.array_equal(before["wide"], after["wide"])
        for key in before:
            if key != "wide":
                np.testing.assert_array_equal(before[key], after[key])

    def test_readout_nodes(self, graph):
        x, y = sign_problem()
        clf = WideDeepGNNClassifier(graph, readout_nodes=[0, 3], **SMALL).fit(x, y)
        assert clf.predict_proba(x[:4]).shape == (4, 2)

    def test_errors(self, graph):
        x, y = sign_problem()
        with pytest.raises(NotFittedError):
            WideDeepGNNClassifier(graph).predict(x)
        with pytest.raises(ValueError, match="graph"):
            WideDeepGNNClassifier().fit(x, y)
        with pytest.raises(ValueError, match="nodes"):
            WideDeepGNNClassifier(graph, **SMALL).fit(x[:, :5], y)
        with pytest.raises(ValueError, match="two classes"):
            WideDeepGNNClassifier(graph, **SMALL).fit(x, np.full(len(x), "pos"))
        with pytest.raises(ValueError, match="NaN"):
            WideDeepGNNClassifier(graph, **SMALL).fit(np.full_like(x, np.nan), y)
        with pytest.raises(ValueError, match="readout_nodes"):
            WideDeepGNNClassifier(graph, readout_nodes=[9], **SMALL).fit(x, y)
        clf = WideDeepGNNClassifier(graph, **SMALL).fit(x, y)
        with pytest.raises(ValueError, match="not seen"):
            clf.partial_fit(x[:2], ["pos", "zero"])
        with pytest.raises(ValueError, match="features"):
            clf.predict(np.ones((2, 6, 3)))

    def test_gnn_has_no_online_phase(self, graph):
        x, y = sign_problem()
        clf = WideDeepGNNClassifier(graph, kind="gnn", **SMALL).fit(x, y)
        with pytest.raises(ValueError, match="wide"):
            clf.partial_fit(x[:2], y[:2])


class TestRegressor:
    def _data(self, graph, seed=2):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(120, 6))
        y = x @ graph.entries[:, 0] + 0.5 * x[:, 0]
        return x, y

    def test_learns_linear_target(self, graph):
        x, y = self._data(graph)
        reg = WideDeepGNNRegressor(graph, readout_nodes=[0], kind="filter", features=2, wide_k=2,
                                   epochs=150, batch_size=10, learning_rate=2e-2, random_state=0)
        assert reg.fit(x, y).score(x, y) > 0.95
        assert reg.predict(x).shape == (120,)

    def test_multi_node_targets(self, graph):
        x, _ = self._data(graph)
        y = np.stack([x[:, 1], -x[:, 2]], axis=1)
        reg = WideDeepGNNRegressor(graph, readout_nodes=[1, 2], **SMALL).fit(x, y)
        assert reg.predict(x).shape == (120, 2)
        with pytest.raises(ValueError, match="shape"):
            reg.partial_fit(x[:3], y[:3, :1])

    def test_partial_fit_reduces_error(self, graph):
        x, y = self._data(graph)
        reg = WideDeepGNNRegressor(graph, readout_nodes=[0], **{**SMALL, "epochs": 2}, online_gamma=1e-2).fit(x, y)
        before = np.mean((reg.predict(x) - y) ** 2)
        for _ in range(3):
            reg.partial_fit(x, y)
        assert np.mean((reg.predict(x) - y) ** 2) < before

    def test_bad_gamma(self, graph):
        x, y = self._data(graph)
        reg = WideDeepGNNRegressor(graph, readout_nodes=[0], **SMALL, online_gamma=0.0).fit(x, y)
        with pytest.raises(ValueError, match="online_gamma"):
            reg.partial_fit(x[:2], y[:2])

    def test_cross_val(self, graph):
        x, y = self._data(graph)
        scores = cross_val_score(WideDeepGNNRegressor(graph, readout_nodes=[0], **SMALL), x, y, cv=3)
        assert scores.shape == (3,) and np.all(np.isfinite(scores))


def test_partial_fit_before_fit(graph):
    x, y = sign_problem()
    with pytest.raises(NotFittedError):
        WideDeepGNNClassifier(graph).partial_fit(x, y)
    with pytest.raises(NotFittedError):
        WideDeepGNNRegressor(graph).partial_fit(x, np.zeros(len(x)))
