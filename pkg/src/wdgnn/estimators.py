"""scikit-learn style wrappers around offline training and online updates.

Samples are graph signals ``X`` of shape ``(n_samples, N)`` or
``(n_samples, N, F)`` on a fixed graph passed at construction. ``fit``
runs the offline phase; ``partial_fit`` runs online steps that only update
the wide taps, so it requires a fitted WD-GNN or graph filter.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted, check_random_state

from .architecture import WdGnnParams
from .graph import Gso
from .online import centralized_online_step
from .training import Dataset, NodeClassification, Regression, TrainConfig, predict, train_offline


def _as_gso(graph) -> Gso:
    if isinstance(graph, Gso):
        return graph
    return Gso(np.asarray(graph, dtype=float))


class _WideDeepBase(BaseEstimator):
    def __init__(
        self,
        graph=None,
        *,
        kind="wdgnn",
        features=32,
        wide_k=3,
        deep_features=(),
        deep_k=3,
        nonlinearity="relu",
        deep_bias=False,
        readout_nodes=None,
        epochs=30,
        batch_size=20,
        learning_rate=5e-3,
        online_gamma=5e-3,
        random_state=None,
    ):
        self.graph = graph
        self.kind = kind
        self.features = features
        self.wide_k = wide_k
        self.deep_features = deep_features
        self.deep_k = deep_k
        self.nonlinearity = nonlinearity
        self.deep_bias = deep_bias
        self.readout_nodes = readout_nodes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.online_gamma = online_gamma
        self.random_state = random_state

    # -- validation ----------------------------------------------------------

    def _check_graph(self) -> Gso:
        if self.graph is None:
            raise ValueError("a graph shift operator is required")
        return _as_gso(self.graph)

    def _check_x(self, x, reset: bool) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3:
            raise ValueError("X must be (n_samples, n_nodes) or (n_samples, n_nodes, n_features)")
        if len(x) == 0:
            raise ValueError("X holds no samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("X contains NaN or infinity")
        n = self._check_graph().n
        if x.shape[1] != n:
            raise ValueError(f"X has {x.shape[1]} nodes but the graph has {n}")
        if reset:
            self.n_features_in_ = x.shape[2]
        elif x.shape[2] != self.n_features_in_:
            raise ValueError(
                f"X has {x.shape[2]} features per node, expected {self.n_features_in_}"
            )
        return x

    def _nodes(self) -> tuple[int, ...]:
        n = self._check_graph().n
        nodes = tuple(range(n)) if self.readout_nodes is None else tuple(int(i) for i in self.readout_nodes)
        if not nodes or any(not 0 <= i < n for i in nodes):
            raise ValueError("readout_nodes must be nonempty node indices")
        return nodes

    def _train_config(self, seed) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=seed,
        )

    def _fit_params(self, x, targets, n_outputs, task):
        rng = check_random_state(self.random_state)
        seed = int(rng.randint(0, 2**31 - 1))
        template = WdGnnParams.initialize(
            self.n_features_in_,
            self.features,
            n_outputs,
            wide_k=self.wide_k,
            deep_features=tuple(self.deep_features),
            deep_k=self.deep_k,
            nonlinearity=self.nonlinearity,
            kind=self.kind,
            deep_bias=self.deep_bias,
            seed=seed,
        )
        data = Dataset(x, targets, self._check_graph())
        self.params_, self.history_ = train_offline(data, template, self._train_config(seed), task)
        return self

    def _online(self, x, targets, task):
        check_is_fitted(self, "params_")
        if self.params_.wide is None:
            raise ValueError("partial_fit updates the wide part; kind='gnn' has none")
        if not self.online_gamma > 0:
            raise ValueError("online_gamma must be > 0")
        s = self._check_graph()
        params = self.params_
        for xi, yi in zip(x, targets):
            params, _, _ = centralized_online_step(
                params, s, xi, lambda o, yi=yi: task.loss(o, yi), self.online_gamma
            )
        self.params_ = params
        return self

    def _raw_outputs(self, x) -> np.ndarray:
        check_is_fitted(self, "params_")
        x = self._check_x(x, reset=False)
        out = predict(self.params_, Dataset(x, np.zeros(len(x)), self._check_graph()))
        return out[:, list(self._nodes()), :]


class WideDeepGNNClassifier(ClassifierMixin, _WideDeepBase):
    """Graph-signal classifier; each read node scores the classes.

    ``y`` has one label per sample, shared by the readout nodes. Class
    probabilities are the softmax scores averaged over those nodes.
    """

    def _task(self) -> NodeClassification:
        return NodeClassification(self._nodes())

    def _encode(self, y) -> np.ndarray:
        y = np.asarray(y)
        if y.ndim != 1:
            raise ValueError("y must be one label per sample")
        lookup = {c: i for i, c in enumerate(self.classes_)}
        try:
            return np.array([lookup[v] for v in y], dtype=int)
        except KeyError as err:
            raise ValueError(f"label {err.args[0]!r} was not seen in fit") from None

    def fit(self, X, y):
        x = self._check_x(X, reset=True)
        y = np.asarray(y)
        if len(y) != len(x):
            raise ValueError("X and y differ in length")
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        return self._fit_params(x, self._encode(y), len(self.classes_), self._task())

    def partial_fit(self, X, y):
        check_is_fitted(self, "params_")
        x = self._check_x(X, reset=False)
        return self._online(x, self._encode(y), self._task())

    def predict_proba(self, X) -> np.ndarray:
        logits = self._raw_outputs(X)
        z = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return (z / z.sum(axis=-1, keepdims=True)).mean(axis=1)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "classes_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class WideDeepGNNRegressor(RegressorMixin, _WideDeepBase):
    """Graph-signal regressor predicting one value per readout node.

    ``y`` is ``(n_samples,)`` with one readout node, or
    ``(n_samples, n_readout_nodes)``.
    """

    def _task(self) -> Regression:
        return Regression(self._nodes())

    def _targets(self, y, n) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        k = len(self._nodes())
        if y.ndim == 1 and k == 1:
            y = y[:, None]
        if y.shape != (n, k):
            raise ValueError(f"y must have shape ({n}, {k})")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains NaN or infinity")
        return y[:, :, None]

    def fit(self, X, y):
        x = self._check_x(X, reset=True)
        return self._fit_params(x, self._targets(y, len(x)), 1, self._task())

    def partial_fit(self, X, y):
        check_is_fitted(self, "params_")
        x = self._check_x(X, reset=False)
        return self._online(x, self._targets(y, len(x)), self._task())

    def predict(self, X) -> np.ndarray:
        out = self._raw_outputs(X)[..., 0]
        return out[:, 0] if out.shape[1] == 1 else out
