import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_graph, random_wdgnn
from wdgnn.architecture import FilterTaps, WdGnnParams, wdgnn_backward, wdgnn_forward
from wdgnn.graph import ConsensusWeights, Gso, GraphError, metropolis_weights, normalize_adjacency
from wdgnn.online import (
    LocalView,
    NodeParams,
    OnlineError,
    OnlineSample,
    centralized_online_step,
    consensus_disagreement,
    distributed_online_step,
    iterate_stream,
    predict_local,
    run_online,
)
from wdgnn.training import Dataset, Regression, predict


def path_graph(n):
    a = np.zeros((n, n))
    i = np.arange(n - 1)
    a[i, i + 1] = a[i + 1, i] = 1
    return Gso(a)


def zero_gradients(outs):
    return np.zeros(outs.shape[0]), np.zeros_like(outs)


class TestCentralized:
    def test_zero_gamma(self, rng):
        params = random_wdgnn(rng)
        g = random_graph(5, rng)
        x = rng.normal(size=(5, 2))
        new, _, _ = centralized_online_step(params, g, x, lambda o: Regression().loss(o, np.ones_like(o)), 0.0)
        np.testing.assert_array_equal(new.wide.taps, params.wide.taps)

    def test_quadratic_fraction(self, rng):
        # X = I, one tap, identity readout: the output is A itself
        target = rng.normal(size=(1, 3, 2))
        params = WdGnnParams(FilterTaps(rng.normal(size=(1, 3, 2))), None)
        gamma = 0.3
        half_sq = lambda o: (0.5 * np.sum((o - target[0]) ** 2), o - target[0])
        new, _, _ = centralized_online_step(params, random_graph(3, rng), np.eye(3), half_sq, gamma)
        np.testing.assert_allclose(new.wide.taps, params.wide.taps + gamma * (target - params.wide.taps), atol=1e-14)

    def test_gradient_is_backward_block(self, rng):
        params = random_wdgnn(rng)
        g = random_graph(5, rng)
        x = rng.normal(size=(5, 2))
        y = rng.normal(size=(5, 2))
        out, cache = wdgnn_forward(g, x, params)
        _, up = Regression().loss(out, y)
        expected = params.wide.taps - 0.1 * wdgnn_backward(cache, g, params, up)["wide"]
        new, _, _ = centralized_online_step(params, g, x, lambda o: Regression().loss(o, y), 0.1)
        np.testing.assert_array_equal(new.wide.taps, expected)

    def test_needs_wide(self, rng):
        params = WdGnnParams.initialize(2, 3, 2, deep_features=(3,), kind="gnn", seed=0)
        with pytest.raises(OnlineError):
            centralized_online_step(params, random_graph(4, rng), np.ones((4, 2)), lambda o: (0.0, 0 * o), 0.1)

    def test_non_finite_gradient(self, rng):
        params = random_wdgnn(rng)
        with pytest.raises(OnlineError):
            centralized_online_step(
                params, random_graph(5, rng), rng.normal(size=(5, 2)),
                lambda o: (0.0, np.full_like(o, np.nan)), 0.1,
            )


class TestDistributed:
    def _setup(self, rng, n=6):
        params = random_wdgnn(rng)
        g = random_graph(n, rng, p=0.4)
        x = rng.normal(size=(n, 2))
        taps = params.wide.taps[None] + 0.1 * rng.normal(size=(n,) + params.wide.taps.shape)
        return params, g, x, NodeParams(taps)

    def test_mean_preserved(self, rng):
        params, g, x, locals_ = self._setup(rng)
        new, _, _ = distributed_online_step(locals_, metropolis_weights(g), g, x, zero_gradients, 0.5, params)
        np.testing.assert_allclose(new.mean(), locals_.mean(), atol=1e-14)

    @given(st.integers(0, 10_000))
    def test_symmetric_start_follows_centralized(self, seed):
        rng = np.random.default_rng(seed)
        params, g, x, _ = self._setup(rng)
        locals_ = NodeParams.replicate(params.wide, g.n)
        y = rng.normal(size=(g.n, 2))

        def same_loss(outs):
            vals, grads = [], []
            for o in outs:
                v, d = Regression().loss(o, y)
                vals.append(v)
                grads.append(d)
            return np.array(vals), np.stack(grads)

        new, _, _ = distributed_online_step(locals_, metropolis_weights(g), g, x, same_loss, 0.2, params)
        central, _, _ = centralized_online_step(params, g, x, lambda o: Regression().loss(o, y), 0.2)
        for i in range(g.n):
            np.testing.assert_allclose(new.taps[i], central.wide.taps, atol=1e-12)

    def test_consensus_only_decay(self, rng):
        params = random_wdgnn(rng)
        g = path_graph(6)
        w = metropolis_weights(g)
        locals_ = NodeParams(rng.normal(size=(6,) + params.wide.taps.shape))
        x = rng.normal(size=(6, 2))
        values = [consensus_disagreement(locals_)]
        for _ in range(300):
            locals_, _, _ = distributed_online_step(locals_, w, g, x, zero_gradients, 0.0, params)
            values.append(consensus_disagreement(locals_))
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-3 * values[0]

    def test_locality(self, rng):
        params, g, x, locals_ = self._setup(rng)
        w = metropolis_weights(g)
        y = rng.normal(size=(g.n, 2))
        loss = lambda outs: Regression().local_loss(outs, y)
        i = 0
        far = [j for j in range(g.n) if j != i and not g.adjacency[i, j]]
        if not far:
            pytest.skip("node 0 is adjacent to every node")
        bumped = locals_.taps.copy()
        bumped[far[0]] += 5.0
        a, _, _ = distributed_online_step(locals_, w, g, x, loss, 0.1, params)
        b, _, _ = distributed_online_step(NodeParams(bumped), w, g, x, loss, 0.1, params)
        np.testing.assert_array_equal(a.taps[i], b.taps[i])

    def test_complete_graph_equivalence(self, rng):
        n = 5
        params = random_wdgnn(rng)
        g = normalize_adjacency(Gso(np.ones((n, n)) - np.eye(n)))
        w = ConsensusWeights(np.full((n, n), 1 / n), 1 / n)
        x = rng.normal(size=(n, 2))
        y = rng.normal(size=(n, 2))
        locals_ = NodeParams.replicate(params.wide, n)

        def identical(outs):
            pairs = [Regression().loss(o, y) for o in outs]
            return np.array([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

        new, _, _ = distributed_online_step(locals_, w, g, x, identical, 0.05, params)
        central, _, _ = centralized_online_step(params, g, x, lambda o: Regression().loss(o, y), 0.05)
        assert np.abs(new.taps - central.wide.taps[None]).max() < 1e-12

    def test_weight_support_violation(self, rng):
        params, g, x, locals_ = self._setup(rng)
        bad = ConsensusWeights(np.full((g.n, g.n), 1 / g.n), 0.0)
        if g.adjacency.all() or g.n_edges == g.n * (g.n - 1) // 2:
            pytest.skip("complete graph")
        with pytest.raises(GraphError):
            distributed_online_step(locals_, bad, g, x, zero_gradients, 0.1, params)

    def test_shape_mismatch(self, rng):
        params, g, x, _ = self._setup(rng)
        with pytest.raises(OnlineError):
            LocalView(params, g, x, NodeParams(np.zeros((g.n, 9, 9, 9))))
        with pytest.raises(OnlineError):
            LocalView(params, g, x, NodeParams.replicate(params.wide, g.n + 1))


class TestLocalView:
    def test_matches_full_forward(self, rng):
        params = random_wdgnn(rng)
        g = random_graph(5, rng)
        x = rng.normal(size=(5, 2))
        locals_ = NodeParams(rng.normal(size=(5,) + params.wide.taps.shape))
        outs = LocalView(params, g, x, locals_).outputs()
        for i in range(5):
            np.testing.assert_allclose(outs[i], wdgnn_forward(g, x, params.with_wide(locals_.taps[i]))[0], atol=1e-12)

    def test_predict_local_batched(self, rng):
        params = random_wdgnn(rng)
        g = random_graph(5, rng)
        x = rng.normal(size=(3, 5, 2))
        locals_ = NodeParams(rng.normal(size=(5,) + params.wide.taps.shape))
        batch = predict_local(params, locals_, g, x)
        for b in range(3):
            np.testing.assert_allclose(batch[b], predict_local(params, locals_, g, x[b]), atol=1e-12)


class TestDisagreement:
    def test_identical(self, rng):
        assert consensus_disagreement(NodeParams.replicate(rng.normal(size=(2, 2, 2)), 4)) == 0

    def test_unit_difference(self):
        taps = np.zeros((2, 1, 2, 2))
        taps[1, 0, 0, 0] = 1.0
        assert consensus_disagreement(NodeParams(taps)) == pytest.approx(1.0)

    def test_reorder_invariant(self, rng):
        taps = rng.normal(size=(5, 2, 2, 1))
        assert consensus_disagreement(NodeParams(taps)) == consensus_disagreement(NodeParams(taps[::-1]))


class TestRunOnline:
    def _stream(self, rng, n_steps=6):
        params = random_wdgnn(rng)
        g = random_graph(5, rng)
        xs = rng.normal(size=(n_steps, 5, 2))
        ys = rng.normal(size=(n_steps, 5, 2))
        return params, g, xs, ys, iterate_stream(g, xs, list(ys))

    def test_zero_gamma_matches_offline(self, rng):
        params, g, xs, ys, stream = self._stream(rng)
        task = Regression()
        final, trace = run_online("centralized", stream, params, 0.0, task)
        outs = predict(params, Dataset(xs, ys, g))
        expected = [task.metric(outs[t], ys[t]) for t in range(len(xs))]
        np.testing.assert_allclose(trace.column("metric"), expected, atol=1e-12)
        np.testing.assert_array_equal(final.wide.taps, params.wide.taps)

    @pytest.mark.parametrize("mode", ["centralized", "distributed"])
    def test_frozen_parts(self, rng, mode):
        params, g, xs, ys, stream = self._stream(rng)
        final, trace = run_online(mode, stream, params, 0.05, Regression())
        assert len(trace) == len(xs)
        # the trained parameters object is never mutated and frozen blocks are reused
        if mode == "centralized":
            for key, value in params.arrays().items():
                if key != "wide":
                    np.testing.assert_array_equal(final.arrays()[key], value)
        else:
            assert isinstance(final, NodeParams) and final.n == g.n

    def test_distributed_zero_gamma_identical_start(self, rng):
        params, g, xs, ys, stream = self._stream(rng)
        final, trace = run_online("distributed", stream, params, 0.0, Regression())
        np.testing.assert_allclose(final.taps, np.repeat(params.wide.taps[None], g.n, 0), atol=1e-14)
        assert np.all(trace.column("disagreement") < 1e-12)

    def test_optimum_distance_recorded(self, rng):
        params, g, xs, ys, _ = self._stream(rng, 2)
        opt = np.zeros_like(params.wide.taps)
        stream = iterate_stream(g, xs, list(ys), optima=[opt, opt])
        _, trace = run_online("centralized", stream, params, 0.0, Regression())
        assert trace.records[0].dist_to_opt == pytest.approx(np.linalg.norm(params.wide.taps))

    def test_errors(self, rng):
        params, g, xs, ys, stream = self._stream(rng)
        with pytest.raises(OnlineError):
            run_online("gossip", stream, params, 0.1, Regression())
        with pytest.raises(OnlineError):
            run_online("centralized", [], params, 0.1, Regression())
        with pytest.raises(OnlineError):
            run_online("centralized", stream, params, -1.0, Regression())

        class NoLocal:
            def loss(self, o, y):
                return Regression().loss(o, y)

            def metric(self, o, y):
                return 0.0

        with pytest.raises(OnlineError):
            run_online("distributed", stream, params, 0.1, NoLocal())

    def test_on_step_and_csv(self, rng, tmp_path):
        params, g, xs, ys, stream = self._stream(rng, 3)
        seen = []
        _, trace = run_online("centralized", stream, params, 0.01, Regression(), on_step=seen.append)
        assert seen == trace.records
        trace.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,loss,metric,disagreement,dist_to_opt,gamma"
        assert lines[1].split(",")[4] == "" and len(lines) == 4

    def test_stream_length_mismatch(self, rng):
        with pytest.raises(OnlineError):
            iterate_stream(random_graph(3, rng), np.zeros((2, 3, 1)), [0])

    def test_sample_type(self, rng):
        g = random_graph(3, rng)
        s = OnlineSample(g, np.zeros((3, 1)), 0)
        assert s.wide_stack is None and s.optimum is None
