"""
Unit tests for paragraph_pipeline.gnn module.

Tests the relational attention layer, the analytic gradients against
central differences, Adam, training with best-validation restore and the
checkpoint format.
"""

import hashlib
import math
import struct

import numpy as np
import pandas as pd
import pytest

from paragraph_pipeline.dataset import Dataset, ScaledGraph, apply_scaler, fit_scaler, split_dataset
from paragraph_pipeline.errors import ChecksumError, ShapeError, VersionError
from paragraph_pipeline.gnn import (
    CHECKPOINT_MAGIC,
    AdamState,
    EdgeSet,
    RgatModel,
    adam_step,
    batch_forward,
    checkpoint_load,
    checkpoint_save,
    collate,
    loss_and_gradients,
    model_forward,
    predict_runtime_us,
    rgat_forward,
    save_curve_csv,
    train,
    zero_gradients,
)
from paragraph_pipeline.paragraph import EdgeType, NUM_EDGE_TYPES

pytestmark = pytest.mark.unit

GRAD_STEP = 1e-5
GRAD_TOLERANCE = 1e-4
GRAD_ABS_FLOOR = 1e-8
KINK_MARGIN = 1e-4
GRAD_SEEDS = 20


def random_graph(rng, num_kinds, num_nodes=None, num_edges=None):
    """A small random scaled graph; only Child edges carry weight."""
    n = int(num_nodes or rng.integers(3, 7))
    e = int(num_edges if num_edges is not None else rng.integers(n, 2 * n + 2))
    etype = rng.integers(0, NUM_EDGE_TYPES, size=e)
    weight = np.where(etype == int(EdgeType.CHILD), rng.uniform(0.05, 1.0, size=e), 0.0)
    return ScaledGraph(
        kinds=rng.integers(0, num_kinds, size=n),
        src=rng.integers(0, n, size=e),
        dst=rng.integers(0, n, size=e),
        etype=etype,
        weight=weight,
        features=rng.uniform(0.1, 1.0, size=2),
        target=float(rng.uniform(0.0, 1.0)),
    )

def covering_graph(rng, num_kinds, num_nodes=5):
    """A random scaled graph with two edges of every relation."""
    etype = np.tile(np.arange(NUM_EDGE_TYPES), 2)
    weight = np.where(etype == int(EdgeType.CHILD), rng.uniform(0.05, 1.0, size=etype.size), 0.0)
    return ScaledGraph(
        kinds=rng.integers(0, num_kinds, size=num_nodes),
        src=rng.integers(0, num_nodes, size=etype.size),
        dst=rng.integers(0, num_nodes, size=etype.size),
        etype=etype,
        weight=weight,
        features=rng.uniform(0.1, 1.0, size=2),
        target=float(rng.uniform(0.0, 1.0)),
    )



def randomized_model(config, seed):
    """A model whose parameters (biases included) are all drawn at random."""
    model = RgatModel(config)
    rng = np.random.default_rng(seed + 1000)
    for name, value in model.params.items():
        model.params[name] = rng.normal(0.0, 0.3, size=value.shape)
    return model


def kink_inputs(cache):
    """Every pre-activation that passes through a relu or leaky relu."""
    values = [cache["h1_pre"], cache["h2_pre"], cache["f_pre"]]
    for layer in cache["layers"]:
        values.extend([layer["pre"], layer["s"]])
    return np.concatenate([np.ravel(v) for v in values])


def gradients_agree(analytic, numeric):
    return abs(analytic - numeric) <= GRAD_TOLERANCE * max(abs(analytic), abs(numeric)) + GRAD_ABS_FLOOR


class TestRgatLayer:
    """Tests for one relational attention layer."""

    @pytest.fixture
    def layer(self, tiny_config):
        return randomized_model(tiny_config, 0).layer(0)

    def test_single_incoming_edge_has_full_attention(self, layer):
        """Test a lone incoming edge of a relation gets attention 1."""
        rng = np.random.default_rng(1)
        H = rng.normal(size=(3, 8))
        edges = EdgeSet(src=np.array([0, 1]), dst=np.array([2, 2]), rel=np.array([0, 3]), weight=np.array([0.5, 0.0]))
        _, cache = rgat_forward(layer, H, edges)
        np.testing.assert_allclose(cache["alpha"], [1.0, 1.0])

    def test_attention_sums_to_one_per_group(self, layer):
        rng = np.random.default_rng(2)
        H = rng.normal(size=(4, 8))
        edges = EdgeSet(src=np.array([0, 1, 3, 0]), dst=np.array([2, 2, 2, 1]),
                        rel=np.array([1, 1, 1, 1]), weight=np.zeros(4))
        _, cache = rgat_forward(layer, H, edges)
        assert cache["alpha"][:3].sum() == pytest.approx(1.0)
        assert cache["alpha"][3] == pytest.approx(1.0)

    def test_no_edges_is_self_update_only(self, layer):
        """Test nodes without incoming edges keep relu(h W_self + c)."""
        rng = np.random.default_rng(3)
        H = rng.normal(size=(3, 8))
        empty = EdgeSet(src=np.zeros(0, dtype=np.int64), dst=np.zeros(0, dtype=np.int64),
                        rel=np.zeros(0, dtype=np.int64), weight=np.zeros(0))
        out, _ = rgat_forward(layer, H, empty)
        np.testing.assert_allclose(out, np.maximum(H @ layer.W_self + layer.bias, 0.0))

    def test_wrong_state_width(self, layer):
        empty = EdgeSet(*(np.zeros(0, dtype=np.int64) for _ in range(3)), weight=np.zeros(0))
        with pytest.raises(ShapeError):
            rgat_forward(layer, np.zeros((2, 5)), empty)


class TestGradients:
    """Analytic gradients against central finite differences."""

    def test_matches_finite_differences(self, tiny_config):
        """Test sampled entries of every parameter over twenty kink-free random cases."""
        accepted = 0
        seed = 0
        while accepted < GRAD_SEEDS:
            assert seed < 400, "too many random cases sit on an activation kink"
            rng = np.random.default_rng(seed)
            model = randomized_model(tiny_config, seed)
            graphs = [random_graph(rng, model.num_kinds) for _ in range(2)]
            seed += 1
            _, cache = batch_forward(model, collate(graphs))
            if np.min(np.abs(kink_inputs(cache))) < KINK_MARGIN:
                continue
            accepted += 1

            _, grads = loss_and_gradients(model, graphs)
            for name, param in model.params.items():
                for flat in rng.choice(param.size, size=min(3, param.size), replace=False):
                    index = np.unravel_index(flat, param.shape)
                    original = param[index]
                    param[index] = original + GRAD_STEP
                    plus, _ = loss_and_gradients(model, graphs)
                    param[index] = original - GRAD_STEP
                    minus, _ = loss_and_gradients(model, graphs)
                    param[index] = original
                    numeric = (plus - minus) / (2 * GRAD_STEP)
                    assert gradients_agree(grads[name][index], numeric), (
                        f"case {seed - 1}: {name}{index} analytic {grads[name][index]} numeric {numeric}"
                    )

    def test_every_entry_matches_finite_differences(self, tiny_config):
        """Test every entry of every parameter on a narrow model whose graphs use all eight relations."""
        config = dict(tiny_config, hidden=4, head=[4, 2], feature_hidden=2)
        accepted = 0
        seed = 0
        while accepted < 3:
            assert seed < 200, "too many random cases sit on an activation kink"
            rng = np.random.default_rng(seed)
            model = randomized_model(config, seed)
            graphs = [covering_graph(rng, model.num_kinds) for _ in range(2)]
            seed += 1
            _, cache = batch_forward(model, collate(graphs))
            if np.min(np.abs(kink_inputs(cache))) < KINK_MARGIN:
                continue
            accepted += 1

            _, grads = loss_and_gradients(model, graphs)
            for name, param in model.params.items():
                for index in np.ndindex(*param.shape):
                    original = param[index]
                    param[index] = original + GRAD_STEP
                    plus, _ = loss_and_gradients(model, graphs)
                    param[index] = original - GRAD_STEP
                    minus, _ = loss_and_gradients(model, graphs)
                    param[index] = original
                    numeric = (plus - minus) / (2 * GRAD_STEP)
                    assert gradients_agree(grads[name][index], numeric), (
                        f"case {seed - 1}: {name}{index} analytic {grads[name][index]} numeric {numeric}"
                    )

    def test_duplicated_batch_has_same_loss(self, tiny_config):
        """Test the loss is a mean, so repeating a graph changes nothing."""
        rng = np.random.default_rng(5)
        model = randomized_model(tiny_config, 5)
        graph = random_graph(rng, model.num_kinds)
        single_loss, single_grads = loss_and_gradients(model, [graph])
        double_loss, double_grads = loss_and_gradients(model, [graph, graph])
        assert double_loss == pytest.approx(single_loss, rel=1e-12)
        for name in single_grads:
            np.testing.assert_allclose(double_grads[name], single_grads[name], rtol=1e-10, atol=1e-14)

    def test_parallel_chunks_agree(self, tiny_config):
        rng = np.random.default_rng(6)
        model = randomized_model(tiny_config, 6)
        graphs = [random_graph(rng, model.num_kinds) for _ in range(5)]
        serial_loss, serial_grads = loss_and_gradients(model, graphs, jobs=1)
        parallel_loss, parallel_grads = loss_and_gradients(model, graphs, jobs=3)
        assert parallel_loss == pytest.approx(serial_loss, rel=1e-12)
        for name in serial_grads:
            np.testing.assert_allclose(parallel_grads[name], serial_grads[name], rtol=1e-9, atol=1e-13)

    def test_empty_batch(self, tiny_config):
        with pytest.raises(ShapeError):
            loss_and_gradients(RgatModel(tiny_config), [])


class TestModelForward:
    """Tests for whole-graph predictions."""

    def test_node_permutation_invariance(self, tiny_config):
        """Test relabeling the nodes of a graph leaves its prediction unchanged."""
        rng = np.random.default_rng(8)
        model = randomized_model(tiny_config, 8)
        graph = random_graph(rng, model.num_kinds, num_nodes=6)
        perm = rng.permutation(graph.num_nodes)
        inverse = np.argsort(perm)
        permuted = ScaledGraph(
            kinds=graph.kinds[perm],
            src=inverse[graph.src],
            dst=inverse[graph.dst],
            etype=graph.etype,
            weight=graph.weight,
            features=graph.features,
        )
        assert model_forward(model, permuted) == pytest.approx(model_forward(model, graph), rel=1e-10)

    def test_every_child_weight_changes_the_prediction(self, tiny_config, small_points):
        """Test perturbing any single Child weight of a paragraph-mode graph moves the output."""
        model = randomized_model(tiny_config, 11)
        # Positive biases keep every relu unit active, so no change is masked
        for name in model.params:
            if name.rsplit(".", 1)[-1] in ("b", "bias"):
                model.params[name] = np.full(model.params[name].shape, 3.0)
        graph = apply_scaler(small_points[0], fit_scaler(small_points))
        base = model_forward(model, graph)
        child = np.flatnonzero(graph.etype == int(EdgeType.CHILD))
        assert child.size > 0
        for i in child:
            weight = graph.weight.copy()
            weight[i] += 0.5 if weight[i] < 0.5 else -0.5
            moved = model_forward(model, ScaledGraph(kinds=graph.kinds, src=graph.src, dst=graph.dst,
                                                     etype=graph.etype, weight=weight, features=graph.features))
            assert abs(moved - base) > 1e-9, f"Child edge {graph.src[i]}->{graph.dst[i]} left the prediction at {base}"

    def test_batch_equals_individual(self, tiny_config):
        rng = np.random.default_rng(9)
        model = randomized_model(tiny_config, 9)
        graphs = [random_graph(rng, model.num_kinds) for _ in range(3)]
        pred, _ = batch_forward(model, collate(graphs))
        np.testing.assert_allclose(pred, [model_forward(model, g) for g in graphs], rtol=1e-10)

    def test_unknown_kind_rejected(self, tiny_config):
        model = RgatModel(tiny_config)
        graph = random_graph(np.random.default_rng(0), model.num_kinds)
        bad = ScaledGraph(kinds=graph.kinds + model.num_kinds, src=graph.src, dst=graph.dst,
                          etype=graph.etype, weight=graph.weight, features=graph.features)
        with pytest.raises(ShapeError):
            model_forward(model, bad)

    def test_wrong_feature_shape(self, tiny_config):
        graph = random_graph(np.random.default_rng(0), 4)
        bad = ScaledGraph(kinds=graph.kinds, src=graph.src, dst=graph.dst, etype=graph.etype,
                          weight=graph.weight, features=np.zeros(3))
        with pytest.raises(ShapeError):
            collate([bad])

    def test_wrong_parameter_shape(self, tiny_config):
        params = RgatModel(tiny_config).params
        params["out.W"] = np.zeros((2, 1))
        with pytest.raises(ShapeError):
            RgatModel(tiny_config, params=params)

    def test_predict_needs_scaler(self, tiny_config, small_points):
        scaled = apply_scaler(small_points[0], fit_scaler(small_points))
        with pytest.raises(ShapeError):
            predict_runtime_us(RgatModel(tiny_config), [scaled])


class TestAdam:
    """Tests for adam_step."""

    def test_zero_gradient_leaves_parameters(self, tiny_config):
        model = RgatModel(tiny_config)
        before = {k: v.copy() for k, v in model.params.items()}
        adam_step(model, zero_gradients(model), AdamState())
        for name, value in before.items():
            np.testing.assert_array_equal(model.params[name], value)

    def test_first_step_moves_by_learning_rate(self, tiny_config):
        """Test the bias-corrected first step is -lr * sign(g) for non-tiny gradients."""
        model = RgatModel(tiny_config)
        before = {k: v.copy() for k, v in model.params.items()}
        rng = np.random.default_rng(0)
        grads = {k: rng.choice([-1.0, 1.0], size=v.shape) * rng.uniform(0.1, 5.0, size=v.shape)
                 for k, v in model.params.items()}
        state = AdamState()
        adam_step(model, grads, state)
        assert state.step == 1
        for name, value in before.items():
            np.testing.assert_allclose(model.params[name] - value, -tiny_config["lr"] * np.sign(grads[name]),
                                       rtol=1e-6)

    def test_gradient_shape_mismatch(self, tiny_config):
        model = RgatModel(tiny_config)
        grads = zero_gradients(model)
        grads["out.b"] = np.zeros(2)
        with pytest.raises(ShapeError):
            adam_step(model, grads, AdamState())


class TestTrain:
    """Tests for the training loop."""

    def test_curve_and_best_restore(self, tiny_config, small_points):
        """Test the returned parameters reproduce the best validation RMSE of the curve."""
        dataset = Dataset(small_points)
        split = split_dataset(small_points, 0)
        model, curve = train(RgatModel(tiny_config), dataset, split)
        assert [row["epoch"] for row in curve] == [1, 2]
        assert model.scaler is dataset.scaler

        val = [apply_scaler(small_points[i], dataset.scaler) for i in split.val]
        predicted = predict_runtime_us(model, val)
        actual = np.array([g.runtime_us for g in val])
        rmse_ms = math.sqrt(np.mean(((predicted - actual) / 1000.0) ** 2))
        assert rmse_ms == pytest.approx(min(row["val_rmse_ms"] for row in curve), rel=1e-9)

    def test_deterministic(self, tiny_config, small_points):
        split = split_dataset(small_points, 4)
        _, first = train(RgatModel(tiny_config), Dataset(small_points), split)
        _, second = train(RgatModel(tiny_config), Dataset(small_points), split)
        assert first == second

    def test_scaler_fitted_on_training_points(self, tiny_config, small_points):
        split = split_dataset(small_points, 1)
        dataset = Dataset(small_points)
        train(RgatModel(tiny_config), dataset, split)
        train_runtimes = [small_points[i].runtime_us for i in split.train]
        assert dataset.scaler.target.lo == min(train_runtimes)
        assert dataset.scaler.target.hi == max(train_runtimes)

    def test_zero_epochs_keeps_initial_parameters(self, tiny_config, small_points):
        config = dict(tiny_config, epochs=0)
        model = RgatModel(config)
        before = {k: v.copy() for k, v in model.params.items()}
        model, curve = train(model, Dataset(small_points), split_dataset(small_points, 0), config)
        assert curve == []
        np.testing.assert_array_equal(model.params["out.W"], before["out.W"])

    def test_zero_learning_rate_changes_nothing(self, tiny_config, small_points):
        """Test lr=0 leaves every parameter in place and gives a flat validation curve."""
        config = dict(tiny_config, lr=0.0, epochs=3)
        model = RgatModel(config)
        before = {k: v.copy() for k, v in model.params.items()}
        model, curve = train(model, Dataset(small_points), split_dataset(small_points, 0), config)
        assert len(curve) == 3
        assert len({row["val_rmse_ms"] for row in curve}) == 1
        assert len({row["train_rmse_ms"] for row in curve}) == 1
        for name, value in before.items():
            np.testing.assert_array_equal(model.params[name], value)

    def test_curve_csv(self, tmp_path):
        path = str(tmp_path / "curve.csv")
        save_curve_csv([{"epoch": 1, "train_rmse_ms": 2.0, "val_rmse_ms": 3.0, "val_norm_rmse": 0.5}], path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["epoch", "train_rmse_ms", "val_rmse_ms", "val_norm_rmse"]
        assert frame.loc[0, "val_rmse_ms"] == 3.0


class TestCheckpoint:
    """Tests for checkpoint_save and checkpoint_load."""

    @pytest.fixture
    def saved(self, tiny_config, small_points, tmp_path):
        model = randomized_model(tiny_config, 3)
        model.scaler = fit_scaler(small_points)
        path = str(tmp_path / "model.ckpt")
        checkpoint_save(model, path)
        return model, path

    def test_round_trip(self, saved, small_points):
        model, path = saved
        loaded = checkpoint_load(path)
        assert loaded.config == model.config
        assert loaded.scaler.to_dict() == model.scaler.to_dict()
        for name, value in model.params.items():
            np.testing.assert_array_equal(loaded.params[name], value)
        graphs = [apply_scaler(p, model.scaler) for p in small_points[:3]]
        np.testing.assert_array_equal(predict_runtime_us(loaded, graphs), predict_runtime_us(model, graphs))

    def test_layout(self, saved):
        _, path = saved
        with open(path, "rb") as handle:
            data = handle.read()
        assert data.startswith(CHECKPOINT_MAGIC)
        assert struct.unpack("<I", data[4:8])[0] == 1

    def test_flipped_byte(self, saved):
        _, path = saved
        with open(path, "rb") as handle:
            data = bytearray(handle.read())
        data[len(data) // 2] ^= 0xFF
        with open(path, "wb") as handle:
            handle.write(bytes(data))
        with pytest.raises(ChecksumError):
            checkpoint_load(path)

    def test_truncated(self, saved):
        _, path = saved
        with open(path, "rb") as handle:
            data = handle.read()
        with open(path, "wb") as handle:
            handle.write(data[:-100])
        with pytest.raises(ChecksumError):
            checkpoint_load(path)

    def test_future_version(self, saved):
        """Test a validly checksummed file of another version is refused."""
        _, path = saved
        with open(path, "rb") as handle:
            body = bytearray(handle.read()[:-32])
        body[4:8] = struct.pack("<I", 2)
        with open(path, "wb") as handle:
            handle.write(bytes(body) + hashlib.sha256(bytes(body)).digest())
        with pytest.raises(VersionError) as exc:
            checkpoint_load(path)
        assert exc.value.found == 2
