"""
Relational graph-attention regression in numpy, with hand-written gradients.

Per layer and relation r, over edges i -> j with scaled weight w:

    z_i      = h_i W_r
    logit_ij = leaky_relu(a_src_r . z_i + a_dst_r . z_j) + u_r * w
    alpha_ij = softmax of logit over the incoming r-edges of j
    m_j^r    = sum_i alpha_ij (z_i + w * b_r)
    h'_j     = relu(mean over relations present at j of m_j^r + h_j W_self + c)

The model embeds node kinds, applies three layers, mean-pools each graph,
runs two dense+relu layers, concatenates a dense+relu embedding of the
scaled (teams, threads) pair and regresses one scalar.
"""

import hashlib
import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import get_training_config
from .dataset import Dataset, ScaledGraph, Scaler, Split, apply_scaler, fit_scaler
from .errors import ChecksumError, ShapeError, VersionError
from .frontend import NODE_KINDS
from .paragraph import EDGE_TYPE_NAMES, NUM_EDGE_TYPES

logger = logging.getLogger(__name__)

Tensor = np.ndarray
Gradients = Dict[str, Tensor]

CHECKPOINT_MAGIC = b"PGCK"
CHECKPOINT_VERSION = 1
NUM_LAYERS = 3
NUM_FEATURES = 2

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeSet:
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    weight: np.ndarray


@dataclass(frozen=True)
class GraphBatch:
    """Disjoint union of graphs with a per-node graph index."""

    kinds: np.ndarray
    edges: EdgeSet
    graph_index: np.ndarray
    counts: np.ndarray
    features: np.ndarray
    targets: np.ndarray

    @property
    def size(self) -> int:
        return int(self.counts.shape[0])


@dataclass
class RgatLayer:
    W_rel: Tensor
    att: Tensor
    gain: Tensor
    edge_bias: Tensor
    W_self: Tensor
    bias: Tensor
    leaky_slope: float = 0.2

    @property
    def d_in(self) -> int:
        return int(self.W_rel.shape[1])

    @property
    def d_out(self) -> int:
        return int(self.W_rel.shape[2])


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, Tensor] = field(default_factory=dict)
    v: Dict[str, Tensor] = field(default_factory=dict)


LAYER_PARAMS = ("W_rel", "att", "gain", "edge_bias", "W_self", "bias")


class RgatModel:
    """Parameter container; ``params`` maps manifest names to float64 arrays."""

    def __init__(self, config: Optional[Mapping[str, Any]] = None, num_kinds: int = len(NODE_KINDS),
                 params: Optional[Dict[str, Tensor]] = None, scaler: Optional[Scaler] = None):
        self.config = get_training_config(config)
        self.num_kinds = num_kinds
        self.scaler = scaler
        self.params: Dict[str, Tensor] = params if params is not None else self._init_params()
        self._check_shapes()

    def _shapes(self) -> Dict[str, Tuple[int, ...]]:
        d = self.config["hidden"]
        h1, h2 = self.config["head"]
        f = self.config["feature_hidden"]
        shapes: Dict[str, Tuple[int, ...]] = {"embedding": (self.num_kinds, d)}
        for k in range(NUM_LAYERS):
            shapes[f"layer{k}.W_rel"] = (NUM_EDGE_TYPES, d, d)
            shapes[f"layer{k}.att"] = (NUM_EDGE_TYPES, 2 * d)
            shapes[f"layer{k}.gain"] = (NUM_EDGE_TYPES,)
            shapes[f"layer{k}.edge_bias"] = (NUM_EDGE_TYPES, d)
            shapes[f"layer{k}.W_self"] = (d, d)
            shapes[f"layer{k}.bias"] = (d,)
        shapes.update({
            "head1.W": (d, h1), "head1.b": (h1,),
            "head2.W": (h1, h2), "head2.b": (h2,),
            "feat.W": (NUM_FEATURES, f), "feat.b": (f,),
            "out.W": (h2 + f, 1), "out.b": (1,),
        })
        return shapes

    def _init_params(self) -> Dict[str, Tensor]:
        rng = np.random.default_rng(self.config["seed"])
        params: Dict[str, Tensor] = {}
        for name, shape in self._shapes().items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf in ("b", "bias"):
                params[name] = np.zeros(shape)
            elif name == "embedding" or leaf in ("gain", "edge_bias"):
                params[name] = rng.uniform(-0.1, 0.1, size=shape)
            else:
                fan_in, fan_out = shape[-2], shape[-1]
                if leaf == "att":
                    fan_in, fan_out = shape[-1] // 2, 1
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                params[name] = rng.uniform(-limit, limit, size=shape)
        return params

    def _check_shapes(self) -> None:
        expected = self._shapes()
        if set(expected) != set(self.params):
            raise ShapeError(f"parameter names differ from the model manifest: {sorted(set(expected) ^ set(self.params))}")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise ShapeError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def manifest(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return list(self._shapes().items())

    def layer(self, k: int) -> RgatLayer:
        p = self.params
        return RgatLayer(*(p[f"layer{k}.{name}"] for name in LAYER_PARAMS), leaky_slope=self.config["leaky_slope"])

    def copy(self) -> "RgatModel":
        return RgatModel(self.config, self.num_kinds, {k: v.copy() for k, v in self.params.items()}, self.scaler)


def zero_gradients(model: RgatModel) -> Gradients:
    return {name: np.zeros_like(value) for name, value in model.params.items()}


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def collate(graphs: Sequence[ScaledGraph]) -> GraphBatch:
    if not graphs:
        raise ShapeError("cannot batch zero graphs")
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    for g in graphs:
        if g.features.shape != (NUM_FEATURES,):
            raise ShapeError(f"graph features must have shape ({NUM_FEATURES},), got {g.features.shape}")
    return GraphBatch(
        kinds=np.concatenate([g.kinds for g in graphs]),
        edges=EdgeSet(
            src=np.concatenate([g.src + off for g, off in zip(graphs, offsets)]),
            dst=np.concatenate([g.dst + off for g, off in zip(graphs, offsets)]),
            rel=np.concatenate([g.etype for g in graphs]),
            weight=np.concatenate([g.weight for g in graphs]).astype(np.float64),
        ),
        graph_index=np.concatenate([np.full(g.num_nodes, i, dtype=np.int64) for i, g in enumerate(graphs)]),
        counts=np.array([g.num_nodes for g in graphs], dtype=np.float64),
        features=np.stack([g.features for g in graphs]).astype(np.float64),
        targets=np.array([g.target for g in graphs], dtype=np.float64),
    )


def _check_batch(model: RgatModel, batch: GraphBatch) -> None:
    n = batch.kinds.shape[0]
    if n == 0 or np.any(batch.counts < 1):
        raise ShapeError("every graph needs at least one node")
    if batch.kinds.min() < 0 or batch.kinds.max() >= model.num_kinds:
        raise ShapeError(f"node kind ids must lie in [0, {model.num_kinds})")
    edges = batch.edges
    if edges.src.size:
        if min(edges.src.min(), edges.dst.min()) < 0 or max(edges.src.max(), edges.dst.max()) >= n:
            raise ShapeError("edge endpoints reference unknown nodes")
        if edges.rel.min() < 0 or edges.rel.max() >= NUM_EDGE_TYPES:
            raise ShapeError(f"edge relations must lie in [0, {NUM_EDGE_TYPES})")


# ---------------------------------------------------------------------------
# RGAT layer
# ---------------------------------------------------------------------------

def _leaky(x: Tensor, slope: float) -> Tensor:
    return np.where(x > 0, x, slope * x)


def rgat_forward(layer: RgatLayer, H: Tensor, edges: EdgeSet) -> Tuple[Tensor, Dict[str, Any]]:
    """One relational attention layer; returns new node states and the backward cache."""
    if H.ndim != 2 or H.shape[1] != layer.d_in:
        raise ShapeError(f"node states have shape {H.shape}, layer expects (n, {layer.d_in})")
    n, d_out = H.shape[0], layer.d_out
    src, dst, rel, w = edges.src, edges.dst, edges.rel, edges.weight

    Z = np.einsum("nd,rde->rne", H, layer.W_rel)
    zs = Z[rel, src]
    zd = Z[rel, dst]
    a_src = layer.att[:, :d_out]
    a_dst = layer.att[:, d_out:]
    s = np.einsum("ed,ed->e", zs, a_src[rel]) + np.einsum("ed,ed->e", zd, a_dst[rel])
    logit = _leaky(s, layer.leaky_slope) + layer.gain[rel] * w

    # Softmax within each (relation, destination) group
    group = rel * n + dst
    peak = np.full(NUM_EDGE_TYPES * n, -np.inf)
    np.maximum.at(peak, group, logit)
    ex = np.exp(logit - peak[group])
    denom = np.zeros(NUM_EDGE_TYPES * n)
    np.add.at(denom, group, ex)
    alpha = ex / denom[group]

    value = zs + w[:, None] * layer.edge_bias[rel]
    summed = np.zeros((n, d_out))
    np.add.at(summed, dst, alpha[:, None] * value)
    present = np.zeros(NUM_EDGE_TYPES * n, dtype=bool)
    present[group] = True
    relations = present.reshape(NUM_EDGE_TYPES, n).sum(axis=0).astype(np.float64)
    scale = np.where(relations > 0, 1.0 / np.maximum(relations, 1.0), 0.0)

    pre = summed * scale[:, None] + H @ layer.W_self + layer.bias
    out = np.maximum(pre, 0.0)
    cache = {
        "H": H, "edges": edges, "zs": zs, "zd": zd, "s": s, "alpha": alpha,
        "value": value, "group": group, "scale": scale, "pre": pre,
    }
    return out, cache


def rgat_backward(layer: RgatLayer, cache: Mapping[str, Any], d_out_states: Tensor) -> Tuple[Tensor, Gradients]:
    """Gradients of one layer given dL/dH'; returns (dL/dH, parameter gradients)."""
    H = cache["H"]
    edges: EdgeSet = cache["edges"]
    src, dst, rel, w = edges.src, edges.dst, edges.rel, edges.weight
    n, d_out = H.shape[0], layer.d_out
    alpha, value, group, s = cache["alpha"], cache["value"], cache["group"], cache["s"]

    d_pre = d_out_states * (cache["pre"] > 0)
    grads: Gradients = {
        "bias": d_pre.sum(axis=0),
        "W_self": H.T @ d_pre,
    }
    dH = d_pre @ layer.W_self.T

    d_msg = (d_pre * cache["scale"][:, None])[dst]
    d_alpha = np.einsum("ed,ed->e", d_msg, value)
    d_value = alpha[:, None] * d_msg

    d_edge_bias = np.zeros_like(layer.edge_bias)
    np.add.at(d_edge_bias, rel, w[:, None] * d_value)
    grads["edge_bias"] = d_edge_bias

    weighted = np.zeros(NUM_EDGE_TYPES * n)
    np.add.at(weighted, group, alpha * d_alpha)
    d_logit = alpha * (d_alpha - weighted[group])

    d_gain = np.zeros_like(layer.gain)
    np.add.at(d_gain, rel, d_logit * w)
    grads["gain"] = d_gain

    d_s = d_logit * np.where(s > 0, 1.0, layer.leaky_slope)
    a_src = layer.att[:, :d_out]
    a_dst = layer.att[:, d_out:]
    d_att = np.zeros_like(layer.att)
    np.add.at(d_att[:, :d_out], rel, d_s[:, None] * cache["zs"])
    np.add.at(d_att[:, d_out:], rel, d_s[:, None] * cache["zd"])
    grads["att"] = d_att

    d_zs = d_value + d_s[:, None] * a_src[rel]
    d_zd = d_s[:, None] * a_dst[rel]
    dZ = np.zeros((NUM_EDGE_TYPES, n, d_out))
    np.add.at(dZ, (rel, src), d_zs)
    np.add.at(dZ, (rel, dst), d_zd)
    grads["W_rel"] = np.einsum("nd,rne->rde", H, dZ)
    dH += np.einsum("rne,rde->nd", dZ, layer.W_rel)
    return dH, grads


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

def batch_forward(model: RgatModel, batch: GraphBatch) -> Tuple[Tensor, Dict[str, Any]]:
    """Scaled predictions for every graph of the batch, plus the backward cache."""
    _check_batch(model, batch)
    p = model.params
    H = p["embedding"][batch.kinds]
    layer_caches = []
    for k in range(NUM_LAYERS):
        H, layer_cache = rgat_forward(model.layer(k), H, batch.edges)
        layer_caches.append(layer_cache)

    pooled = np.zeros((batch.size, H.shape[1]))
    np.add.at(pooled, batch.graph_index, H)
    pooled /= batch.counts[:, None]

    h1_pre = pooled @ p["head1.W"] + p["head1.b"]
    h1 = np.maximum(h1_pre, 0.0)
    h2_pre = h1 @ p["head2.W"] + p["head2.b"]
    h2 = np.maximum(h2_pre, 0.0)
    f_pre = batch.features @ p["feat.W"] + p["feat.b"]
    f = np.maximum(f_pre, 0.0)
    joined = np.concatenate([h2, f], axis=1)
    pred = (joined @ p["out.W"] + p["out.b"])[:, 0]
    cache = {
        "layers": layer_caches, "pooled": pooled, "h1_pre": h1_pre, "h1": h1,
        "h2_pre": h2_pre, "joined": joined, "f_pre": f_pre,
    }
    return pred, cache


def model_forward(model: RgatModel, graph: ScaledGraph) -> float:
    pred, _ = batch_forward(model, collate([graph]))
    return float(pred[0])


def batch_backward(model: RgatModel, batch: GraphBatch, cache: Mapping[str, Any], d_pred: Tensor) -> Gradients:
    p = model.params
    grads = zero_gradients(model)
    h2_width = p["head2.W"].shape[1]

    d_out = d_pred[:, None]
    grads["out.W"] = cache["joined"].T @ d_out
    grads["out.b"] = d_out.sum(axis=0)
    d_joined = d_out @ p["out.W"].T
    d_h2, d_f = d_joined[:, :h2_width], d_joined[:, h2_width:]

    d_f_pre = d_f * (cache["f_pre"] > 0)
    grads["feat.W"] = batch.features.T @ d_f_pre
    grads["feat.b"] = d_f_pre.sum(axis=0)

    d_h2_pre = d_h2 * (cache["h2_pre"] > 0)
    grads["head2.W"] = cache["h1"].T @ d_h2_pre
    grads["head2.b"] = d_h2_pre.sum(axis=0)
    d_h1_pre = (d_h2_pre @ p["head2.W"].T) * (cache["h1_pre"] > 0)
    grads["head1.W"] = cache["pooled"].T @ d_h1_pre
    grads["head1.b"] = d_h1_pre.sum(axis=0)
    d_pooled = d_h1_pre @ p["head1.W"].T

    dH = d_pooled[batch.graph_index] / batch.counts[batch.graph_index][:, None]
    for k in reversed(range(NUM_LAYERS)):
        dH, layer_grads = rgat_backward(model.layer(k), cache["layers"][k], dH)
        for name, value in layer_grads.items():
            grads[f"layer{k}.{name}"] = value

    np.add.at(grads["embedding"], batch.kinds, dH)
    return grads


def _squared_error_sum(model: RgatModel, graphs: Sequence[ScaledGraph]) -> Tuple[float, Gradients]:
    batch = collate(graphs)
    pred, cache = batch_forward(model, batch)
    residual = pred - batch.targets
    return float(residual @ residual), batch_backward(model, batch, cache, 2.0 * residual)


def loss_and_gradients(model: RgatModel, graphs: Sequence[ScaledGraph], jobs: int = 1) -> Tuple[float, Gradients]:
    """Mean squared error over the batch and its analytic gradients."""
    if not graphs:
        raise ShapeError("loss_and_gradients needs a non-empty batch")
    jobs = max(1, min(jobs, len(graphs)))
    if jobs == 1:
        total, grads = _squared_error_sum(model, graphs)
    else:
        chunks = [list(graphs[i::jobs]) for i in range(jobs)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda chunk: _squared_error_sum(model, chunk), chunks))
        # Reduced in chunk order so the result does not depend on thread timing
        total = math.fsum(part[0] for part in parts)
        grads = zero_gradients(model)
        for _, part_grads in parts:
            for name in grads:
                grads[name] += part_grads[name]
    size = float(len(graphs))
    return total / size, {name: value / size for name, value in grads.items()}


def adam_step(model: RgatModel, grads: Gradients, state: AdamState, config: Optional[Mapping[str, Any]] = None) -> RgatModel:
    """One bias-corrected Adam update, in place."""
    lr = float((config or model.config)["lr"])
    state.step += 1
    correction1 = 1.0 - ADAM_BETA1 ** state.step
    correction2 = 1.0 - ADAM_BETA2 ** state.step
    for name, param in model.params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {param.shape}")
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
    return model


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def predict_graphs(model: RgatModel, graphs: Sequence[ScaledGraph], batch_size: int = 64) -> np.ndarray:
    """Scaled predictions, evaluated in fixed-size batches."""
    out = [batch_forward(model, collate(graphs[i:i + batch_size]))[0] for i in range(0, len(graphs), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def predict_runtime_us(model: RgatModel, graphs: Sequence[ScaledGraph]) -> np.ndarray:
    if model.scaler is None:
        raise ShapeError("model has no fitted scaler; cannot denormalize predictions")
    return model.scaler.target.inverse(predict_graphs(model, graphs))


def _rmse_ms(actual_us: np.ndarray, predicted_us: np.ndarray) -> float:
    diff = (predicted_us - actual_us) / 1000.0
    return math.sqrt(math.fsum(diff * diff) / len(diff)) if len(diff) else 0.0


def train(model: RgatModel, dataset: Dataset, split: Split,
          config: Optional[Mapping[str, Any]] = None) -> Tuple[RgatModel, List[Dict[str, Any]]]:
    """Mini-batch Adam; returns the best-validation parameters and the per-epoch curve."""
    config = get_training_config(config) if config is not None else model.config
    if dataset.scaler is None or dataset.scaler.mode != config["mode"]:
        dataset.scaler = fit_scaler(dataset.points, split.train, mode=config["mode"])
    model.scaler = dataset.scaler

    train_graphs = [apply_scaler(dataset.points[i], dataset.scaler) for i in split.train]
    val_graphs = [apply_scaler(dataset.points[i], dataset.scaler) for i in split.val]
    train_actual = np.array([g.runtime_us for g in train_graphs])
    val_actual = np.array([g.runtime_us for g in val_graphs])
    val_range = float(val_actual.max() - val_actual.min()) if len(val_actual) else 0.0

    rng = np.random.default_rng(config["seed"])
    state = AdamState()
    best_params = {k: v.copy() for k, v in model.params.items()}
    best_val = math.inf
    curve: List[Dict[str, Any]] = []
    batch = int(config["batch"])

    logger.info(f"[TRAIN] mode={config['mode']} train={len(train_graphs)} val={len(val_graphs)} epochs={config['epochs']}")
    for epoch in range(1, int(config["epochs"]) + 1):
        order = rng.permutation(len(train_graphs))
        for start in range(0, len(order), batch):
            chunk = [train_graphs[i] for i in order[start:start + batch]]
            _, grads = loss_and_gradients(model, chunk, jobs=int(config["jobs"]))
            adam_step(model, grads, state, config)

        train_rmse = _rmse_ms(train_actual, predict_runtime_us(model, train_graphs))
        val_rmse = _rmse_ms(val_actual, predict_runtime_us(model, val_graphs)) if val_graphs else 0.0
        row = {
            "epoch": epoch,
            "train_rmse_ms": train_rmse,
            "val_rmse_ms": val_rmse,
            "val_norm_rmse": val_rmse * 1000.0 / val_range if val_range > 0 else None,
        }
        curve.append(row)
        if val_rmse < best_val:
            best_val = val_rmse
            best_params = {k: v.copy() for k, v in model.params.items()}
        logger.debug(f"[TRAIN] epoch {epoch}: train {train_rmse:.4f} ms, val {val_rmse:.4f} ms")

    model.params = best_params
    if curve:
        logger.info(f"[TRAIN] best val RMSE {best_val:.4f} ms after {len(curve)} epochs")
    return model, curve


def save_curve_csv(curve: Sequence[Mapping[str, Any]], path: str) -> None:
    pd.DataFrame(list(curve), columns=["epoch", "train_rmse_ms", "val_rmse_ms", "val_norm_rmse"]).to_csv(path, index=False)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def checkpoint_save(model: RgatModel, path: str) -> None:
    """Write magic, version, JSON header, float64 payload and a trailing SHA-256."""
    manifest = model.manifest()
    header = json.dumps({
        "config": model.config,
        "manifest": [[name, list(shape)] for name, shape in manifest],
        "kinds": [kind.value for kind in NODE_KINDS][: model.num_kinds],
        "edge_types": [EDGE_TYPE_NAMES[t] for t in sorted(EDGE_TYPE_NAMES)],
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
    }, sort_keys=True).encode("utf-8")
    body = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header
    body += b"".join(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes() for name, _ in manifest)
    with open(path, "wb") as handle:
        handle.write(body + hashlib.sha256(body).digest())


def checkpoint_load(path: str) -> RgatModel:
    with open(path, "rb") as handle:
        data = handle.read()
    prefix = len(CHECKPOINT_MAGIC) + 8
    if len(data) < prefix + 32 or not data.startswith(CHECKPOINT_MAGIC):
        raise ChecksumError(f"{path} is not a complete checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path} failed its SHA-256 check (truncated or corrupted)")
    version, header_len = struct.unpack("<II", body[len(CHECKPOINT_MAGIC):prefix])
    if version != CHECKPOINT_VERSION:
        raise VersionError(version, CHECKPOINT_VERSION)
    header = json.loads(body[prefix:prefix + header_len].decode("utf-8"))

    params: Dict[str, Tensor] = {}
    offset = prefix + header_len
    for name, shape in header["manifest"]:
        count = int(np.prod(shape)) if shape else 1
        chunk = body[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ChecksumError(f"{path} payload ends before parameter {name}")
        params[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(body):
        raise ChecksumError(f"{path} has {len(body) - offset} trailing payload bytes")

    scaler = Scaler.from_dict(header["scaler"]) if header.get("scaler") else None
    return RgatModel(header["config"], len(header["kinds"]), params, scaler)
