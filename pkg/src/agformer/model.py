"""The anchor-graph transformer network.

Pipeline: GNN backbone -> linear projection + LN -> per-community mean
anchor features -> self-attention among anchors -> cross-attention from
nodes to anchors -> mean readout -> linear classifier. A full node-to-node
attention block (same structure, same parameter shapes) replaces the two
anchor blocks in baseline mode.

All attention is single-head with 1/sqrt(dim) scaling; residual + LN wrap
both the attention and the feed-forward sublayer.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
from weakref import WeakKeyDictionary

import numpy as np

from . import autodiff as ad
from .anchors import AnchorAssignment
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError
from .graphs import Graph, normalized_adjacency, plain_adjacency

BACKBONES = ("gcn", "gin")
ANCHOR_MODES = ("louvain", "random", "full")


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    backbone: str = "gcn"
    num_gnn_layers: int = 4
    hidden_dim: int = 256
    proj_dim: int = 256
    ffn_hidden: int = 0  # 0 -> 2 * proj_dim
    dropout: float = 0.1
    anchor_mode: str = "louvain"
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.ffn_hidden == 0:
            self.ffn_hidden = 2 * self.proj_dim
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.anchor_mode not in ANCHOR_MODES:
            raise ConfigError(f"unknown anchor_mode {self.anchor_mode!r}")
        for name in ("input_dim", "num_classes", "num_gnn_layers", "hidden_dim", "proj_dim", "ffn_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


class ModelParams:
    """Ordered name -> Tensor map of every learnable parameter."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self.tensors.values())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _add_layer_norm(t: dict[str, Tensor], prefix: str, dim: int) -> None:
    t[f"{prefix}.gamma"] = ad.parameter(np.ones(dim))
    t[f"{prefix}.beta"] = ad.parameter(np.zeros(dim))


def _add_attention_block(t: dict[str, Tensor], prefix: str, dim: int, ffn_hidden: int,
                         rng: np.random.Generator) -> None:
    for w in ("wq", "wk", "wv"):
        t[f"{prefix}.{w}"] = ad.parameter(_glorot(rng, dim, dim))
    _add_layer_norm(t, f"{prefix}.ln1", dim)
    t[f"{prefix}.ffn.w1"] = ad.parameter(_glorot(rng, dim, ffn_hidden))
    t[f"{prefix}.ffn.b1"] = ad.parameter(np.zeros(ffn_hidden))
    t[f"{prefix}.ffn.w2"] = ad.parameter(_glorot(rng, ffn_hidden, dim))
    t[f"{prefix}.ffn.b2"] = ad.parameter(np.zeros(dim))
    _add_layer_norm(t, f"{prefix}.ln2", dim)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Fresh parameters: Glorot-uniform projections, zero biases, unit LN
    gains, zero GIN epsilons."""
    t: dict[str, Tensor] = {}
    in_dim = config.input_dim
    for layer in range(config.num_gnn_layers):
        if config.backbone == "gcn":
            t[f"backbone.{layer}.weight"] = ad.parameter(_glorot(rng, in_dim, config.hidden_dim))
        else:
            t[f"backbone.{layer}.eps"] = ad.parameter(np.asarray(0.0))
            t[f"backbone.{layer}.mlp.w1"] = ad.parameter(_glorot(rng, in_dim, config.hidden_dim))
            t[f"backbone.{layer}.mlp.b1"] = ad.parameter(np.zeros(config.hidden_dim))
            t[f"backbone.{layer}.mlp.w2"] = ad.parameter(_glorot(rng, config.hidden_dim, config.hidden_dim))
            t[f"backbone.{layer}.mlp.b2"] = ad.parameter(np.zeros(config.hidden_dim))
        in_dim = config.hidden_dim
    t["proj.weight"] = ad.parameter(_glorot(rng, config.hidden_dim, config.proj_dim))
    _add_layer_norm(t, "proj.ln", config.proj_dim)
    if config.anchor_mode == "full":
        _add_attention_block(t, "full", config.proj_dim, config.ffn_hidden, rng)
    else:
        _add_attention_block(t, "aasa", config.proj_dim, config.ffn_hidden, rng)
        _add_attention_block(t, "anca", config.proj_dim, config.ffn_hidden, rng)
    t["head.weight"] = ad.parameter(_glorot(rng, config.proj_dim, config.num_classes))
    t["head.bias"] = ad.parameter(np.zeros(config.num_classes))
    return ModelParams(t)


# --- forward components -----------------------------------------------------

_ADJ_CACHE: "WeakKeyDictionary[Graph, dict]" = WeakKeyDictionary()


def cached_adjacency(g: Graph, kind: str):
    per_graph = _ADJ_CACHE.setdefault(g, {})
    op = per_graph.get(kind)
    if op is None:
        op = normalized_adjacency(g) if kind == "normalized" else plain_adjacency(g)
        per_graph[kind] = op
    return op


def gcn_forward(x: Tensor, adj, params: ModelParams, config: ModelConfig,
                rng: np.random.Generator, training: bool) -> Tensor:
    """Stacked H <- relu(A_hat H W) layers; no activation after the last."""
    h = x
    for layer in range(config.num_gnn_layers):
        h = ad.matmul(ad.spmm(adj, h), params[f"backbone.{layer}.weight"])
        if layer < config.num_gnn_layers - 1:
            h = ad.relu(h)
            h = ad.dropout(h, config.dropout, rng, training)
    return h


def gin_forward(x: Tensor, adj, params: ModelParams, config: ModelConfig,
                rng: np.random.Generator, training: bool) -> Tensor:
    """Stacked h <- MLP((1 + eps) h + sum of neighbor h)."""
    h = x
    for layer in range(config.num_gnn_layers):
        one_plus_eps = ad.add(params[f"backbone.{layer}.eps"], Tensor(np.asarray(1.0)))
        agg = ad.add(ad.scalar_mul(h, one_plus_eps), ad.spmm(adj, h))
        hidden = ad.relu(ad.bias_add(ad.matmul(agg, params[f"backbone.{layer}.mlp.w1"]),
                                     params[f"backbone.{layer}.mlp.b1"]))
        h = ad.bias_add(ad.matmul(hidden, params[f"backbone.{layer}.mlp.w2"]),
                        params[f"backbone.{layer}.mlp.b2"])
        if layer < config.num_gnn_layers - 1:
            h = ad.dropout(h, config.dropout, rng, training)
    return h


def project_embed(z: Tensor, params: ModelParams, ln_eps: float) -> Tensor:
    return ad.layer_norm_rows(ad.matmul(z, params["proj.weight"]),
                              params["proj.ln.gamma"], params["proj.ln.beta"], ln_eps)


def anchor_features(assign: AnchorAssignment, h: Tensor) -> Tensor:
    """Per-community means of node embeddings (gradient spreads back as
    1/|community| to each member)."""
    if assign.num_nodes != h.shape[0]:
        raise ShapeError(f"assignment covers {assign.num_nodes} nodes, embeddings have {h.shape[0]} rows")
    return ad.matmul(Tensor(assign.mean_matrix()), h)


def attention_block(q_input: Tensor, kv_input: Tensor, params: ModelParams, prefix: str,
                    dropout_rate: float, ln_eps: float, rng: np.random.Generator,
                    training: bool, trace: Optional[dict] = None) -> Tensor:
    """Single-head scaled dot-product attention + FFN, both with residual
    and LN. Self-attention when q_input is kv_input, cross-attention
    otherwise; the residual stream is always q_input."""
    if q_input.shape[1] != kv_input.shape[1]:
        raise ShapeError(f"query dim {q_input.shape[1]} != key/value dim {kv_input.shape[1]}")
    dim = q_input.shape[1]
    q = ad.matmul(q_input, params[f"{prefix}.wq"])
    k = ad.matmul(kv_input, params[f"{prefix}.wk"])
    v = ad.matmul(kv_input, params[f"{prefix}.wv"])
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(dim))
    attn = ad.softmax_rows(scores)
    if trace is not None:
        trace.setdefault("attention", []).append((prefix, attn.data))
    attn = ad.dropout(attn, dropout_rate, rng, training)
    mixed = ad.matmul(attn, v)
    h1 = ad.layer_norm_rows(ad.add(q_input, mixed),
                            params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"], ln_eps)
    ffn_hidden = ad.relu(ad.bias_add(ad.matmul(h1, params[f"{prefix}.ffn.w1"]),
                                     params[f"{prefix}.ffn.b1"]))
    ffn_hidden = ad.dropout(ffn_hidden, dropout_rate, rng, training)
    ffn_out = ad.bias_add(ad.matmul(ffn_hidden, params[f"{prefix}.ffn.w2"]),
                          params[f"{prefix}.ffn.b2"])
    return ad.layer_norm_rows(ad.add(h1, ffn_out),
                              params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"], ln_eps)


def full_attention_block(h: Tensor, params: ModelParams, dropout_rate: float, ln_eps: float,
                         rng: np.random.Generator, training: bool,
                         trace: Optional[dict] = None) -> Tensor:
    """Node-to-node baseline: the attention block applied to all N nodes."""
    return attention_block(h, h, params, "full", dropout_rate, ln_eps, rng, training, trace)


def readout_classify(h: Tensor, params: ModelParams) -> Tensor:
    """Mean-pool node rows, then affine map to class logits (rank 1)."""
    pooled = ad.reshape(ad.mean_rows(h), (1, h.shape[1]))
    logits = ad.bias_add(ad.matmul(pooled, params["head.weight"]), params["head.bias"])
    return ad.reshape(logits, (logits.shape[1],))


def model_forward(g: Graph, anchor_assign: Optional[AnchorAssignment], params: ModelParams,
                  config: ModelConfig, rng: np.random.Generator, training: bool,
                  trace: Optional[dict] = None) -> Tensor:
    """Whole-network forward pass for one graph; returns class logits."""
    x = Tensor(g.features)
    if config.backbone == "gcn":
        z = gcn_forward(x, cached_adjacency(g, "normalized"), params, config, rng, training)
    else:
        z = gin_forward(x, cached_adjacency(g, "plain"), params, config, rng, training)
    h = project_embed(z, params, config.ln_eps)
    if config.anchor_mode == "full":
        out = full_attention_block(h, params, config.dropout, config.ln_eps, rng, training, trace)
    else:
        if anchor_assign is None:
            raise ConfigError("anchor assignment is required outside full-attention mode")
        p = anchor_features(anchor_assign, h)
        p_mixed = attention_block(p, p, params, "aasa", config.dropout, config.ln_eps,
                                  rng, training, trace)
        out = attention_block(h, p_mixed, params, "anca", config.dropout, config.ln_eps,
                              rng, training, trace)
    return readout_classify(out, params)


# --- checkpoints -------------------------------------------------------------

_CKPT_MAGIC = b"AGFPARAMS"
_CKPT_VERSION = 1


def save_params(params: ModelParams, path) -> None:
    """Versioned binary checkpoint: name, shape, raw little-endian float64
    values per parameter. Round-trips exactly."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + b" %d\n" % _CKPT_VERSION)
        fh.write(b"%d\n" % len(params.tensors))
        for name, t in params.items():
            dims = " ".join(str(d) for d in t.shape)
            fh.write(f"{name} {t.ndim}{' ' + dims if dims else ''}\n".encode())
            fh.write(struct.pack("<q", t.size))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_params(path) -> ModelParams:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != _CKPT_MAGIC or int(header[1]) != _CKPT_VERSION:
            raise DataError(f"{path}: not a version-{_CKPT_VERSION} checkpoint")
        count = int(fh.readline())
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            fields = fh.readline().decode().split()
            name, ndim = fields[0], int(fields[1])
            shape = tuple(int(d) for d in fields[2:2 + ndim])
            (size,) = struct.unpack("<q", fh.read(8))
            raw = fh.read(8 * size)
            if len(raw) != 8 * size:
                raise DataError(f"{path}: truncated values for parameter {name!r}")
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            tensors[name] = ad.parameter(arr)
    return ModelParams(tensors)
