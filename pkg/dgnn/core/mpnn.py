"""
Message passing network over joined molecule pairs.

h0 = embed(x); for t in 1..T: m = sum over in-edges of A(e_vw) h_w, h = GRU(h, m);
then one of three readouts and a linear head to a scalar. The edge network A
and the GRU are shared by all steps.

Minibatches are block-diagonal unions of joined graphs (GraphBatch), so one
tape covers a whole batch and the edge matrices are computed once per forward
pass.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dgnn.core import autodiff as ad
from dgnn.core.molgraph import EDGE_FEATURES, NODE_FEATURES, Normalizer, join
from dgnn.core.settings import ModelConfig
from dgnn.errors import ConfigError, GraphIndexError, ShapeError
from dgnn.utils.logging_colors import logger
from dgnn.utils.seeding import rng as seeded_rng

GRU_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


@dataclass(frozen=True)
class PreparedGraph:
    """A joined graph with its (optionally normalized) node features."""
    x: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    edge_attr: np.ndarray
    node_part: np.ndarray
    global_node_index: Optional[int]

    @property
    def num_nodes(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class GraphBatch:
    x: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    edge_attr: np.ndarray
    node_graph: np.ndarray
    node_segment: np.ndarray
    global_index: Optional[np.ndarray]
    num_graphs: int

    @property
    def num_nodes(self):
        return self.x.shape[0]

    @classmethod
    def collate(cls, graphs, dtype=np.float64):
        xs, senders, receivers, attrs, node_graph, node_segment, globals_ = [], [], [], [], [], [], []
        offset = 0
        for b, g in enumerate(graphs):
            n = g.num_nodes
            xs.append(g.x)
            senders.append(g.senders + offset)
            receivers.append(g.receivers + offset)
            attrs.append(g.edge_attr)
            node_graph.append(np.full(n, b, dtype=np.int64))
            # DG reads each molecule out separately: segment 2b for the first, 2b+1 for the second
            node_segment.append(2 * b + np.minimum(g.node_part, 1))
            if g.global_node_index is not None:
                globals_.append(g.global_node_index + offset)
            offset += n

        if globals_ and len(globals_) != len(graphs):
            raise ShapeError("cannot batch graphs with and without a global node")

        def cat(parts, width=None, kind=np.int64):
            if not parts:
                return np.zeros((0, width) if width else 0, dtype=kind)
            return np.concatenate(parts, axis=0).astype(kind, copy=False)

        return cls(
            x=cat(xs, NODE_FEATURES, dtype),
            senders=cat(senders),
            receivers=cat(receivers),
            edge_attr=cat(attrs, EDGE_FEATURES, dtype),
            node_graph=cat(node_graph),
            node_segment=cat(node_segment),
            global_index=np.asarray(globals_, dtype=np.int64) if globals_ else None,
            num_graphs=len(graphs),
        )


def prepare(sample, strategy, normalizer: Optional[Normalizer] = None) -> PreparedGraph:
    jg = join(sample, strategy)
    x = normalizer.apply_joined(jg) if normalizer is not None else jg.x
    return PreparedGraph(x, jg.senders, jg.receivers, jg.edge_attr, jg.node_part, jg.global_node_index)


# --- parameters -------------------------------------------------------------


def _three_layer(params, prefix, rng, fan_in, width, fan_out, dtype):
    widths = (fan_in, width, width, fan_out)
    for k in range(3):
        params[f"{prefix}.W{k}"] = ad.glorot(rng, widths[k], widths[k + 1], name=f"{prefix}.W{k}", dtype=dtype)
        params[f"{prefix}.b{k}"] = ad.zeros(widths[k + 1], name=f"{prefix}.b{k}", dtype=dtype)


def init_params(config: ModelConfig, dtype=np.float64):
    """All trainable tensors of the network, keyed by name, drawn from one seeded stream."""
    rng = seeded_rng(config.seed, "mpnn", "init")
    d, w, d_out = config.hidden, config.net_width, config.out_width
    params = {
        "embed.W": ad.glorot(rng, NODE_FEATURES, d, name="embed.W", dtype=dtype),
        "embed.b": ad.zeros(d, name="embed.b", dtype=dtype),
    }
    _three_layer(params, "edge", rng, EDGE_FEATURES, w, d * d, dtype)
    for name in GRU_NAMES:
        key = f"gru.{name}"
        params[key] = ad.zeros(d, name=key, dtype=dtype) if name.startswith("b") else ad.glorot(rng, d, d, name=key, dtype=dtype)

    i_width = (config.steps + 1) * d if config.readout == "CR" else 2 * d
    _three_layer(params, "readout.i", rng, i_width, w, d_out, dtype)
    _three_layer(params, "readout.j", rng, d, w, d_out, dtype)

    head_in = 2 * d_out if config.strategy == "DG" else d_out
    params["head.W"] = ad.glorot(rng, head_in, 1, name="head.W", dtype=dtype)
    params["head.b"] = ad.zeros(1, name="head.b", dtype=dtype)
    return params


def check_params(config: ModelConfig, params):
    expected = init_params(config)
    missing = sorted(set(expected) - set(params))
    if missing:
        raise ConfigError(f"parameters missing for this configuration: {', '.join(missing)}")
    for name, ref in expected.items():
        if params[name].shape != ref.shape:
            raise ShapeError(f"parameter {name} has shape {params[name].shape}, configuration needs {ref.shape}")


def gru_params(params):
    return ad.GruParams(**{name: params[f"gru.{name}"] for name in GRU_NAMES})


def mlp3(x, params, prefix):
    h = ad.dense(x, params[f"{prefix}.W0"], params[f"{prefix}.b0"], "relu")
    h = ad.dense(h, params[f"{prefix}.W1"], params[f"{prefix}.b1"], "relu")
    return ad.dense(h, params[f"{prefix}.W2"], params[f"{prefix}.b2"])


# --- network pieces ---------------------------------------------------------


def embed_initial(x, params):
    return ad.dense(x, params["embed.W"], params["embed.b"])


def edge_matrices(edge_feats, params):
    """A(e) for every edge, reshaped row-major to E x d x d."""
    d = params["embed.W"].shape[1]
    flat = mlp3(ad.as_tensor(edge_feats, dtype=params["edge.W0"].dtype), params, "edge")
    return ad.reshape(flat, (flat.shape[0], d, d))


def message_step(h, edges, edge_feats, params, edge_mats=None):
    senders, receivers = edges
    if edge_mats is None:
        edge_mats = edge_matrices(edge_feats, params)
    messages = ad.batched_matvec(edge_mats, ad.take_rows(h, senders))
    m = ad.segment_sum(messages, receivers, h.shape[0])
    return ad.gru_cell(h, m, gru_params(params))


def _segments(n, segments, num_segments):
    if segments is None:
        return np.zeros(n, dtype=np.int64), 1
    return segments, num_segments


def readout_gated_sum(hT, h0, params, segments=None, num_segments=None):
    segments, num_segments = _segments(hT.shape[0], segments, num_segments)
    gate = ad.sigmoid(mlp3(ad.concat([hT, h0], axis=1), params, "readout.i"))
    return ad.segment_sum(gate * mlp3(hT, params, "readout.j"), segments, num_segments)


def readout_global_node(hT, h0, global_node_index, params):
    if global_node_index is None:
        raise GraphIndexError("global readout needs a global node (strategy GN)")
    index = np.atleast_1d(np.asarray(global_node_index, dtype=np.int64))
    hg_T = ad.take_rows(hT, index)
    hg_0 = ad.take_rows(h0, index)
    gate = ad.sigmoid(mlp3(ad.concat([hg_T, hg_0], axis=1), params, "readout.i"))
    return gate * mlp3(hg_T, params, "readout.j")


def readout_concat(h_all_steps, params, segments=None, num_segments=None):
    hT = h_all_steps[-1]
    segments, num_segments = _segments(hT.shape[0], segments, num_segments)
    h_final = ad.concat(h_all_steps, axis=1) if len(h_all_steps) > 1 else hT
    gate = ad.sigmoid(mlp3(h_final, params, "readout.i"))
    return ad.segment_sum(gate * mlp3(hT, params, "readout.j"), segments, num_segments)


def forward(batch: GraphBatch, config: ModelConfig, params):
    """Normalized-unit predictions for every graph in the batch, shape (B, 1)."""
    if config.readout == "GR" and config.strategy != "GN":
        raise ConfigError("readout GR requires strategy GN")
    dtype = params["embed.W"].dtype
    edges = (batch.senders, batch.receivers)

    h0 = embed_initial(ad.as_tensor(batch.x, dtype=dtype), params)
    edge_mats = edge_matrices(batch.edge_attr, params)
    hs = [h0]
    h = h0
    for _ in range(config.steps):
        h = message_step(h, edges, batch.edge_attr, params, edge_mats)
        hs.append(h)

    if config.strategy == "DG":
        segments, num_segments = batch.node_segment, 2 * batch.num_graphs
    else:
        segments, num_segments = batch.node_graph, batch.num_graphs

    if config.readout == "GR":
        emb = readout_global_node(h, h0, batch.global_index, params)
    elif config.readout == "CR":
        emb = readout_concat(hs, params, segments, num_segments)
    else:
        emb = readout_gated_sum(h, h0, params, segments, num_segments)

    if config.strategy == "DG":
        emb = ad.reshape(emb, (batch.num_graphs, 2 * config.out_width))
    return ad.dense(emb, params["head.W"], params["head.b"])


def predict(sample, config: ModelConfig, params, normalizer: Optional[Normalizer] = None):
    """Scalar prediction in normalized label units for one reaction sample."""
    dtype = params["embed.W"].dtype
    batch = GraphBatch.collate([prepare(sample, config.strategy, normalizer)], dtype=dtype)
    return forward(batch, config, params).item()


class MpnnModel:
    """Config, parameters, feature normalizer and label statistics of one trained network."""

    kind = "mpnn"

    def __init__(self, config: ModelConfig, params=None, normalizer=None, label_mean=0.0, label_std=1.0,
                 dtype=np.float64):
        self.config = config
        self.params = params if params is not None else init_params(config, dtype=dtype)
        self.normalizer = normalizer
        self.label_mean = float(label_mean)
        self.label_std = float(label_std)

    @property
    def dtype(self):
        return self.params["embed.W"].dtype

    def fit_normalizer(self, train_samples):
        if not self.config.normalized:
            self.normalizer = None
            return None
        feats = [join(s, self.config.strategy) for s in train_samples]
        self.normalizer = Normalizer(self.config.norm_columns, self.config.norm_rows)
        self.normalizer.fit([jg.x[jg.atom_mask] for jg in feats])
        logger.debug(f"feature normalizer fitted on {sum(int(jg.atom_mask.sum()) for jg in feats)} atoms")
        return self.normalizer

    def prepare(self, samples):
        return [prepare(s, self.config.strategy, self.normalizer) for s in samples]

    def forward(self, prepared, params=None):
        batch = GraphBatch.collate(prepared, dtype=self.dtype)
        return forward(batch, self.config, params or self.params)

    def predict(self, sample):
        return predict(sample, self.config, self.params, self.normalizer)

    def config_dict(self):
        return self.config.model_dump()

    def describe(self):
        n = sum(p.data.size for p in self.params.values())
        return f"MPNN {self.config.strategy} readout={self.config.readout} d={self.config.hidden} T={self.config.steps} ({n} parameters)"