"""Graph classifiers over connectome-style graphs.

Three models share the autodiff core:

* ResidualGCN: a stack of graph convolutions whose per-layer outputs are
  concatenated, mean-pooled over nodes, and classified by a small MLP.
* Exphormer: a sparse graph transformer attending over an interaction graph
  made of local edges, random-expander edges, and global virtual nodes, so
  the attention edge budget stays O(|V| + |E|).
* AttnResidualGCN: ResidualGCN with a sparse attention block inserted after
  each convolution or after the concatenation, applied per forward with a
  configured probability.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    concat_cols,
    concat_rows,
    dropout,
    expand_col_blocks,
    gather_rows,
    layer_norm,
    matmul,
    mean_pool_rows,
    mul,
    relu,
    scale,
    segment_sum_rows,
    softmax_segments,
    sparse_aggregate,
    sum_col_blocks,
)
from .data import ConnectomeGraph
from .errors import ConfigError, ShapeError
from .rng import as_generator, seeded_rng

TAG_LOCAL, TAG_EXPANDER, TAG_GLOBAL, TAG_SELF = 0, 1, 2, 3
_TAG_NAMES = {TAG_LOCAL: "local", TAG_EXPANDER: "expander",
              TAG_GLOBAL: "global", TAG_SELF: "self"}


@dataclass
class ResidualGCNConfig:
    num_gcn_layers: int = 3
    hidden_dim: int = 64
    mlp_hidden: int = 64
    dropout: float = 0.1
    use_edge_weights: bool = True

    def validate(self) -> None:
        if self.num_gcn_layers < 1:
            raise ConfigError("num_gcn_layers must be >= 1")
        if self.hidden_dim < 1 or self.mlp_hidden < 1:
            raise ConfigError("hidden dims must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class ExphormerConfig:
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    dropout: float = 0.1
    attention_dropout: float = 0.3
    expander_degree: int = 4
    num_global_nodes: int = 1
    structural_encoding: str = "degree"  # "none" or "degree"

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.num_heads < 1 or self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} must divide into {self.num_heads} heads")
        if self.expander_degree < 2 or self.expander_degree % 2 != 0:
            raise ConfigError("expander_degree must be even and >= 2")
        if self.num_global_nodes < 0:
            raise ConfigError("num_global_nodes must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.attention_dropout < 1.0:
            raise ConfigError(
                f"attention_dropout must be in [0, 1), got {self.attention_dropout}")
        if self.structural_encoding not in ("none", "degree"):
            raise ConfigError("structural_encoding must be 'none' or 'degree'")


@dataclass
class AttnVariantConfig:
    placement: str = "after_concat"  # or "after_each_gcn"
    apply_probability: float = 1.0
    num_heads: int = 4
    attention_dropout: float = 0.3

    def validate(self) -> None:
        if self.placement not in ("after_each_gcn", "after_concat"):
            raise ConfigError(
                "placement must be 'after_each_gcn' or 'after_concat'")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ConfigError("apply_probability must be in [0, 1]")
        if self.num_heads < 1:
            raise ConfigError("num_heads must be >= 1")


@dataclass(eq=False)
class InteractionGraph:
    """Directed attention edge list with per-edge provenance tags.

    Edges are sorted by (dst, src) and deduplicated; when the same directed
    pair arises from several components, the tag priority is
    local > expander > global (self-loops never collide).
    """

    num_real: int
    num_global: int
    src: np.ndarray   # (E,) int64
    dst: np.ndarray   # (E,) int64
    tags: np.ndarray  # (E,) int64

    @property
    def num_nodes(self) -> int:
        return self.num_real + self.num_global

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    def tag_counts(self) -> dict[str, int]:
        return {name: int(np.count_nonzero(self.tags == tag))
                for tag, name in _TAG_NAMES.items()}


def node_degrees(g: ConnectomeGraph) -> np.ndarray:
    """Undirected degree of every node (edge weights ignored)."""
    deg = np.zeros(g.n, dtype=np.int64)
    if g.num_edges:
        np.add.at(deg, g.edges[:, 0], 1)
        np.add.at(deg, g.edges[:, 1], 1)
    return deg


def normalized_adjacency(g: ConnectomeGraph, use_edge_weights: bool = True):
    """Symmetric-normalized adjacency with self-loops, as a directed edge list.

    Returns (edges, weights) with edge (u -> v) carrying
    w(u,v) / sqrt(dhat(u) * dhat(v)) where dhat is degree-plus-self-loop; with
    no edges this is exactly the identity.
    """
    n = g.n
    if g.num_edges:
        w = g.weights if use_edge_weights else np.ones(g.num_edges)
        deg = np.ones(n)
        np.add.at(deg, g.edges[:, 0], w)
        np.add.at(deg, g.edges[:, 1], w)
        u, v = g.edges[:, 0], g.edges[:, 1]
        loops = np.arange(n, dtype=np.int64)
        src = np.concatenate([u, v, loops])
        dst = np.concatenate([v, u, loops])
        wts = np.concatenate([w, w, np.ones(n)])
        wts = wts / np.sqrt(deg[src] * deg[dst])
    else:
        loops = np.arange(n, dtype=np.int64)
        src = dst = loops
        wts = np.ones(n)
    return np.stack([src, dst], axis=1), wts


def gcn_layer(adj_edges: np.ndarray, adj_weights: np.ndarray, h: Tensor,
              weight: Tensor, tape: Tape | None = None) -> Tensor:
    """One graph convolution: ReLU of the normalized-adjacency propagation."""
    if h.cols != weight.rows:
        raise ShapeError(f"gcn_layer: feature dim {h.cols} vs weight {weight.shape}")
    return relu(sparse_aggregate(adj_edges, adj_weights, matmul(h, weight, tape),
                                 tape), tape)


def build_expander(n: int, degree: int, seed=0) -> np.ndarray:
    """Union of degree/2 random Hamiltonian cycles on [0, n).

    Returns deduplicated undirected edges (u < v), sorted. The result is
    always connected and every node has degree between 2 and `degree`.
    """
    if degree < 2 or degree % 2 != 0:
        raise ConfigError(f"expander degree must be even and >= 2, got {degree}")
    if n < 3:
        raise ConfigError(f"expander needs n >= 3 nodes, got {n}")
    rng = as_generator(seed)
    rows = []
    for _ in range(degree // 2):
        perm = rng.permutation(n)
        nxt = np.roll(perm, -1)
        rows.append(np.stack([np.minimum(perm, nxt), np.maximum(perm, nxt)], axis=1))
    return np.unique(np.concatenate(rows, axis=0), axis=0).astype(np.int64)


def _assemble_interaction(num_real: int, num_global: int, src, dst, tags
                          ) -> InteractionGraph:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    tags = np.asarray(tags, dtype=np.int64)
    total = num_real + num_global
    key = src * total + dst
    order = np.lexsort((tags, key))
    key, src, dst, tags = key[order], src[order], dst[order], tags[order]
    first = np.r_[True, key[1:] != key[:-1]]
    src, dst, tags = src[first], dst[first], tags[first]
    order = np.lexsort((src, dst))
    return InteractionGraph(num_real=num_real, num_global=num_global,
                            src=src[order], dst=dst[order], tags=tags[order])


def build_interaction_graph(g: ConnectomeGraph, cfg: ExphormerConfig,
                            seed=0) -> InteractionGraph:
    """Merge local, expander, and global-node attention edges plus self-loops.

    Local edges are both directions of the graph's edges; expander edges come
    from build_expander over the real nodes (skipped for n < 3); each global
    virtual node connects to and from every real node.
    """
    cfg.validate()
    n, gl = g.n, cfg.num_global_nodes
    total = n + gl
    srcs, dsts, tags = [], [], []
    if g.num_edges:
        u, v = g.edges[:, 0], g.edges[:, 1]
        srcs += [u, v]
        dsts += [v, u]
        tags += [np.full(u.size, TAG_LOCAL)] * 2
    if n >= 3:
        exp = build_expander(n, cfg.expander_degree, seed)
        srcs += [exp[:, 0], exp[:, 1]]
        dsts += [exp[:, 1], exp[:, 0]]
        tags += [np.full(exp.shape[0], TAG_EXPANDER)] * 2
    if gl:
        real = np.arange(n, dtype=np.int64)
        for k in range(gl):
            gid = np.full(n, n + k, dtype=np.int64)
            srcs += [gid, real]
            dsts += [real, gid]
            tags += [np.full(n, TAG_GLOBAL)] * 2
    loops = np.arange(total, dtype=np.int64)
    srcs.append(loops)
    dsts.append(loops)
    tags.append(np.full(total, TAG_SELF))
    return _assemble_interaction(n, gl, np.concatenate(srcs),
                                 np.concatenate(dsts), np.concatenate(tags))


def local_interaction_graph(g: ConnectomeGraph) -> InteractionGraph:
    """Interaction graph of just the local edges plus self-loops (no virtuals)."""
    srcs, dsts, tags = [], [], []
    if g.num_edges:
        u, v = g.edges[:, 0], g.edges[:, 1]
        srcs += [u, v]
        dsts += [v, u]
        tags += [np.full(u.size, TAG_LOCAL)] * 2
    loops = np.arange(g.n, dtype=np.int64)
    srcs.append(loops)
    dsts.append(loops)
    tags.append(np.full(g.n, TAG_SELF))
    return _assemble_interaction(g.n, 0, np.concatenate(srcs),
                                 np.concatenate(dsts), np.concatenate(tags))


def sparse_attention(ig: InteractionGraph, h: Tensor, p: dict[str, Tensor],
                     num_heads: int, attention_dropout: float, dropout_rate: float,
                     mode: str, rng, tape: Tape | None,
                     capture: list | None = None) -> Tensor:
    """Multi-head attention restricted to interaction-graph edges.

    Per head, scores for edges (u -> v) are scaled dot products of v's query
    and u's key, normalized by softmax over each destination's in-edges,
    then used to mix value rows. Follows with output projection, residual +
    layer norm, and a feed-forward block with residual + layer norm.

    When capture is a list, the post-softmax weights (E x heads) are appended
    to it before attention dropout.
    """
    if h.cols % num_heads != 0:
        raise ShapeError(f"{h.cols} features not divisible by {num_heads} heads")
    head_dim = h.cols // num_heads
    q = matmul(h, p["q"], tape)
    k = matmul(h, p["k"], tape)
    v = matmul(h, p["v"], tape)
    qe = gather_rows(q, ig.dst, tape)
    ke = gather_rows(k, ig.src, tape)
    scores = scale(sum_col_blocks(mul(qe, ke, tape), num_heads, tape),
                   1.0 / math.sqrt(head_dim), tape)
    weights = softmax_segments(scores, ig.dst, tape)
    if capture is not None:
        capture.append(weights.data.copy())
    weights = dropout(weights, attention_dropout, mode, rng, tape)
    ve = gather_rows(v, ig.src, tape)
    mixed = mul(ve, expand_col_blocks(weights, head_dim, tape), tape)
    ctx = segment_sum_rows(mixed, ig.dst, h.rows, tape)
    attn = add(matmul(ctx, p["out"], tape), p["out_bias"], tape)
    attn = dropout(attn, dropout_rate, mode, rng, tape)
    h1 = layer_norm(add(h, attn, tape), p["ln1_gain"], p["ln1_bias"], tape)
    ff = relu(add(matmul(h1, p["ffn_w1"], tape), p["ffn_b1"], tape), tape)
    ff = add(matmul(ff, p["ffn_w2"], tape), p["ffn_b2"], tape)
    ff = dropout(ff, dropout_rate, mode, rng, tape)
    return layer_norm(add(h1, ff, tape), p["ln2_gain"], p["ln2_bias"], tape)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class _ParamBuilder:
    """Creates parameters whose init stream depends only on (seed, name)."""

    def __init__(self, seed: int):
        self.seed = seed
        self.params: dict[str, Tensor] = {}

    def weight(self, name: str, fan_in: int, fan_out: int) -> None:
        rng = seeded_rng(self.seed, "param", name)
        self.params[name] = Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True)

    def zeros(self, name: str, cols: int) -> None:
        self.params[name] = Tensor(np.zeros((1, cols)), requires_grad=True)

    def ones(self, name: str, cols: int) -> None:
        self.params[name] = Tensor(np.ones((1, cols)), requires_grad=True)

    def attention_block(self, prefix: str, width: int) -> None:
        for proj in ("q", "k", "v", "out"):
            self.weight(f"{prefix}.{proj}", width, width)
        self.zeros(f"{prefix}.out_bias", width)
        self.ones(f"{prefix}.ln1_gain", width)
        self.zeros(f"{prefix}.ln1_bias", width)
        self.weight(f"{prefix}.ffn_w1", width, 2 * width)
        self.zeros(f"{prefix}.ffn_b1", 2 * width)
        self.weight(f"{prefix}.ffn_w2", 2 * width, width)
        self.zeros(f"{prefix}.ffn_b2", width)
        self.ones(f"{prefix}.ln2_gain", width)
        self.zeros(f"{prefix}.ln2_bias", width)


def _block_params(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    cut = len(prefix) + 1
    return {name[cut:]: t for name, t in params.items()
            if name.startswith(prefix + ".")}


@dataclass(eq=False)
class PreparedGCN:
    x: Tensor
    adj_edges: np.ndarray
    adj_weights: np.ndarray
    label: int
    n: int
    local_ig: InteractionGraph | None = None


@dataclass(eq=False)
class PreparedExphormer:
    x: Tensor
    ig: InteractionGraph
    label: int
    n: int


class ResidualGCN:
    """GCN stack with concatenated layer outputs and an MLP head."""

    kind = "residual_gcn"

    def __init__(self, cfg: ResidualGCNConfig, in_dim: int, num_classes: int,
                 seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.seed = seed
        b = _ParamBuilder(seed)
        prev = in_dim
        for i in range(cfg.num_gcn_layers):
            b.weight(f"gcn{i}.weight", prev, cfg.hidden_dim)
            prev = cfg.hidden_dim
        concat_dim = cfg.num_gcn_layers * cfg.hidden_dim
        b.weight("mlp.w1", concat_dim, cfg.mlp_hidden)
        b.zeros("mlp.b1", cfg.mlp_hidden)
        b.weight("mlp.w2", cfg.mlp_hidden, num_classes)
        b.zeros("mlp.b2", num_classes)
        self.params = b.params

    def config_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim,
                "num_classes": self.num_classes,
                "config": dataclasses.asdict(self.cfg)}

    def prepare(self, graph: ConnectomeGraph) -> PreparedGCN:
        edges, weights = normalized_adjacency(graph, self.cfg.use_edge_weights)
        return PreparedGCN(x=Tensor(graph.x), adj_edges=edges,
                           adj_weights=weights, label=graph.label, n=graph.n)

    def prepare_dataset(self, graphs, run_seed: int = 0) -> list[PreparedGCN]:
        return [self.prepare(g) for g in graphs]

    def _gcn_stack(self, prep: PreparedGCN, tape) -> list[Tensor]:
        h = prep.x
        outs = []
        for i in range(self.cfg.num_gcn_layers):
            h = gcn_layer(prep.adj_edges, prep.adj_weights, h,
                          self.params[f"gcn{i}.weight"], tape)
            outs.append(h)
        return outs

    def _head(self, pooled: Tensor, mode: str, tape, rng) -> Tensor:
        z = dropout(pooled, self.cfg.dropout, mode, rng, tape)
        z = relu(add(matmul(z, self.params["mlp.w1"], tape),
                     self.params["mlp.b1"], tape), tape)
        z = dropout(z, self.cfg.dropout, mode, rng, tape)
        return add(matmul(z, self.params["mlp.w2"], tape),
                   self.params["mlp.b2"], tape)

    def forward(self, prep: PreparedGCN, mode: str = "eval",
                tape: Tape | None = None, rng=None) -> Tensor:
        if mode == "train" and rng is None:
            rng = seeded_rng(self.seed, "forward")
        hcat = concat_cols(self._gcn_stack(prep, tape), tape)
        return self._head(mean_pool_rows(hcat, tape), mode, tape, rng)


class Exphormer:
    """Sparse graph transformer over a local + expander + global edge set."""

    kind = "exphormer"

    def __init__(self, cfg: ExphormerConfig, in_dim: int, num_classes: int,
                 seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.in_dim = in_dim
        self.num_classes = num_classes
        self.seed = seed
        b = _ParamBuilder(seed)
        in_total = in_dim + (1 if cfg.structural_encoding == "degree" else 0)
        b.weight("input.w", in_total, cfg.hidden_dim)
        b.zeros("input.b", cfg.hidden_dim)
        if cfg.num_global_nodes:
            b.weight("global.emb", cfg.num_global_nodes, cfg.hidden_dim)
        for l in range(cfg.num_layers):
            b.attention_block(f"layer{l}", cfg.hidden_dim)
        b.weight("head.w1", cfg.hidden_dim, cfg.hidden_dim)
        b.zeros("head.b1", cfg.hidden_dim)
        b.weight("head.w2", cfg.hidden_dim, num_classes)
        b.zeros("head.b2", num_classes)
        self.params = b.params

    def config_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim,
                "num_classes": self.num_classes,
                "config": dataclasses.asdict(self.cfg)}

    def prepare(self, graph: ConnectomeGraph, ig_seed=0) -> PreparedExphormer:
        ig = build_interaction_graph(graph, self.cfg, ig_seed)
        x = graph.x
        if self.cfg.structural_encoding == "degree":
            enc = np.log1p(node_degrees(graph)).reshape(-1, 1)
            x = np.concatenate([x, enc], axis=1)
        return PreparedExphormer(x=Tensor(x), ig=ig, label=graph.label, n=graph.n)

    def prepare_dataset(self, graphs, run_seed: int = 0) -> list[PreparedExphormer]:
        # Expander/global edges are fixed per (run seed, graph index), not
        # resampled per epoch, so evaluation stays deterministic.
        return [self.prepare(g, seeded_rng(run_seed, "interaction", i))
                for i, g in enumerate(graphs)]

    def forward(self, prep: PreparedExphormer, mode: str = "eval",
                tape: Tape | None = None, rng=None,
                attn_capture: list | None = None) -> Tensor:
        if mode == "train" and rng is None:
            rng = seeded_rng(self.seed, "forward")
        cfg = self.cfg
        h = add(matmul(prep.x, self.params["input.w"], tape),
                self.params["input.b"], tape)
        if cfg.num_global_nodes:
            h = concat_rows([h, self.params["global.emb"]], tape)
        for l in range(cfg.num_layers):
            h = sparse_attention(prep.ig, h, _block_params(self.params, f"layer{l}"),
                                 cfg.num_heads, cfg.attention_dropout, cfg.dropout,
                                 mode, rng, tape, capture=attn_capture)
        real = gather_rows(h, np.arange(prep.n), tape)
        z = dropout(mean_pool_rows(real, tape), cfg.dropout, mode, rng, tape)
        z = relu(add(matmul(z, self.params["head.w1"], tape),
                     self.params["head.b1"], tape), tape)
        z = dropout(z, cfg.dropout, mode, rng, tape)
        return add(matmul(z, self.params["head.w2"], tape),
                   self.params["head.b2"], tape)


class AttnResidualGCN(ResidualGCN):
    """ResidualGCN with probabilistically inserted sparse attention blocks.

    The attention operates over the graph's local edges plus self-loops only.
    In training, insertion is a single Bernoulli draw per forward; in eval,
    attention is always applied when apply_probability > 0. With probability 0
    the forward is bit-identical to the plain ResidualGCN.
    """

    kind = "attn_residual_gcn"

    def __init__(self, cfg: ResidualGCNConfig, variant: AttnVariantConfig,
                 in_dim: int, num_classes: int, seed: int = 0):
        super().__init__(cfg, in_dim, num_classes, seed)
        variant.validate()
        self.variant = variant
        self.attn_calls = 0
        concat_dim = cfg.num_gcn_layers * cfg.hidden_dim
        width = cfg.hidden_dim if variant.placement == "after_each_gcn" else concat_dim
        if width % variant.num_heads != 0:
            raise ConfigError(
                f"attention width {width} not divisible by {variant.num_heads} heads")
        b = _ParamBuilder(seed)
        b.params = self.params
        if variant.placement == "after_each_gcn":
            for i in range(cfg.num_gcn_layers):
                b.attention_block(f"attn{i}", width)
        else:
            b.attention_block("attn_cat", width)

    def config_dict(self) -> dict:
        d = super().config_dict()
        d["variant"] = dataclasses.asdict(self.variant)
        return d

    def prepare(self, graph: ConnectomeGraph) -> PreparedGCN:
        prep = super().prepare(graph)
        prep.local_ig = local_interaction_graph(graph)
        return prep

    def _apply_attention(self, mode: str, rng) -> bool:
        p = self.variant.apply_probability
        if p <= 0.0:
            return False
        if p >= 1.0 or mode == "eval":
            return True
        return bool(rng.random() < p)

    def forward(self, prep: PreparedGCN, mode: str = "eval",
                tape: Tape | None = None, rng=None) -> Tensor:
        if mode == "train" and rng is None:
            rng = seeded_rng(self.seed, "forward")
        apply_attn = self._apply_attention(mode, rng)
        use_per_layer = self.variant.placement == "after_each_gcn"
        h = prep.x
        outs = []
        for i in range(self.cfg.num_gcn_layers):
            h = gcn_layer(prep.adj_edges, prep.adj_weights, h,
                          self.params[f"gcn{i}.weight"], tape)
            if apply_attn and use_per_layer:
                h = sparse_attention(prep.local_ig, h,
                                     _block_params(self.params, f"attn{i}"),
                                     self.variant.num_heads,
                                     self.variant.attention_dropout,
                                     self.cfg.dropout, mode, rng, tape)
                self.attn_calls += 1
            outs.append(h)
        hcat = concat_cols(outs, tape)
        if apply_attn and not use_per_layer:
            hcat = sparse_attention(prep.local_ig, hcat,
                                    _block_params(self.params, "attn_cat"),
                                    self.variant.num_heads,
                                    self.variant.attention_dropout,
                                    self.cfg.dropout, mode, rng, tape)
            self.attn_calls += 1
        return self._head(mean_pool_rows(hcat, tape), mode, tape, rng)


def build_model(kind: str, in_dim: int, num_classes: int, seed: int = 0,
                gcn_cfg: ResidualGCNConfig | None = None,
                exphormer_cfg: ExphormerConfig | None = None,
                variant: AttnVariantConfig | None = None):
    if kind == "residual_gcn":
        return ResidualGCN(gcn_cfg or ResidualGCNConfig(), in_dim, num_classes, seed)
    if kind == "exphormer":
        return Exphormer(exphormer_cfg or ExphormerConfig(), in_dim, num_classes,
                         seed)
    if kind == "attn_residual_gcn":
        return AttnResidualGCN(gcn_cfg or ResidualGCNConfig(),
                               variant or AttnVariantConfig(), in_dim,
                               num_classes, seed)
    raise ConfigError(f"unknown model kind {kind!r}")


_CHECKPOINT_MAGIC = b"CBCK1\n"


def save_checkpoint(path, params: dict[str, Tensor], config: dict) -> None:
    """Single-file container: JSON header plus little-endian float64 buffers."""
    names = sorted(params)
    header = {
        "config": config,
        "tensors": [{"name": n, "rows": params[n].rows, "cols": params[n].cols}
                    for n in names],
    }
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ConfigError(f"not a checkpoint file: {path}")
        header = json.loads(fh.readline().decode("utf-8"))
        params = {}
        for entry in header["tensors"]:
            rows, cols = entry["rows"], entry["cols"]
            buf = fh.read(rows * cols * 8)
            arr = np.frombuffer(buf, dtype="<f8").reshape(rows, cols).copy()
            params[entry["name"]] = Tensor(arr, requires_grad=True)
    return params, header["config"]


def load_params(model, params: dict[str, Tensor]) -> None:
    """Replace a model's parameter values with checkpointed ones, bit-exact."""
    if set(params) != set(model.params):
        missing = set(model.params) ^ set(params)
        raise ConfigError(f"checkpoint parameter names differ: {sorted(missing)}")
    for name, t in params.items():
        if t.shape != model.params[name].shape:
            raise ShapeError(
                f"checkpoint shape {t.shape} != model shape "
                f"{model.params[name].shape} for {name}")
        model.params[name].data = t.data.copy()
