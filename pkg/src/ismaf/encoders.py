"""Unimodal encoders: text CNN, visual projection, and the social graph with
signed graph attention.

All encoders emit vectors of the shared feature dimension d.  Graph
construction is a pure numpy function over fixed node embeddings; the GAT
layers run on tape tensors so gradients reach the embedding table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, ShapeError, Tensor


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    embed_dim: int
    seq_len: int
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    filters_per_kernel: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.seq_len < max(self.kernel_sizes):
            raise ValueError(
                f"seq_len {self.seq_len} shorter than largest kernel "
                f"{max(self.kernel_sizes)}"
            )
        if self.filters_per_kernel is None:
            object.__setattr__(
                self, "filters_per_kernel", _spread_filters(self.embed_dim, len(self.kernel_sizes))
            )
        if len(self.filters_per_kernel) != len(self.kernel_sizes):
            raise ValueError("one filter count needed per kernel size")
        if sum(self.filters_per_kernel) != self.embed_dim:
            raise ValueError(
                f"filter counts {self.filters_per_kernel} must sum to "
                f"embed_dim {self.embed_dim}"
            )


def _spread_filters(d: int, n_kernels: int) -> tuple[int, ...]:
    if d < n_kernels:
        raise ValueError(f"embed_dim {d} smaller than kernel count {n_kernels}")
    base, extra = divmod(d, n_kernels)
    return tuple(base + (1 if i < extra else 0) for i in range(n_kernels))


@dataclass(frozen=True)
class GatConfig:
    heads: int = 8
    layers: int = 2
    similarity_threshold: float = 0.5
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.heads < 1:
            raise ValueError(f"heads must be >= 1, got {self.heads}")
        if not 0.0 <= self.similarity_threshold < 1.0:
            raise ValueError(
                f"similarity threshold must lie in [0, 1), got {self.similarity_threshold}"
            )

    def head_dim(self, d: int) -> int:
        return math.ceil(d / self.heads)


# ---------------------------------------------------------------------------
# text CNN


def create_text_params(store: ParamStore, cfg: TextEncoderConfig, prefix: str = "text"):
    store.create(f"{prefix}.embed", (cfg.vocab_size, cfg.embed_dim))
    # Token id 0 is padding; its embedding row stays pinned at zero.
    embed = store.value(f"{prefix}.embed")
    embed[0] = 0.0
    for k, f in zip(cfg.kernel_sizes, cfg.filters_per_kernel):
        store.create(f"{prefix}.conv{k}.w", (k * cfg.embed_dim, f), fan=(k * cfg.embed_dim, f))
        store.create(f"{prefix}.conv{k}.b", (f,), init="zeros")


def _validate_tokens(tokens: np.ndarray, cfg: TextEncoderConfig):
    if tokens.size == 0 or tokens.shape[-1] == 0:
        raise ValueError("empty token sequence")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError(
            f"token id out of vocabulary range [0, {cfg.vocab_size}): "
            f"saw {tokens.min()}..{tokens.max()}"
        )


def encode_text_batch(tokens, params, cfg: TextEncoderConfig, prefix: str = "text") -> Tensor:
    """Encode padded token rows [N, seq_len] into text features [N, d].

    Per kernel size: 1-D convolution over the embedded sequence, relu, and a
    global max-pool; the pooled maps are concatenated across kernel sizes.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2 or tokens.shape[1] != cfg.seq_len:
        raise ShapeError(
            f"token batch must be [N, {cfg.seq_len}], got {tokens.shape}"
        )
    _validate_tokens(tokens, cfg)
    n = tokens.shape[0]
    total = n * cfg.seq_len
    emb = ad.gather_rows(params[f"{prefix}.embed"], tokens.reshape(-1))

    pooled = []
    for k, f in zip(cfg.kernel_sizes, cfg.filters_per_kernel):
        w = params[f"{prefix}.conv{k}.w"]
        b = params[f"{prefix}.conv{k}.b"]
        n_windows = total - k + 1
        pre = None
        for j in range(k):
            rows = ad.slice_rows(emb, j, j + n_windows)
            w_j = ad.slice_rows(w, j * cfg.embed_dim, (j + 1) * cfg.embed_dim)
            term = ad.matmul(rows, w_j)
            pre = term if pre is None else ad.add(pre, term)
        acts = ad.relu(ad.add(pre, b))
        # Windows crossing a post boundary are dropped before pooling.
        starts = np.arange(n_windows)
        valid = starts[(starts % cfg.seq_len) <= cfg.seq_len - k]
        segments = valid // cfg.seq_len
        acts_valid = ad.gather_rows(acts, valid)
        pooled.append(ad.segment_max(acts_valid, segments, n))
    return ad.concat(pooled, axis=1)


def encode_text(tokens, params, cfg: TextEncoderConfig, prefix: str = "text") -> Tensor:
    """Encode one padded token sequence into a d-vector."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("empty token sequence")
    out = encode_text_batch(tokens[None, :], params, cfg, prefix=prefix)
    return ad.reshape(out, (cfg.embed_dim,))


# ---------------------------------------------------------------------------
# visual projection


def create_visual_params(store: ParamStore, visual_dim: int, d: int, prefix: str = "visual"):
    store.create(f"{prefix}.w", (visual_dim, d))
    store.create(f"{prefix}.b", (d,), init="zeros")


def project_visual(visual_feat, w, b) -> Tensor:
    """Fully connected projection of backbone features to d, with relu."""
    return ad.relu(ad.linear(ad.as_tensor(visual_feat), w, b))


# ---------------------------------------------------------------------------
# social graph


@dataclass
class SocialGraph:
    """Typed interaction graph over posts, comments and users.

    Edges are stored directed (each undirected pair in both directions, plus
    one self-loop per node) so attention layers can consume them directly.
    """

    node_ids: list[str]
    node_kinds: list[str]
    embeddings: np.ndarray  # [n_nodes, d] construction-time embeddings
    src: np.ndarray  # directed edge sources
    dst: np.ndarray  # directed edge destinations
    weights: np.ndarray  # cosine similarity per directed edge; 1.0 on self-loops
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {nid: i for i, nid in enumerate(self.node_ids)}

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def edges(self):
        """Iterate (src_id, dst_id, weight) over directed edges."""
        for s, t, w in zip(self.src, self.dst, self.weights):
            yield self.node_ids[s], self.node_ids[t], float(w)

    def validate(self):
        n = self.n_nodes
        if self.src.size and (self.src.max() >= n or self.dst.max() >= n):
            raise ValueError("edge endpoint references a missing node")
        loops = set(self.src[self.src == self.dst].tolist())
        if loops != set(range(n)):
            raise ValueError("every node must carry a self-loop")
        if np.abs(self.weights).max() > 1.0 + 1e-9:
            raise ValueError("edge weights must satisfy |w| <= 1")


def _pairwise_cosine(emb: np.ndarray) -> np.ndarray:
    norms = np.sqrt((emb * emb).sum(axis=1, keepdims=True))
    unit = emb / (norms + 1e-12)
    sim = unit @ unit.T
    return np.clip(sim, -1.0, 1.0)


def build_social_graph(
    posts,
    comments,
    users,
    embeddings: dict[str, np.ndarray],
    theta: float = 0.5,
    connect_kinds: str = "all",
) -> SocialGraph:
    """Build the interaction graph.

    Post and comment nodes take their text embeddings from ``embeddings``;
    user nodes average the embeddings of their authored posts and comments
    (zero vector when a user authored nothing).  Undirected edges exist where
    cosine similarity >= theta or a structural relation holds (authorship,
    comment-on-post); every edge is weighted by cosine similarity and every
    node gets a self-loop of weight 1.

    ``connect_kinds`` is "all" (similarity edges may join any node kinds) or
    "same-kind" (similarity edges only within one kind).
    """
    if connect_kinds not in ("all", "same-kind"):
        raise ValueError(f"unknown connect_kinds {connect_kinds!r}")
    user_ids = [u.id for u in users]
    known_users = set(user_ids)
    post_index = {p.id: i for i, p in enumerate(posts)}
    for p in posts:
        if p.user_id not in known_users:
            raise ValueError(f"post {p.id} references unknown user {p.user_id}")
    for c in comments:
        if c.user_id not in known_users:
            raise ValueError(f"comment {c.id} references unknown user {c.user_id}")
        if c.post_id not in post_index:
            raise ValueError(f"comment {c.id} references unknown post {c.post_id}")

    node_ids = [p.id for p in posts] + [c.id for c in comments] + user_ids
    node_kinds = ["post"] * len(posts) + ["comment"] * len(comments) + ["user"] * len(users)
    index = {nid: i for i, nid in enumerate(node_ids)}

    d = len(next(iter(embeddings.values())))
    emb = np.zeros((len(node_ids), d))
    for p in posts:
        emb[index[p.id]] = embeddings[p.id]
    for c in comments:
        emb[index[c.id]] = embeddings[c.id]
    authored: dict[str, list[int]] = {u: [] for u in user_ids}
    for p in posts:
        authored[p.user_id].append(index[p.id])
    for c in comments:
        authored[c.user_id].append(index[c.id])
    for u in user_ids:
        rows = authored[u]
        if rows:
            emb[index[u]] = emb[rows].mean(axis=0)

    sim = _pairwise_cosine(emb)
    n = len(node_ids)
    kinds = np.array([{"post": 0, "comment": 1, "user": 2}[k] for k in node_kinds])
    adj = sim >= theta
    if connect_kinds == "same-kind":
        adj &= kinds[:, None] == kinds[None, :]
    np.fill_diagonal(adj, False)

    for p in posts:
        adj[index[p.id], index[p.user_id]] = True
    for c in comments:
        adj[index[c.id], index[c.user_id]] = True
        adj[index[c.id], index[c.post_id]] = True
    adj |= adj.T

    pair_src, pair_dst = np.nonzero(adj)  # both directions present via symmetry
    loop = np.arange(n)
    src = np.concatenate([pair_src, loop])
    dst = np.concatenate([pair_dst, loop])
    weights = np.concatenate([sim[pair_src, pair_dst], np.ones(n)])

    graph = SocialGraph(node_ids, node_kinds, emb, src, dst, weights, index)
    graph.validate()
    return graph


# ---------------------------------------------------------------------------
# signed graph attention


def create_gat_params(store: ParamStore, d: int, cfg: GatConfig, prefix: str = "gat"):
    width = cfg.heads * cfg.head_dim(d)
    for layer in range(cfg.layers):
        store.create(f"{prefix}.l{layer}.w", (d, width))
        store.create(f"{prefix}.l{layer}.a_src", (width,), fan=(cfg.head_dim(d), 1))
        store.create(f"{prefix}.l{layer}.a_dst", (width,), fan=(cfg.head_dim(d), 1))
        store.create(f"{prefix}.l{layer}.wo", (width, d))


_HEAD_BLOCK_CACHE: dict[tuple[int, int], tuple[Tensor, Tensor]] = {}


def _head_blocks(heads: int, head_dim: int) -> tuple[Tensor, Tensor]:
    """Constant indicators: collapse [*, heads*head_dim] to [*, heads] and
    expand back."""
    key = (heads, head_dim)
    if key not in _HEAD_BLOCK_CACHE:
        collapse = np.zeros((heads * head_dim, heads))
        for h in range(heads):
            collapse[h * head_dim : (h + 1) * head_dim, h] = 1.0
        _HEAD_BLOCK_CACHE[key] = (Tensor(collapse), Tensor(collapse.T.copy()))
    return _HEAD_BLOCK_CACHE[key]


def signed_gat_layer(
    feats: Tensor,
    graph: SocialGraph,
    params,
    cfg: GatConfig,
    layer: int = 0,
    prefix: str = "gat",
) -> Tensor:
    """One signed multi-head GAT layer over all nodes.

    Per head: e_ij = leaky_relu(a_src.Wh_i + a_dst.Wh_j) over directed edges
    j -> i; alpha_ij = sign(e_ij) * softmax_j(|e_ij|); node output aggregates
    alpha-weighted Wh_j, heads are concatenated, projected back to d, tanh.
    """
    n = graph.n_nodes
    if feats.shape[0] != n:
        raise ShapeError(f"feature rows {feats.shape[0]} != node count {n}")
    covered = np.zeros(n, dtype=bool)
    covered[graph.dst] = True
    if not covered.all():
        raise ValueError("node without any in-edge; self-loops are required")

    d = feats.shape[1]
    head_dim = cfg.head_dim(d)
    collapse, expand = _head_blocks(cfg.heads, head_dim)
    w = params[f"{prefix}.l{layer}.w"]
    a_src = params[f"{prefix}.l{layer}.a_src"]
    a_dst = params[f"{prefix}.l{layer}.a_dst"]
    wo = params[f"{prefix}.l{layer}.wo"]

    hw = ad.matmul(feats, w)  # [n, heads*head_dim]
    s_src = ad.matmul(ad.mul(hw, a_src), collapse)  # [n, heads]
    s_dst = ad.matmul(ad.mul(hw, a_dst), collapse)
    e = ad.leaky_relu(
        ad.add(ad.gather_rows(s_src, graph.src), ad.gather_rows(s_dst, graph.dst)),
        cfg.leaky_slope,
    )  # [E, heads], scores for edge src -> dst grouped by dst

    sign = np.sign(e.data)  # piecewise constant, detached
    mag = ad.abs_(e)
    shift = np.full((n, cfg.heads), -np.inf)
    np.maximum.at(shift, graph.dst, mag.data)
    ex = ad.exp(ad.sub(mag, Tensor(shift[graph.dst])))
    denom = ad.segment_sum(ex, graph.dst, n)
    alpha = ad.mul(ad.div(ex, ad.gather_rows(denom, graph.dst)), Tensor(sign))

    alpha_full = ad.matmul(alpha, expand)  # [E, heads*head_dim]
    msg = ad.mul(ad.gather_rows(hw, graph.src), alpha_full)
    agg = ad.segment_sum(msg, graph.dst, n)
    return ad.tanh(ad.matmul(agg, wo))


def social_context(feats: Tensor, graph: SocialGraph, params, cfg: GatConfig, prefix: str = "gat") -> Tensor:
    """Stack the configured number of signed GAT layers."""
    out = feats
    for layer in range(cfg.layers):
        out = signed_gat_layer(out, graph, params, cfg, layer=layer, prefix=prefix)
    return out


def extract_social(node_feats: Tensor, graph: SocialGraph, post_id: str) -> Tensor:
    """Social context vector of one post after the GAT stack."""
    if post_id not in graph.index:
        raise KeyError(f"unknown post id {post_id!r}")
    row = graph.index[post_id]
    out = ad.gather_rows(node_feats, [row])
    return ad.reshape(out, (node_feats.shape[1],))


def extract_social_batch(node_feats: Tensor, graph: SocialGraph, post_ids) -> Tensor:
    rows = []
    for pid in post_ids:
        if pid not in graph.index:
            raise KeyError(f"unknown post id {pid!r}")
        rows.append(graph.index[pid])
    return ad.gather_rows(node_feats, rows)
