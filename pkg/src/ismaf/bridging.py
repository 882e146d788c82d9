"""Bridging the intrinsic and social modalities: supervised contrastive
enhancement, self- and co-attention over token-lifted features, cross-modal
consistency alignment, and mutual learning between the two branch classifiers.

Attention operates on a token lift: each d-vector is reshaped into
``token_len`` tokens of d/token_len entries, attended, and mean-pooled back
to d.  Heads are realized as a block-diagonal mask over a (token, head) axis
so a single softmax covers all heads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_MASK, ParamStore, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastiveConfig:
    tau_scl: float = 0.5
    tau_cmca: float = 0.5

    def __post_init__(self):
        if self.tau_scl <= 0 or self.tau_cmca <= 0:
            raise ValueError(
                f"temperatures must be positive, got ({self.tau_scl}, {self.tau_cmca})"
            )


@dataclass(frozen=True)
class AttentionConfig:
    d: int
    heads: int = 8
    token_len: int = 6

    def __post_init__(self):
        if self.d % self.token_len != 0:
            raise ValueError(
                f"token_len {self.token_len} must divide feature dim {self.d}"
            )
        if self.heads < 1:
            raise ValueError(f"heads must be >= 1, got {self.heads}")

    @property
    def token_dim(self) -> int:
        return self.d // self.token_len

    @property
    def head_dim(self) -> int:
        # The head count need not divide the token width (e.g. d=300, H=8);
        # attention projects up to the next multiple internally.
        return math.ceil(self.token_dim / self.heads)

    @property
    def inner_dim(self) -> int:
        return self.heads * self.head_dim


def create_attention_params(store: ParamStore, cfg: AttentionConfig, prefix: str = "attn"):
    for m in ("T", "V"):
        for proj in ("wq", "wk", "wv"):
            store.create(f"{prefix}.{m}.{proj}", (cfg.token_dim, cfg.inner_dim))
        store.create(f"{prefix}.{m}.wo", (cfg.inner_dim, cfg.d))
    store.create(f"{prefix}.TV.wo", (cfg.inner_dim, cfg.d))
    store.create(f"{prefix}.VT.wo", (cfg.inner_dim, cfg.d))


def create_fusion_attention_params(store: ParamStore, cfg: AttentionConfig, prefix: str = "attn"):
    """Extra projection set for the IS-att fusion alternate."""
    for proj in ("wq", "wk", "wv"):
        store.create(f"{prefix}.F.{proj}", (cfg.token_dim, cfg.inner_dim))
    store.create(f"{prefix}.F.wo", (cfg.inner_dim, cfg.d))


_MASK_CACHE: dict[tuple[int, int], Tensor] = {}
_POOL_CACHE: dict[int, Tensor] = {}


def _head_mask(token_len: int, heads: int) -> Tensor:
    key = (token_len, heads)
    if key not in _MASK_CACHE:
        idx = np.arange(token_len * heads) % heads
        mask = np.where(idx[:, None] == idx[None, :], 0.0, NEG_MASK)
        _MASK_CACHE[key] = Tensor(mask)
    return _MASK_CACHE[key]


def _mean_pool_row(token_len: int) -> Tensor:
    if token_len not in _POOL_CACHE:
        _POOL_CACHE[token_len] = Tensor(np.full((1, token_len), 1.0 / token_len))
    return _POOL_CACHE[token_len]


def attend(x_query, x_kv, wq, wk, wv, wo, cfg: AttentionConfig) -> Tensor:
    """Multi-head scaled dot-product attention between two token-lifted
    d-vectors; returns a d-vector (token mean of projected head outputs)."""
    L, dt, H, dh = cfg.token_len, cfg.token_dim, cfg.heads, cfg.head_dim
    tq = ad.reshape(x_query, (L, dt))
    tkv = ad.reshape(x_kv, (L, dt))
    # [L, inner] -> [(L*H), dh]: row t*H+h holds token t's head-h block, so a
    # same-head mask turns one softmax into H independent ones.
    q = ad.reshape(ad.matmul(tq, wq), (L * H, dh))
    k = ad.reshape(ad.matmul(tkv, wk), (L * H, dh))
    v = ad.reshape(ad.matmul(tkv, wv), (L * H, dh))
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(dh))
    attn = ad.softmax_rows(ad.add(scores, _head_mask(L, H)))
    ctx = ad.reshape(ad.matmul(attn, v), (L, cfg.inner_dim))
    out_tokens = ad.matmul(ctx, wo)  # [L, d]
    return ad.reshape(ad.matmul(_mean_pool_row(L), out_tokens), (cfg.d,))


def self_attention(r_m, modality: str, params, cfg: AttentionConfig, prefix: str = "attn") -> Tensor:
    """Augment one unimodal d-vector with multi-head self-attention."""
    if modality not in ("T", "V"):
        raise ValueError(f"modality must be 'T' or 'V', got {modality!r}")
    p = f"{prefix}.{modality}"
    return attend(
        r_m, r_m, params[f"{p}.wq"], params[f"{p}.wk"], params[f"{p}.wv"],
        params[f"{p}.wo"], cfg,
    )


def co_attention(z_t, z_v, params, cfg: AttentionConfig, prefix: str = "attn") -> tuple[Tensor, Tensor]:
    """Paired cross-attention: text queries against visual keys/values and
    vice versa, each with its own output projection."""
    z_tv = attend(
        z_t, z_v, params[f"{prefix}.T.wq"], params[f"{prefix}.V.wk"],
        params[f"{prefix}.V.wv"], params[f"{prefix}.TV.wo"], cfg,
    )
    z_vt = attend(
        z_v, z_t, params[f"{prefix}.V.wq"], params[f"{prefix}.T.wk"],
        params[f"{prefix}.T.wv"], params[f"{prefix}.VT.wo"], cfg,
    )
    return z_tv, z_vt


def intrinsic_rep(z_tv, z_vt) -> Tensor:
    """Average the two co-attention vectors."""
    return ad.scale(ad.add(z_tv, z_vt), 0.5)


# ---------------------------------------------------------------------------
# supervised contrastive enhancement


def scl_loss(features, labels, tau: float) -> Tensor:
    """Supervised contrastive loss over row-normalized fused features.

    Positives share the anchor's label (anchor excluded); the denominator
    runs over all non-anchor samples.  Anchors without positives are
    skipped; if every anchor is skipped the loss is 0 and a warning is
    logged.
    """
    features = ad.as_tensor(features)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n < 2:
        raise ValueError(f"supervised contrastive loss needs a batch of >= 2, got {n}")
    if features.ndim != 2 or len(labels) != n:
        raise ad.ShapeError(
            f"features [{features.shape}] and labels [{len(labels)}] disagree"
        )

    pos = (labels[:, None] == labels[None, :]) & ~np.eye(n, dtype=bool)
    pos_counts = pos.sum(axis=1)
    active = pos_counts > 0
    if not active.any():
        log.warning("supervised contrastive loss skipped: no anchor has a positive")
        return Tensor(0.0)

    f = ad.row_l2_normalize(features)
    sim = ad.scale(ad.matmul(f, ad.transpose(f)), 1.0 / tau)
    offdiag = ~np.eye(n, dtype=bool)
    # Row-max over the off-diagonal is a constant shift; exact for the ratio.
    shift = np.where(offdiag, sim.data, -np.inf).max(axis=1, keepdims=True)
    shifted = ad.sub(sim, Tensor(shift))
    expvals = ad.mul(ad.exp(shifted), Tensor(offdiag.astype(float)))
    log_denom = ad.log(ad.sum_(expvals, axis=1))  # [n]
    log_prob = ad.sub(shifted, ad.reshape(log_denom, (n, 1)))

    weights = np.zeros((n, n))
    weights[active] = pos[active] / pos_counts[active, None]
    return ad.scale(ad.sum_(ad.mul(log_prob, Tensor(weights))), -1.0 / active.sum())


# ---------------------------------------------------------------------------
# cross-modal consistency alignment


def cmca_loss(z, r_g, tau: float) -> Tensor:
    """Contrastive alignment between intrinsic and social representations.

    For each anchor on one side, the matched pair is the numerator; the
    denominator sums same-side similarities over k != i plus cross-side
    similarities over all k.  Both directions are averaged over 2N.
    """
    z, r_g = ad.as_tensor(z), ad.as_tensor(r_g)
    n = z.shape[0]
    if n == 0:
        raise ValueError("cross-modal alignment needs a non-empty batch")
    if z.shape != r_g.shape:
        raise ad.ShapeError(f"batch shapes disagree: {z.shape} vs {r_g.shape}")

    zn = ad.row_l2_normalize(z)
    rn = ad.row_l2_normalize(r_g)
    inv_tau = 1.0 / tau
    s_zz = ad.scale(ad.matmul(zn, ad.transpose(zn)), inv_tau)
    s_zr = ad.scale(ad.matmul(zn, ad.transpose(rn)), inv_tau)
    s_rr = ad.scale(ad.matmul(rn, ad.transpose(rn)), inv_tau)
    s_rz = ad.transpose(s_zr)

    eye = Tensor(np.eye(n))
    offdiag = Tensor(1.0 - np.eye(n))

    def one_side(same, cross):
        denom = ad.add(
            ad.sum_(ad.mul(ad.exp(same), offdiag), axis=1),
            ad.sum_(ad.exp(cross), axis=1),
        )
        matched = ad.sum_(ad.mul(cross, eye), axis=1)
        return ad.sum_(ad.sub(ad.log(denom), matched))

    total = ad.add(one_side(s_zz, s_zr), one_side(s_rr, s_rz))
    return ad.scale(total, 1.0 / (2.0 * n))


# ---------------------------------------------------------------------------
# mutual learning


def create_mutual_params(store: ParamStore, d: int, prefix: str = "ml"):
    # Each branch owns its projection and classifier head; the KL term
    # couples the two predictive distributions.
    store.create(f"{prefix}.z.proj_w", (d, d))
    store.create(f"{prefix}.z.proj_b", (d,), init="zeros")
    store.create(f"{prefix}.g.proj_w", (d, d))
    store.create(f"{prefix}.g.proj_b", (d,), init="zeros")
    store.create(f"{prefix}.z.fc_w", (d, 2))
    store.create(f"{prefix}.z.fc_b", (2,), init="zeros")
    store.create(f"{prefix}.g.fc_w", (d, 2))
    store.create(f"{prefix}.g.fc_b", (2,), init="zeros")


def project_common(z, r_g, params, prefix: str = "ml") -> tuple[Tensor, Tensor]:
    """Project both branches into the shared latent space with relu."""
    e_z = ad.relu(ad.linear(ad.as_tensor(z), params[f"{prefix}.z.proj_w"], params[f"{prefix}.z.proj_b"]))
    e_g = ad.relu(ad.linear(ad.as_tensor(r_g), params[f"{prefix}.g.proj_w"], params[f"{prefix}.g.proj_b"]))
    return e_z, e_g


def label_distributions(e_z, e_g, params, prefix: str = "ml") -> tuple[Tensor, Tensor]:
    """Per-branch class distributions from the common-space embeddings."""
    p_z = ad.softmax_rows(ad.linear(e_z, params[f"{prefix}.z.fc_w"], params[f"{prefix}.z.fc_b"]))
    p_g = ad.softmax_rows(ad.linear(e_g, params[f"{prefix}.g.fc_w"], params[f"{prefix}.g.fc_b"]))
    return p_z, p_g


def kl_divergence(p, q) -> Tensor:
    """KL(P || Q) over one distribution; entries are clamped at 1e-12 inside
    log, giving the 0*log(0) = 0 convention."""
    p, q = ad.as_tensor(p), ad.as_tensor(q)
    if p.shape != q.shape:
        raise ad.ShapeError(f"distributions disagree in shape: {p.shape} vs {q.shape}")
    return ad.sum_(ad.mul(p, ad.sub(ad.log(p), ad.log(q))))


def mutual_learning_loss(p_z, p_g) -> Tensor:
    """Symmetric KL between the two branch distributions, batch-averaged."""
    p_z, p_g = ad.as_tensor(p_z), ad.as_tensor(p_g)
    if p_z.shape != p_g.shape:
        raise ad.ShapeError(f"distributions disagree in shape: {p_z.shape} vs {p_g.shape}")
    n = p_z.shape[0] if p_z.ndim == 2 else 1
    kl_zg = ad.sum_(ad.mul(p_z, ad.sub(ad.log(p_z), ad.log(p_g))))
    kl_gz = ad.sum_(ad.mul(p_g, ad.sub(ad.log(p_g), ad.log(p_z))))
    return ad.scale(ad.add(kl_zg, kl_gz), 0.5 / n)
