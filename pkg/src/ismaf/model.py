"""End-to-end model assembly: parameter creation, per-batch forward pass over
all five loss components, and the classification-only path used at eval time.

The social graph is constructed once per run from the initial token-embedding
means (structure frozen); node features are recomputed from the current
embedding table every step so gradients reach it through the GAT stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import bridging, encoders, fusion
from .autodiff import ParamStore, Tensor
from .config import TrainConfig
from .data import DatasetBundle


@dataclass
class ForwardResult:
    probs: np.ndarray  # [N, 2] class distribution per post
    total: Tensor | None
    breakdown: fusion.LossBreakdown | None


class IsmafModel:
    """Parameters plus the fixed graph/context needed to run the pipeline."""

    def __init__(self, config: TrainConfig, dataset: DatasetBundle):
        if not dataset.posts:
            raise ValueError("dataset has no posts")
        self.config = config
        self.dataset = dataset
        self.seq_len = max(dataset.max_post_len, max(config.kernel_sizes))
        self.visual_dim = int(dataset.posts[0].visual_feat.shape[0])
        self.text_cfg = encoders.TextEncoderConfig(
            vocab_size=dataset.vocab_size,
            embed_dim=config.d,
            seq_len=self.seq_len,
            kernel_sizes=config.kernel_sizes,
        )
        self.gat_cfg = encoders.GatConfig(
            heads=config.heads,
            layers=config.gat_layers,
            similarity_threshold=config.theta,
            leaky_slope=config.gat_leaky_slope,
        )
        self.attn_cfg = bridging.AttentionConfig(
            d=config.d, heads=config.heads, token_len=config.token_len
        )

        self.store = ParamStore(seed=config.seed)
        encoders.create_text_params(self.store, self.text_cfg)
        encoders.create_visual_params(self.store, self.visual_dim, config.d)
        encoders.create_gat_params(self.store, config.d, self.gat_cfg)
        bridging.create_attention_params(self.store, self.attn_cfg)
        bridging.create_mutual_params(self.store, config.d)
        fusion.create_classifier_params(self.store, config.d)
        kind = config.effective_fusion()
        if kind == "af":
            fusion.create_fusion_params(self.store, config.d)
        elif kind == "is-concat":
            fusion.create_concat_fusion_params(self.store, config.d)
        else:
            bridging.create_fusion_attention_params(self.store, self.attn_cfg)

        self._build_graph_context()

    # -- graph plumbing ----------------------------------------------------

    def _build_graph_context(self):
        """Token-count matrices for node features and the frozen graph."""
        texts = list(self.dataset.posts) + list(self.dataset.comments)
        vocab = self.text_cfg.vocab_size
        counts = np.zeros((len(texts), vocab))
        for row, rec in enumerate(texts):
            for tok in rec.tokens:
                counts[row, tok] += 1.0
            counts[row] /= max(len(rec.tokens), 1)
        self._text_counts = counts

        users = self.dataset.users
        user_pos = {u.id: i for i, u in enumerate(users)}
        averager = np.zeros((len(users), len(texts)))
        for row, rec in enumerate(texts):
            averager[user_pos[rec.user_id], row] += 1.0
        owned = averager.sum(axis=1, keepdims=True)
        self._user_avg = averager / np.maximum(owned, 1.0)

        init_embed = self.store.value("text.embed")
        text_feats = counts @ init_embed
        embeddings = {rec.id: text_feats[row] for row, rec in enumerate(texts)}
        self.graph = encoders.build_social_graph(
            self.dataset.posts,
            self.dataset.comments,
            users,
            embeddings,
            theta=self.config.theta,
            connect_kinds=self.config.connect_kinds,
        )

    def _node_features(self, params) -> Tensor:
        """Current node features: token-embedding means for posts/comments,
        authored-content averages for users."""
        text_feats = ad.matmul(Tensor(self._text_counts), params["text.embed"])
        user_feats = ad.matmul(Tensor(self._user_avg), text_feats)
        return ad.concat([text_feats, user_feats], axis=0)

    def social_batch(self, params, post_ids) -> Tensor:
        feats = self._node_features(params)
        nodes = encoders.social_context(feats, self.graph, params, self.gat_cfg)
        return encoders.extract_social_batch(nodes, self.graph, post_ids)

    # -- forward passes ------------------------------------------------------

    def _unimodal(self, params, post_ids, training, rng, zero_social):
        cfg = self.config
        tokens = self.dataset.padded_tokens(post_ids, self.seq_len)
        r_t = encoders.encode_text_batch(tokens, params, self.text_cfg)
        visual = np.stack([self.dataset.post(pid).visual_feat for pid in post_ids])
        r_v = encoders.project_visual(Tensor(visual), params["visual.w"], params["visual.b"])
        if zero_social:
            r_g = Tensor(np.zeros((len(post_ids), cfg.d)))
        else:
            r_g = self.social_batch(params, post_ids)
        if training:
            r_t = ad.dropout(r_t, cfg.dropout, rng, training)
            r_v = ad.dropout(r_v, cfg.dropout, rng, training)
            r_g = ad.dropout(r_g, cfg.dropout, rng, training)
        return r_t, r_v, r_g

    def _attend_batch(self, params, r_t, r_v):
        """Per-post self- and co-attention, restacked into batch matrices."""
        d = self.config.d
        n = r_t.shape[0]
        tv_rows, vt_rows = [], []
        for i in range(n):
            rt_i = ad.slice_rows(r_t, i, i + 1)
            rv_i = ad.slice_rows(r_v, i, i + 1)
            z_t = bridging.self_attention(rt_i, "T", params, self.attn_cfg)
            z_v = bridging.self_attention(rv_i, "V", params, self.attn_cfg)
            z_tv, z_vt = bridging.co_attention(z_t, z_v, params, self.attn_cfg)
            tv_rows.append(ad.reshape(z_tv, (1, d)))
            vt_rows.append(ad.reshape(z_vt, (1, d)))
        return ad.concat(tv_rows, axis=0), ad.concat(vt_rows, axis=0)

    def forward(
        self,
        params,
        post_ids,
        training: bool = False,
        rng: np.random.Generator | None = None,
        zero_social: bool = False,
        with_losses: bool = True,
    ) -> ForwardResult:
        cfg = self.config
        labels = np.array([self.dataset.post(pid).label for pid in post_ids])
        r_t, r_v, r_g = self._unimodal(params, post_ids, training, rng, zero_social)
        z_tv_b, z_vt_b = self._attend_batch(params, r_t, r_v)

        kind = cfg.effective_fusion()
        if kind == "af":
            x_fuse, l_af = fusion.adaptive_fuse(z_tv_b, z_vt_b, r_g, params)
        else:
            z_b = bridging.intrinsic_rep(z_tv_b, z_vt_b)
            x_fuse = fusion.fuse_alternate(kind, z_b, r_g, params, self.attn_cfg)
            l_af = None
        if training:
            x_fuse = ad.dropout(x_fuse, cfg.dropout, rng, training)
        probs = fusion.classify(x_fuse, params)

        if not with_losses:
            return ForwardResult(probs=probs.data.copy(), total=None, breakdown=None)

        y_hat = ad.reshape(ad.slice_rows(ad.transpose(probs), 1, 2), (len(post_ids),))
        l_ce = fusion.ce_loss(y_hat, labels)
        l_scl = None
        if not cfg.ablate_mre:
            fused_initial = ad.concat([r_t, r_v, r_g], axis=1)
            l_scl = bridging.scl_loss(fused_initial, labels, cfg.tau_scl)
        l_cmca = None
        l_ml = None
        if not (cfg.ablate_cmca and cfg.ablate_ml):
            z_b = bridging.intrinsic_rep(z_tv_b, z_vt_b)
            if not cfg.ablate_cmca:
                l_cmca = bridging.cmca_loss(z_b, r_g, cfg.tau_cmca)
            if not cfg.ablate_ml:
                e_z, e_g = bridging.project_common(z_b, r_g, params)
                p_z, p_g = bridging.label_distributions(e_z, e_g, params)
                l_ml = bridging.mutual_learning_loss(p_z, p_g)

        lambdas = cfg.effective_lambdas()
        total = fusion.overall_loss(l_ce, l_scl, l_cmca, l_ml, l_af, lambdas)
        breakdown = fusion.breakdown_from_parts(l_ce, l_scl, l_cmca, l_ml, l_af, total, lambdas)
        return ForwardResult(probs=probs.data.copy(), total=total, breakdown=breakdown)

    def predict(self, post_ids, zero_social: bool = False) -> np.ndarray:
        """Deterministic class predictions from the current parameters."""
        result = self.forward(
            self.store.constants(), post_ids, training=False,
            zero_social=zero_social, with_losses=False,
        )
        return fusion.predict_labels(result.probs)

    def pin_constants(self):
        """Re-zero the padding embedding row after an optimizer step."""
        embed = self.store.value("text.embed")
        if embed[0].any():
            embed = embed.copy()
            embed[0] = 0.0
            self.store.assign("text.embed", embed)
