"""Adaptive fusion through an encoder-decoder bottleneck, the classification
head, and the weighted overall objective, plus the IS-concat / IS-att fusion
alternates used by ablations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .bridging import AttentionConfig, attend

FUSION_KINDS = ("af", "is-concat", "is-att")


@dataclass
class LossBreakdown:
    """Scalar loss components of one step or epoch, with their weights."""

    ce: float
    scl: float
    cmca: float
    ml: float
    af: float
    total: float
    lambdas: tuple[float, float, float, float]

    def check(self):
        parts = (self.ce, self.scl, self.cmca, self.ml, self.af, self.total)
        if not all(np.isfinite(parts)):
            raise ValueError(f"non-finite loss components: {parts}")
        weighted = self.ce + sum(l * c for l, c in zip(self.lambdas, (self.scl, self.cmca, self.ml, self.af)))
        if abs(self.total - weighted) > 1e-9:
            raise ValueError(f"total {self.total} != weighted sum {weighted}")
        return self

    def as_dict(self):
        return {
            "ce": self.ce, "scl": self.scl, "cmca": self.cmca,
            "ml": self.ml, "af": self.af, "total": self.total,
        }


def create_fusion_params(store: ParamStore, d: int, prefix: str = "fuse"):
    store.create(f"{prefix}.enc_w", (3 * d, d))
    store.create(f"{prefix}.enc_b", (d,), init="zeros")
    store.create(f"{prefix}.dec_w", (d, 3 * d))
    store.create(f"{prefix}.dec_b", (3 * d,), init="zeros")


def create_concat_fusion_params(store: ParamStore, d: int, prefix: str = "fuse"):
    store.create(f"{prefix}.cat_w", (2 * d, d))
    store.create(f"{prefix}.cat_b", (d,), init="zeros")


def create_classifier_params(store: ParamStore, d: int, prefix: str = "clf"):
    store.create(f"{prefix}.w", (d, 2))
    store.create(f"{prefix}.b", (2,), init="zeros")


def adaptive_fuse(z_tv, z_vt, r_g, params, prefix: str = "fuse") -> tuple[Tensor, Tensor]:
    """Compress the concatenated modality block through a tanh bottleneck.

    Returns the bottleneck (the fused representation) and the reconstruction
    loss, squared error summed over coordinates and averaged over the batch.
    """
    z_tv, z_vt, r_g = ad.as_tensor(z_tv), ad.as_tensor(z_vt), ad.as_tensor(r_g)
    if not (z_tv.shape == z_vt.shape == r_g.shape):
        raise ad.ShapeError(
            f"fusion inputs disagree: {z_tv.shape}, {z_vt.shape}, {r_g.shape}"
        )
    x = ad.concat([z_tv, z_vt, r_g], axis=1)
    x_fuse = ad.tanh(ad.linear(x, params[f"{prefix}.enc_w"], params[f"{prefix}.enc_b"]))
    x_hat = ad.linear(x_fuse, params[f"{prefix}.dec_w"], params[f"{prefix}.dec_b"])
    diff = ad.sub(x_hat, x)
    n = x.shape[0]
    loss = ad.scale(ad.sum_(ad.mul(diff, diff)), 1.0 / n)
    return x_fuse, loss


def fuse_alternate(kind: str, z, r_g, params, attn_cfg: AttentionConfig, prefix: str = "fuse") -> Tensor:
    """Ablation fusion strategies over the intrinsic and social vectors.

    ``is-concat`` concatenates and linearly maps to d; ``is-att`` runs one
    cross-attention of z over the token-lifted r_g, pooled back to d.
    """
    if kind not in ("is-concat", "is-att"):
        raise ValueError(f"unknown fusion kind {kind!r}")
    z, r_g = ad.as_tensor(z), ad.as_tensor(r_g)
    if kind == "is-concat":
        joined = ad.concat([z, r_g], axis=1)
        return ad.linear(joined, params[f"{prefix}.cat_w"], params[f"{prefix}.cat_b"])
    rows = []
    n = z.shape[0]
    for i in range(n):
        z_i = ad.reshape(ad.slice_rows(z, i, i + 1), (z.shape[1],))
        g_i = ad.reshape(ad.slice_rows(r_g, i, i + 1), (r_g.shape[1],))
        out = attend(
            z_i, g_i, params["attn.F.wq"], params["attn.F.wk"],
            params["attn.F.wv"], params["attn.F.wo"], attn_cfg,
        )
        rows.append(ad.reshape(out, (1, attn_cfg.d)))
    return ad.concat(rows, axis=0)


def classify(x_fuse, params, prefix: str = "clf") -> Tensor:
    """Two-class distribution per row; column 1 is the rumor probability."""
    return ad.softmax_rows(ad.linear(ad.as_tensor(x_fuse), params[f"{prefix}.w"], params[f"{prefix}.b"]))


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """Argmax with ties resolved to class 0 (non-rumor)."""
    probs = np.asarray(probs)
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def ce_loss(y_hat, labels) -> Tensor:
    """Binary cross-entropy on the rumor probability, mean-reduced.

    Probabilities are effectively clamped to [1e-12, 1 - 1e-12] through the
    log's internal epsilon.
    """
    y_hat = ad.as_tensor(y_hat)
    labels = np.asarray(labels, dtype=np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError(f"labels must be 0 or 1, got {sorted(set(labels.tolist()))}")
    if y_hat.ndim != 1 or y_hat.shape[0] != labels.shape[0]:
        raise ad.ShapeError(
            f"predictions {y_hat.shape} do not match labels {labels.shape}"
        )
    n = labels.shape[0]
    pos = ad.mul(Tensor(labels), ad.log(y_hat))
    neg = ad.mul(Tensor(1.0 - labels), ad.log(ad.sub(Tensor(np.ones(n)), y_hat)))
    return ad.scale(ad.sum_(ad.add(pos, neg)), -1.0 / n)


def overall_loss(ce, scl, cmca, ml, af, lambdas) -> Tensor:
    """Weighted sum of the five components; a None component counts as 0."""
    lambdas = tuple(float(l) for l in lambdas)
    if len(lambdas) != 4 or any(l < 0 for l in lambdas):
        raise ValueError(f"need four non-negative weights, got {lambdas}")
    total = ad.as_tensor(ce)
    for weight, part in zip(lambdas, (scl, cmca, ml, af)):
        if part is not None:
            total = ad.add(total, ad.scale(part, weight))
    return total


def breakdown_from_parts(ce, scl, cmca, ml, af, total, lambdas) -> LossBreakdown:
    """Collect scalar components; non-finite values pass through so callers
    can report divergence instead of crashing mid-step."""

    def val(t):
        return float(t.data) if t is not None else 0.0

    bd = LossBreakdown(
        ce=val(ce), scl=val(scl), cmca=val(cmca), ml=val(ml), af=val(af),
        total=val(total), lambdas=tuple(float(l) for l in lambdas),
    )
    if np.isfinite(bd.total):
        bd.check()
    return bd
