"""The three-part training objective and its per-network forms.

adversarial_value is the empirical minimax objective over a batch;
discriminator_loss / generator_loss are the quantities each network
actually descends. The consistency loss is a squared Euclidean distance
in the shared text/image feature space, and the style loss aligns Gram
matrices of frozen style-network features, averaged over the configured
tap layers with equal weights (a single tap reduces it to the plain
single-layer Gram objective).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import encode_image, gram_matrix, style_features
from .tensor import Tensor, no_grad

PROB_FLOOR = 1e-12  # probabilities are clamped to [floor, 1 - floor] before logs


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights of the combined objective; at least one positive."""

    lambda_gan: float = 1.0
    lambda_txt_img: float = 10.0
    lambda_style: float = 10.0

    def __post_init__(self):
        weights = (self.lambda_gan, self.lambda_txt_img, self.lambda_style)
        if any(w < 0 for w in weights):
            raise ValueError(f"loss weights must be non-negative, got {weights}")
        if not any(w > 0 for w in weights):
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LossBreakdown:
    """All loss values of one step: components, weighted total, training forms."""

    l_gan: float
    l_txt_img: float
    l_style: float
    l_total: float
    d_loss: float
    g_loss: float
    weights: LossWeights

    def __post_init__(self):
        want = (self.weights.lambda_gan * self.l_gan
                + self.weights.lambda_txt_img * self.l_txt_img
                + self.weights.lambda_style * self.l_style)
        if abs(self.l_total - want) > 1e-9 * max(1.0, abs(want)):
            raise ValueError(f"inconsistent total: {self.l_total} vs recomputed {want}")


def _as_prob_tensor(p):
    t = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    if t.size == 0:
        raise ValueError("empty probability batch")
    return t.clip(PROB_FLOOR, 1.0 - PROB_FLOOR)


def adversarial_value(d_real, d_fake):
    """Empirical minimax objective: mean log D(x) + mean log(1 - D(G(..)))."""
    dr = _as_prob_tensor(d_real)
    df = _as_prob_tensor(d_fake)
    return dr.log().mean() + (1.0 - df).log().mean()


def discriminator_loss(d_real, d_fake):
    """What D descends: the negated minimax objective."""
    dr = _as_prob_tensor(d_real)
    df = _as_prob_tensor(d_fake)
    return -(dr.log().mean()) - (1.0 - df).log().mean()


def generator_loss(d_fake, objective="non_saturating"):
    """What G descends on the adversarial term.

    "non_saturating" is -mean log D(G(..)); "minimax" is the literal inner
    objective mean log(1 - D(G(..))).
    """
    df = _as_prob_tensor(d_fake)
    if objective == "non_saturating":
        return -(df.log().mean())
    if objective == "minimax":
        return (1.0 - df).log().mean()
    raise ValueError(f"unknown generator objective {objective!r}")


def text_image_consistency_loss(images, text_emb, params, cfg, prefix="img"):
    """Squared Euclidean distance between image features and text features.

    Batched inputs give the mean per-sample distance. Dimensions of the
    two feature spaces must agree.
    """
    feats = encode_image(images, params, cfg, prefix=prefix)
    emb = text_emb if isinstance(text_emb, Tensor) else Tensor(np.atleast_2d(np.asarray(text_emb, dtype=feats.dtype)))
    if emb.ndim == 1:
        emb = emb.reshape(1, -1)
    if feats.shape[1] != emb.shape[1]:
        raise ValueError(f"feature dimensions disagree: image {feats.shape[1]} vs text {emb.shape[1]}")
    diff = feats - emb
    return diff.square().sum(axis=1).mean()


def gram_targets(style_images, params, cfg):
    """Constant per-layer Gram matrices of style reference images.

    Computed outside any graph: the style reference is never optimized.
    Returns one [N,C_l,C_l] array per configured tap layer.
    """
    with no_grad():
        feats = style_features(style_images, params, cfg)
        feats = [f if f.ndim == 4 else f.reshape(1, *f.shape) for f in feats]
        return [gram_matrix(f).data for f in feats]


def style_loss_from_targets(images, targets, params, cfg):
    """Gram alignment of generated images against precomputed target Grams."""
    feats = style_features(images, params, cfg)
    feats = [f if f.ndim == 4 else f.reshape(1, *f.shape) for f in feats]
    if len(targets) != len(feats):
        raise ValueError(f"expected {len(feats)} target layers, got {len(targets)}")
    layer_weight = 1.0 / len(feats)
    total = None
    for fmap, target in zip(feats, targets):
        g = gram_matrix(fmap)
        target = np.asarray(target, dtype=g.dtype)
        if target.ndim == 2:
            target = target[None]
        diff = g - Tensor(np.broadcast_to(target, g.shape).copy())
        term = diff.square().sum(axis=(1, 2)).mean() * layer_weight
        total = term if total is None else total + term
    return total


def style_matching_loss(images, style_images, params, cfg):
    """Mean squared Frobenius distance between Gram matrices, over tap layers.

    `style_images` is one reference [3,H,W] shared by the batch or a
    per-sample batch [N,3,H,W]; it contributes constants, not gradients.
    """
    return style_loss_from_targets(images, gram_targets(style_images, params, cfg), params, cfg)


def total_loss(l_gan, l_txt_img, l_style, d_loss, g_loss, weights):
    """Combine component values into the weighted total breakdown."""
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    vals = [float(v.data) if isinstance(v, Tensor) else float(v) for v in (l_gan, l_txt_img, l_style, d_loss, g_loss)]
    if not all(np.isfinite(vals)):
        raise ValueError(f"non-finite loss component in {vals}")
    l_total = (weights.lambda_gan * vals[0]
               + weights.lambda_txt_img * vals[1]
               + weights.lambda_style * vals[2])
    return LossBreakdown(l_gan=vals[0], l_txt_img=vals[1], l_style=vals[2],
                         l_total=l_total, d_loss=vals[3], g_loss=vals[4], weights=weights)
