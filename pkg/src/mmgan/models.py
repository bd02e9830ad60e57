"""Generator and discriminator forwards plus the style-vector head.

The generator maps (noise, caption embedding, style vector) to an image
through three transposed-convolution blocks; the style vector enters every
block as a per-channel scale and shift applied after instance norm. The
discriminator is conditioned by spatially replicating the caption
embedding and concatenating it at the coarsest stage.
"""

from __future__ import annotations

import numpy as np

from .nn import (conv_layer, conv_specs, conv_transpose_layer, conv_transpose_specs,
                 dense, dense_specs)
from .tensor import Tensor, concat, instance_norm

# Keeps generated pixels strictly inside (-1, 1): float tanh saturates to
# exactly 1.0 for large pre-activations.
OPEN_TANH_SCALE = 1.0 - 1e-6


def generator_specs(cfg):
    s0, chans = cfg.gen_start_size, list(cfg.gen_channels)
    specs = dense_specs("G.fc", cfg.d_z + cfg.d_text, chans[0] * s0 * s0)
    outs = chans[1:] + [3]
    c_in = chans[0]
    for i, c_out in enumerate(outs, start=1):
        specs += conv_transpose_specs(f"G.block{i}.conv", c_in, c_out, 4)
        specs += dense_specs(f"G.block{i}.scale", cfg.d_style, c_out)
        specs += dense_specs(f"G.block{i}.shift", cfg.d_style, c_out)
        c_in = c_out
    return specs


def generate(z, text_emb, style_vec, params, cfg):
    """Synthesize images [N,3,S,S] with every value strictly in (-1, 1).

    Deterministic in its inputs; instance norm is per-sample, so a batch
    produces the same image per row as single-sample calls would.
    """
    dtype = params["G.fc.w"].dtype
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=dtype))
    _check_dim("noise", z, cfg.d_z)
    _check_dim("text embedding", text_emb, cfg.d_text)
    _check_dim("style vector", style_vec, cfg.d_style)
    if not (z.shape[0] == text_emb.shape[0] == style_vec.shape[0]):
        raise ValueError(f"batch sizes disagree: z {z.shape}, text {text_emb.shape}, style {style_vec.shape}")
    s0 = cfg.gen_start_size
    h = dense(concat([z, text_emb], axis=1), params, "G.fc").leaky_relu(0.2)
    x = h.reshape(z.shape[0], cfg.gen_channels[0], s0, s0)
    for i in range(1, 4):
        x = conv_transpose_layer(x, params, f"G.block{i}.conv", stride=2, padding=1)
        x = instance_norm(x)
        gamma = dense(style_vec, params, f"G.block{i}.scale")
        beta = dense(style_vec, params, f"G.block{i}.shift")
        n, c = gamma.shape
        x = x * (gamma.reshape(n, c, 1, 1) + 1.0) + beta.reshape(n, c, 1, 1)
        x = x.leaky_relu(0.2) if i < 3 else x.tanh() * OPEN_TANH_SCALE
    return x


def discriminator_specs(cfg):
    chans = list(cfg.disc_channels)
    specs = []
    c_in = 3
    for i, c_out in enumerate(chans, start=1):
        specs += conv_specs(f"D.block{i}", c_in, c_out, 4)
        c_in = c_out
    specs += conv_specs("D.join", c_in + cfg.d_text, chans[-1], 3)
    s0 = cfg.gen_start_size
    specs += dense_specs("D.fc", chans[-1] * s0 * s0, 1)
    return specs


def discriminate(images, text_emb, params, cfg):
    """Realness probability [N,1], strictly inside (0, 1)."""
    dtype = params["D.fc.w"].dtype
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=dtype))
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
        raise ValueError(f"expected [N,3,{cfg.image_size},{cfg.image_size}] images, got {images.shape}")
    _check_dim("text embedding", text_emb, cfg.d_text)
    if x.shape[0] != text_emb.shape[0]:
        raise ValueError(f"batch sizes disagree: images {x.shape}, text {text_emb.shape}")
    for i in range(1, 4):
        x = conv_layer(x, params, f"D.block{i}", stride=2, padding=1).leaky_relu(0.2)
    n, _, s, _ = x.shape
    tiles = text_emb.reshape(n, cfg.d_text, 1, 1).broadcast_to((n, cfg.d_text, s, s))
    x = concat([x, tiles], axis=1)
    x = conv_layer(x, params, "D.join", stride=1, padding=1).leaky_relu(0.2)
    flat = x.reshape(n, -1)
    return dense(flat, params, "D.fc").sigmoid()


# -- style head -----------------------------------------------------------------


def style_head_specs(cfg):
    in_dim = sum(cfg.style_channels[l] for l in cfg.style_layers)
    specs = dense_specs("stylehead.fc1", in_dim, cfg.style_head_hidden)
    specs += dense_specs("stylehead.fc2", cfg.style_head_hidden, cfg.d_style)
    return specs


def style_vector(gram_diags, params, cfg):
    """Map concatenated Gram diagonals of a style image to the style vector."""
    dtype = params["stylehead.fc1.w"].dtype
    x = gram_diags if isinstance(gram_diags, Tensor) else Tensor(np.atleast_2d(np.asarray(gram_diags, dtype=dtype)))
    hidden = dense(x, params, "stylehead.fc1").leaky_relu(0.2)
    return dense(hidden, params, "stylehead.fc2").tanh()


def sample_noise(n, cfg, rng):
    """Standard-normal noise rows [n, d_z] from the given generator."""
    return rng.standard_normal((n, cfg.d_z))


def _check_dim(name, t, want):
    if t.ndim != 2 or t.shape[1] != want:
        raise ValueError(f"{name} must be [N,{want}], got {t.shape}")
