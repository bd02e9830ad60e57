"""Conditioning pathways: caption encoder, image encoder, and the frozen
style-feature network with its Gram statistics.

The caption and image encoders map into one shared feature space of
dimension d_text == d_img, which the text-image consistency loss requires.
The style network is a seed-initialized random CNN that is never trained;
its per-layer feature maps feed Gram matrices.
"""

from __future__ import annotations

import string

import numpy as np

from .nn import conv_layer, conv_specs, dense, dense_specs, ParamSpec
from .tensor import Tensor, no_grad

PAD_ID = 0
UNK_ID = 1

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class Vocabulary:
    """Token-to-id map with reserved ids 0 (PAD) and 1 (UNK).

    The on-disk format is one token per line; the token on 0-based line i
    has id i + 2.
    """

    def __init__(self, tokens, max_caption_len=8):
        self.max_caption_len = int(max_caption_len)
        if self.max_caption_len < 1:
            raise ValueError("max_caption_len must be >= 1")
        self._ids = {}
        for tok in tokens:
            if tok not in self._ids:
                self._ids[tok] = len(self._ids) + 2
        self._tokens = sorted(self._ids, key=self._ids.get)

    @property
    def size(self):
        return len(self._ids) + 2

    def id_of(self, token):
        return self._ids.get(token, UNK_ID)

    def tokens(self):
        return list(self._tokens)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._tokens:
                fh.write(tok + "\n")

    @classmethod
    def from_file(cls, path, max_caption_len=8):
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens, max_caption_len=max_caption_len)


def tokenize(caption, vocab):
    """Lowercase, strip punctuation, split on whitespace, pad/truncate.

    Unknown words map to UNK; an empty caption yields an all-PAD row.
    """
    words = caption.lower().translate(_PUNCT_TABLE).split()
    ids = [vocab.id_of(w) for w in words][: vocab.max_caption_len]
    ids += [PAD_ID] * (vocab.max_caption_len - len(ids))
    return np.asarray(ids, dtype=np.int64)


def tokenize_batch(captions, vocab):
    return np.stack([tokenize(c, vocab) for c in captions])


# -- text encoder ----------------------------------------------------------------


def text_encoder_specs(vocab_size, cfg):
    specs = [ParamSpec("text.embed", (vocab_size, cfg.d_embed), "embedding")]
    specs += dense_specs("text.fc1", cfg.d_embed, cfg.text_hidden)
    specs += dense_specs("text.fc2", cfg.text_hidden, cfg.d_text)
    return specs


def encode_text(token_ids, params, cfg):
    """Mean-pool the non-PAD token embeddings, then a 2-layer tanh MLP.

    Order-invariant by construction; an all-PAD row encodes to the MLP
    image of the zero vector.
    """
    token_ids = np.atleast_2d(np.asarray(token_ids))
    table = params["text.embed"]
    vocab_size = table.shape[0]
    if token_ids.min() < 0 or token_ids.max() >= vocab_size:
        raise ValueError(f"token id out of range for vocabulary of size {vocab_size}")
    dtype = table.dtype
    onehot = Tensor(np.eye(vocab_size, dtype=dtype)[token_ids])          # [N,L,V]
    embedded = onehot @ table                                            # [N,L,E]
    mask = (token_ids != PAD_ID).astype(dtype)
    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)            # [N,1]
    pooled = (embedded * Tensor(mask[:, :, None])).sum(axis=1)           # [N,E]
    pooled = pooled * Tensor(1.0 / counts)
    hidden = dense(pooled, params, "text.fc1").tanh()
    return dense(hidden, params, "text.fc2").tanh()


# -- image encoder -----------------------------------------------------------------


def image_encoder_specs(cfg, prefix="img", out_dim=None, channels=None):
    channels = list(channels or cfg.enc_channels)
    out_dim = out_dim or cfg.d_text
    specs = []
    c_in = 3
    for i, c_out in enumerate(channels, start=1):
        specs += conv_specs(f"{prefix}.block{i}", c_in, c_out, 4)
        c_in = c_out
    specs += dense_specs(f"{prefix}.fc", c_in, out_dim)
    return specs


def encode_image(images, params, cfg, prefix="img"):
    """Strided 3-block CNN, global average pool, dense projection.

    Accepts [3,H,W] or [N,3,H,W] with H = W = cfg.image_size and pixels
    in [-1, 1]; output dimension equals d_text (the shared space).
    """
    x = _as_image_batch(images, cfg, params[f"{prefix}.fc.w"].dtype)
    for i in range(1, 4):
        x = conv_layer(x, params, f"{prefix}.block{i}", stride=2, padding=1).leaky_relu(0.2)
    pooled = x.mean(axis=(2, 3))
    return dense(pooled, params, f"{prefix}.fc")


def _as_image_batch(images, cfg, dtype=None):
    if not isinstance(images, Tensor):
        images = Tensor(np.asarray(images, dtype=dtype))
    x = images.reshape(1, *images.shape) if images.ndim == 3 else images
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected [N,3,H,W] images, got {images.shape}")
    if x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
        raise ValueError(f"expected {cfg.image_size}x{cfg.image_size} images, got {x.shape[2]}x{x.shape[3]}")
    return x


# -- style features ------------------------------------------------------------------


def style_network_specs(cfg):
    specs = []
    c_in = 3
    for i, c_out in enumerate(cfg.style_channels, start=1):
        specs += conv_specs(f"stylenet.block{i}", c_in, c_out, 4)
        c_in = c_out
    return specs


def style_features(images, params, cfg):
    """Feature maps tapped after each configured block of the style network.

    Returns one tensor per entry of cfg.style_layers, in order; each is
    [N,C_l,H_l,W_l] (or [C_l,H_l,W_l] for a single unbatched image).
    """
    if isinstance(images, Tensor):
        squeeze = images.ndim == 3
    else:
        squeeze = np.asarray(images).ndim == 3
    x = _as_image_batch(images, cfg, params["stylenet.block1.kernel"].dtype)
    taps = []
    for i in range(1, 4):
        x = conv_layer(x, params, f"stylenet.block{i}", stride=2, padding=1).leaky_relu(0.2)
        taps.append(x)
    chosen = [taps[l] for l in cfg.style_layers]
    if squeeze:
        chosen = [t.reshape(*t.shape[1:]) for t in chosen]
    return chosen


def gram_matrix(fmap):
    """Channel Gram matrix normalized by C*H*W.

    [C,H,W] gives [C,C]; a batch [N,C,H,W] gives [N,C,C]. The result is
    symmetric positive semidefinite.
    """
    if not isinstance(fmap, Tensor):
        fmap = Tensor(fmap)
    if fmap.ndim == 3:
        c, h, w = fmap.shape
        m = fmap.reshape(c, h * w)
        return (m @ m.transpose(1, 0)) * (1.0 / (c * h * w))
    if fmap.ndim == 4:
        n, c, h, w = fmap.shape
        m = fmap.reshape(n, c, h * w)
        return (m @ m.transpose(0, 2, 1)) * (1.0 / (c * h * w))
    raise ValueError(f"gram_matrix expects [C,H,W] or [N,C,H,W], got {fmap.shape}")


def style_gram_diagonals(images, params, cfg):
    """Concatenated Gram diagonals per image, as a constant array [N, sum C_l].

    This is the style-head input; it is computed outside the training graph
    because the style network is frozen.
    """
    parts = []
    with no_grad():
        for fmap in style_features(images, params, cfg):
            f = fmap if fmap.ndim == 4 else fmap.reshape(1, *fmap.shape)
            g = gram_matrix(f).data                      # [N,C,C]
            parts.append(np.einsum("nii->ni", g))
    return np.concatenate(parts, axis=1)
