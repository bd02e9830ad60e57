"""Procedural captioned-and-styled toy dataset, manifest IO, and batching.

Each sample is one colored shape on a plain background, rasterized with
2x supersampling, captioned from a small template grammar, and passed
through one of four style transforms. Everything expands deterministically
from the dataset seed, so datasets are reproducible byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .encoders import Vocabulary
from .rng import substream

SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.80, 0.15),
    "blue": (0.15, 0.20, 0.90),
    "yellow": (0.95, 0.85, 0.10),
    "orange": (0.95, 0.50, 0.10),
    "purple": (0.60, 0.15, 0.80),
    "cyan": (0.10, 0.80, 0.85),
    "white": (0.95, 0.95, 0.95),
}
STYLES = ("plain", "warm", "cool", "noise")

_BACKGROUND = (-0.85, -0.85, -0.85)
_TEMPLATES = ("a {color} {shape}", "the {color} {shape}", "one {color} {shape}")
_SYNONYMS = {"circle": ("circle", "disc"), "square": ("square", "box"), "triangle": ("triangle",)}
_NOISE_SIGMA = 0.15
_SUPERSAMPLE = 2


@dataclass(frozen=True)
class DatasetSpec:
    """Deterministic expansion recipe: same spec, same dataset."""

    n_samples: int = 256
    shapes: tuple = SHAPES
    colors: tuple = tuple(COLORS)
    styles: tuple = STYLES
    seed: int = 0
    image_size: int = 32
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.shapes or not self.colors:
            raise ValueError("shape and color sets must be non-empty")
        for c in self.colors:
            if c not in COLORS:
                raise ValueError(f"unknown color {c!r}")
        for s in self.shapes:
            if s not in SHAPES:
                raise ValueError(f"unknown shape {s!r}")
        for s in self.styles:
            if s not in STYLES:
                raise ValueError(f"unknown style {s!r}")


@dataclass
class Sample:
    """One training record: image in [-1,1], caption, style and class ids."""

    image: np.ndarray
    caption: str
    style_id: int
    class_id: int


def caption_words():
    """Every word the caption grammar can emit (the bundled vocabulary)."""
    words = set()
    for template in _TEMPLATES:
        words.update(w for w in template.replace("{color}", "").replace("{shape}", "").split())
    words.update(COLORS)
    for synonyms in _SYNONYMS.values():
        words.update(synonyms)
    return sorted(words)


def build_vocab(max_caption_len=8):
    return Vocabulary(caption_words(), max_caption_len=max_caption_len)


def _shape_mask(shape, cx, cy, r, size):
    ss = size * _SUPERSAMPLE
    v, u = (np.mgrid[0:ss, 0:ss] + 0.5) / ss
    if shape == "circle":
        mask = (u - cx) ** 2 + (v - cy) ** 2 <= r * r
    elif shape == "square":
        half = r * 0.85
        mask = (np.abs(u - cx) <= half) & (np.abs(v - cy) <= half)
    elif shape == "triangle":
        ax, ay = cx, cy - r
        bx, by = cx - 0.9 * r, cy + 0.72 * r
        qx, qy = cx + 0.9 * r, cy + 0.72 * r
        e1 = (bx - ax) * (v - ay) - (by - ay) * (u - ax)
        e2 = (qx - bx) * (v - by) - (qy - by) * (u - bx)
        e3 = (ax - qx) * (v - qy) - (ay - qy) * (u - qx)
        mask = ((e1 >= 0) & (e2 >= 0) & (e3 >= 0)) | ((e1 <= 0) & (e2 <= 0) & (e3 <= 0))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    soft = mask.astype(np.float64).reshape(size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(1, 3))
    return soft


def _rasterize(shape, color_name, cx, cy, r, size):
    mask = _shape_mask(shape, cx, cy, r, size)
    fg = 2.0 * np.asarray(COLORS[color_name], dtype=np.float64) - 1.0
    bg = np.asarray(_BACKGROUND, dtype=np.float64)
    return bg[:, None, None] * (1.0 - mask) + fg[:, None, None] * mask


def apply_style(image, style_id, rng=None):
    """Apply the indexed style transform; id 0 is the exact identity."""
    style = STYLES[style_id]
    if style == "plain":
        return image
    if style == "warm":
        shift = np.array([0.30, 0.05, -0.30])
    elif style == "cool":
        shift = np.array([-0.30, 0.05, 0.30])
    else:  # noise texture
        if rng is None:
            raise ValueError("the noise style needs an explicit rng")
        return np.clip(image + _NOISE_SIGMA * rng.standard_normal(image.shape), -1.0, 1.0)
    return np.clip(image + shift[:, None, None], -1.0, 1.0)


def style_exemplar(spec, style_id):
    """Canonical reference image for a style: a color-checker card under
    that style's transform. Used as the Eq.-3 style target for training
    and as the reference in style-match scoring."""
    if not 0 <= style_id < len(spec.styles):
        raise ValueError(f"style_id {style_id} out of range for {spec.styles}")
    size = spec.image_size
    block = max(size // 8, 1)
    names = list(COLORS)
    card = np.zeros((3, size, size), dtype=np.float64)
    for bi in range(size // block):
        for bj in range(size // block):
            rgb = 2.0 * np.asarray(COLORS[names[(bi * 3 + bj) % len(names)]]) - 1.0
            card[:, bi * block:(bi + 1) * block, bj * block:(bj + 1) * block] = rgb[:, None, None]
    global_id = STYLES.index(spec.styles[style_id])
    rng = substream(spec.seed, "exemplar", style_id)
    return apply_style(card, global_id, rng)


def synth_dataset(spec):
    """Expand a DatasetSpec into its sample list.

    Shape classes and styles are assigned round-robin; color, geometry,
    caption phrasing, and noise come from per-sample child streams, so
    samples can be rasterized in any order (or in parallel) identically.
    """
    samples = []
    for i in range(spec.n_samples):
        rng = substream(spec.seed, "sample", i)
        shape = spec.shapes[i % len(spec.shapes)]
        style_id = i % len(spec.styles)
        color = spec.colors[int(rng.integers(len(spec.colors)))]
        cx, cy = rng.uniform(0.38, 0.62, size=2)
        r = rng.uniform(0.18, 0.30)
        image = _rasterize(shape, color, cx, cy, r, spec.image_size)
        image = apply_style(image, STYLES.index(spec.styles[style_id]), rng)
        template = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
        synonyms = _SYNONYMS[shape]
        word = synonyms[int(rng.integers(len(synonyms)))]
        caption = template.format(color=color, shape=word)
        samples.append(Sample(image=image, caption=caption, style_id=style_id,
                              class_id=spec.shapes.index(shape)))
    return samples


def split_samples(samples, train_fraction):
    n_train = int(round(len(samples) * train_fraction))
    n_train = min(max(n_train, 1), len(samples))
    return samples[:n_train], samples[n_train:]


# -- PNG and manifest IO ----------------------------------------------------------


def image_to_uint8(image):
    return np.clip(np.round((np.asarray(image) + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def uint8_to_image(u8):
    return u8.astype(np.float64) / 255.0 * 2.0 - 1.0


def write_png(path, image):
    """Write one [3,H,W] image in [-1,1] as an 8-bit RGB PNG."""
    Image.fromarray(image_to_uint8(image).transpose(1, 2, 0), "RGB").save(path)


def read_png(path):
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(f"image {path} is not 3-channel RGB (mode {im.mode})")
        arr = np.asarray(im, dtype=np.uint8)
    return uint8_to_image(arr.transpose(2, 0, 1))


def tile_grid(images):
    """Tile [N,3,H,W] into one image, row-major, near-square."""
    images = np.asarray(images)
    n, _, h, w = images.shape
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    grid = np.full((3, rows * h, cols * w), -1.0)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[:, r * h:(r + 1) * h, c * w:(c + 1) * w] = images[i]
    return grid


def save_manifest(samples, out_dir, name="manifest.tsv"):
    """Write samples as PNGs plus a tab-separated manifest.

    Record format (UTF-8, one per line, `#` starts a comment):
    relative_png_path<TAB>caption<TAB>style_id<TAB>class_id
    """
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, name)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("# relative_png_path\tcaption\tstyle_id\tclass_id\n")
        for i, sample in enumerate(samples):
            if "\t" in sample.caption or "\n" in sample.caption:
                raise ValueError(f"caption of sample {i} contains a tab or newline")
            rel = f"images/{i:05d}.png"
            write_png(os.path.join(out_dir, rel), sample.image)
            fh.write(f"{rel}\t{sample.caption}\t{sample.style_id}\t{sample.class_id}\n")
    return manifest_path


def load_manifest(path):
    """Read a manifest back into samples; malformed lines are rejected with
    their line number."""
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValueError(f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
            rel, caption, style_raw, class_raw = fields
            try:
                style_id, class_id = int(style_raw), int(class_raw)
            except ValueError:
                raise ValueError(f"line {lineno}: style_id and class_id must be integers") from None
            img_path = os.path.join(base, rel)
            if not os.path.isfile(img_path):
                raise ValueError(f"line {lineno}: image file not found: {rel}")
            try:
                image = read_png(img_path)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            samples.append(Sample(image=image, caption=caption, style_id=style_id, class_id=class_id))
    return samples


# -- batching ------------------------------------------------------------------


def batch_indices(n, batch_size, seed, epoch):
    """Index batches of one epoch: a seeded shuffle of range(n) chopped into
    full batches; the final partial batch is dropped."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = substream(seed, "shuffle", epoch).permutation(n)
    n_full = n // batch_size
    return [perm[b * batch_size:(b + 1) * batch_size] for b in range(n_full)]


def batches(samples, batch_size, seed, epoch):
    """Sample batches for one epoch; (seed, epoch) fully determines order."""
    return [[samples[i] for i in idx] for idx in batch_indices(len(samples), batch_size, seed, epoch)]


def image_batch(samples, dtype=np.float64):
    return np.stack([s.image for s in samples]).astype(dtype)
