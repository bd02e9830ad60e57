"""Evaluation protocol: FID, Inception Score, text-image consistency, and
style matching, each built on small auditable numerics.

Feature extractors are passed in as callables mapping an image batch
[N,3,H,W] to feature rows [N,d], which keeps the metric arithmetic
independent of any particular network. The desk-scale extractors (a
frozen random CNN for FID, the run's own dual encoders for consistency,
a small trained shape classifier for IS) are stand-ins for the large
pretrained networks used in full-scale evaluation; absolute values are
comparable only within one configuration, orderings are the signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

COV_SHRINKAGE = 1e-6
KL_FLOOR = 1e-12


@dataclass
class GaussianStats:
    """Mean vector and (shrunk) covariance of an embedded image set."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean dim {d}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")

    @property
    def dim(self):
        return self.mean.shape[0]


def feature_stats(images, extractor):
    """Empirical mean/covariance (ddof 1) of extractor features, shrunk by
    1e-6 * I so small-sample covariances stay positive definite."""
    feats = np.asarray(extractor(images), dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"extractor must return [n,d] features, got shape {feats.shape}")
    n, d = feats.shape
    if n < 2:
        raise ValueError(f"feature_stats needs at least 2 images, got {n}")
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0 + COV_SHRINKAGE * np.eye(d)
    return GaussianStats(mean=mean, cov=cov)


def sqrtm_psd(a):
    """Symmetric PSD square root via eigendecomposition.

    The input is symmetrized and eigenvalues are clamped at zero, so the
    result S satisfies S @ S ~= (A + A.T)/2 for any nearly-PSD input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"sqrtm_psd expects a square matrix, got {a.shape}")
    sym = (a + a.T) / 2.0
    w, v = np.linalg.eigh(sym)
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    return (root + root.T) / 2.0


def fid(a, b):
    """Fréchet distance between two Gaussian feature summaries.

    Uses the symmetric product form sqrt(S_a Σ_b S_a) with S_a = sqrt(Σ_a)
    for stability; the result is clamped at zero.
    """
    if a.dim != b.dim:
        raise ValueError(f"stats dims disagree: {a.dim} vs {b.dim}")
    sa = sqrtm_psd(a.cov)
    inner = sqrtm_psd(sa @ b.cov @ sa)
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    trace_term = float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(inner))
    return max(mean_term + trace_term, 0.0)


def inception_score(probs):
    """exp of the mean KL between per-sample class posteriors and their marginal.

    Rows must be valid distributions; the score lies in [1, K].
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError(f"expected [n,K] probability rows, got shape {p.shape}")
    if np.any(p < 0):
        raise ValueError("class probabilities must be non-negative")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"row {bad} sums to {sums[bad]}, not 1")
    marginal = p.mean(axis=0)
    kl = np.sum(p * (np.log(np.maximum(p, KL_FLOOR)) - np.log(np.maximum(marginal, KL_FLOOR))), axis=1)
    return float(np.exp(kl.mean()))


def _cosine(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0  # zero-vector embeddings contribute nothing
    return float(np.dot(u, v) / (nu * nv))


def consistency_score(images, captions, img_encoder, text_encoder):
    """Mean cosine similarity between paired image and caption embeddings."""
    if len(images) != len(captions):
        raise ValueError(f"got {len(images)} images but {len(captions)} captions")
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    img_feats = np.asarray(img_encoder(images), dtype=np.float64)
    txt_feats = np.asarray(text_encoder(captions), dtype=np.float64)
    return float(np.mean([_cosine(i, t) for i, t in zip(img_feats, txt_feats)]))


def style_match_score(images, style_image, gram_vectors):
    """Mean cosine similarity between flattened Gram matrices of each image
    and of the style reference, both under `gram_vectors`."""
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    img_grams = np.asarray(gram_vectors(images), dtype=np.float64)
    ref = np.asarray(gram_vectors(np.asarray(style_image)[None]), dtype=np.float64)[0]
    return float(np.mean([_cosine(g, ref) for g in img_grams]))


@dataclass
class MetricsReport:
    """One evaluation row: the four scores plus provenance."""

    fid: float
    is_mean: float
    clip_consistency: float
    style_match: float
    sample_count: int
    config_digest: str

    def __post_init__(self):
        if self.fid < 0:
            raise ValueError(f"fid must be >= 0, got {self.fid}")
        if self.is_mean < 1.0 - 1e-9:
            raise ValueError(f"inception score must be >= 1, got {self.is_mean}")
        for name in ("clip_consistency", "style_match"):
            v = getattr(self, name)
            if not -1.0 - 1e-9 <= v <= 1.0 + 1e-9:
                raise ValueError(f"{name} must lie in [-1, 1], got {v}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")

    _FIELDS = ("fid", "is_mean", "clip_consistency", "style_match", "sample_count", "config_digest")

    def to_kv_text(self):
        lines = []
        for name in self._FIELDS:
            v = getattr(self, name)
            lines.append(f"{name} = {v!r}" if isinstance(v, str) else f"{name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv_text(cls, text):
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key == "config_digest":
                values[key] = raw.strip("'\"")
            elif key == "sample_count":
                values[key] = int(raw)
            else:
                values[key] = float(raw)
        return cls(**values)

    def to_json(self):
        return json.dumps({name: getattr(self, name) for name in self._FIELDS}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def write(self, path_base):
        """Write both documented formats: <base>.txt and <base>.json."""
        with open(str(path_base) + ".txt", "w", encoding="utf-8") as fh:
            fh.write(self.to_kv_text())
        with open(str(path_base) + ".json", "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
