"""Run configuration: every hyperparameter of training and evaluation.

Configs load from JSON files whose keys are exactly the TrainConfig field
names; unknown keys are rejected. The config is echoed into checkpoints
and metric reports for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

GAN_OBJECTIVES = ("non_saturating", "minimax")
# Recognized but unimplemented objectives, reserved config values.
GAN_OBJECTIVE_STUBS = ("wasserstein", "hinge", "gradient_penalty")


@dataclass
class TrainConfig:
    # optimization
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 100
    max_steps: int | None = None
    d_steps_per_g: int = 1
    gan_objective: str = "non_saturating"
    grad_clip: float | None = None  # reserved, must stay None
    # loss weights
    lambda_gan: float = 1.0
    lambda_txt_img: float = 10.0
    lambda_style: float = 10.0
    # architecture
    image_size: int = 32
    d_z: int = 64
    d_text: int = 64
    d_style: int = 32
    d_embed: int = 32
    max_caption_len: int = 8
    gen_channels: list = field(default_factory=lambda: [64, 32, 16])
    disc_channels: list = field(default_factory=lambda: [8, 16, 32])
    enc_channels: list = field(default_factory=lambda: [8, 16, 32])
    style_channels: list = field(default_factory=lambda: [8, 16, 32])
    style_layers: list = field(default_factory=lambda: [0, 1, 2])
    text_hidden: int = 64
    style_head_hidden: int = 64
    # numerics
    precision: str = "float64"
    # seeding
    seed: int = 0
    # data
    data_manifest: str | None = None
    data_n_samples: int = 256
    data_seed: int = 0
    train_fraction: float = 0.8
    # inception-score classifier pre-pass
    classifier_steps: int = 300
    classifier_lr: float = 1e-3
    # logistics
    out_dir: str = "runs/default"
    checkpoint_interval: int = 500
    eval_every_epochs: int = 1  # 0 disables epoch-cadence evaluation
    eval_n_gen: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("batch_size", "epochs", "d_steps_per_g", "image_size", "d_z", "d_text",
                    "d_style", "d_embed", "max_caption_len", "text_hidden", "style_head_hidden",
                    "data_n_samples", "checkpoint_interval", "eval_n_gen")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr < 0 or self.classifier_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")
        for name in ("lambda_gan", "lambda_txt_img", "lambda_style"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.gan_objective in GAN_OBJECTIVE_STUBS:
            raise NotImplementedError(f"gan_objective {self.gan_objective!r} is a reserved stub")
        if self.gan_objective not in GAN_OBJECTIVES:
            raise ValueError(f"gan_objective must be one of {GAN_OBJECTIVES}, got {self.gan_objective!r}")
        if self.grad_clip is not None:
            raise NotImplementedError("grad_clip is a reserved stub and must stay null")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.image_size % 8 != 0:
            raise ValueError(f"image_size must be a multiple of 8, got {self.image_size}")
        for name in ("gen_channels", "disc_channels", "enc_channels", "style_channels"):
            ch = getattr(self, name)
            if len(ch) != 3 or any(int(c) < 1 for c in ch):
                raise ValueError(f"{name} must list three positive channel counts, got {ch}")
        if not self.style_layers or sorted(set(self.style_layers)) != sorted(self.style_layers):
            raise ValueError(f"style_layers must be a non-empty list of distinct taps, got {self.style_layers}")
        if any(l not in (0, 1, 2) for l in self.style_layers):
            raise ValueError(f"style_layers entries must be in 0..2, got {self.style_layers}")
        if not (0.0 < self.train_fraction <= 1.0):
            raise ValueError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError(f"max_steps must be non-negative or null, got {self.max_steps}")
        if self.eval_every_epochs < 0 or self.classifier_steps < 0:
            raise ValueError("eval_every_epochs and classifier_steps must be non-negative")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    @property
    def gen_start_size(self):
        return self.image_size // 8

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
        return cls.from_dict(values)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self):
        """Short provenance hash of the full configuration."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)
