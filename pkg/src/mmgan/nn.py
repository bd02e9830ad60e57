"""Parameter containers, seeded initialization, and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, conv2d, conv_transpose2d


@dataclass(frozen=True)
class ParamSpec:
    """Shape description of one named parameter.

    kind selects the initializer: "kernel" is He-normal and needs fan_in,
    "bias" is zeros, "embedding" is uniform in [-0.05, 0.05].
    """

    path: str
    shape: tuple
    kind: str = "kernel"
    fan_in: int = 0

    def __post_init__(self):
        if self.kind not in ("kernel", "bias", "embedding"):
            raise ValueError(f"unknown parameter kind {self.kind!r} for {self.path}")
        if any(int(e) <= 0 for e in self.shape):
            raise ValueError(f"non-positive extent in shape {self.shape} for {self.path}")
        if self.kind == "kernel" and self.fan_in <= 0:
            raise ValueError(f"kernel {self.path} needs a positive fan_in")


class ParamSet:
    """Named map from parameter path to Tensor, iterated in sorted order."""

    def __init__(self, tensors=None):
        self._tensors = {}
        if tensors:
            for path, t in tensors.items():
                self[path] = t

    def __setitem__(self, path, tensor):
        if path in self._tensors:
            raise ValueError(f"duplicate parameter path {path!r}")
        self._tensors[path] = tensor

    def __getitem__(self, path):
        return self._tensors[path]

    def __contains__(self, path):
        return path in self._tensors

    def __len__(self):
        return len(self._tensors)

    def paths(self):
        return sorted(self._tensors)

    def items(self):
        for path in self.paths():
            yield path, self._tensors[path]

    def detached(self):
        """Same arrays wrapped without requires_grad (frozen view for forwards)."""
        out = ParamSet()
        for path, t in self.items():
            out[path] = Tensor(t.data)
        return out

    def zero_grads(self):
        for _, t in self.items():
            t.grad = None

    def merged(self, *others):
        out = ParamSet()
        for ps in (self,) + others:
            for path, t in ps.items():
                out[path] = t
        return out


def init_params(specs, seed, dtype=np.float64):
    """Draw a ParamSet from seeded streams; identical (specs, seed) gives
    bit-identical values. Kernels are He-normal with std sqrt(2/fan_in)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params = ParamSet()
    for spec in sorted(specs, key=lambda s: s.path):
        if spec.kind == "bias":
            values = np.zeros(spec.shape)
        elif spec.kind == "embedding":
            values = rng.uniform(-0.05, 0.05, size=spec.shape)
        else:
            values = rng.normal(0.0, np.sqrt(2.0 / spec.fan_in), size=spec.shape)
        params[spec.path] = Tensor(values.astype(dtype), requires_grad=True)
    return params


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for path, tensor in params.items():
            state.m[path] = np.zeros_like(tensor.data)
            state.v[path] = np.zeros_like(tensor.data)
        return state


def adam_step(params, grads, state):
    """One bias-corrected Adam update.

    `grads` must cover exactly the paths of `params` (None entries count as
    zero gradients); a NaN gradient aborts, naming the offending path.
    Returns a fresh ParamSet (tensors are immutable) and mutates `state`.
    """
    param_paths = set(params.paths())
    grad_paths = set(grads)
    if param_paths != grad_paths:
        missing = sorted(param_paths - grad_paths)
        extra = sorted(grad_paths - param_paths)
        raise ValueError(f"gradient paths do not match parameters (missing={missing}, extra={extra})")
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    updated = ParamSet()
    for path, tensor in params.items():
        g = grads[path]
        if g is None:
            g = np.zeros_like(tensor.data)
        if g.shape != tensor.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {path} {tensor.data.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {path}")
        m = state.m[path] = state.beta1 * state.m[path] + (1.0 - state.beta1) * g
        v = state.v[path] = state.beta2 * state.v[path] + (1.0 - state.beta2) * (g * g)
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        updated[path] = Tensor(tensor.data - step, requires_grad=tensor.requires_grad)
    return updated, state


# -- layer forwards ------------------------------------------------------------


def dense(x, params, path):
    return x @ params[f"{path}.w"] + params[f"{path}.b"]


def conv_layer(x, params, path, stride=1, padding=0):
    y = conv2d(x, params[f"{path}.kernel"], stride=stride, padding=padding)
    return y + params[f"{path}.bias"].reshape(1, -1, 1, 1)


def conv_transpose_layer(x, params, path, stride=1, padding=0):
    y = conv_transpose2d(x, params[f"{path}.kernel"], stride=stride, padding=padding)
    return y + params[f"{path}.bias"].reshape(1, -1, 1, 1)


def dense_specs(path, n_in, n_out):
    return [ParamSpec(f"{path}.w", (n_in, n_out), "kernel", fan_in=n_in),
            ParamSpec(f"{path}.b", (n_out,), "bias")]


def conv_specs(path, c_in, c_out, k):
    return [ParamSpec(f"{path}.kernel", (c_out, c_in, k, k), "kernel", fan_in=c_in * k * k),
            ParamSpec(f"{path}.bias", (c_out,), "bias")]


def conv_transpose_specs(path, c_in, c_out, k):
    return [ParamSpec(f"{path}.kernel", (c_in, c_out, k, k), "kernel", fan_in=c_in * k * k),
            ParamSpec(f"{path}.bias", (c_out,), "bias")]
