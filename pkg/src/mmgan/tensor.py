"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation records its parent tensors and a backward
rule on the output, so a scalar result can be pulled back with
``Tensor.backward()``. Graphs are rebuilt per use: a recorded graph may be
consumed by ``backward`` exactly once, which rules out silent gradient
accumulation across steps.

Layout convention is NCHW throughout. Two dtypes are supported,
``float64`` (default, required for gradient checking) and ``float32``
(permitted for training); the two may never meet inside one graph.
"""

from __future__ import annotations

import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS_FLOOR = 1e-12  # clamp for log / sqrt / division guards
_EXP_MAX = 700.0   # exp argument cap, overflow guard

_thread = threading.local()

# Test hook: name of one op whose backward rule gets perturbed, used to
# prove that the gradient checker actually detects broken backward rules.
_BACKWARD_FAULT = None


def set_backward_fault(op_name):
    """Install (or clear, with None) the backward-fault test hook."""
    global _BACKWARD_FAULT
    _BACKWARD_FAULT = op_name


def _recording():
    return getattr(_thread, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (inference paths)."""

    def __enter__(self):
        self._prev = _recording()
        _thread.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _thread.grad_enabled = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _acc(t, g):
    # Never mutates g in place; rebinding keeps shared buffers safe.
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


class Tensor:
    """N-dimensional array with an optional gradient slot.

    The value array is treated as immutable after construction; only the
    ``grad`` slot is written, by ``backward``. A tensor and the graph it
    belongs to are confined to one thread.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._consumed = False
        self._op = ""

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        """Same values, cut off from the graph."""
        return Tensor(self.data)

    def __repr__(self):
        tag = f", op={self._op!r}" if self._op else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad}{tag})"

    # -- autodiff ------------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every requires_grad leaf reachable from here.

        The root must be scalar and must carry a recorded computation; a
        graph may be consumed only once.
        """
        if self.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {self.data.shape}")
        if self._backward is None:
            raise RuntimeError("backward on a tensor with no recorded computation (empty tape)")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for n in topo:
            if n._backward is not None and n._consumed:
                raise RuntimeError("backward called on an already-consumed graph; rebuild the computation")
        for n in topo:
            if n._backward is not None:
                n._consumed = True
        self.grad = np.ones_like(self.data)
        for n in reversed(topo):
            if n._backward is not None and n.grad is not None:
                n._backward(n.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_dtypes(self, other)
            out = self.data + other.data

            def bw(g):
                _acc(self, _unbroadcast(g, self.data.shape))
                _acc(other, _unbroadcast(g, other.data.shape))

            return _make(out, (self, other), bw, "add")
        out = self.data + other

        def bw(g):
            _acc(self, g)

        return _make(out, (self,), bw, "add")

    __radd__ = __add__

    def __neg__(self):
        def bw(g):
            _acc(self, -g)

        return _make(-self.data, (self,), bw, "neg")

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _check_dtypes(self, other)
            out = self.data - other.data

            def bw(g):
                _acc(self, _unbroadcast(g, self.data.shape))
                _acc(other, _unbroadcast(-g, other.data.shape))

            return _make(out, (self, other), bw, "sub")
        out = self.data - other

        def bw(g):
            _acc(self, g)

        return _make(out, (self,), bw, "sub")

    def __rsub__(self, other):
        out = other - self.data

        def bw(g):
            _acc(self, -g)

        return _make(out, (self,), bw, "sub")

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_dtypes(self, other)
            out = self.data * other.data

            def bw(g):
                _acc(self, _unbroadcast(g * other.data, self.data.shape))
                _acc(other, _unbroadcast(g * self.data, other.data.shape))

            return _make(out, (self, other), bw, "mul")
        out = self.data * other

        def bw(g):
            _acc(self, g * other)

        return _make(out, (self,), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            _check_dtypes(self, other)
            denom = _guard_denominator(other.data)
            out = self.data / denom
            live = np.abs(other.data) >= EPS_FLOOR

            def bw(g):
                _acc(self, _unbroadcast(g / denom, self.data.shape))
                _acc(other, _unbroadcast(np.where(live, -g * self.data / (denom * denom), 0.0), other.data.shape))

            return _make(out, (self, other), bw, "div")
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        denom = _guard_denominator(self.data)
        out = other / denom
        live = np.abs(self.data) >= EPS_FLOOR

        def bw(g):
            _acc(self, np.where(live, -g * other / (denom * denom), 0.0))

        return _make(out, (self,), bw, "div")

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = self.data ** p

        def bw(g):
            _acc(self, g * p * self.data ** (p - 1))

        return _make(out, (self,), bw, "pow")

    def square(self):
        def bw(g):
            _acc(self, 2.0 * g * self.data)

        return _make(self.data * self.data, (self,), bw, "square")

    def sqrt(self):
        """Square root with inputs floored at 1e-12."""
        xc = np.maximum(self.data, EPS_FLOOR)
        out = np.sqrt(xc)
        live = self.data >= EPS_FLOOR

        def bw(g):
            _acc(self, np.where(live, 0.5 * g / out, 0.0))

        return _make(out, (self,), bw, "sqrt")

    def log(self):
        """Natural log with inputs floored at 1e-12."""
        xc = np.maximum(self.data, EPS_FLOOR)
        live = self.data >= EPS_FLOOR

        def bw(g):
            _acc(self, np.where(live, g / xc, 0.0))

        return _make(np.log(xc), (self,), bw, "log")

    def exp(self):
        xc = np.minimum(self.data, _EXP_MAX)
        out = np.exp(xc)
        live = self.data <= _EXP_MAX

        def bw(g):
            _acc(self, np.where(live, g * out, 0.0))

        return _make(out, (self,), bw, "exp")

    def tanh(self):
        out = np.tanh(self.data)

        def bw(g):
            _acc(self, g * (1.0 - out * out))

        return _make(out, (self,), bw, "tanh")

    def sigmoid(self):
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)

        def bw(g):
            _acc(self, g * out * (1.0 - out))

        return _make(out, (self,), bw, "sigmoid")

    def leaky_relu(self, alpha=0.2):
        pos = self.data > 0
        out = np.where(pos, self.data, alpha * self.data)

        def bw(g):
            _acc(self, np.where(pos, g, alpha * g))

        return _make(out, (self,), bw, "leaky_relu")

    def clip(self, lo, hi):
        """Clamp values into [lo, hi]; gradient passes through inside the range."""
        out = np.clip(self.data, lo, hi)
        live = (self.data >= lo) & (self.data <= hi)

        def bw(g):
            _acc(self, np.where(live, g, 0.0))

        return _make(out, (self,), bw, "clip")

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape, ax = self.data.shape, _norm_axis(axis, self.data.ndim)

        def bw(g):
            _acc(self, _expand_reduced(g, shape, ax, keepdims))

        return _make(out, (self,), bw, "sum")

    def mean(self, axis=None, keepdims=False):
        ax = _norm_axis(axis, self.data.ndim)
        count = self.data.size if ax is None else int(np.prod([self.data.shape[i] for i in ax]))
        out = self.data.mean(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def bw(g):
            _acc(self, _expand_reduced(g, shape, ax, keepdims) / count)

        return _make(out, (self,), bw, "mean")

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.data.reshape(shape)
        old = self.data.shape

        def bw(g):
            _acc(self, g.reshape(old))

        return _make(out, (self,), bw, "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        out = self.data.transpose(axes)

        def bw(g):
            _acc(self, g.transpose(inv))

        return _make(out, (self,), bw, "transpose")

    def broadcast_to(self, shape):
        shape = tuple(shape)
        out = np.broadcast_to(self.data, shape)
        old = self.data.shape

        def bw(g):
            _acc(self, _unbroadcast(g, old))

        return _make(np.ascontiguousarray(out), (self,), bw, "broadcast")

    # -- linear algebra ----------------------------------------------------------

    def matmul(self, other):
        if not isinstance(other, Tensor):
            raise TypeError("matmul expects a Tensor")
        _check_dtypes(self, other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")
        out = self.data @ other.data
        a, b = self.data, other.data

        def bw(g):
            _acc(self, _unbroadcast(g @ b.swapaxes(-1, -2), a.shape))
            _acc(other, _unbroadcast(a.swapaxes(-1, -2) @ g, b.shape))

        return _make(out, (self, other), bw, "matmul")

    __matmul__ = matmul


def _make(data, parents, backward, op):
    out = Tensor(data)
    if _recording() and any(p.requires_grad for p in parents):
        if _BACKWARD_FAULT is not None and op == _BACKWARD_FAULT:
            inner = backward

            def backward(g, _inner=inner):
                _inner(g * 1.01)

        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _check_dtypes(a, b):
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"mixed precision in one graph: {a.data.dtype} vs {b.data.dtype}")


def _guard_denominator(b):
    return np.where(np.abs(b) < EPS_FLOOR, np.copysign(EPS_FLOOR, b), b)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, shape, axes, keepdims):
    if axes is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape).copy()


# Free-function aliases for the method ops, handy in functional code.

def concat(tensors, axis=0):
    """Concatenate tensors along `axis`."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    for t in tensors[1:]:
        _check_dtypes(tensors[0], t)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _acc(t, piece)

    return _make(out, tuple(tensors), bw, "concat")


# -- convolutions --------------------------------------------------------------


def _pad_hw(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp, kh, kw, stride):
    # xp: [N,C,Hp,Wp] -> windows [N,C,kh,kw,Ho,Wo]
    w = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    w = w[:, :, ::stride, ::stride]
    return np.ascontiguousarray(np.moveaxis(w, (4, 5), (2, 3)))


def _col2im(cols, n, c, hp, wp, stride):
    # cols: [N,C,kh,kw,Ho,Wo] scatter-added into [N,C,Hp,Wp]
    _, _, kh, kw, ho, wo = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def _conv_out_size(h, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1


def conv2d(x, kernel, stride=1, padding=0):
    """Cross-correlate `x` [N,C,H,W] with `kernel` [F,C,kh,kw]."""
    _validate_conv_args(stride, padding)
    _check_dtypes(x, kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.data.shape} and {kernel.data.shape}")
    n, c, h, w = x.data.shape
    f, ck, kh, kw = kernel.data.shape
    if ck != c:
        raise ValueError(f"conv2d channel mismatch: input {x.data.shape} has {c} channels, kernel {kernel.data.shape} expects {ck}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    cols = _im2col(_pad_hw(x.data, padding), kh, kw, stride)
    out = np.moveaxis(np.tensordot(kernel.data, cols, axes=((1, 2, 3), (1, 2, 3))), 0, 1)
    out = np.ascontiguousarray(out)
    kd, xshape = kernel.data, x.data.shape

    def bw(g):
        if kernel.requires_grad:
            _acc(kernel, np.tensordot(g, cols, axes=((0, 2, 3), (0, 4, 5))))
        if x.requires_grad:
            _acc(x, _conv2d_grad_input(g, kd, stride, padding, xshape))

    return _make(out, (x, kernel), bw, "conv2d")


def _conv2d_grad_input(g, kd, stride, padding, xshape):
    n, c, h, w = xshape
    t = np.tensordot(g, kd, axes=((1,), (0,)))            # [N,Ho,Wo,C,kh,kw]
    cols = np.ascontiguousarray(np.moveaxis(t, (3, 4, 5), (1, 2, 3)))
    gx = _col2im(cols, n, c, h + 2 * padding, w + 2 * padding, stride)
    if padding:
        gx = gx[:, :, padding:padding + h, padding:padding + w]
    return gx


def conv_transpose2d(x, kernel, stride=1, padding=0):
    """Transposed convolution; the adjoint of conv2d with the same kernel.

    `x` is [N,C,H,W] and `kernel` is [C,F,kh,kw] (input channels first);
    output spatial size is (H-1)*stride - 2*padding + kh.
    """
    _validate_conv_args(stride, padding)
    _check_dtypes(x, kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(f"conv_transpose2d expects 4-D input and kernel, got {x.data.shape} and {kernel.data.shape}")
    n, c, h, w = x.data.shape
    ck, f, kh, kw = kernel.data.shape
    if ck != c:
        raise ValueError(f"conv_transpose2d channel mismatch: input {x.data.shape} has {c} channels, kernel {kernel.data.shape} expects {ck}")
    hp, wp = (h - 1) * stride + kh, (w - 1) * stride + kw
    ho, wo = hp - 2 * padding, wp - 2 * padding
    if ho < 1 or wo < 1:
        raise ValueError(f"conv_transpose2d output {ho}x{wo} is empty for input {h}x{w}")
    t = np.tensordot(x.data, kernel.data, axes=((1,), (0,)))   # [N,H,W,F,kh,kw]
    cols = np.ascontiguousarray(np.moveaxis(t, (3, 4, 5), (1, 2, 3)))
    full = _col2im(cols, n, f, hp, wp, stride)
    out = full[:, :, padding:hp - padding, padding:wp - padding] if padding else full
    kd, xd = kernel.data, x.data

    def bw(g):
        gp = _pad_hw(g, padding)
        wins = _im2col(gp, kh, kw, stride)                     # [N,F,kh,kw,H,W]
        if x.requires_grad:
            _acc(x, np.ascontiguousarray(np.moveaxis(np.tensordot(kd, wins, axes=((1, 2, 3), (1, 2, 3))), 0, 1)))
        if kernel.requires_grad:
            _acc(kernel, np.tensordot(xd, wins, axes=((0, 2, 3), (0, 4, 5))))

    return _make(np.ascontiguousarray(out), (x, kernel), bw, "conv_transpose2d")


def _validate_conv_args(stride, padding):
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ValueError(f"padding must be a non-negative int, got {padding!r}")


def instance_norm(x, eps=1e-5):
    """Per-sample, per-channel normalization over the spatial axes."""
    if x.data.ndim != 4:
        raise ValueError(f"instance_norm expects [N,C,H,W], got {x.data.shape}")
    m = x.mean(axis=(2, 3), keepdims=True)
    centered = x - m
    var = centered.square().mean(axis=(2, 3), keepdims=True)
    return centered / (var + eps).sqrt()


# -- verification ---------------------------------------------------------------


def grad_check(f, x, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `f` must map a Tensor to a scalar Tensor and be evaluable at x +- eps
    perturbations. Relative error uses max(1, |analytic|, |numeric|) as the
    denominator. Requires float64 input.
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64, copy=True)
    probe = Tensor(base, requires_grad=True)
    out = f(probe)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check: f must return a scalar Tensor")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)
    numeric = np.zeros(base.size)
    with no_grad():
        flat = base.reshape(-1)
        for i in range(base.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(Tensor(base.copy())).data)
            flat[i] = orig - eps
            fm = float(f(Tensor(base.copy())).data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * eps)
    a = analytic.reshape(-1)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
    return float(np.max(np.abs(a - numeric) / denom)) if base.size else 0.0
