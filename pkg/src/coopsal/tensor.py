"""Reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps an ndarray and records the op that produced it, so calling
``backward()`` on a scalar result walks the graph in reverse topological order
and accumulates gradients into every tensor that requires them.  Gradients are
first-class for inputs as well as parameters: sampling chains differentiate
energies with respect to maps and latent codes, not just weights.

Float32 is the working precision; float64 is available for oracle checks via
``use_dtype``.  All ops are deterministic given the same inputs.
"""

from __future__ import annotations

import contextlib
import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError", "tensor", "set_default_dtype",
    "get_default_dtype", "use_dtype", "set_check_finite", "add", "sub", "mul",
    "mul_scalar", "matmul", "conv2d", "relu", "leaky_relu", "sigmoid",
    "batchnorm2d", "concat", "upsample2x", "mean_all", "sum_all", "square",
    "tile_to_map", "reshape", "binary_cross_entropy", "gradients", "grad_check",
]

_FLOAT_DTYPES = (np.float32, np.float64)
_default_dtype = np.float32
_check_finite = False


class ShapeError(ValueError):
    """Raised when an op receives tensors whose shapes do not conform."""

    def __init__(self, op: str, shapes, detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(ArithmeticError):
    """Raised in checked mode when an op produces NaN or Inf."""

    def __init__(self, op: str, where: str = "forward"):
        self.op = op
        super().__init__(f"{op}: non-finite values in {where} pass")


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise TypeError(f"default dtype must be float32 or float64, got {dtype}")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily switch the default dtype (e.g. float64 for oracles)."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def set_check_finite(flag: bool) -> None:
    """Toggle NaN/Inf detection on every op output and gradient."""
    global _check_finite
    _check_finite = bool(flag)


def _checked(op: str, arr: np.ndarray, where: str = "forward") -> np.ndarray:
    if _check_finite and not np.all(np.isfinite(arr)):
        raise NonFiniteError(op, where)
    return arr


class Tensor:
    """Node of the autodiff graph: an ndarray plus provenance."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = "leaf"):
        if isinstance(data, np.ndarray):
            arr = data if data.dtype.type in _FLOAT_DTYPES else data.astype(_default_dtype)
        elif isinstance(data, np.floating) and data.dtype.type in _FLOAT_DTYPES:
            # numpy returns scalars, not 0-d arrays, from 0-d arithmetic;
            # keep their precision so graph dtype follows the operands
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=_default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = _op
        self._parents = _parents
        self._backward = None

    # -- introspection -------------------------------------------------
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

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- graph ----------------------------------------------------------
    def detach(self) -> "Tensor":
        """A leaf view sharing this tensor's data, outside the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.data.shape != ():
            raise ShapeError("backward", [self.shape], "output must be a scalar")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if _check_finite:
                    for parent in node._parents:
                        if parent.grad is not None:
                            _checked(node.op, parent.grad, "backward")

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
    return Tensor(arr, requires_grad=requires_grad)


def _coerce(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # closures hand over freshly allocated arrays, so ownership is safe
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == tuple(shape):
        return g.copy() if not g.flags.owndata else g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(g)


def _make(op: str, data: np.ndarray, parents) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor(_checked(op, data), requires_grad=req,
                 _parents=tuple(parents) if req else (), _op=op)
    return out


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------

def _broadcast_ok(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, [a.shape, b.shape]) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_ok("add", a, b)
    out = _make("add", a.data + b.data, (a, b))

    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(g, b.shape))
        out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_ok("sub", a, b)
    out = _make("sub", a.data - b.data, (a, b))

    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g, a.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-g, b.shape))
        out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    _broadcast_ok("mul", a, b)
    out = _make("mul", a.data * b.data, (a, b))

    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(g * a.data, b.shape))
        out._backward = _bw
    return out


def mul_scalar(t: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _make("mul_scalar", t.data * np.asarray(s, dtype=t.dtype), (t,))

    if out.requires_grad:
        def _bw(g):
            _accumulate(t, g * np.asarray(s, dtype=t.dtype))
        out._backward = _bw
    return out


def square(t: Tensor) -> Tensor:
    out = _make("square", t.data * t.data, (t,))

    if out.requires_grad:
        def _bw(g):
            _accumulate(t, g * (2.0 * t.data))
        out._backward = _bw
    return out


def reshape(t: Tensor, shape) -> Tensor:
    if int(np.prod(shape)) != t.size:
        raise ShapeError("reshape", [t.shape, tuple(shape)], "element count must match")
    out = _make("reshape", t.data.reshape(shape), (t,))

    if out.requires_grad:
        def _bw(g):
            _accumulate(t, np.ascontiguousarray(g.reshape(t.shape)))
        out._backward = _bw
    return out


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    if not tensors:
        raise ShapeError("concat", [], "needs at least one tensor")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base):
            raise ShapeError("concat", [tuple(base), t.shape])
        for ax, (x, y) in enumerate(zip(base, other)):
            if ax != axis % len(base) and x != y:
                raise ShapeError("concat", [tuple(base), t.shape],
                                 f"dims other than axis {axis} must match")
    out = _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors)

    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def _bw(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    _accumulate(t, np.ascontiguousarray(g[tuple(idx)]))
        out._backward = _bw
    return out


def mean_all(t: Tensor) -> Tensor:
    if t.size == 0:
        raise ShapeError("mean_all", [t.shape], "empty tensor")
    out = _make("mean_all", np.asarray(t.data.mean(), dtype=t.dtype), (t,))

    if out.requires_grad:
        inv = 1.0 / t.size

        def _bw(g):
            _accumulate(t, np.full(t.shape, g * inv, dtype=t.dtype))
        out._backward = _bw
    return out


def sum_all(t: Tensor) -> Tensor:
    if t.size == 0:
        raise ShapeError("sum_all", [t.shape], "empty tensor")
    out = _make("sum_all", np.asarray(t.data.sum(), dtype=t.dtype), (t,))

    if out.requires_grad:
        def _bw(g):
            _accumulate(t, np.full(t.shape, g, dtype=t.dtype))
        out._backward = _bw
    return out


def tile_to_map(v: Tensor, height: int, width: int) -> Tensor:
    """Tile a batch of vectors [n, d] into feature maps [n, d, height, width]."""
    if v.ndim != 2:
        raise ShapeError("tile_to_map", [v.shape], "expects [n, d]")
    data = np.broadcast_to(v.data[:, :, None, None],
                           (v.shape[0], v.shape[1], height, width)).copy()
    out = _make("tile_to_map", data, (v,))

    if out.requires_grad:
        def _bw(g):
            _accumulate(v, g.sum(axis=(2, 3)))
        out._backward = _bw
    return out


def upsample2x(t: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of [n, c, h, w]."""
    if t.ndim != 4:
        raise ShapeError("upsample2x", [t.shape], "expects [n, c, h, w]")
    out = _make("upsample2x", np.repeat(np.repeat(t.data, 2, axis=2), 2, axis=3), (t,))

    if out.requires_grad:
        n, c, h, w = t.shape

        def _bw(g):
            _accumulate(t, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(t: Tensor) -> Tensor:
    out = _make("relu", np.maximum(t.data, 0), (t,))

    if out.requires_grad:
        def _bw(g):
            _accumulate(t, g * (t.data > 0))
        out._backward = _bw
    return out


def leaky_relu(t: Tensor, slope: float = 0.2) -> Tensor:
    data = np.where(t.data > 0, t.data, t.data * np.asarray(slope, dtype=t.dtype))
    out = _make("leaky_relu", data, (t,))

    if out.requires_grad:
        def _bw(g):
            scale = np.where(t.data > 0, np.asarray(1, dtype=t.dtype),
                             np.asarray(slope, dtype=t.dtype))
            _accumulate(t, g * scale)
        out._backward = _bw
    return out


def sigmoid(t: Tensor) -> Tensor:
    # exp of the negative magnitude keeps both tails finite
    e = np.exp(-np.abs(t.data))
    data = np.where(t.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(t.dtype)
    out = _make("sigmoid", data, (t,))

    if out.requires_grad:
        def _bw(g):
            _accumulate(t, g * (data * (1.0 - data)))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", [a.shape, b.shape])
    out = _make("matmul", a.data @ b.data, (a, b))

    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                _accumulate(a, g @ b.data.T)
            if b.requires_grad:
                _accumulate(b, a.data.T @ g)
        out._backward = _bw
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = windows.shape[:4]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(dcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int,
            oh: int, ow: int) -> np.ndarray:
    n, c, h, w = x_shape
    buf = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
    if pad:
        buf = buf[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(buf)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of [n, c, h, w] with [o, c, kh, kw] filters."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", [x.shape, w.shape], "channel mismatch")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv2d", [w.shape, b.shape], "bias must be [out_channels]")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ShapeError("conv2d", [x.shape, w.shape], f"kernel exceeds padded input (pad={pad})")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")

    cols, oh, ow = _im2col(x.data, kh, kw, stride, pad)
    w_mat = w.data.reshape(o, -1)
    out_data = np.matmul(w_mat, cols)
    if b is not None:
        out_data = out_data + b.data[:, None]
    out_data = out_data.reshape(n, o, oh, ow)

    parents = (x, w) if b is None else (x, w, b)
    out = _make("conv2d", out_data, parents)

    if out.requires_grad:
        def _bw(g):
            gm = g.reshape(n, o, oh * ow)
            if b is not None and b.requires_grad:
                _accumulate(b, gm.sum(axis=(0, 2)))
            if w.requires_grad:
                dw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0)
                _accumulate(w, dw.reshape(w.shape))
            if x.requires_grad:
                dcols = np.matmul(w_mat.T, gm)
                _accumulate(x, _col2im(dcols, x.shape, kh, kw, stride, pad, oh, ow))
        out._backward = _bw
    return out


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization of [n, c, h, w].

    Training mode normalizes with batch statistics and folds them into the
    running buffers (plain arrays, mutated in place, never differentiated).
    Eval mode normalizes with the running buffers.
    """
    if x.ndim != 4:
        raise ShapeError("batchnorm2d", [x.shape], "expects [n, c, h, w]")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,) or running_mean.shape != (c,) \
            or running_var.shape != (c,):
        raise ShapeError("batchnorm2d",
                         [x.shape, gamma.shape, beta.shape, running_mean.shape],
                         "per-channel parameters must be [c]")
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if m > 1:
            unbiased = var * (m / (m - 1.0))
        else:
            unbiased = var
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mean
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = _make("batchnorm2d", out_data.astype(x.dtype), (x, gamma, beta))

    if out.requires_grad:
        def _bw(g):
            if beta.requires_grad:
                _accumulate(beta, g.sum(axis=axes))
            if gamma.requires_grad:
                _accumulate(gamma, (g * xhat).sum(axis=axes))
            if x.requires_grad:
                gxhat = g * gamma.data[None, :, None, None]
                if training:
                    # gradient through the batch statistics
                    centered = x.data - mean[None, :, None, None]
                    istd = inv_std[None, :, None, None]
                    dvar = (gxhat * centered).sum(axis=axes) * (-0.5) * inv_std ** 3
                    dmean = -(gxhat * istd).sum(axis=axes) \
                        - dvar * 2.0 / m * centered.sum(axis=axes)
                    dx = gxhat * istd \
                        + (2.0 / m) * centered * dvar[None, :, None, None] \
                        + dmean[None, :, None, None] / m
                else:
                    dx = gxhat * inv_std[None, :, None, None]
                _accumulate(x, dx.astype(x.dtype))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def binary_cross_entropy(pred: Tensor, target: Tensor, mask: np.ndarray | None = None,
                         eps: float = 1e-7) -> Tensor:
    """Mean binary cross entropy with continuous targets in [0, 1].

    Predictions are clipped to [eps, 1-eps] before the logs; the gradient is
    zero on clipped entries.  With ``mask`` (a binary array broadcastable to
    ``pred``) the mean runs over mask-selected entries only.
    """
    if pred.shape != target.shape:
        raise ShapeError("binary_cross_entropy", [pred.shape, target.shape])
    pc = np.clip(pred.data, eps, 1.0 - eps)
    ce = -(target.data * np.log(pc) + (1.0 - target.data) * np.log1p(-pc))
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=pred.dtype), pred.shape)
        total = float(mask.sum())
        if total <= 0:
            raise ShapeError("binary_cross_entropy", [pred.shape], "mask selects no entries")
        value = (ce * mask).sum() / total
        weight = mask / total
    else:
        if pred.size == 0:
            raise ShapeError("binary_cross_entropy", [pred.shape], "empty tensor")
        value = ce.mean()
        weight = np.asarray(1.0 / pred.size, dtype=pred.dtype)
    out = _make("binary_cross_entropy", np.asarray(value, dtype=pred.dtype), (pred, target))

    if out.requires_grad:
        inside = (pred.data > eps) & (pred.data < 1.0 - eps)

        def _bw(g):
            if pred.requires_grad:
                dp = (pc - target.data) / (pc * (1.0 - pc))
                _accumulate(pred, (g * weight * np.where(inside, dp, 0.0)).astype(pred.dtype))
            if target.requires_grad:
                dt = np.log1p(-pc) - np.log(pc)
                _accumulate(target, (g * weight * dt).astype(pred.dtype))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# gradient utilities
# ---------------------------------------------------------------------------

def gradients(output: Tensor, leaves) -> list[np.ndarray]:
    """Backward from ``output`` and collect per-leaf gradients.

    Leaves the graph never reached get a zero gradient and a warning, so a
    detached parameter shows up loudly instead of silently training nowhere.
    """
    output.backward()
    got = []
    for leaf in leaves:
        if leaf.grad is None:
            warnings.warn(f"gradients: leaf {leaf!r} is not part of the graph; returning zeros",
                          stacklevel=2)
            got.append(np.zeros_like(leaf.data))
        else:
            got.append(leaf.grad)
    return got


def grad_check(fn, inputs, eps: float | None = None) -> float:
    """Compare analytic gradients of ``fn(*inputs)`` against central differences.

    ``fn`` must return a scalar Tensor.  Returns the maximum relative error
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`` over every
    component of every input.  Differences are evaluated at eps 1e-5 in
    float64 and 1e-3 in float32 unless overridden.
    """
    if isinstance(inputs, Tensor):
        inputs = (inputs,)
    inputs = tuple(inputs)
    if eps is None:
        eps = 1e-5 if inputs[0].dtype == np.float64 else 1e-3

    for t in inputs:
        t.requires_grad = True
        t.grad = None
        t.data = np.ascontiguousarray(t.data)  # FD below mutates through a flat view

    global _check_finite
    prev_check = _check_finite
    _check_finite = True
    try:
        out = fn(*inputs)
        if out.shape != ():
            raise ShapeError("grad_check", [out.shape], "function must return a scalar")
        out.backward()
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                    for t in inputs]
    finally:
        _check_finite = prev_check

    # FD oracle runs in float64 regardless of the working precision: the
    # analytic gradient under test keeps its own dtype, the reference must not
    # add rounding noise of its own.
    originals = [t.data for t in inputs]
    for t in inputs:
        t.data = t.data.astype(np.float64)

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = float(fn(*inputs).data)
            flat[j] = orig - eps
            f_minus = float(fn(*inputs).data)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(float(ana_flat[j])), abs(numeric), 1e-8)
            worst = max(worst, abs(float(ana_flat[j]) - numeric) / denom)

    for t, arr in zip(inputs, originals):
        t.data = arr
    return worst
