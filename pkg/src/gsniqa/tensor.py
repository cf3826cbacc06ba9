"""
Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every differentiable operation builds a node holding its parents and a
closure mapping the output gradient to one gradient per parent.  Calling
``backward`` on a scalar walks the graph once in reverse topological order,
accumulating into ``.grad`` of every leaf created with ``requires_grad=True``.

Broadcasting is restricted to singleton expansion (equal rank, extents equal
or 1) plus 0-d scalars, which keeps every backward rule a plain sum over the
expanded axes.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, DimensionError, NumericError

ArrayLike = Union[np.ndarray, float, int, Sequence]

DEFAULT_DTYPE = np.float64

# while active, piecewise ops append their branch choice (relu mask, argmax)
_branch_log: Optional[list] = None


@contextlib.contextmanager
def record_branches():
    """Collect the discrete choices of every piecewise op run inside the block."""
    global _branch_log
    prev, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = prev


def _log_branch(choice: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(choice.copy())


class Tensor:
    """N-dimensional array with optional gradient tracking.

    Parameters
    ----------
    data : array_like
        Values; copied into a contiguous floating point buffer.
    requires_grad : bool
        Whether ``backward`` should populate ``grad`` for this tensor.
    dtype : numpy dtype, optional
        ``float64`` unless ``data`` already is ``float32``.
    """

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _op: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], tuple]] = None
        self._op = _op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis: int, keepdims=False):
        return amax(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return tabs(self)

    # -- autograd -----------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op; graph links only when needed."""
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype, _parents=parents if requires else (), _op=op)
    if requires:
        out._backward = backward_fn
    return out


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Populate ``.grad`` of every leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; clear them with ``zero_grad``.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad=True")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim != b.ndim or any(x != y and x != 1 and y != 1 for x, y in zip(a.shape, b.shape)):
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _binary_operands(a, b):
    if isinstance(a, Tensor):
        b = _as_tensor(b, a)
    else:
        b = _as_tensor(b)
        a = _as_tensor(a, b)
    _check_broadcast(a.data, b.data)
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    """Hadamard product."""
    a, b = _binary_operands(a, b)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), _bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)

    def _bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), _bw, "div")


def power(x: Tensor, exponent: float) -> Tensor:
    x = _as_tensor(x)
    e = float(exponent)

    def _bw(g):
        return (g * e * x.data ** (e - 1.0),)

    return _make(x.data ** e, (x,), _bw, f"pow{e:g}")


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def _bw(g):
        return (g * out_data,)

    return _make(out_data, (x,), _bw, "exp")


def log(x: Tensor) -> Tensor:
    def _bw(g):
        return (g / x.data,)

    return _make(np.log(x.data), (x,), _bw, "log")


def tabs(x: Tensor) -> Tensor:
    def _bw(g):
        return (g * np.sign(x.data),)

    return _make(np.abs(x.data), (x,), _bw, "abs")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _log_branch(mask)

    def _bw(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), _bw, "relu")


def sigmoid(x: Tensor) -> Tensor:
    out_data = expit(x.data)

    def _bw(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (x,), _bw, "sigmoid")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)), (x,), _bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    return tsum(x, axes, keepdims) * (1.0 / count)


def amax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; ties send the gradient to the first maximum."""
    axis = axis % x.ndim
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    _log_branch(idx)
    out_data = np.take_along_axis(x.data, idx, axis=axis)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=axis)
        return (gx,)

    if not keepdims:
        out_data = np.squeeze(out_data, axis)
    return _make(out_data, (x,), _bw, "max")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def _bw(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), _bw, "reshape")


def flatten(x: Tensor, start_dim: int = 1) -> Tensor:
    return reshape(x, x.shape[:start_dim] + (-1,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"concat along {axis}: shapes {ref} and {t.shape} differ elsewhere")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _bw(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _bw, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")

    def _bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), _bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped [out, in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data

    def _bw(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads + ((g.sum(axis=0),) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _make(out_data, parents, _bw, "linear")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out_data * (g - (g * out_data).sum(axis=axis, keepdims=True)),)

    return _make(out_data, (x,), _bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def _bw(g):
        return (g - np.exp(out_data) * g.sum(axis=axis, keepdims=True),)

    return _make(out_data, (x,), _bw, "log_softmax")


def lp_norm(x: Tensor, p: float, axis=None) -> Tensor:
    """``(sum |x|^p)^(1/p)``; the gradient at a zero norm is defined as 0."""
    axes = _norm_axis(axis, x.ndim)
    a = np.abs(x.data)
    out_data = (a ** p).sum(axis=axes, keepdims=True) ** (1.0 / p)

    def _bw(g):
        g = g.reshape(out_data.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(out_data > 0, (a / np.where(out_data > 0, out_data, 1)) ** (p - 1.0), 0.0)
        return (g * ratio * np.sign(x.data),)

    return _make(out_data.reshape([s for i, s in enumerate(out_data.shape) if i not in axes]),
                 (x,), _bw, "lp_norm")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Parameters
    ----------
    x : Tensor
        Input of shape ``[N, C, H, W]``.
    weight : Tensor
        Kernel of shape ``[O, C, k, k]`` (``k`` odd).
    bias : Tensor, optional
        Shape ``[O]``.

    Returns
    -------
    Tensor
        Shape ``[N, O, H', W']`` with ``H' = (H + 2 padding - k) // stride + 1``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if cw != c:
        raise DimensionError(f"conv2d: weight expects {cw} input channels, input has {c}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if padding < 0 or stride < 1:
        raise ContractError("conv2d: padding must be >= 0 and stride >= 1")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(f"conv2d: kernel {kh} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d: bias shape {bias.shape}, expected {(o,)}")

    ho, wo = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    # channel-major layout keeps every im2col / col2im copy contiguous
    xt = x.data.transpose(1, 0, 2, 3)
    if padding:
        xt = np.pad(xt, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    wmat = weight.data.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out_data = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    def _bw(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        gw = (gmat @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gmat).reshape(c, kh, kw, n, ho, wo)
            gxt = np.zeros((c, n, hp, wp), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxt[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += gcols[:, i, j]
            if padding:
                gxt = gxt[:, :, padding:padding + h, padding:padding + w]
            gx = np.ascontiguousarray(gxt.transpose(1, 0, 2, 3))
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _make(out_data, parents, _bw, "conv2d")


def max_pool2d(x: Tensor, k: int, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Windowed maximum; padding cells never win.

    The gradient of each window goes to its first maximum in row-major order.
    """
    stride = k if stride is None else stride
    if k < 1:
        raise ContractError("max_pool2d: k must be >= 1")
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d expects [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    if h + 2 * padding < k or w + 2 * padding < k:
        raise DimensionError(f"max_pool2d: window {k} larger than padded input")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf) if padding else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    _log_branch(arg)
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def _bw(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for idx in range(k * k):
            i, j = divmod(idx, k)
            gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                np.where(arg == idx, g, 0)
        return (gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp,)

    return _make(np.ascontiguousarray(out_data), (x,), _bw, "max_pool2d")


def _adaptive_matrix(size: int, out: int, dtype) -> np.ndarray:
    m = np.zeros((out, size), dtype=dtype)
    for i in range(out):
        lo = (i * size) // out
        hi = -((-(i + 1) * size) // out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: Optional[int] = None) -> Tensor:
    """Average over bins ``[floor(i*H/out), ceil((i+1)*H/out))``.

    Down-sampling only; asking for more cells than the input has is an error.
    """
    out_w = out_h if out_w is None else out_w
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool2d expects [N, C, H, W], got {x.shape}")
    h, w = x.shape[2:]
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise DimensionError(f"adaptive_avg_pool2d: cannot pool {h}x{w} to {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return x
    mh = _adaptive_matrix(h, out_h, x.dtype)
    mw = _adaptive_matrix(w, out_w, x.dtype)
    out_data = np.ascontiguousarray(mh @ x.data @ mw.T)

    def _bw(g):
        return (mh.T @ g @ mw,)

    return _make(out_data, (x,), _bw, "adaptive_avg_pool2d")


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck_report(f: Callable[..., Tensor], point: Union[Tensor, Iterable[Tensor]], eps: float = 1e-5,
                     coords: Optional[dict] = None, skip_kinks: bool = False,
                     zero_tol: float = 0.0) -> tuple[float, int, int]:
    """Compare autograd against central differences.

    ``f`` is called as ``f(*points)`` and must return a scalar tensor.  For
    every checked coordinate ``i`` the numerical derivative
    ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`` is compared with the
    analytic one using ``|a - n| / max(|a|, |n|, 1e-8)``.

    Parameters
    ----------
    coords : dict, optional
        Maps ``id(tensor)`` to an iterable of flat indices to check; tensors
        missing from the dict are checked at every coordinate.
    skip_kinks : bool
        Drop coordinates whose +-eps probes change a ReLU mask or max
        selection anywhere in ``f``; the difference quotient is meaningless there.
    zero_tol : float
        Coordinates where both derivatives are at most ``zero_tol`` in
        magnitude are treated as exact zeros and not scored; there the
        difference quotient is pure roundoff.

    Returns
    -------
    (worst relative error, coordinates checked, coordinates rejected)
    """
    points = [point] if isinstance(point, Tensor) else list(point)
    for p in points:
        if p.dtype != np.float64:
            raise ContractError("gradcheck requires float64 tensors")
    saved = [p.requires_grad for p in points]
    for p in points:
        p.requires_grad = True
        p.grad = None

    def probe():
        with record_branches() as log:
            value = f(*points).item()
        return value, log

    try:
        with record_branches() as base_log:
            out = f(*points)
        if out.size != 1:
            raise ContractError(f"gradcheck needs a scalar function, got shape {out.shape}")
        out.backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in points]

        worst, checked, rejected = 0.0, 0, 0
        for p, a in zip(points, analytic):
            flat = p.data.reshape(-1)
            idxs = range(flat.size) if coords is None or id(p) not in coords else coords[id(p)]
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + eps
                hi, hi_log = probe()
                flat[i] = orig - eps
                lo, lo_log = probe()
                flat[i] = orig
                if not (math.isfinite(hi) and math.isfinite(lo)):
                    raise NumericError(f"non-finite function value when perturbing coordinate {i}")
                if skip_kinks and not (_same_branches(base_log, hi_log) and _same_branches(base_log, lo_log)):
                    rejected += 1
                    continue
                num = (hi - lo) / (2 * eps)
                ana = a.reshape(-1)[i]
                if not math.isfinite(ana):
                    raise NumericError(f"non-finite analytic gradient at coordinate {i}")
                if max(abs(ana), abs(num)) > zero_tol:
                    worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
                checked += 1
        return worst, checked, rejected
    finally:
        for p, s in zip(points, saved):
            p.requires_grad = s
            p.grad = None


def gradcheck(f: Callable[..., Tensor], point: Union[Tensor, Iterable[Tensor]], eps: float = 1e-5,
              coords: Optional[dict] = None, skip_kinks: bool = False, zero_tol: float = 0.0) -> float:
    """Worst relative error of ``gradcheck_report``."""
    return gradcheck_report(f, point, eps, coords, skip_kinks, zero_tol)[0]
