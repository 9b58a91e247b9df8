"""Dense float64 tensors with a reverse-mode tape.

Design rules, chosen for determinism and debuggability over generality:

  * Every tensor wraps a C-contiguous float64 ndarray. No other dtypes.
  * There is no silent broadcasting. Elementwise ops demand equal shapes;
    scalar interaction goes through add_scalar/scale; shape-changing intent
    is spelled with explicit ops (expand, add_bias, reshape, permute).
  * Recording happens only while a Tape is active (``with Tape():``). Ops run
    outside a tape build no graph, which is the inference mode.
  * backward(loss) walks the tape once, in reverse recording order, and
    accumulates gradients additively across fan-out. Backward closures are
    plain numpy; the graph is first-order only.
  * Tapes are per-thread: each thread sees its own tape stack.

Set HSSDCT_DEBUG=1 to assert that every op output is finite.
"""

import os
import threading
import weakref

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import ConfigError, DimensionError, UsageError

_DEBUG = os.environ.get("HSSDCT_DEBUG", "0") not in ("", "0")

_ACOS_LO = -1.0 + 1e-7
_ACOS_HI = 1.0 - 1e-7

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


# ------------------------------------------------------------------ the tape

_tls = threading.local()


def _stack():
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


class Tape:
    """Records op applications so backward() can replay them in reverse."""

    __slots__ = ("nodes", "__weakref__")

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


# ---------------------------------------------------------------- the tensor

class Tensor:
    """A float64 array plus an optional slot in the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape_index", "_tape_ref")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape_index = None
        self._tape_ref = None

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None):
        return reduce_sum(self, axes)

    def mean(self, axes=None):
        return reduce_mean(self, axes)

    def reshape(self, shape):
        return reshape(self, shape)

    def permute(self, order):
        return permute(self, order)


def _as_const(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward_fn):
    """Wrap op output, recording a node when a tape is active."""
    out = Tensor(data)
    if _DEBUG and not np.all(np.isfinite(out.data)):
        raise ArithmeticError("op produced non-finite values (HSSDCT_DEBUG=1)")
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(tuple(inputs), out, backward_fn))
        out._tape_index = len(tape.nodes) - 1
        out._tape_ref = weakref.ref(tape)
    return out


def backward(loss):
    """Reverse pass from a scalar loss recorded on the active tape.

    Gradients land in ``.grad`` of every tensor on the path with
    requires_grad set, accumulating into whatever is already there; callers
    zero grads between steps.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.data.ndim != 0:
        raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
    tape = active_tape()
    if tape is None:
        raise UsageError("backward called with no active tape")
    if loss._tape_ref is None or loss._tape_ref() is not tape:
        raise UsageError("loss was not produced on the active tape")
    seed = np.ones((), dtype=np.float64)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(tape.nodes):
        gy = node.output.grad
        if gy is None:
            continue
        grads = node.backward(gy)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = g
            else:
                inp.grad = inp.grad + g


# ------------------------------------------------------------ elementwise ops

def _same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{opname}: shapes must match exactly, got {a.data.shape} vs {b.data.shape}"
        )


def add(a, b):
    a, b = _as_const(a), _as_const(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = _as_const(a), _as_const(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = _as_const(a), _as_const(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b):
    a, b = _as_const(a), _as_const(b)
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    return _make(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def add_scalar(a, c):
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,))


def scale(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def gelu(x):
    """Gaussian error linear unit, exact erf form."""
    xd = x.data
    phi = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = xd * phi

    def bwd(g):
        dens = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        return (g * (phi + xd * dens),)

    return _make(out, (x,), bwd)


def sqrt(x):
    out = np.sqrt(x.data)

    def bwd(g):
        return (g * (0.5 / out),)

    return _make(out, (x,), bwd)


def absolute(x):
    xd = x.data
    return _make(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def acos(x):
    """Arc cosine with the argument clamped to [-1+1e-7, 1-1e-7] first.

    The clamp keeps the derivative finite; outside the clamp interval the
    forward is flat, so the gradient there is zero.
    """
    xd = x.data
    xc = np.clip(xd, _ACOS_LO, _ACOS_HI)
    out = np.arccos(xc)

    def bwd(g):
        inside = (xd > _ACOS_LO) & (xd < _ACOS_HI)
        d = -1.0 / np.sqrt(1.0 - xc * xc)
        return (g * np.where(inside, d, 0.0),)

    return _make(out, (x,), bwd)


def clamp(x, lo, hi):
    lo, hi = float(lo), float(hi)
    if not lo <= hi:
        raise ConfigError(f"clamp: lo {lo} must not exceed hi {hi}")
    xd = x.data

    def bwd(g):
        return (g * ((xd >= lo) & (xd <= hi)),)

    return _make(np.clip(xd, lo, hi), (x,), bwd)


# ------------------------------------------------------------------ matmul

def matmul(a, b):
    """2Dx2D, 3Dx3D (batched, equal batch), or 3Dx2D (shared right factor)."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: {ad.shape} x {bd.shape}")
        return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    if ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise DimensionError(f"matmul: {ad.shape} x {bd.shape}")
        return _make(
            ad @ bd,
            (a, b),
            lambda g: (g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g),
        )
    if ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise DimensionError(f"matmul: {ad.shape} x {bd.shape}")

        def bwd(g):
            return (g @ bd.T, np.tensordot(ad, g, axes=([0, 1], [0, 1])))

        return _make(ad @ bd, (a, b), bwd)
    raise DimensionError(
        f"matmul supports 2Dx2D, 3Dx3D, 3Dx2D; got {ad.ndim}D x {bd.ndim}D"
    )


def add_bias(x, b, axis):
    """Add a 1-D bias along one axis of x. Backward sums over the other axes."""
    xd, bd = x.data, b.data
    if bd.ndim != 1:
        raise DimensionError(f"add_bias: bias must be 1-D, got shape {bd.shape}")
    axis = int(axis)
    if not 0 <= axis < xd.ndim:
        raise ConfigError(f"add_bias: axis {axis} out of range for {xd.ndim}-D input")
    if xd.shape[axis] != bd.shape[0]:
        raise DimensionError(
            f"add_bias: axis {axis} has extent {xd.shape[axis]}, bias has {bd.shape[0]}"
        )
    shape = [1] * xd.ndim
    shape[axis] = bd.shape[0]
    others = tuple(i for i in range(xd.ndim) if i != axis)

    def bwd(g):
        return (g, np.sum(g, axis=others))

    return _make(xd + bd.reshape(shape), (x, b), bwd)


# ------------------------------------------------------------------ convolution

def conv2d(x, w, pad, groups=1):
    """Grouped cross-correlation with reflect padding, [C,H,W] or [B,C,H,W].

    The kernel must be square with odd side k, and pad must equal (k-1)/2 so
    spatial extent is preserved. groups=Cin gives a depthwise convolution.
    """
    xd, wd = x.data, w.data
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise DimensionError(f"conv2d: weight must be [Cout,Cg,k,k], got {wd.shape}")
    k = wd.shape[2]
    if k % 2 == 0:
        raise ConfigError(f"conv2d: kernel side must be odd, got {k}")
    pad = int(pad)
    if pad != (k - 1) // 2:
        raise ConfigError(f"conv2d: pad must be (k-1)/2 = {(k - 1) // 2}, got {pad}")
    groups = int(groups)
    if groups < 1:
        raise ConfigError(f"conv2d: groups must be >= 1, got {groups}")
    batched = xd.ndim == 4
    if not batched and xd.ndim != 3:
        raise DimensionError(f"conv2d: input must be 3-D or 4-D, got {xd.ndim}-D")
    x4 = xd if batched else xd[None]
    bsz, cin, height, width = x4.shape
    cout = wd.shape[0]
    if cin % groups or cout % groups:
        raise ConfigError(
            f"conv2d: groups {groups} must divide Cin {cin} and Cout {cout}"
        )
    if wd.shape[1] != cin // groups:
        raise DimensionError(
            f"conv2d: weight expects {wd.shape[1]} channels per group, input has"
            f" {cin // groups}"
        )
    if height < pad + 1 or width < pad + 1:
        raise DimensionError(
            f"conv2d: reflect pad {pad} needs spatial extent >= {pad + 1},"
            f" got {height}x{width}"
        )
    x4 = np.ascontiguousarray(x4)
    y4 = kernels.conv2d_forward(x4, wd, pad, groups)

    def bwd(g):
        g4 = np.ascontiguousarray(g if batched else g[None])
        gx = kernels.conv2d_input_grad(g4, wd, pad, groups, height, width)
        gw = kernels.conv2d_weight_grad(g4, x4, pad, groups, k)
        return (gx if batched else gx[0], gw)

    return _make(y4 if batched else y4[0], (x, w), bwd)


# ------------------------------------------------------------------ reductions

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(int(a) for a in axes)
    for a in axes:
        if not 0 <= a < ndim:
            raise ConfigError(f"reduce: axis {a} out of range for {ndim}-D input")
    if len(set(axes)) != len(axes):
        raise ConfigError(f"reduce: repeated axis in {axes}")
    return axes


def _unreduce(g, axes, shape):
    expanded = g
    for a in sorted(axes):
        expanded = np.expand_dims(expanded, a)
    return np.ascontiguousarray(np.broadcast_to(expanded, shape))


def reduce_sum(x, axes=None):
    axes = _norm_axes(axes, x.data.ndim)
    if axes == ():
        return x
    shape = x.data.shape
    return _make(
        np.sum(x.data, axis=axes), (x,), lambda g: (_unreduce(g, axes, shape),)
    )


def reduce_mean(x, axes=None):
    axes = _norm_axes(axes, x.data.ndim)
    if axes == ():
        return x
    shape = x.data.shape
    count = 1
    for a in axes:
        count *= shape[a]
    return _make(
        np.mean(x.data, axis=axes),
        (x,),
        lambda g: (_unreduce(g / count, axes, shape),),
    )


# ------------------------------------------------------------------ shape ops

def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    n = 1
    for s in shape:
        n *= s
    if n != x.data.size:
        raise DimensionError(f"reshape: {x.data.shape} has {x.data.size} elements,"
                             f" target {shape} has {n}")
    old = x.data.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x, order):
    order = tuple(int(a) for a in order)
    if sorted(order) != list(range(x.data.ndim)):
        raise DimensionError(
            f"permute: {order} is not a permutation of axes of {x.data.ndim}-D input"
        )
    inverse = np.argsort(order)
    return _make(
        np.ascontiguousarray(np.transpose(x.data, order)),
        (x,),
        lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),),
    )


def concat(tensors, axis):
    tensors = [_as_const(t) for t in tensors]
    if not tensors:
        raise UsageError("concat of zero tensors")
    axis = int(axis)
    ndim = tensors[0].data.ndim
    if not 0 <= axis < ndim:
        raise ConfigError(f"concat: axis {axis} out of range for {ndim}-D input")
    base = list(tensors[0].data.shape)
    for t in tensors[1:]:
        other = list(t.data.shape)
        if len(other) != ndim or other[:axis] + other[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise DimensionError(
                f"concat: incompatible shapes {tensors[0].data.shape} vs {t.data.shape}"
            )
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def narrow(x, axis, start, length):
    """Slice [start, start+length) along one axis."""
    axis, start, length = int(axis), int(start), int(length)
    if not 0 <= axis < x.data.ndim:
        raise ConfigError(f"narrow: axis {axis} out of range")
    extent = x.data.shape[axis]
    if length < 1 or start < 0 or start + length > extent:
        raise DimensionError(
            f"narrow: [{start}, {start + length}) outside axis of extent {extent}"
        )
    sel = [slice(None)] * x.data.ndim
    sel[axis] = slice(start, start + length)
    sel = tuple(sel)
    shape = x.data.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=np.float64)
        gx[sel] = g
        return (gx,)

    return _make(np.ascontiguousarray(x.data[sel]), (x,), bwd)


def expand(x, axis, n):
    """Insert a new axis of length n by repetition. Backward sums it out."""
    axis, n = int(axis), int(n)
    if not 0 <= axis <= x.data.ndim:
        raise ConfigError(f"expand: axis {axis} out of range")
    if n < 1:
        raise ConfigError(f"expand: length must be >= 1, got {n}")
    data = np.expand_dims(x.data, axis)
    shape = list(data.shape)
    shape[axis] = n
    return _make(
        np.ascontiguousarray(np.broadcast_to(data, shape)),
        (x,),
        lambda g: (np.sum(g, axis=axis),),
    )


# ------------------------------------------------------- spatial helper ops

def reflect_pad_br(x, pad_bottom, pad_right):
    """Reflect-pad the bottom/right of the last two axes (no edge repeat)."""
    pb, pr = int(pad_bottom), int(pad_right)
    if x.data.ndim < 2:
        raise DimensionError("reflect_pad_br: input must have at least 2 axes")
    height, width = x.data.shape[-2:]
    if pb < 0 or pr < 0 or pb > height - 1 or pr > width - 1:
        raise DimensionError(
            f"reflect_pad_br: pads ({pb},{pr}) invalid for extent {height}x{width};"
            " reflect padding needs pad <= extent-1"
        )
    if pb == 0 and pr == 0:
        return x
    widths = [(0, 0)] * (x.data.ndim - 2) + [(0, pb), (0, pr)]
    out = np.pad(x.data, widths, mode="reflect")

    def bwd(g):
        rows = g[..., :height, :].copy()
        for t in range(pb):
            rows[..., height - 2 - t, :] += g[..., height + t, :]
        cols = rows[..., :, :width].copy()
        for t in range(pr):
            cols[..., :, width - 2 - t] += rows[..., :, width + t]
        return (cols,)

    return _make(out, (x,), bwd)


def crop_br(x, height, width):
    """Keep the top-left [height, width] of the last two axes."""
    height, width = int(height), int(width)
    if x.data.ndim < 2:
        raise DimensionError("crop_br: input must have at least 2 axes")
    full_h, full_w = x.data.shape[-2:]
    if not (1 <= height <= full_h and 1 <= width <= full_w):
        raise DimensionError(
            f"crop_br: target {height}x{width} outside extent {full_h}x{full_w}"
        )
    shape = x.data.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=np.float64)
        gx[..., :height, :width] = g
        return (gx,)

    return _make(np.ascontiguousarray(x.data[..., :height, :width]), (x,), bwd)


def roll2d(x, shift_h, shift_w):
    """Circular shift of the last two axes."""
    sh, sw = int(shift_h), int(shift_w)
    if x.data.ndim < 2:
        raise DimensionError("roll2d: input must have at least 2 axes")
    return _make(
        np.roll(x.data, (sh, sw), axis=(-2, -1)),
        (x,),
        lambda g: (np.roll(g, (-sh, -sw), axis=(-2, -1)),),
    )
