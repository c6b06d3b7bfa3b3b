"""Differentiable operators over :class:`~pggan.tensor.Tensor`.

Every function accepts tensors or plain arrays/scalars, returns a new tensor
and records a backward closure on the active tape when any input requires a
gradient. Convolutions use zero padding throughout.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np

from .tensor import Tensor, active_tape


class ShapeError(ValueError):
    pass


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple:
    """Wrap operands; a plain operand takes the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return _t(a), _t(b)


def _apply(op: str, out_data: np.ndarray, inputs, backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        return tape.record(out_data, inputs, backward_fn, op)
    return Tensor(out_data)


def _require_rank4(x: Tensor, what: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{what} must be rank-4 [N, C, H, W], got shape {list(x.shape)}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _apply("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _apply("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _apply("mul", out, (a, b), backward)


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at 0."""
    x = _t(x)

    def backward(g):
        return (g * np.sign(x.data),)

    return _apply("abs", np.abs(x.data), (x,), backward)


def log(x, floor: Optional[float] = None) -> Tensor:
    """Natural log; with ``floor`` the argument is clamped to ``[floor, inf)``."""
    x = _t(x)
    arg = x.data if floor is None else np.maximum(x.data, floor)

    def backward(g):
        gx = g / arg
        if floor is not None:
            gx = np.where(x.data > floor, gx, 0.0).astype(g.dtype, copy=False)
        return (gx,)

    return _apply("log", np.log(arg), (x,), backward)


def mean(x) -> Tensor:
    x = _t(x)
    n = x.data.size
    out = np.full((1, 1, 1, 1), x.data.mean(), dtype=x.dtype)

    def backward(g):
        return (np.full(x.shape, g.reshape(-1)[0] / n, dtype=g.dtype),)

    return _apply("mean", out, (x,), backward)


def total(x) -> Tensor:
    x = _t(x)
    out = np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype)

    def backward(g):
        return (np.full(x.shape, g.reshape(-1)[0], dtype=g.dtype),)

    return _apply("sum", out, (x,), backward)


# ----------------------------------------------------------------------------
# activations

def relu(x) -> Tensor:
    x = _t(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _apply("relu", x.data * mask, (x,), backward)


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    x = _t(x)
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)

    def backward(g):
        return (g * slope,)

    return _apply("leaky_relu", x.data * slope, (x,), backward)


def tanh(x) -> Tensor:
    x = _t(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _apply("tanh", out, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _t(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", out, (x,), backward)


def pointwise(x, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ----------------------------------------------------------------------------
# convolution family

def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _im2col(x, kh, kw, stride, padding, dilation, ho, wo):
    n, c, _, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r, q = i * dilation, j * dilation
            cols[:, i, j] = xp[:, :, r:r + hspan:stride, q:q + wspan:stride].transpose(1, 0, 2, 3)
    return cols


def _col2im(cols, x_shape, stride, padding, dilation):
    n, c, h, w = x_shape
    _, kh, kw, _, ho, wo = cols.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            r, q = i * dilation, j * dilation
            xp[:, :, r:r + hspan:stride, q:q + wspan:stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    return xp[:, :, padding:padding + h, padding:padding + w]


def _conv_apply(x, w, stride, padding, dilation, ho, wo):
    """Cross-correlation; returns output [N, Cout, ho, wo] and the column buffer."""
    cout = w.shape[0]
    cols = _im2col(x, w.shape[2], w.shape[3], stride, padding, dilation, ho, wo)
    out = w.reshape(cout, -1) @ cols.reshape(-1, x.shape[0] * ho * wo)
    return out.reshape(cout, x.shape[0], ho, wo).transpose(1, 0, 2, 3), cols


def _conv_adjoint(g, w, x_shape, stride, padding, dilation):
    """Adjoint of :func:`_conv_apply` w.r.t. its input."""
    cout, cin, kh, kw = w.shape
    n, _, ho, wo = g.shape
    g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
    dcols = (w.reshape(cout, -1).T @ g2).reshape(cin, kh, kw, n, ho, wo)
    return _col2im(dcols, x_shape, stride, padding, dilation)


def _weight_grad(g, cols, w_shape):
    cout = w_shape[0]
    g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
    return (g2 @ cols.reshape(-1, g2.shape[1]).T).reshape(w_shape)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation of ``x`` [N, Cin, H, W] with ``weight`` [Cout, Cin, kH, kW]."""
    x, weight = _t(x), _t(weight)
    _require_rank4(x, "conv2d input")
    _require_rank4(weight, "conv2d weight")
    if stride < 1 or padding < 0 or dilation < 1:
        raise ValueError(f"invalid stride={stride}, padding={padding}, dilation={dilation}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv2d channel mismatch: input has C={cin}, weight expects Cin={wcin}")
    if bias is not None:
        bias = _t(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d bias must have shape [{cout}], got {list(bias.shape)}")
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        dim = "H" if ho < 1 else "W"
        raise ShapeError(
            f"conv2d produces zero-size output along {dim}: input {h}x{w}, kernel {kh}x{kw}, "
            f"padding {padding}, dilation {dilation}"
        )

    out, cols = _conv_apply(x.data, weight.data, stride, padding, dilation, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx = _conv_adjoint(g, weight.data, x.shape, stride, padding, dilation) if x.requires_grad else None
        gw = _weight_grad(g, cols, weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return _apply("conv2d", out, (x, weight, bias), backward)


def transposed_conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution; ``weight`` is [Cin, Cout, kH, kW].

    This is the adjoint of :func:`conv2d` with the same weight array, stride
    and padding.
    """
    x, weight = _t(x), _t(weight)
    _require_rank4(x, "transposed_conv2d input")
    _require_rank4(weight, "transposed_conv2d weight")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride}, padding={padding}")
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"transposed_conv2d channel mismatch: input has C={cin}, weight expects Cin={wcin}")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed_conv2d output size {ho}x{wo} is not positive")
    if bias is not None:
        bias = _t(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"transposed_conv2d bias must have shape [{cout}], got {list(bias.shape)}")
    out_shape = (n, cout, ho, wo)

    out = _conv_adjoint(x.data, weight.data, out_shape, stride, padding, 1)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gx, cols = _conv_apply(g, weight.data, stride, padding, 1, h, w)
        gw = None
        if weight.requires_grad:
            x2 = x.data.transpose(1, 0, 2, 3).reshape(cin, -1)
            gw = (x2 @ cols.reshape(-1, x2.shape[1]).T).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return (gx if x.requires_grad else None), gw, gb

    return _apply("transposed_conv2d", out, (x, weight, bias), backward)


@lru_cache(maxsize=64)
def _resize_matrix(size: int, scale: int, mode: str, dtype: str) -> np.ndarray:
    out = size * scale
    mat = np.zeros((out, size), dtype=dtype)
    if mode == "nearest":
        mat[np.arange(out), np.arange(out) // scale] = 1.0
    elif mode == "bilinear":
        # half-pixel centres, edges clamped (align_corners disabled)
        src = np.maximum((np.arange(out) + 0.5) / scale - 0.5, 0.0)
        i0 = np.floor(src).astype(int)
        i0 = np.minimum(i0, size - 1)
        i1 = np.minimum(i0 + 1, size - 1)
        frac = src - i0
        np.add.at(mat, (np.arange(out), i0), 1.0 - frac)
        np.add.at(mat, (np.arange(out), i1), frac)
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    mat.setflags(write=False)
    return mat


def resize(x, scale: int, mode: str = "nearest") -> Tensor:
    """Upsample the spatial dimensions by an integer factor."""
    x = _t(x)
    _require_rank4(x, "resize input")
    if int(scale) != scale or scale < 2:
        raise ValueError(f"resize scale must be an integer >= 2, got {scale}")
    scale = int(scale)
    _, _, h, w = x.shape
    ah = _resize_matrix(h, scale, mode, x.dtype.str)
    aw = _resize_matrix(w, scale, mode, x.dtype.str)
    out = ah @ x.data @ aw.T

    def backward(g):
        return (ah.T @ g @ aw,)

    return _apply("resize", out, (x,), backward)


def dense(x, weight, bias=None) -> Tensor:
    """Affine map of the flattened input; returns [N, Fout, 1, 1]."""
    x, weight = _t(x), _t(weight)
    n = x.shape[0]
    flat = x.data.reshape(n, -1)
    if weight.data.ndim != 2 or weight.shape[1] != flat.shape[1]:
        raise ShapeError(
            f"dense weight {list(weight.shape)} does not match flattened input of {flat.shape[1]} features"
        )
    fout = weight.shape[0]
    if bias is not None:
        bias = _t(bias)
        if bias.shape != (fout,):
            raise ShapeError(f"dense bias must have shape [{fout}], got {list(bias.shape)}")
    out = flat @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, fout, 1, 1)

    def backward(g):
        g2 = g.reshape(n, fout)
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ flat if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return _apply("dense", out, (x, weight, bias), backward)


def instance_norm(x, gain, shift, epsilon: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) plane to zero mean and unit variance."""
    x, gain, shift = _t(x), _t(gain), _t(shift)
    _require_rank4(x, "instance_norm input")
    n, c, h, w = x.shape
    if gain.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"instance_norm gain/shift must have shape [{c}]")
    m = h * w
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = centred * inv_std
    gain4 = gain.data.reshape(1, c, 1, 1)
    out = xhat * gain4 + shift.data.reshape(1, c, 1, 1)

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gain4
            s1 = dxhat.sum(axis=(2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
            gx = inv_std / m * (m * dxhat - s1 - xhat * s2)
        ggain = (g * xhat).sum(axis=(0, 2, 3)) if gain.requires_grad else None
        gshift = g.sum(axis=(0, 2, 3)) if shift.requires_grad else None
        return gx, ggain, gshift

    return _apply("instance_norm", out, (x, gain, shift), backward)
