"""Differentiable operations on :class:`Tensor`.

Only what the encoder, predictors and decoder need: conv1d and its
transpose, ReLU, affine maps, reshape, add/sub/scale and mean-squared error.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DimensionError, NumericError
from .tensor import Tensor, active_tape


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, parents, backward) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(p is not None and p.requires_grad for p in parents):
        tape.record(out, [p for p in parents if p is not None], backward)
    return out


def conv_out_len(length: int, ksize: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - ksize) // stride + 1


def conv_transpose_out_len(length, ksize, stride, padding, output_padding=0):
    return (length - 1) * stride - 2 * padding + ksize + output_padding


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B, C_in, L] with [C_out, C_in, K], zero padded."""
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise DimensionError(f"conv1d expects 3-d input and weight, got {x.shape} and {weight.shape}")
    b, c_in, length = x.shape
    c_out, w_in, ksize = weight.shape
    if w_in != c_in:
        raise DimensionError(f"conv1d: input has {c_in} channels, weight expects {w_in}")
    if stride < 1 or length + 2 * padding < ksize:
        raise DimensionError(f"conv1d: L={length}, padding={padding}, ksize={ksize}, stride={stride}")
    l_out = conv_out_len(length, ksize, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    cols = kernels.im2col(xp, ksize, stride, l_out).reshape(b * l_out, c_in * ksize)
    wmat = weight.data.reshape(c_out, c_in * ksize)
    out = (cols @ wmat.T).reshape(b, l_out, c_out).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)
    lp = xp.shape[2]

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(b * l_out, c_out)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(b, l_out, c_in, ksize)
            gx = kernels.col2im(dcols, lp, stride)
            if padding:
                gx = gx[:, :, padding : padding + length]
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return _record(out, (x, weight, bias) if bias is not None else (x, weight), backward)


def conv_transpose1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Adjoint of :func:`conv1d`; ``weight`` has shape [C_in, C_out, K]."""
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise DimensionError(f"conv_transpose1d expects 3-d tensors, got {x.shape} and {weight.shape}")
    b, c_in, length = x.shape
    w_in, c_out, ksize = weight.shape
    if w_in != c_in:
        raise DimensionError(f"conv_transpose1d: input has {c_in} channels, weight expects {w_in}")
    l_out = conv_transpose_out_len(length, ksize, stride, padding, output_padding)
    lp = l_out + 2 * padding
    wmat = weight.data.reshape(c_in, c_out * ksize)
    xrows = x.data.transpose(0, 2, 1).reshape(b * length, c_in)
    cols = (xrows @ wmat).reshape(b, length, c_out, ksize)
    full = kernels.col2im(cols, lp, stride)
    out = full[:, :, padding : padding + l_out]
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding))) if padding else g
        gcols = kernels.im2col(gp, ksize, stride, length).reshape(b * length, c_out * ksize)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.ascontiguousarray((gcols @ wmat.T).reshape(b, length, c_in).transpose(0, 2, 1))
        if weight.requires_grad:
            gw = (xrows.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return _record(out, (x, weight, bias) if bias is not None else (x, weight), backward)


# When a list is installed here, relu appends its activation mask; used by
# grad_check to detect finite differences that straddle a kink.
_mask_log: list | None = None


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _mask_log is not None:
        _mask_log.append(np.packbits(mask).tobytes())
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return _record(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with weight [out, in]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, weight, bias) if bias is not None else (x, weight), backward)


def reshape(x: Tensor, shape) -> Tensor:
    in_shape = x.shape
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(in_shape),)

    return _record(out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """[B, ...] -> [B, prod(...)]"""
    return reshape(x, (x.shape[0], -1))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return g, g

    return _record(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        return g, -g

    return _record(a.data - b.data, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _record((x.data * factor).astype(x.dtype, copy=False), (x,), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over every element.

    ``target`` may be a plain array or a tensor that does not require grad;
    a tensor that does require grad receives the negated gradient.
    """
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    value = np.asarray(np.mean(np.square(diff, dtype=np.float64)), dtype=pred.dtype)
    if not np.isfinite(value):
        raise NumericError("non-finite loss")

    def backward(g):
        gp = (diff * (2.0 * float(g) / n)).astype(pred.dtype, copy=False)
        return gp, -gp

    return _record(value, (pred, target), backward)
