"""Differentiable layer primitives on dense numpy arrays.

Every op accepts a single image ``(C, H, W)`` or a batch ``(N, C, H, W)`` and
returns arrays of the same rank. The computation dtype follows the inputs, so
float32 is used for training and float64 for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from vicnn.errors import ShapeError

# upper bound on a single im2col buffer; larger batches are processed in chunks
_COLUMN_BYTES = 64 * 2**20


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (C, H, W) or (N, C, H, W) array, got shape {x.shape}")


def _unbatch(x, squeeze):
    return x[0] if squeeze else x


@dataclass
class ConvParams:
    """Weights ``(out_ch, in_ch, k, k)``, bias ``(out_ch,)`` and geometry.

    Padding is always zero-padding of ``dilation * (k - 1) // 2`` on each side,
    which preserves height and width when ``stride == 1``.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    dilation: int = 1

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"conv weights must be (out, in, k, k), got {w.shape}")
        if w.shape[2] % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {w.shape[2]}")
        if self.bias.shape != (w.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {w.shape[0]} filters")
        if self.stride < 1 or self.dilation < 1:
            raise ShapeError("stride and dilation must be >= 1")

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel - 1) // 2

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        span = self.dilation * (self.kernel - 1) + 1
        p = self.padding
        ho = (h + 2 * p - span) // self.stride + 1
        wo = (w + 2 * p - span) // self.stride + 1
        return ho, wo


def _check_conv_input(x, p: ConvParams):
    if x.shape[1] != p.weights.shape[1]:
        raise ShapeError(
            f"conv expects {p.weights.shape[1]} input channels, got {x.shape[1]} "
            f"(input shape {x.shape}, weights {p.weights.shape})"
        )
    ho, wo = p.output_hw(x.shape[2], x.shape[3])
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape[2:]} too small for kernel/dilation")
    return ho, wo


def _window_view(xp, k, stride, dilation, ho, wo):
    """Strided view ``(n, ho, wo, k, k, c)`` over a padded NHWC array."""
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    return as_strided(
        xp,
        shape=(n, ho, wo, k, k, c),
        strides=(sn, sh * stride, sw * stride, sh * dilation, sw * dilation, sc),
        writeable=False,
    )


def _chunks(n, rows_per_sample, row_bytes):
    per = max(1, _COLUMN_BYTES // max(1, rows_per_sample * row_bytes))
    for start in range(0, n, per):
        yield slice(start, min(n, start + per))


def _padded_nhwc(x, pad, dtype):
    n, c, h, w = x.shape
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dtype)
    xp[:, pad:pad + h, pad:pad + w, :] = x.transpose(0, 2, 3, 1)
    return xp


def _weight_matrix(weights, dtype):
    # (out, in, k, k) -> (k*k*in, out), matching the window layout
    o = weights.shape[0]
    return weights.transpose(0, 2, 3, 1).reshape(o, -1).astype(dtype, copy=False).T


def _correlate(x, weights, bias, stride, dilation, pad, ho, wo, dtype):
    n, c = x.shape[:2]
    o, k = weights.shape[0], weights.shape[2]
    xp = _padded_nhwc(x, pad, dtype)
    wmat = _weight_matrix(weights, dtype)
    out = np.empty((n, ho, wo, o), dtype=dtype)
    kkc = k * k * c
    for sl in _chunks(n, ho * wo, kkc * xp.itemsize):
        cols = _window_view(xp[sl], k, stride, dilation, ho, wo).reshape(-1, kkc)
        out[sl] = (cols @ wmat).reshape(-1, ho, wo, o)
    if bias is not None:
        out += bias.astype(dtype, copy=False)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_forward(x, p: ConvParams):
    """Cross-correlation with zero "same" padding, stride and dilation."""
    x, squeeze = _batched(x)
    ho, wo = _check_conv_input(x, p)
    dtype = np.result_type(x.dtype, p.weights.dtype)
    out = _correlate(x, p.weights, p.bias, p.stride, p.dilation, p.padding, ho, wo, dtype)
    return _unbatch(out, squeeze)


def conv2d_backward(x, p: ConvParams, grad_out, need_input_grad: bool = True):
    """Gradients of a scalar loss w.r.t. input, weights and bias.

    Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is false.
    """
    x, squeeze = _batched(x)
    g, _ = _batched(grad_out)
    ho, wo = _check_conv_input(x, p)
    n, c, h, w = x.shape
    o, k = p.weights.shape[0], p.kernel
    if g.shape != (n, o, ho, wo):
        raise ShapeError(f"grad_out shape {g.shape} != conv output shape {(n, o, ho, wo)}")
    dtype = np.result_type(x.dtype, p.weights.dtype, g.dtype)
    pad, s, d = p.padding, p.stride, p.dilation
    g = g.astype(dtype, copy=False)
    xp = _padded_nhwc(x, pad, dtype)
    g_nhwc = g.transpose(0, 2, 3, 1)
    kkc = k * k * c

    grad_w = np.zeros((o, kkc), dtype=dtype)
    for sl in _chunks(n, ho * wo, kkc * xp.itemsize):
        cols = _window_view(xp[sl], k, s, d, ho, wo).reshape(-1, kkc)
        grad_w += g_nhwc[sl].reshape(-1, o).T @ cols
    grad_w = np.ascontiguousarray(grad_w.reshape(o, k, k, c).transpose(0, 3, 1, 2))
    grad_b = g.sum(axis=(0, 2, 3), dtype=dtype)

    grad_x = None
    if need_input_grad:
        if s == 1:
            # transposed correlation == correlation with the flipped, channel-swapped kernel
            flipped = p.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            grad_x = _correlate(g, flipped, None, 1, d, pad, h, w, dtype)
        else:
            grad_x = _scatter_input_grad(g_nhwc, p.weights, x.shape, pad, s, d, ho, wo, dtype)
        grad_x = _unbatch(grad_x, squeeze)
    return grad_x, grad_w, grad_b


def _scatter_input_grad(g_nhwc, weights, shape, pad, s, d, ho, wo, dtype):
    n, c, h, w = shape
    o, k = weights.shape[0], weights.shape[2]
    wmat = _weight_matrix(weights, dtype).T  # (o, k*k*c)
    grad_xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dtype)
    for sl in _chunks(n, ho * wo, k * k * c * np.dtype(dtype).itemsize):
        dcols = (g_nhwc[sl].reshape(-1, o) @ wmat).reshape(-1, ho, wo, k, k, c)
        gx = grad_xp[sl]
        for i in range(k):
            for j in range(k):
                gx[:, i * d:i * d + s * (ho - 1) + 1:s, j * d:j * d + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
    return np.ascontiguousarray(grad_xp[:, pad:pad + h, pad:pad + w, :].transpose(0, 3, 1, 2))


def sigmoid(x):
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)


def sigmoid_backward(out, grad_out):
    """Backward pass expressed through the forward output ``s``."""
    return grad_out * out * (1 - out)


def relu(x):
    x = np.asarray(x)
    return np.maximum(x, 0, dtype=x.dtype)


def relu_backward(x, grad_out):
    # subgradient at exactly 0 is 0
    return np.where(np.asarray(x) > 0, grad_out, 0).astype(np.asarray(grad_out).dtype)


def maxpool2(x):
    """2x2 max pooling, stride 2. Returns ``(pooled, argmax)``.

    ``argmax`` holds the flat position (0..3, row-major) of the first maximum
    inside each window.
    """
    x, squeeze = _batched(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even height and width, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return _unbatch(out, squeeze), _unbatch(idx, squeeze)


def maxpool2_backward(argmax, grad_out):
    g, squeeze = _batched(grad_out)
    idx, _ = _batched(argmax)
    if idx.shape != g.shape:
        raise ShapeError(f"argmax shape {idx.shape} != grad shape {g.shape}")
    n, c, h2, w2 = g.shape
    win = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
    np.put_along_axis(win, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    grad = win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    return _unbatch(grad, squeeze)


def upsample_nearest2(x):
    x, squeeze = _batched(x)
    return _unbatch(x.repeat(2, axis=2).repeat(2, axis=3), squeeze)


def upsample_nearest2_backward(grad_out):
    g, squeeze = _batched(grad_out)
    n, c, h, w = g.shape
    if h % 2 or w % 2:
        raise ShapeError(f"upsample gradient must have even size, got {h}x{w}")
    return _unbatch(g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)), squeeze)


def residual_add(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"residual operands differ in shape: {a.shape} vs {b.shape}")
    return a + b


def residual_add_backward(grad_out):
    return grad_out, grad_out


def mse_loss(prediction, target):
    """Mean squared error accumulated in float64.

    Returns ``(loss, grad)`` where ``grad`` has the prediction's dtype.
    """
    prediction, target = np.asarray(prediction), np.asarray(target)
    if prediction.shape != target.shape:
        raise ShapeError(f"mse operands differ in shape: {prediction.shape} vs {target.shape}")
    diff = prediction.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(prediction.dtype if prediction.dtype.kind == "f" else np.float64)
