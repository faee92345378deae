"""Execute a :class:`~vicnn.zoo.ModelSpec` forward and backward.

Parameters are a flat list ``[w1, b1, w2, b2, ...]`` in conv-layer order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vicnn.engine import ops
from vicnn.errors import ShapeError
from vicnn.zoo import Conv, MaxPool2, ModelSpec, ResidualJoin, Upsample2


@dataclass
class Tape:
    activations: list      # index 0 = input, i = output of layer i
    pool_argmax: dict      # layer index -> argmax array
    squeeze: bool


def init_params(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases, drawn layer by layer from one seed."""
    rng = np.random.default_rng(seed)
    params, c = [], spec.input_shape[0]
    for layer in spec.conv_layers:
        k2 = layer.kernel**2
        limit = np.sqrt(6.0 / (c * k2 + layer.out_ch * k2))
        params.append(rng.uniform(-limit, limit, size=(layer.out_ch, c, layer.kernel, layer.kernel)).astype(dtype))
        params.append(np.zeros(layer.out_ch, dtype=dtype))
        c = layer.out_ch
    return params


def identity_params(spec: ModelSpec, dtype=np.float32) -> list[np.ndarray]:
    """Parameters making a single 3->3 conv model the identity map."""
    convs = spec.conv_layers
    if len(convs) != 1 or convs[0].out_ch != spec.input_shape[0]:
        raise ShapeError(f"{spec.name} is not a single channel-preserving conv")
    k, c = convs[0].kernel, convs[0].out_ch
    w = np.zeros((c, c, k, k), dtype=dtype)
    w[np.arange(c), np.arange(c), k // 2, k // 2] = 1
    return [w, np.zeros(c, dtype=dtype)]


def _conv_params(layer: Conv, w, b):
    return ops.ConvParams(w, b, layer.stride, layer.dilation)


def _check_params(spec, params):
    convs = spec.conv_layers
    if len(params) != 2 * len(convs):
        raise ShapeError(f"{spec.name} needs {2 * len(convs)} parameter arrays, got {len(params)}")


def forward(spec: ModelSpec, params, x):
    """Run the model. Returns ``(output, tape)``."""
    _check_params(spec, params)
    x = np.asarray(x)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if tuple(x.shape[1:]) != tuple(spec.input_shape):
        raise ShapeError(f"{spec.name} expects input {spec.input_shape}, got {x.shape[1:]}")
    acts, argmax, p = [x], {}, 0
    for i, layer in enumerate(spec.layers, start=1):
        h = acts[-1]
        if isinstance(layer, Conv):
            h = ops.conv2d_forward(h, _conv_params(layer, params[p], params[p + 1]))
            p += 2
            if layer.activation == "sigmoid":
                h = ops.sigmoid(h)
            elif layer.activation == "relu":
                h = ops.relu(h)
        elif isinstance(layer, MaxPool2):
            h, argmax[i] = ops.maxpool2(h)
        elif isinstance(layer, Upsample2):
            h = ops.upsample_nearest2(h)
        elif isinstance(layer, ResidualJoin):
            h = ops.residual_add(h, acts[layer.source])
        acts.append(h)
    out = acts[-1]
    return (out[0] if squeeze else out), Tape(acts, argmax, squeeze)


def backward(spec: ModelSpec, params, tape: Tape, grad_out, need_input_grad: bool = False):
    """Parameter gradients (same layout as ``params``) for ``grad_out``.

    With ``need_input_grad`` returns ``(grads, grad_input)``.
    """
    _check_params(spec, params)
    g = np.asarray(grad_out)
    if tape.squeeze:
        g = g[None]
    if g.shape != tape.activations[-1].shape:
        raise ShapeError(f"grad_out shape {g.shape} != output shape {tape.activations[-1].shape}")
    grads = [None] * len(params)
    pending = {len(spec.layers): g}
    p = len(params)
    for i in range(len(spec.layers), 0, -1):
        layer = spec.layers[i - 1]
        g = pending.pop(i, None)
        if isinstance(layer, Conv):
            p -= 2
            if g is None:
                grads[p], grads[p + 1] = np.zeros_like(params[p]), np.zeros_like(params[p + 1])
                continue
            out = tape.activations[i]
            if layer.activation == "sigmoid":
                g = ops.sigmoid_backward(out, g)
            elif layer.activation == "relu":
                g = ops.relu_backward(out, g)
            gx, gw, gb = ops.conv2d_backward(
                tape.activations[i - 1], _conv_params(layer, params[p], params[p + 1]), g,
                need_input_grad=need_input_grad or i > 1,
            )
            grads[p], grads[p + 1] = gw.astype(params[p].dtype, copy=False), gb.astype(params[p + 1].dtype, copy=False)
            if gx is None:
                continue
            g_prev = gx
        elif g is None:
            continue
        elif isinstance(layer, MaxPool2):
            g_prev = ops.maxpool2_backward(tape.pool_argmax[i], g)
        elif isinstance(layer, Upsample2):
            g_prev = ops.upsample_nearest2_backward(g)
        else:
            g_prev, g_skip = ops.residual_add_backward(g)
            _accumulate(pending, layer.source, g_skip)
        _accumulate(pending, i - 1, g_prev)
    if not need_input_grad:
        return grads
    gin = pending.get(0)
    if gin is None:
        gin = np.zeros_like(tape.activations[0])
    return grads, (gin[0] if tape.squeeze else gin)


def _accumulate(pending, index, g):
    if index in pending:
        pending[index] = pending[index] + g
    else:
        pending[index] = g


def predict(spec: ModelSpec, params, x, batch_size: int = 32):
    """Forward pass without keeping a tape, in batches."""
    x = np.asarray(x)
    if x.ndim == 3:
        return forward(spec, params, x)[0]
    outs = [forward(spec, params, x[s:s + batch_size])[0] for s in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, 3) + tuple(spec.input_shape[1:]), x.dtype)
