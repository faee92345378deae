"""Central finite-difference checks of every engine op and whole networks.

Each check draws a random input and a random upstream gradient ``r``, forms
the scalar ``L = sum(op(x) * r)`` and compares the analytic gradient of ``L``
against ``(L(x + h) - L(x - h)) / 2h`` on a sample of coordinates. All
arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vicnn.engine import ops
from vicnn.engine.network import backward, forward, init_params

STEP = 1e-3
FLOOR = 1e-6
TOLERANCE = 1e-3


@dataclass
class CheckResult:
    op: str
    case: str
    wrt: str
    max_rel_error: float
    n_checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def rel_error(analytic, numeric, floor: float = FLOOR) -> float:
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(f, x, coords, h: float = STEP):
    """Central differences of scalar ``f`` at the flat indices ``coords`` of ``x`` (restored afterwards)."""
    flat = x.reshape(-1)
    out = np.empty(len(coords))
    for i, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + h
        hi = f()
        flat[c] = orig - h
        lo = f()
        flat[c] = orig
        out[i] = (hi - lo) / (2 * h)
    return out


def _coords(rng, size, limit):
    return np.arange(size) if size <= limit else np.sort(rng.choice(size, limit, replace=False))


def _compare(op, case, wrt, analytic, x, f, rng, limit):
    coords = _coords(rng, x.size, limit)
    num = numeric_grad(f, x, coords)
    return CheckResult(op, case, wrt, rel_error(np.asarray(analytic).reshape(-1)[coords], num), len(coords))


def _away_from_zero(rng, shape, margin=0.05):
    # keeps relu kinks and pooling ties outside the finite-difference step
    x = rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return x


def check_conv(rng, k, dilation=1, stride=1, c_in=2, c_out=3, size=9, limit=30):
    x = rng.normal(size=(2, c_in, size, size))
    w = rng.normal(size=(c_out, c_in, k, k)) / k
    b = rng.normal(size=c_out)
    p = ops.ConvParams(w, b, stride, dilation)
    r = rng.normal(size=ops.conv2d_forward(x, p).shape)
    gx, gw, gb = ops.conv2d_backward(x, p, r)
    f = lambda: float(np.sum(ops.conv2d_forward(x, p) * r))  # noqa: E731
    case = f"k={k} d={dilation} s={stride}"
    return [
        _compare("conv2d", case, "input", gx, x, f, rng, limit),
        _compare("conv2d", case, "weights", gw, w, f, rng, limit),
        _compare("conv2d", case, "bias", gb, b, f, rng, limit),
    ]


def _unary(rng, name, fwd, bwd, x, limit=40):
    r = rng.normal(size=np.shape(fwd(x)))
    g = bwd(x, r)
    f = lambda: float(np.sum(fwd(x) * r))  # noqa: E731
    return [_compare(name, f"shape={x.shape}", "input", g, x, f, rng, limit)]


def check_ops(rng):
    results = []
    results += _unary(rng, "sigmoid", ops.sigmoid, lambda x, r: ops.sigmoid_backward(ops.sigmoid(x), r),
                      rng.normal(scale=3.0, size=(2, 3, 5, 5)))
    results += _unary(rng, "relu", ops.relu, ops.relu_backward, _away_from_zero(rng, (2, 3, 5, 5)))
    results += _unary(rng, "maxpool2", lambda x: ops.maxpool2(x)[0],
                      lambda x, r: ops.maxpool2_backward(ops.maxpool2(x)[1], r),
                      rng.permutation(np.linspace(-1, 1, 2 * 3 * 6 * 6)).reshape(2, 3, 6, 6))
    results += _unary(rng, "upsample2", ops.upsample_nearest2, lambda x, r: ops.upsample_nearest2_backward(r),
                      rng.normal(size=(2, 3, 4, 4)))
    a, b = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    r = rng.normal(size=a.shape)
    ga, gb = ops.residual_add_backward(r)
    f = lambda: float(np.sum(ops.residual_add(a, b) * r))  # noqa: E731
    results += [_compare("residual_add", "shape=(2, 3, 4, 4)", "a", ga, a, f, rng, 40),
                _compare("residual_add", "shape=(2, 3, 4, 4)", "b", gb, b, f, rng, 40)]
    pred, target = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    _, g = ops.mse_loss(pred, target)
    results.append(_compare("mse_loss", "shape=(2, 3, 4, 4)", "prediction", g, pred,
                            lambda: ops.mse_loss(pred, target)[0], rng, 40))
    return results


def _pattern(spec, params, x):
    """Relu masks and pooling winners; finite differences are valid only where these stay fixed."""
    _, tape = forward(spec, params, x)
    parts = [tape.activations[i] > 0 for i, layer in enumerate(spec.layers, start=1)
             if getattr(layer, "activation", None) == "relu"]
    parts += [tape.pool_argmax[i] for i in sorted(tape.pool_argmax)]
    return [p.copy() for p in parts]


def _smooth_coords(spec, params, x, target, rng, limit, h=STEP):
    """Up to ``limit`` random coordinates of ``target`` whose +-h perturbation keeps the pattern."""
    base = _pattern(spec, params, x)
    flat = target.reshape(-1)
    chosen = []
    for c in rng.permutation(target.size):
        orig = flat[c]
        same = True
        for v in (orig + h, orig - h):
            flat[c] = v
            if not all(np.array_equal(a, b) for a, b in zip(base, _pattern(spec, params, x))):
                same = False
                break
        flat[c] = orig
        if same:
            chosen.append(c)
            if len(chosen) == limit:
                break
    return np.sort(np.array(chosen, dtype=np.intp))


def check_network(spec, rng, limit=12):
    """Gradients of the MSE loss w.r.t. every parameter array and the input.

    Coordinates whose perturbation flips a relu or changes a pooling winner
    are skipped, since the loss is not differentiable across those switches.
    """
    params = init_params(spec, int(rng.integers(2**31)), dtype=np.float64)
    x = rng.uniform(0, 1, size=(2,) + tuple(spec.input_shape))
    y = rng.uniform(0, 1, size=x.shape)
    out, tape = forward(spec, params, x)
    _, g = ops.mse_loss(out, y)
    grads, gx = backward(spec, params, tape, g, need_input_grad=True)
    f = lambda: ops.mse_loss(forward(spec, params, x)[0], y)[0]  # noqa: E731
    results = []
    case = f"input {spec.input_shape}"
    for wrt, target, grad in [("input", x, gx)] + [(f"param[{i}]", p, gp) for i, (p, gp) in enumerate(zip(params, grads))]:
        coords = _smooth_coords(spec, params, x, target, rng, limit)
        num = numeric_grad(f, target, coords)
        results.append(CheckResult(spec.name, case, wrt, rel_error(grad.reshape(-1)[coords], num), len(coords)))
    return results


CONV_CASES = [(k, d, s) for k in (1, 3, 5, 7, 11, 15) for d in (1, 2, 4, 8) for s in (1, 2, 4, 8)]


def run_all(seed: int = 0, networks: bool = True) -> list[CheckResult]:
    """The full table: every op, every conv geometry in scope and the small zoo networks."""
    from vicnn import zoo

    rng = np.random.default_rng(seed)
    results = []
    for k, d, s in CONV_CASES:
        results += check_conv(rng, k, d, s)
    results += check_ops(rng)
    if networks:
        specs = [zoo.build_base_net(5, 8), zoo.build_jain2009_pool(size=8), zoo.build_jain2009_residual(size=8),
                 zoo.build_jain2009_dilated(2, size=8), zoo.build_deep_residual_denoiser(depth=3, size=8, width=4)]
        for spec in specs:
            results += check_network(spec, rng)
    return results


def format_table(results) -> str:
    lines = [f"{'op':<24} {'case':<22} {'wrt':<10} {'max_rel_err':>12} {'n':>4}  status"]
    for r in results:
        lines.append(f"{r.op:<24} {r.case:<22} {r.wrt:<10} {r.max_rel_error:>12.3e} {r.n_checked:>4}  "
                     f"{'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
