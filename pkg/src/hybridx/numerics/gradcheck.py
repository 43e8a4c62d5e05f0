"""Central finite-difference checks for every backward pass.

``gradcheck(name, seed)`` builds a small random instance of the named layer,
contracts its output with a random tensor to get a scalar loss, and compares
the analytic gradients of every input and parameter against central
differences. The result is the largest elementwise relative error

    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
"""

from __future__ import annotations

import numpy as np

from hybridx.numerics import layers
from hybridx.numerics.rng import make_rng

STEP = 1e-5
FLOOR = 1e-8
TOLERANCE = 1e-4

LAYER_TYPES = (
    "conv2d",
    "dense",
    "relu",
    "avgpool2x2",
    "global_avg_pool",
    "concat_channels",
    "softmax_crossentropy",
    "densenet",
)


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(loss_fn, arrays, step=STEP, skip=None):
    """Central differences of ``loss_fn()`` w.r.t. each array in ``arrays``.

    The arrays are perturbed in place and restored. ``skip()`` is consulted
    after each evaluation and may veto the coordinate; vetoed entries come
    back as NaN.
    """
    grads = {}
    for name, arr in arrays.items():
        g = np.empty_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_fn()
            veto = skip is not None and skip()
            flat[i] = orig - step
            minus = loss_fn()
            veto = veto or (skip is not None and skip())
            flat[i] = orig
            gflat[i] = np.nan if veto else (plus - minus) / (2 * step)
        grads[name] = g
    return grads


def _max_error(analytic, numeric):
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        keep = ~np.isnan(n)
        if keep.any():
            worst = max(worst, float(relative_error(a[keep], n[keep]).max()))
    return worst


def _projected(forward, backward, arrays, rng):
    """Check a layer through the scalar loss ``sum(forward(**arrays) * R)``."""
    out = forward(**arrays)
    proj = rng.standard_normal(out.shape)
    analytic = backward(proj, **arrays)
    numeric = numeric_gradient(lambda: float(np.sum(forward(**arrays) * proj)), arrays)
    return _max_error(analytic, numeric)


def _check_conv2d(rng):
    c_in, c_out = rng.integers(1, 4, size=2)
    k = int(rng.integers(1, 4))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    side = int(rng.integers(max(k, 4), 7))
    arrays = {
        "x": rng.standard_normal((2, c_in, side, side)),
        "w": rng.standard_normal((c_out, c_in, k, k)),
        "b": rng.standard_normal(c_out),
    }

    def forward(x, w, b):
        return layers.conv2d_forward(x, w, b, stride, pad)

    def backward(g, x, w, b):
        gx, gw, gb = layers.conv2d_backward(g, x, w, stride, pad)
        return {"x": gx, "w": gw, "b": gb}

    return _projected(forward, backward, arrays, rng)


def _check_dense(rng):
    n, d, m = (int(v) for v in rng.integers(1, 7, size=3))
    arrays = {
        "x": rng.standard_normal((n, d)),
        "w": rng.standard_normal((m, d)),
        "b": rng.standard_normal(m),
    }

    def backward(g, x, w, b):
        gx, gw, gb = layers.dense_backward(g, x, w)
        return {"x": gx, "w": gw, "b": gb}

    return _projected(lambda x, w, b: layers.dense_forward(x, w, b), backward, arrays, rng)


def _check_relu(rng):
    shape = tuple(int(v) for v in rng.integers(1, 6, size=3))
    # magnitudes kept >= 1e-2 so no finite-difference step crosses the kink
    mag = rng.uniform(1e-2, 2.0, size=shape)
    x = np.where(rng.random(shape) < 0.5, -mag, mag)
    return _projected(
        layers.relu_forward,
        lambda g, x: {"x": layers.relu_backward(g, x)},
        {"x": x},
        rng,
    )


def _check_avgpool(rng):
    c = int(rng.integers(1, 4))
    h, w = (2 * int(v) for v in rng.integers(1, 5, size=2))
    return _projected(
        layers.avgpool2x2_forward,
        lambda g, x: {"x": layers.avgpool2x2_backward(g, x)},
        {"x": rng.standard_normal((2, c, h, w))},
        rng,
    )


def _check_gap(rng):
    c, h, w = (int(v) for v in rng.integers(1, 6, size=3))
    return _projected(
        layers.global_avg_pool_forward,
        lambda g, x: {"x": layers.global_avg_pool_backward(g, x)},
        {"x": rng.standard_normal((2, c, h, w))},
        rng,
    )


def _check_concat(rng):
    n_parts = int(rng.integers(2, 4))
    counts = [int(v) for v in rng.integers(1, 4, size=n_parts)]
    side = int(rng.integers(2, 5))
    arrays = {f"x{i}": rng.standard_normal((2, c, side, side)) for i, c in enumerate(counts)}

    def forward(**xs):
        return layers.concat_channels_forward([xs[f"x{i}"] for i in range(n_parts)])

    def backward(g, **xs):
        parts = layers.concat_channels_backward(g, counts)
        return {f"x{i}": p for i, p in enumerate(parts)}

    return _projected(forward, backward, arrays, rng)


def _check_softmax_ce(rng):
    n = int(rng.integers(1, 6))
    labels = rng.integers(0, 2, size=n)
    logits = {"z": 3.0 * rng.standard_normal((n, 2))}
    _, analytic = layers.softmax_crossentropy(logits["z"], labels)
    numeric = numeric_gradient(lambda: layers.softmax_crossentropy(logits["z"], labels)[0], logits)
    return _max_error({"z": analytic}, numeric)


def _check_densenet(rng):
    # deferred import: the network module itself depends on this package
    from hybridx import facial

    cfg = facial.DenseNetConfig(seed=int(rng.integers(0, 2**31)))
    model = facial.build_model(cfg)
    params = {k: v.copy() for k, v in model.params.items()}
    x = rng.random((1, 3, cfg.side, cfg.side))
    label = rng.integers(0, 2, size=1)

    loss, grads, cache = facial.loss_and_grads(params, cfg, x, label)
    base_pattern = facial.relu_pattern(cache)
    current = {}

    def loss_fn():
        value, _, c = facial.loss_and_grads(params, cfg, x, label, need_grads=False)
        current["pattern"] = facial.relu_pattern(c)
        return value

    def crossed_kink():
        return current["pattern"] != base_pattern

    arrays = dict(params)
    arrays["input"] = x
    numeric = numeric_gradient(loss_fn, arrays, skip=crossed_kink)
    return _max_error(grads, numeric)


_CHECKS = {
    "conv2d": _check_conv2d,
    "dense": _check_dense,
    "relu": _check_relu,
    "avgpool2x2": _check_avgpool,
    "global_avg_pool": _check_gap,
    "concat_channels": _check_concat,
    "softmax_crossentropy": _check_softmax_ce,
    "densenet": _check_densenet,
}


def gradcheck(layer: str, seed: int = 0) -> float:
    """Max relative error between analytic and finite-difference gradients.

    For ``"densenet"`` the whole default desk-scale network is checked end to
    end on one sample; coordinates whose perturbation flips any ReLU are
    excluded, since the loss is not differentiable across the kink.
    """
    try:
        check = _CHECKS[layer]
    except KeyError:
        raise ValueError(f"unknown layer type {layer!r}; choose from {', '.join(LAYER_TYPES)}") from None
    return check(make_rng(seed))
