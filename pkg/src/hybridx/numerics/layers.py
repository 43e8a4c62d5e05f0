"""Forward and backward passes for every layer the networks use.

All functions work on float64 numpy arrays. Image-like tensors are laid out
channel-first, either (C, H, W) for a single sample or (N, C, H, W) for a
batch; the channel axis is always ``-3``. Convolution is cross-correlation
(kernels are not flipped).

Backward functions take the upstream gradient first, followed by whatever
the matching forward call consumed.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected a (C, H, W) or (N, C, H, W) tensor, got shape {x.shape}")


def _check_conv_shapes(x, kernels, bias, stride, pad):
    if kernels.ndim != 4:
        raise ValueError(f"kernels must be (C_out, C_in, kH, kW), got shape {kernels.shape}")
    if x.shape[1] != kernels.shape[1]:
        raise ValueError(
            f"input shape {x.shape[1:]} has {x.shape[1]} channels but kernels shape "
            f"{kernels.shape} expects {kernels.shape[1]}"
        )
    if bias.shape != (kernels.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match kernels shape {kernels.shape}")
    if stride < 1 or pad < 0:
        raise ValueError(f"need stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    kh, kw = kernels.shape[2:]
    if kh > x.shape[2] + 2 * pad or kw > x.shape[3] + 2 * pad:
        raise ValueError(
            f"kernels shape {kernels.shape} do not fit input shape {x.shape[1:]} with pad {pad}"
        )


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, H', W', kH, kW) view into the padded input
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x, kernels, bias, stride=1, pad=0):
    xb, single = _as_batch(np.asarray(x, dtype=np.float64))
    _check_conv_shapes(xb, kernels, bias, stride, pad)
    kh, kw = kernels.shape[2:]
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(xp, kh, kw, stride)
    out = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3]))  # (N, H', W', C_out)
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(grad_out, x, kernels, stride=1, pad=0):
    """Returns ``(grad_input, grad_kernels, grad_bias)``."""
    xb, single = _as_batch(np.asarray(x, dtype=np.float64))
    gb, _ = _as_batch(np.asarray(grad_out, dtype=np.float64))
    _check_conv_shapes(xb, kernels, np.zeros(kernels.shape[0]), stride, pad)
    n, c, h, w = xb.shape
    kh, kw = kernels.shape[2:]
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if gb.shape != (n, kernels.shape[0], ho, wo):
        raise ValueError(
            f"grad_out shape {gb.shape} does not match forward output shape {(n, kernels.shape[0], ho, wo)}"
        )

    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(xp, kh, kw, stride)
    grad_bias = gb.sum(axis=(0, 2, 3))
    grad_kernels = np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))  # (C_out, C_in, kH, kW)

    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(gb, kernels[:, :, i, j], axes=([1], [0]))  # (N, H', W', C_in)
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
    grad_input = gxp[:, :, pad:pad + h, pad:pad + w]
    grad_input = np.ascontiguousarray(grad_input)
    return (grad_input[0] if single else grad_input), grad_kernels, grad_bias


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def avgpool2x2_forward(x):
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"2x2 average pooling needs even spatial extents, got {h}x{w}")
    lead = x.shape[:-2]
    return x.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


def avgpool2x2_backward(grad_out, x):
    h, w = x.shape[-2:]
    if grad_out.shape[-2:] != (h // 2, w // 2):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match pooled input shape {x.shape}")
    g = np.repeat(np.repeat(grad_out, 2, axis=-2), 2, axis=-1)
    return g * 0.25


def global_avg_pool_forward(x):
    return x.mean(axis=(-2, -1))


def global_avg_pool_backward(grad_out, x):
    h, w = x.shape[-2:]
    return np.broadcast_to(grad_out[..., None, None] / (h * w), x.shape).copy()


def dense_forward(x, weights, bias):
    """``x @ weights.T + bias`` with ``weights`` shaped (out_features, in_features)."""
    if x.shape[-1] != weights.shape[1]:
        raise ValueError(f"input shape {x.shape} does not match weights shape {weights.shape}")
    return x @ weights.T + bias


def dense_backward(grad_out, x, weights):
    """Returns ``(grad_input, grad_weights, grad_bias)``."""
    grad_input = grad_out @ weights
    if x.ndim == 1:
        grad_weights = np.outer(grad_out, x)
        grad_bias = grad_out.copy()
    else:
        grad_weights = grad_out.T @ x
        grad_bias = grad_out.sum(axis=0)
    return grad_input, grad_weights, grad_bias


def concat_channels_forward(tensors):
    tensors = list(tensors)
    if not tensors:
        raise ValueError("nothing to concatenate")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:-3] != ref[:-3] or t.shape[-2:] != ref[-2:]:
            raise ValueError(f"cannot concatenate shapes {ref} and {t.shape} along channels")
    return np.concatenate(tensors, axis=-3)


def concat_channels_backward(grad_out, channel_counts):
    """Split the upstream gradient back into one slice per concatenated input."""
    if sum(channel_counts) != grad_out.shape[-3]:
        raise ValueError(f"channel counts {channel_counts} do not sum to {grad_out.shape[-3]}")
    bounds = np.cumsum(channel_counts)[:-1]
    return [np.ascontiguousarray(g) for g in np.split(grad_out, bounds, axis=-3)]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_crossentropy(logits, label):
    """Two-class softmax cross-entropy.

    ``logits`` is (2,) with an integer ``label``, or (N, 2) with an array of
    N labels; in the batched case the loss is the mean over samples and the
    gradient is scaled to match.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(label))
    if logits.shape[-1] != 2:
        raise ValueError(f"expected two logits per sample, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError(f"labels must be 0 or 1, got {labels.tolist()}")
    z = np.atleast_2d(logits)
    if len(labels) != len(z):
        raise ValueError(f"{len(labels)} labels for {len(z)} logit rows")

    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(z))
    losses = log_norm - z[rows, labels.astype(int)]
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels.astype(int)] -= 1.0
    n = len(z)
    if logits.ndim == 1:
        return float(losses[0]), grad[0]
    return float(losses.sum() / n), grad / n


def sgd_step(params, grads, lr):
    """Plain gradient descent. Returns new arrays; the inputs are left untouched."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    out = []
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"parameter shape {p.shape} does not match gradient shape {g.shape}")
        out.append(p - lr * g)
    return out
