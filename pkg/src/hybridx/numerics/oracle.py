"""Slow, loop-based reference implementations.

These exist only to cross-check the vectorized layers. They share no code
with ``layers`` and operate on a single (C, H, W) sample.
"""

from __future__ import annotations

import math

import numpy as np


def naive_conv2d(x, kernels, bias, stride=1, pad=0):
    c_in, h, w = x.shape
    c_out, _, kh, kw = kernels.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for r in range(ho):
            for s in range(wo):
                acc = float(bias[o])
                for c in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            y = r * stride + i - pad
                            z = s * stride + j - pad
                            if 0 <= y < h and 0 <= z < w:
                                acc += x[c, y, z] * kernels[o, c, i, j]
                out[o, r, s] = acc
    return out


def naive_relu(x):
    out = x.copy()
    flat = out.reshape(-1)
    for i in range(flat.size):
        if flat[i] < 0:
            flat[i] = 0.0
    return out


def naive_avgpool2x2(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for k in range(c):
        for r in range(h // 2):
            for s in range(w // 2):
                out[k, r, s] = (x[k, 2 * r, 2 * s] + x[k, 2 * r + 1, 2 * s]
                                + x[k, 2 * r, 2 * s + 1] + x[k, 2 * r + 1, 2 * s + 1]) / 4.0
    return out


def naive_global_avg_pool(x):
    c, h, w = x.shape
    out = np.zeros(c)
    for k in range(c):
        total = 0.0
        for r in range(h):
            for s in range(w):
                total += x[k, r, s]
        out[k] = total / (h * w)
    return out


def naive_dense(x, weights, bias):
    out = np.zeros(weights.shape[0])
    for o in range(weights.shape[0]):
        out[o] = bias[o] + sum(weights[o, i] * x[i] for i in range(x.shape[0]))
    return out


def naive_softmax2(logits):
    m = max(logits[0], logits[1])
    a, b = math.exp(logits[0] - m), math.exp(logits[1] - m)
    return np.array([a / (a + b), b / (a + b)])


def naive_densenet_logits(model, image):
    """Second, independent forward pass through a DenseNet parameter set."""
    cfg = model.config
    p = model.params
    h = naive_conv2d(image, p["stem.w"], p["stem.b"], 1, 1)
    for blk in range(cfg.blocks):
        for layer in range(cfg.layers_per_block):
            name = f"block{blk}.layer{layer}"
            new = naive_conv2d(naive_relu(h), p[f"{name}.w"], p[f"{name}.b"], 1, 1)
            h = np.concatenate([h, new], axis=0)
        if blk < cfg.blocks - 1:
            h = naive_conv2d(h, p[f"trans{blk}.w"], p[f"trans{blk}.b"], 1, 0)
            h = naive_avgpool2x2(h)
    feats = naive_global_avg_pool(h)
    return naive_dense(feats, p["fc.w"], p["fc.b"])
