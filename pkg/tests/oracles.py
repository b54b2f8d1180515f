"""Slow, obviously-correct reference implementations used as test oracles.

Written with plain loops and scalars; nothing here calls into flroute.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x, weight, bias):
    """Direct same-padded cross-correlation, summed channel-major then kernel row-major."""
    c, h, w = x.shape
    o, _, k, _ = weight.shape
    p = k // 2
    out = np.zeros((o, h, w))
    for oc in range(o):
        for yy in range(h):
            for xx in range(w):
                s = 0.0
                for ch in range(c):
                    for i in range(k):
                        for j in range(k):
                            sy, sx = yy + i - p, xx + j - p
                            v = x[ch, sy, sx] if 0 <= sy < h and 0 <= sx < w else 0.0
                            s += v * weight[oc, ch, i, j]
                out[oc, yy, xx] = s + bias[oc]
    return out


def relu_loops(x):
    flat = [v if v > 0 else 0.0 for v in np.asarray(x, dtype=float).ravel()]
    return np.array(flat).reshape(np.shape(x))


def auc_pairs(scores, labels):
    """Count ordered (positive, negative) pairs; ties count one half."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def batchnorm_train_loops(x, gamma, beta, eps):
    """Per-channel batch statistics over (n, h, w); returns output, mean, biased var."""
    n, c, h, w = x.shape
    out = np.zeros_like(x)
    means, variances = [], []
    for ch in range(c):
        vals = [x[i, ch, a, b] for i in range(n) for a in range(h) for b in range(w)]
        mean = math.fsum(vals) / len(vals)
        var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
        means.append(mean)
        variances.append(var)
        out[:, ch] = (x[:, ch] - mean) / math.sqrt(var + eps) * gamma[ch] + beta[ch]
    return out, np.array(means), np.array(variances)


def adam_scalar(p, grads, lr, wd=0.0, b1=0.9, b2=0.999, eps=1e-8):
    """Apply Adam to one scalar for a sequence of raw gradients; returns (p, m, v) history."""
    m = v = 0.0
    history = []
    for t, g in enumerate(grads, 1):
        g = g + wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        history.append((p, m, v))
    return history


def weighted_mean(values, weights):
    total = sum(weights)
    return sum(v * w for v, w in zip(values, weights)) / total


def rudy_loops(nets, width, height):
    grid = [[0.0] * width for _ in range(height)]
    for x0, y0, x1, y1 in nets:
        bw, bh = max(x1 - x0, 1), max(y1 - y0, 1)
        x1, y1 = x0 + bw, y0 + bh
        for yy in range(max(y0, 0), min(y1, height)):
            for xx in range(max(x0, 0), min(x1, width)):
                grid[yy][xx] += (bw + bh) / (bw * bh)
    return np.array(grid)
