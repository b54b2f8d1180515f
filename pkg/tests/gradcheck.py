"""Gradient-check helper shared by the unit and acceptance suites."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from flroute import nn


class GradCheck(NamedTuple):
    max_rel_live: float
    max_abs_zero_analytic: float
    max_abs_zero_numeric: float
    checked: int
    kinks: int
    coarse: int


def structural_zeros(spec: nn.ModelSpec, mode: str) -> set[str]:
    """Conv biases whose effect a following train-mode batch norm removes exactly."""
    if mode != "train":
        return set()
    out = set()
    for layer, nxt in zip(spec.layers, spec.layers[1:]):
        if layer.kind == "conv2d" and nxt.kind == "batchnorm":
            out.add(f"{layer.name}.bias")
    return out


def check(spec, params, anchor, batch, mu, mode="train", per_block=None, seed=0, eps=1e-5):
    """Compare analytic and central-difference gradients.

    ``per_block=None`` checks every trainable coordinate; otherwise at most
    that many seeded coordinates per block (small blocks are checked whole).
    "Live" excludes structurally-zero coordinates, whose relative error is pure
    roundoff over a zero denominator. A failing coordinate is re-differenced
    once: 100x finer when its one-sided slopes show a ReLU kink inside the step
    (counted in ``kinks``), 4x coarser when they show smooth curvature and the
    miss is roundoff (counted in ``coarse``).
    """
    grads = nn.compute_gradients(spec, params, anchor, batch, mu, mode=mode)
    zeros = structural_zeros(spec, mode)
    rng = np.random.default_rng(seed)
    rel_live, zero_a, zero_n, count, kinks, coarse = 0.0, 0.0, 0.0, 0, 0, 0
    for name in params.blocks:
        if name not in params.trainable:
            continue
        size = params[name].size
        idx = np.arange(size) if per_block is None or size <= per_block else rng.choice(size, per_block, False)
        for i in idx:
            ana = grads[name].ravel()[i]
            num, right, left = _coordinate_fd(spec, params, anchor, batch, mu, mode, name, int(i), eps)
            # a failure is re-measured once; a retry changes the step, never the bound.
            # one kink inside the step makes the one-sided slopes jump by twice the central error,
            # smooth curvature by far more (the miss is then roundoff), a wrong gradient by far less
            miss, jump = abs(ana - num), abs(right - left)
            if name not in zeros and _rel(ana, num) > 1e-4 and jump >= miss:
                kinked = jump <= 4 * miss
                step = eps * 1e-2 if kinked else eps * 4
                num = _coordinate_fd(spec, params, anchor, batch, mu, mode, name, int(i), step)[0]
                kinks += kinked
                coarse += not kinked
            count += 1
            if name in zeros:
                zero_a, zero_n = max(zero_a, abs(ana)), max(zero_n, abs(num))
            else:
                rel_live = max(rel_live, _rel(ana, num))
    return GradCheck(rel_live, zero_a, zero_n, count, kinks, coarse)


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _coordinate_fd(spec, params, anchor, batch, mu, mode, name, i, eps):
    """Central, right and left difference quotients at coordinate ``i``."""
    orig = params.blocks[name].ravel()[i]
    probe = params.copy()
    flat = probe.blocks[name].reshape(-1)

    def loss_at(v):
        flat[i] = v
        return nn.fedprox_loss(spec, probe, anchor, batch, mu, mode=mode)

    up, mid, down = loss_at(orig + eps), loss_at(orig), loss_at(orig - eps)
    return (up - down) / (2 * eps), (up - mid) / eps, (mid - down) / eps
