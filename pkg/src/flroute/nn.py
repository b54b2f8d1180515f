"""Small differentiable convolution engine used by every training path.

Grids are float64 numpy arrays laid out as ``(channels, height, width)``;
batches add a leading sample axis. Only three layer kinds exist (same-padded
conv2d, ReLU, batch normalization), which is all the model presets need, so
backpropagation is written out by hand per layer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from flroute.errors import ConfigurationError, DegenerateBatchError

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8

LAYER_KINDS = ("conv2d", "relu", "batchnorm")


@dataclass(frozen=True)
class Layer:
    kind: str
    name: str
    kernel_size: int = 0
    in_channels: int = 0
    out_channels: int = 0


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer list for a fully convolutional grid-to-grid model."""

    name: str
    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ConfigurationError(f"model {self.name!r} has no layers")
        channels = None
        seen = set()
        for layer in self.layers:
            if layer.kind not in LAYER_KINDS:
                raise ConfigurationError(f"unknown layer kind {layer.kind!r}")
            if layer.name in seen:
                raise ConfigurationError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)
            if layer.kind == "conv2d":
                if layer.kernel_size < 1 or layer.kernel_size % 2 == 0:
                    raise ConfigurationError(
                        f"{layer.name}: kernel size must be odd, got {layer.kernel_size}"
                    )
                if layer.in_channels < 1 or layer.out_channels < 1:
                    raise ConfigurationError(f"{layer.name}: channel counts must be >= 1")
                if channels is not None and layer.in_channels != channels:
                    raise ConfigurationError(
                        f"{layer.name}: expects {layer.in_channels} channels, "
                        f"previous layer produces {channels}"
                    )
                channels = layer.out_channels
            elif layer.kind == "batchnorm":
                if channels is None or layer.out_channels not in (0, channels):
                    raise ConfigurationError(f"{layer.name}: batchnorm must follow a conv")
        if self.layers[0].kind != "conv2d":
            raise ConfigurationError("first layer must be a conv2d")
        if channels != 1:
            raise ConfigurationError("final conv must produce exactly one channel")

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def has_batchnorm(self) -> bool:
        return any(layer.kind == "batchnorm" for layer in self.layers)

    @property
    def receptive_field(self) -> int:
        return 1 + sum(l.kernel_size - 1 for l in self.layers if l.kind == "conv2d")

    def conv_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.kind == "conv2d"]

    def block_shapes(self) -> dict[str, tuple[tuple[int, ...], bool]]:
        """Map block name -> (shape, trainable), in canonical order."""
        shapes: dict[str, tuple[tuple[int, ...], bool]] = {}
        channels = self.in_channels
        for layer in self.layers:
            if layer.kind == "conv2d":
                k = layer.kernel_size
                shapes[f"{layer.name}.weight"] = ((layer.out_channels, layer.in_channels, k, k), True)
                shapes[f"{layer.name}.bias"] = ((layer.out_channels,), True)
                channels = layer.out_channels
            elif layer.kind == "batchnorm":
                shapes[f"{layer.name}.gamma"] = ((channels,), True)
                shapes[f"{layer.name}.beta"] = ((channels,), True)
                shapes[f"{layer.name}.running_mean"] = ((channels,), False)
                shapes[f"{layer.name}.running_var"] = ((channels,), False)
        return shapes

    def layer_of_block(self, block: str) -> str:
        return block.rsplit(".", 1)[0]

    def describe(self) -> str:
        parts = [self.name]
        for l in self.layers:
            parts.append(f"{l.kind}:{l.name}:{l.kernel_size}:{l.in_channels}:{l.out_channels}")
        return "|".join(parts)

    def digest(self) -> bytes:
        """Stable 8-byte hash identifying this architecture in artifacts."""
        return hashlib.sha256(self.describe().encode()).digest()[:8]


def flnet(in_channels: int = 4, filters: int = 64, kernel_size: int = 9) -> ModelSpec:
    """Two stacked same-padded convolutions with a ReLU in between, no batch norm."""
    return ModelSpec(
        "flnet",
        (
            Layer("conv2d", "input_conv", kernel_size, in_channels, filters),
            Layer("relu", "input_relu"),
            Layer("conv2d", "output_conv", kernel_size, filters, 1),
        ),
    )


def deep_bn(in_channels: int = 4, width: int = 32, depth: int = 6, kernel_size: int = 3) -> ModelSpec:
    """Deeper conv stack with batch norm + ReLU after every hidden conv."""
    if depth < 2:
        raise ConfigurationError("deep_bn needs depth >= 2")
    layers: list[Layer] = []
    channels = in_channels
    for i in range(1, depth):
        layers.append(Layer("conv2d", f"conv{i}", kernel_size, channels, width))
        layers.append(Layer("batchnorm", f"bn{i}"))
        layers.append(Layer("relu", f"relu{i}"))
        channels = width
    layers.append(Layer("conv2d", f"conv{depth}", kernel_size, channels, 1))
    return ModelSpec("deep_bn", tuple(layers))


PRESETS: dict[str, Callable[..., ModelSpec]] = {"flnet": flnet, "deep_bn": deep_bn}


def preset(name: str, in_channels: int) -> ModelSpec:
    try:
        return PRESETS[name](in_channels=in_channels)
    except KeyError:
        raise ConfigurationError(f"unknown model preset {name!r}") from None


class ParameterVector:
    """Named parameter blocks of one model.

    Trainable blocks are conv kernels/biases and batch-norm scale/shift;
    non-trainable blocks hold batch-norm running statistics. Arithmetic acts
    on every block so that aggregation also averages running statistics,
    while :meth:`sq_distance` (the proximal term) only looks at trainable ones.
    """

    __slots__ = ("blocks", "trainable")

    def __init__(self, blocks: dict[str, np.ndarray], trainable: Iterable[str]):
        self.blocks = dict(blocks)
        self.trainable = frozenset(trainable)

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ParameterVector":
        shapes = spec.block_shapes()
        return cls(
            {name: np.zeros(shape) for name, (shape, _) in shapes.items()},
            [name for name, (_, t) in shapes.items() if t],
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks.values())

    def copy(self) -> "ParameterVector":
        return ParameterVector({k: v.copy() for k, v in self.blocks.items()}, self.trainable)

    def _check(self, other: "ParameterVector") -> None:
        if list(self.blocks) != list(other.blocks) or any(
            self.blocks[k].shape != other.blocks[k].shape for k in self.blocks
        ):
            raise ConfigurationError("parameter vectors have different block structure")

    def same_structure(self, other: "ParameterVector") -> bool:
        try:
            self._check(other)
        except ConfigurationError:
            return False
        return True

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParameterVector":
        return ParameterVector({k: fn(v) for k, v in self.blocks.items()}, self.trainable)

    def __add__(self, other: "ParameterVector") -> "ParameterVector":
        self._check(other)
        return ParameterVector({k: v + other.blocks[k] for k, v in self.blocks.items()}, self.trainable)

    def __sub__(self, other: "ParameterVector") -> "ParameterVector":
        self._check(other)
        return ParameterVector({k: v - other.blocks[k] for k, v in self.blocks.items()}, self.trainable)

    def __mul__(self, scale: float) -> "ParameterVector":
        return self.map(lambda v: v * scale)

    __rmul__ = __mul__

    def sq_distance(self, other: "ParameterVector") -> float:
        self._check(other)
        total = 0.0
        for k in self.blocks:
            if k in self.trainable:
                d = self.blocks[k] - other.blocks[k]
                total += float(np.dot(d.ravel(), d.ravel()))
        return total

    def flat(self, trainable_only: bool = False) -> np.ndarray:
        names = [k for k in self.blocks if not trainable_only or k in self.trainable]
        if not names:
            return np.zeros(0)
        return np.concatenate([self.blocks[k].ravel() for k in names])

    def with_flat(self, values: np.ndarray, trainable_only: bool = False) -> "ParameterVector":
        out = self.copy()
        pos = 0
        for k, v in out.blocks.items():
            if trainable_only and k not in self.trainable:
                continue
            out.blocks[k] = np.asarray(values[pos : pos + v.size], dtype=np.float64).reshape(v.shape).copy()
            pos += v.size
        if pos != len(values):
            raise ConfigurationError(f"flat vector has {len(values)} values, expected {pos}")
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.blocks.values())

    def bit_equal(self, other: "ParameterVector") -> bool:
        return self.same_structure(other) and all(
            np.array_equal(v, other.blocks[k]) for k, v in self.blocks.items()
        ) and all(v.tobytes() == other.blocks[k].tobytes() for k, v in self.blocks.items())

    def __repr__(self) -> str:
        return f"ParameterVector({len(self.blocks)} blocks, {self.size} values)"


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ParameterVector:
    """He-normal conv weights, zero biases, identity batch norm."""
    params = ParameterVector.zeros(spec)
    for name, (shape, _) in spec.block_shapes().items():
        kind = name.rsplit(".", 1)[1]
        if kind == "weight":
            fan_in = shape[1] * shape[2] * shape[3]
            params.blocks[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif kind in ("gamma", "running_var"):
            params.blocks[name] = np.ones(shape)
    return params


# -- layers -----------------------------------------------------------------


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ConfigurationError(f"expected (c,h,w) or (n,c,h,w) grid, got shape {x.shape}")
    return x, False


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # rows ordered channel-major then kernel row-major; columns ordered (n, y, x)
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # n, c, h, w, k, k
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * h * w)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' convolution (cross-correlation, stride 1).

    Products are accumulated one at a time, channel-major then kernel
    row-major, and the bias is added last, so every output value is rounded
    exactly like a direct nested-loop sum. The training path uses a faster
    matrix lowering that agrees to ~1e-12.
    """
    x, single = _as_batch(x)
    o, c, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"kernel must be square and odd, got {weight.shape[2:]}")
    if x.shape[1] != c:
        raise ConfigurationError(f"conv expects {c} input channels, got {x.shape[1]}")
    n, _, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    acc = np.zeros((n, o, h, w))
    for ch in range(c):
        for i in range(k):
            for j in range(k):
                acc += weight[None, :, ch, i, j, None, None] * xp[:, None, ch, i : i + h, j : j + w]
    out = acc + bias.reshape(1, o, 1, 1)
    return out[0] if single else out


def _conv2d(x, weight, bias):
    """Returns (output, cache). Picks the cheaper of two lowering strategies."""
    x, single = _as_batch(x)
    o, c, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"kernel must be square and odd, got {weight.shape[2:]}")
    if x.shape[1] != c:
        raise ConfigurationError(f"conv expects {c} input channels, got {x.shape[1]}")
    n, _, h, w = x.shape
    if o < c and k > 1:
        out, cache = _conv2d_shifted(x, weight, bias)
    else:
        cols = _im2col(x, k)
        out = weight.reshape(o, -1) @ cols + bias[:, None]
        out = np.ascontiguousarray(out.reshape(o, n, h, w).transpose(1, 0, 2, 3))
        cache = ("cols", cols)
    return (out[0] if single else out), cache


def _conv2d_shifted(x, weight, bias):
    # few output channels: contract channels first on the padded input, then
    # sum the k*k shifted partial maps; avoids materializing a c*k*k column matrix
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    hp, wp = h + 2 * p, w + 2 * p
    xmat = np.ascontiguousarray(xp.transpose(1, 0, 2, 3)).reshape(c, n * hp * wp)
    wmat = weight.transpose(0, 2, 3, 1).reshape(o * k * k, c)
    partial = (wmat @ xmat).reshape(o, k, k, n, hp, wp)
    out = np.zeros((o, n, h, w))
    for i in range(k):
        for j in range(k):
            out += partial[:, i, j, :, i : i + h, j : j + w]
    out += bias.reshape(o, 1, 1, 1)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)), ("shifted", xmat)


def _conv2d_backward(dout, cache, weight, need_input_grad):
    kind, data = cache
    n, o, h, w = dout.shape
    if kind == "shifted":
        return _conv2d_shifted_backward(dout, data, weight, need_input_grad)
    cols = data
    dmat = dout.transpose(1, 0, 2, 3).reshape(o, n * h * w)
    dweight = (dmat @ cols.T).reshape(weight.shape)
    dbias = dmat.sum(axis=1)
    dx = None
    if need_input_grad:
        # input gradient is a same-padded conv with the flipped, transposed kernel
        flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx, _ = _conv2d(dout, flipped, np.zeros(flipped.shape[0]))
    return dx, dweight, dbias


def _conv2d_shifted_backward(dout, xmat, weight, need_input_grad):
    n, o, h, w = dout.shape
    _, c, k, _ = weight.shape
    p = k // 2
    hp, wp = h + 2 * p, w + 2 * p
    d = dout.transpose(1, 0, 2, 3)
    shifted = np.zeros((o, k, k, n, hp, wp))
    for i in range(k):
        for j in range(k):
            shifted[:, i, j, :, i : i + h, j : j + w] = d
    smat = shifted.reshape(o * k * k, n * hp * wp)
    dweight = (smat @ xmat.T).reshape(o, k, k, c).transpose(0, 3, 1, 2)
    dbias = d.sum(axis=(1, 2, 3))
    dx = None
    if need_input_grad:
        wmat = weight.transpose(0, 2, 3, 1).reshape(o * k * k, c)
        dxp = (wmat.T @ smat).reshape(c, n, hp, wp)
        dx = np.ascontiguousarray(dxp[:, :, p : p + h, p : p + w].transpose(1, 0, 2, 3))
    return dx, np.ascontiguousarray(dweight), dbias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON
    mode: str = "train"

    def __post_init__(self) -> None:
        if not 0.0 < self.momentum < 1.0:
            raise ConfigurationError("batch norm momentum must be in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigurationError("batch norm epsilon must be positive")
        if self.mode not in ("train", "eval"):
            raise ConfigurationError(f"unknown batch norm mode {self.mode!r}")

    @classmethod
    def fresh(cls, channels: int, **kw) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels), np.ones(channels), np.zeros(channels), **kw)


def batchnorm_forward(batch: Sequence[np.ndarray] | np.ndarray, state: BatchNormState):
    """Per-channel normalization of a batch of grids.

    Returns ``(normalized_batch, new_state)``. Train mode uses the batch
    statistics and folds them into the running estimates (the running
    variance uses the unbiased batch variance); eval mode leaves the state
    untouched.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[0] == 0:
        raise ConfigurationError("batchnorm expects a non-empty (n,c,h,w) batch")
    out, _, new_mean, new_var = _batchnorm(
        x, state.gamma, state.beta, state.running_mean, state.running_var,
        state.mode == "train", state.momentum, state.epsilon,
    )
    return out, replace(state, running_mean=new_mean, running_var=new_var)


def _batchnorm(x, gamma, beta, running_mean, running_var, train, momentum=BN_MOMENTUM, eps=BN_EPSILON):
    shape = (1, -1, 1, 1)
    if train:
        if x.shape[0] < 2:
            raise DegenerateBatchError("train-mode batch norm needs a batch of at least 2 grids")
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        new_mean = (1 - momentum) * running_mean + momentum * mean
        new_var = (1 - momentum) * running_var + momentum * var * (m / (m - 1))
        cache = (xhat, inv_std, gamma)
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(shape)) * inv_std.reshape(shape)
        new_mean, new_var = running_mean, running_var
        cache = (xhat, inv_std, gamma)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out, cache, new_mean, new_var


def _batchnorm_backward(dout, cache, train):
    xhat, inv_std, gamma = cache
    shape = (1, -1, 1, 1)
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(shape)
    if not train:
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (inv_std.reshape(shape) / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3)).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
    )
    return dx, dgamma, dbeta


# -- whole model ------------------------------------------------------------


def _check_params(spec: ModelSpec, params: ParameterVector) -> None:
    shapes = spec.block_shapes()
    if list(shapes) != list(params.blocks) or any(
        params.blocks[k].shape != shape for k, (shape, _) in shapes.items()
    ):
        raise ConfigurationError(f"parameters do not match model {spec.name!r}")


def _forward(spec: ModelSpec, params: ParameterVector, x: np.ndarray, train: bool):
    """Run the layer stack; returns scores (n,h,w), per-layer caches, new buffers."""
    _check_params(spec, params)
    if x.shape[1] != spec.in_channels:
        raise ConfigurationError(
            f"model {spec.name!r} expects {spec.in_channels} channels, input has {x.shape[1]}"
        )
    caches = []
    buffers: dict[str, np.ndarray] = {}
    h = x
    for layer in spec.layers:
        if layer.kind == "conv2d":
            w, b = params[f"{layer.name}.weight"], params[f"{layer.name}.bias"]
            h, cache = _conv2d(h, w, b)
            caches.append(cache)
        elif layer.kind == "relu":
            caches.append(h > 0)
            h = np.maximum(h, 0.0)
        else:
            n = layer.name
            h, cache, mean, var = _batchnorm(
                h, params[f"{n}.gamma"], params[f"{n}.beta"],
                params[f"{n}.running_mean"], params[f"{n}.running_var"], train,
            )
            buffers[f"{n}.running_mean"] = mean
            buffers[f"{n}.running_var"] = var
            caches.append(cache)
    return h[:, 0], caches, buffers


def _backward(spec: ModelSpec, params: ParameterVector, caches, dscores: np.ndarray, train: bool):
    grads = ParameterVector.zeros(spec)
    d = dscores[:, None]
    last = len(spec.layers) - 1
    for idx in range(last, -1, -1):
        layer, cache = spec.layers[idx], caches[idx]
        if layer.kind == "conv2d":
            w = params[f"{layer.name}.weight"]
            d, dw, db = _conv2d_backward(d, cache, w, need_input_grad=idx > 0)
            grads.blocks[f"{layer.name}.weight"] = dw
            grads.blocks[f"{layer.name}.bias"] = db
        elif layer.kind == "relu":
            d = d * cache
        else:
            d, dg, dbeta = _batchnorm_backward(d, cache, train)
            grads.blocks[f"{layer.name}.gamma"] = dg
            grads.blocks[f"{layer.name}.beta"] = dbeta
    return grads


def model_forward(spec: ModelSpec, params: ParameterVector, x: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Score grid(s) for one ``(c,h,w)`` grid or an ``(n,c,h,w)`` batch.

    ``mode="train"`` normalizes batch-norm layers with batch statistics but
    does not report updated running statistics; use :func:`train_forward`
    for that.
    """
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    xb, single = _as_batch(x)
    scores, _, _ = _forward(spec, params, xb, mode == "train")
    return scores[0] if single else scores


def train_forward(spec: ModelSpec, params: ParameterVector, x: np.ndarray) -> tuple[np.ndarray, ParameterVector]:
    """Train-mode forward that also returns params with refreshed running statistics."""
    xb, _ = _as_batch(x)
    scores, _, buffers = _forward(spec, params, xb, True)
    out = params.copy()
    out.blocks.update(buffers)
    return scores, out


def _stack(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) and batch[0].ndim == 4:
        x, y = batch
    else:
        batch = list(batch)
        if not batch:
            raise ConfigurationError("empty batch")
        x = np.stack([np.asarray(s[0], dtype=np.float64) for s in batch])
        y = np.stack([np.asarray(s[1], dtype=np.float64) for s in batch])
    if len(x) == 0:
        raise ConfigurationError("empty batch")
    if y.shape != (x.shape[0], x.shape[2], x.shape[3]):
        raise ConfigurationError(f"label grids {y.shape} do not match feature grids {x.shape}")
    return x, y.astype(np.float64, copy=False)


@dataclass
class LossResult:
    loss: float
    data_loss: float
    grads: ParameterVector | None = None
    params: ParameterVector | None = field(default=None, repr=False)


def fedprox_loss(spec: ModelSpec, params: ParameterVector, anchor: ParameterVector, batch, mu: float,
                 mode: str = "train") -> float:
    """Mean per-sample MSE of raw scores against labels plus ``mu * ||params - anchor||^2``.

    ``batch`` is a sequence of ``(features, labels)`` pairs or a pre-stacked
    ``(x, y)`` tuple of arrays.
    """
    return loss_and_grad(spec, params, anchor, batch, mu, mode=mode, want_grad=False).loss


def compute_gradients(spec: ModelSpec, params: ParameterVector, anchor: ParameterVector, batch, mu: float,
                      mode: str = "train") -> ParameterVector:
    return loss_and_grad(spec, params, anchor, batch, mu, mode=mode).grads


def loss_and_grad(spec, params, anchor, batch, mu, mode="train", want_grad=True) -> LossResult:
    if mu < 0:
        raise ConfigurationError("mu must be >= 0")
    anchor_ok = params.same_structure(anchor)
    if not anchor_ok:
        raise ConfigurationError("anchor does not match parameter structure")
    x, y = _stack(batch)
    train = mode == "train" and spec.has_batchnorm
    scores, caches, buffers = _forward(spec, params, x, train)
    diff = scores - y
    data_loss = float(np.mean(diff * diff))
    prox = params.sq_distance(anchor) if mu else 0.0
    result = LossResult(data_loss + mu * prox, data_loss)
    if want_grad:
        grads = _backward(spec, params, caches, (2.0 / diff.size) * diff, train)
        if mu:
            for k in grads.trainable:
                grads.blocks[k] = grads.blocks[k] + (2.0 * mu) * (params.blocks[k] - anchor.blocks[k])
        result.grads = grads
        new = params.copy()
        new.blocks.update(buffers)
        result.params = new
    return result


def finite_diff_gradient(loss_fn: Callable[[ParameterVector], float] | Callable[[np.ndarray], float],
                         params, epsilon: float = 1e-5, trainable_only: bool = True):
    """Central-difference gradient, one coordinate at a time.

    ``params`` may be a ParameterVector (returns one) or a plain array.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if isinstance(params, ParameterVector):
        flat = params.flat(trainable_only)
        g = _fd(lambda v: loss_fn(params.with_flat(v, trainable_only)), flat, epsilon)
        return params.map(np.zeros_like).with_flat(g, trainable_only)
    return _fd(loss_fn, np.asarray(params, dtype=np.float64), epsilon)


def _fd(fn, p, eps):
    p = p.astype(np.float64).copy()
    g = np.zeros_like(p)
    for i in range(p.size):
        orig = p.flat[i]
        p.flat[i] = orig + eps
        up = fn(p.copy())
        p.flat[i] = orig - eps
        down = fn(p.copy())
        p.flat[i] = orig
        g.flat[i] = (up - down) / (2 * eps)
    return g


@dataclass
class OptimizerState:
    m: ParameterVector
    v: ParameterVector
    step: int = 0
    beta1: float = ADAM_BETAS[0]
    beta2: float = ADAM_BETAS[1]
    epsilon: float = ADAM_EPSILON

    @classmethod
    def fresh(cls, params: ParameterVector) -> "OptimizerState":
        zeros = params.map(np.zeros_like)
        return cls(zeros, zeros.copy())

    def copy(self) -> "OptimizerState":
        return replace(self, m=self.m.copy(), v=self.v.copy())


def adam_step(params: ParameterVector, grads: ParameterVector, state: OptimizerState,
              learning_rate: float, weight_decay: float = 0.0) -> tuple[ParameterVector, OptimizerState]:
    """One bias-corrected Adam update; weight decay enters as ``+ weight_decay * params`` in the gradient.

    Non-trainable blocks (running statistics) pass through untouched.
    """
    params._check(grads)
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_p, new_m, new_v = params.copy(), state.m.copy(), state.v.copy()
    for k in params.trainable:
        g = grads.blocks[k]
        if weight_decay:
            g = g + weight_decay * params.blocks[k]
        m = b1 * state.m.blocks[k] + (1.0 - b1) * g
        v = b2 * state.v.blocks[k] + (1.0 - b2) * (g * g)
        new_m.blocks[k] = m
        new_v.blocks[k] = v
        new_p.blocks[k] = params.blocks[k] - learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return new_p, replace(state, m=new_m, v=new_v, step=step)
