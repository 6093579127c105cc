"""Forward and backward kernels for every layer kind the two architectures use.

Tensors are ``numpy.float32`` arrays laid out channels-first:
``(batch, channels, H, W)`` for 2D and ``(batch, channels, D, H, W)`` for 3D.
Backward passes are written by hand per layer; there is no autograd tape.

The ``*_cm`` variants take channel-major ``(channels, batch, ...)`` arrays.
Models run their convolutional stack in that layout because the unfolded
matmul produces it directly, which avoids a transpose per layer. Pooling and
activations only touch the trailing spatial axes and work in either layout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import DimensionError, ValidationError

DTYPE = np.float32


class LayerKind(str, Enum):
    CONV2D = "Conv2D"
    CONV3D = "Conv3D"
    MAXPOOL2D = "MaxPool2D"
    MAXPOOL3D = "MaxPool3D"
    RELU = "ReLU"
    FLATTEN = "Flatten"
    DENSE = "Dense"
    DROPOUT = "Dropout"
    SOFTMAX_CE = "SoftmaxCE"


CONV_KINDS = (LayerKind.CONV2D, LayerKind.CONV3D)
POOL_KINDS = (LayerKind.MAXPOOL2D, LayerKind.MAXPOOL3D)


@dataclass
class Layer:
    """One entry of a layer stack: its kind, learnable params and fixed attributes."""

    kind: LayerKind
    params: dict[str, np.ndarray] = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)

    @property
    def spatial_rank(self) -> int:
        if self.kind in (LayerKind.CONV3D, LayerKind.MAXPOOL3D):
            return 3
        return 2


def _as_tuple(value, rank):
    if isinstance(value, int):
        return (value,) * rank
    value = tuple(int(v) for v in value)
    if len(value) != rank:
        raise ValidationError(f"expected {rank} values, got {value}")
    return value


def conv_layer(in_channels, out_channels, kernel, stride=1, padding=0, rank=2) -> Layer:
    """Create a convolution layer with zero-initialised parameters."""
    kernel = _as_tuple(kernel, rank)
    kind = LayerKind.CONV2D if rank == 2 else LayerKind.CONV3D
    return Layer(
        kind,
        params={
            "weight": np.zeros((out_channels, in_channels) + kernel, dtype=DTYPE),
            "bias": np.zeros(out_channels, dtype=DTYPE),
        },
        hyper={
            "kernel": kernel,
            "stride": _as_tuple(stride, rank),
            "padding": _as_tuple(padding, rank),
        },
    )


def maxpool_layer(window, rank=2) -> Layer:
    """Non-overlapping max pool (stride equals the window); trailing remainders are dropped."""
    window = _as_tuple(window, rank)
    kind = LayerKind.MAXPOOL2D if rank == 2 else LayerKind.MAXPOOL3D
    return Layer(kind, hyper={"window": window})


def dense_layer(in_features, out_features) -> Layer:
    return Layer(
        LayerKind.DENSE,
        params={
            "weight": np.zeros((out_features, in_features), dtype=DTYPE),
            "bias": np.zeros(out_features, dtype=DTYPE),
        },
    )


def dropout_layer(p) -> Layer:
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout probability must lie in [0, 1), got {p}")
    return Layer(LayerKind.DROPOUT, hyper={"p": float(p)})


def relu_layer() -> Layer:
    return Layer(LayerKind.RELU)


def flatten_layer() -> Layer:
    return Layer(LayerKind.FLATTEN)


def fan_in(layer: Layer) -> int:
    w = layer.params["weight"]
    return int(np.prod(w.shape[1:]))


def init_uniform(layer: Layer, rng: np.random.Generator) -> None:
    """Fill weight and bias uniformly in +-sqrt(1/fan_in)."""
    bound = math.sqrt(1.0 / fan_in(layer))
    for name in ("weight", "bias"):
        p = layer.params[name]
        layer.params[name] = rng.uniform(-bound, bound, size=p.shape).astype(DTYPE)


# ---------------------------------------------------------------------------
# Convolution


def conv_output_shape(spatial, kernel, stride, padding):
    return tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(spatial, kernel, stride, padding))


def _check_conv_input(x: np.ndarray, layer: Layer):
    rank = layer.spatial_rank
    if x.ndim != rank + 2:
        raise DimensionError(
            f"{layer.kind.value} expects a rank-{rank + 2} input, got shape {x.shape}", axis="rank"
        )
    w = layer.params["weight"]
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"{layer.kind.value} expects {w.shape[1]} input channels, got {x.shape[1]}", axis=1
        )
    h = layer.hyper
    for i, (n, k, p) in enumerate(zip(x.shape[2:], h["kernel"], h["padding"])):
        if n + 2 * p < k:
            raise DimensionError(
                f"spatial axis {2 + i} of size {n} (padding {p}) is smaller than kernel {k}",
                axis=2 + i,
            )


def _im2col(xc, kernel, stride, padding):
    """Unfold a channel-major ``(C, N, *spatial)`` input into ``(C * prod(kernel), N * positions)``.

    Rows are ordered (channel, kernel offset) to match a reshaped kernel;
    columns are ordered (batch, output position).
    """
    rank = len(kernel)
    if any(padding):
        xc = np.pad(xc, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    c, n = xc.shape[:2]
    out = conv_output_shape(xc.shape[2:], kernel, stride, (0,) * rank)
    cols = np.empty((c,) + tuple(kernel) + (n,) + out, dtype=DTYPE)
    for offset in itertools.product(*(range(k) for k in kernel)):
        sl = tuple(slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(offset, stride, out))
        cols[(slice(None),) + offset] = xc[(slice(None), slice(None)) + sl]
    return cols.reshape(c * math.prod(kernel), n * math.prod(out)), out


def conv_forward_cm(xc: np.ndarray, layer: Layer):
    """Convolution on a channel-major input; returns ``(output, cols)`` both channel-major."""
    h = layer.hyper
    w = layer.params["weight"]
    cols, out = _im2col(xc, h["kernel"], h["stride"], h["padding"])
    y = w.reshape(w.shape[0], -1) @ cols
    y += layer.params["bias"][:, None]
    return y.reshape((w.shape[0], xc.shape[1]) + out), cols


def conv_backward_cm(in_shape_cm, layer: Layer, gc: np.ndarray, cols, need_input_grad=True):
    """Channel-major counterpart of :func:`conv_backward`."""
    h = layer.hyper
    kernel, stride, padding = h["kernel"], h["stride"], h["padding"]
    w = layer.params["weight"]
    out_channels = w.shape[0]
    g = gc.reshape(out_channels, -1)
    grads = {
        "weight": (g @ cols.T).reshape(w.shape),
        "bias": g.sum(axis=1),
    }
    if not need_input_grad:
        return None, grads
    c, n = in_shape_cm[:2]
    spatial = tuple(in_shape_cm[2:])
    out = gc.shape[2:]
    gcols = (w.reshape(out_channels, -1).T @ g).reshape((c,) + tuple(kernel) + (n,) + out)
    padded = tuple(s + 2 * p for s, p in zip(spatial, padding))
    gx = np.zeros((c, n) + padded, dtype=DTYPE)
    for offset in itertools.product(*(range(k) for k in kernel)):
        sl = tuple(slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(offset, stride, out))
        gx[(slice(None), slice(None)) + sl] += gcols[(slice(None),) + offset]
    if any(padding):
        crop = tuple(slice(p, p + s) for p, s in zip(padding, spatial))
        gx = np.ascontiguousarray(gx[(slice(None), slice(None)) + crop])
    return gx, grads


def conv_forward(x: np.ndarray, layer: Layer) -> np.ndarray:
    """Cross-correlate ``x`` with the layer kernel (no flip) and add the bias."""
    _check_conv_input(x, layer)
    y, _ = conv_forward_cm(x.swapaxes(0, 1), layer)
    return np.ascontiguousarray(y.swapaxes(0, 1))


def conv_backward(x, layer, grad_out, need_input_grad=True):
    """Gradients of a convolution w.r.t. its input, kernel and bias.

    Returns ``(grad_input, {"weight": ..., "bias": ...})``; ``grad_input`` is
    ``None`` when ``need_input_grad`` is false.
    """
    _check_conv_input(x, layer)
    h = layer.hyper
    w = layer.params["weight"]
    out = conv_output_shape(x.shape[2:], h["kernel"], h["stride"], h["padding"])
    expected = (x.shape[0], w.shape[0]) + out
    if grad_out.shape != expected:
        raise DimensionError(f"grad_out shape {grad_out.shape} != forward output {expected}")
    xc = x.swapaxes(0, 1)
    cols, _ = _im2col(xc, h["kernel"], h["stride"], h["padding"])
    gc = np.ascontiguousarray(grad_out.swapaxes(0, 1))
    gx, grads = conv_backward_cm(xc.shape, layer, gc, cols, need_input_grad)
    if gx is not None:
        gx = np.ascontiguousarray(gx.swapaxes(0, 1))
    return gx, grads


# ---------------------------------------------------------------------------
# Max pooling
#
# Windows are non-overlapping (stride == window). The max is taken one axis at
# a time; each stage records which of the k slots won, and backward replays
# the stages in reverse to route the gradient to a single winning element.


def pool_output_shape(spatial, window, stride=None):
    stride = window if stride is None else stride
    return tuple((n - k) // s + 1 for n, k, s in zip(spatial, window, stride))


def _check_pool_input(x, layer):
    rank = layer.spatial_rank
    if x.ndim != rank + 2:
        raise DimensionError(
            f"{layer.kind.value} expects a rank-{rank + 2} input, got shape {x.shape}", axis="rank"
        )
    for i, (n, k) in enumerate(zip(x.shape[2:], layer.hyper["window"])):
        if k > n:
            raise DimensionError(f"pool window {k} exceeds axis {2 + i} of size {n}", axis=2 + i)


def maxpool_forward(x: np.ndarray, layer: Layer):
    """Window max. Returns ``(output, argmax)``.

    ``argmax`` holds one array per spatial axis giving the winning slot of
    that reduction stage (bool for a window of 2, uint8 otherwise, None for
    a window of 1); :func:`maxpool_backward` consumes it.
    """
    _check_pool_input(x, layer)
    window = layer.hyper["window"]
    out = pool_output_shape(x.shape[2:], window)
    x = x[(slice(None), slice(None)) + tuple(slice(0, m * k) for m, k in zip(out, window))]
    choices = []
    for axis, (m, k) in enumerate(zip(out, window), start=2):
        if k == 1:
            choices.append(None)
            continue
        split = x.reshape(x.shape[:axis] + (m, k) + x.shape[axis + 1 :])
        lead = (slice(None),) * (axis + 1)
        first, second = split[lead + (0,)], split[lead + (1,)]
        choice = np.greater(second, first)
        best = np.maximum(first, second)
        if k > 2:
            choice = choice.view(np.uint8)
            for j in range(2, k):
                cand = split[lead + (j,)]
                np.putmask(choice, cand > best, j)
                np.maximum(best, cand, out=best)
        choices.append(choice)
        x = best
    return np.ascontiguousarray(x), choices


def maxpool_backward(input_shape, layer: Layer, argmax, grad_out: np.ndarray):
    """Route each output gradient to the input element that won its window."""
    window = layer.hyper["window"]
    out = pool_output_shape(input_shape[2:], window)
    if grad_out.shape != tuple(input_shape[:2]) + out:
        raise DimensionError(f"grad_out shape {grad_out.shape} != pooled shape {tuple(input_shape[:2]) + out}")
    g = grad_out
    for axis in range(len(window) + 1, 1, -1):
        k, choice = window[axis - 2], argmax[axis - 2]
        if k == 1:
            continue
        expanded = np.empty(g.shape[:axis] + (g.shape[axis], k) + g.shape[axis + 1 :], dtype=DTYPE)
        lead = (slice(None),) * (axis + 1)
        if choice.dtype == np.bool_:
            np.multiply(g, choice, out=expanded[lead + (1,)])
            np.multiply(g, ~choice, out=expanded[lead + (0,)])
        else:
            for j in range(k):
                np.multiply(g, choice == j, out=expanded[lead + (j,)])
        g = expanded.reshape(g.shape[:axis] + (g.shape[axis] * k,) + g.shape[axis + 1 :])
    if g.shape != tuple(input_shape):
        full = np.zeros(input_shape, dtype=DTYPE)
        full[tuple(slice(0, s) for s in g.shape)] = g
        g = full
    return g


# ---------------------------------------------------------------------------
# Dense, activations, dropout


def dense_forward(x: np.ndarray, layer: Layer) -> np.ndarray:
    w = layer.params["weight"]
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"dense layer expects (batch, {w.shape[1]}), got {x.shape}", axis=1)
    return x @ w.T + layer.params["bias"]


def dense_backward(x, layer, grad_out, need_input_grad=True):
    w = layer.params["weight"]
    if grad_out.shape != (x.shape[0], w.shape[0]):
        raise DimensionError(f"grad_out shape {grad_out.shape} != ({x.shape[0]}, {w.shape[0]})")
    grads = {
        "weight": grad_out.T @ x,
        "bias": grad_out.sum(axis=0, dtype=np.float64).astype(DTYPE),
    }
    gx = grad_out @ w if need_input_grad else None
    return gx, grads


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.multiply(grad_out, x > 0, dtype=grad_out.dtype)


def dropout(x: np.ndarray, p: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout. Returns ``(output, scale_mask)``; the mask is None when inactive."""
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    if rng is None:
        raise ValidationError("dropout in training mode needs a random generator")
    keep = rng.random(x.shape, dtype=np.float32) >= p
    mask = keep.astype(DTYPE) * DTYPE(1.0 / (1.0 - p))
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


# ---------------------------------------------------------------------------
# Loss


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} do not pair up")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValidationError(f"labels must lie in [0, {k}), got {np.unique(labels)}")
    n = logits.shape[0]
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    probs = np.exp(z - lse[:, None])
    probs[rows, labels] -= 1.0
    return loss, (probs / n).astype(DTYPE)
