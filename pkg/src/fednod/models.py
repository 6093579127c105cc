"""The frame-level 2D-CNN (DDD-2D) and the clip-level 3D-CNN (DDD-3D).

Layer widths and kernel sizes are a small, CPU-friendly instantiation; the
exact figures of the original architectures are not published in text form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, IncompatibleWeightsError
from .nn import layers as L
from .nn.layers import DTYPE, Layer, LayerKind

NUM_CLASSES = 3
SUPPORTED_RESOLUTIONS = (64, 96, 160, 320)
DDD_2D = "DDD-2D"
DDD_3D = "DDD-3D"


@dataclass
class ModelWeights:
    """Ordered ``(layer_index, param_name, tensor)`` entries for one architecture."""

    arch_name: str
    entries: list[tuple[int, str, np.ndarray]] = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return [f"{i}.{n}" for i, n, _ in self.entries]

    @property
    def tensors(self) -> list[np.ndarray]:
        return [t for _, _, t in self.entries]

    def structure(self):
        return [(i, n, t.shape) for i, n, t in self.entries]

    def same_structure(self, other: ModelWeights) -> bool:
        return self.structure() == other.structure()

    def bit_equal(self, other: ModelWeights) -> bool:
        """Structural and bitwise equality (NaN payloads included)."""
        if not self.same_structure(other):
            return False
        return all(
            a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors, other.tensors)
        )

    def map(self, fn) -> ModelWeights:
        return ModelWeights(self.arch_name, [(i, n, fn(t)) for i, n, t in self.entries])


def output_shape(layer: Layer, in_shape: tuple) -> tuple:
    """Symbolic shape of one layer's output for a per-sample ``in_shape``."""
    kind = layer.kind
    if kind in L.CONV_KINDS:
        w = layer.params["weight"]
        rank = layer.spatial_rank
        if len(in_shape) != rank + 1:
            raise DimensionError(f"{kind.value} needs rank-{rank + 1} samples, got {in_shape}", axis="rank")
        if in_shape[0] != w.shape[1]:
            raise DimensionError(f"{kind.value} expects {w.shape[1]} channels, got {in_shape[0]}", axis=1)
        h = layer.hyper
        out = L.conv_output_shape(in_shape[1:], h["kernel"], h["stride"], h["padding"])
        if min(out) < 1:
            raise DimensionError(f"{kind.value} output collapses to {out}")
        return (w.shape[0],) + out
    if kind in L.POOL_KINDS:
        window = layer.hyper["window"]
        if len(in_shape) != len(window) + 1:
            raise DimensionError(f"{kind.value} needs rank-{len(window) + 1} samples, got {in_shape}", axis="rank")
        for i, (n, k) in enumerate(zip(in_shape[1:], window)):
            if k > n:
                raise DimensionError(f"pool window {k} exceeds axis {i + 2} of size {n}", axis=i + 2)
        return (in_shape[0],) + L.pool_output_shape(in_shape[1:], window)
    if kind == LayerKind.FLATTEN:
        return (math.prod(in_shape),)
    if kind == LayerKind.DENSE:
        w = layer.params["weight"]
        if in_shape != (w.shape[1],):
            raise DimensionError(f"dense layer expects ({w.shape[1]},), got {in_shape}", axis=1)
        return (w.shape[0],)
    return in_shape


@dataclass
class ModelSpec:
    """A built architecture: input shape plus an ordered, parameterised layer stack."""

    name: str
    input_shape: tuple
    layers: list[Layer]
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        shape = self.infer_shapes()[-1]
        if shape != (self.num_classes,):
            raise DimensionError(f"{self.name} ends in shape {shape}, expected ({self.num_classes},)")

    def infer_shapes(self) -> list[tuple]:
        shapes = [tuple(self.input_shape)]
        for layer in self.layers:
            shapes.append(output_shape(layer, shapes[-1]))
        return shapes

    def parameters(self) -> list[np.ndarray]:
        return [t for _, _, t in self.named_parameters()]

    def named_parameters(self):
        return [(i, name, p) for i, layer in enumerate(self.layers) for name, p in layer.params.items()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def set_parameters(self, tensors) -> None:
        it = iter(tensors)
        for layer in self.layers:
            for name in layer.params:
                layer.params[name] = next(it)

    # -- execution ---------------------------------------------------------

    def forward(self, x: np.ndarray, training: bool = False, rng=None, caches=None) -> np.ndarray:
        """Logits for a batch. Pass a list as ``caches`` to keep what backward needs."""
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[1:] != tuple(self.input_shape):
            raise DimensionError(f"{self.name} expects samples of shape {self.input_shape}, got {x.shape[1:]}")
        keep = caches is not None
        # channel-major (C, N, ...) until Flatten, (N, features) after it
        h = np.ascontiguousarray(x.swapaxes(0, 1))
        fresh = False  # whether h is an array this pass allocated and may overwrite
        for idx, layer in enumerate(self.layers):
            cache = {}
            kind = layer.kind
            if kind in L.CONV_KINDS:
                cache["in_shape"] = h.shape
                h, cols = L.conv_forward_cm(h, layer)
                if keep:
                    cache["cols"] = cols
                fresh = True
            elif kind in L.POOL_KINDS:
                cache["in_shape"] = h.shape
                h, cache["argmax"] = L.maxpool_forward(h, layer)
                cache["out"] = h
                fresh = True
            elif kind == LayerKind.RELU:
                h = np.maximum(h, 0, out=h) if fresh else L.relu(h)
                cache["out"] = h
                fresh = True
            elif kind == LayerKind.FLATTEN:
                cache["in_shape"] = h.shape
                h = np.ascontiguousarray(h.swapaxes(0, 1)).reshape(h.shape[1], -1)
                fresh = False
            elif kind == LayerKind.DENSE:
                cache["x"] = h
                h = L.dense_forward(h, layer)
                fresh = True
            elif kind == LayerKind.DROPOUT:
                h, cache["mask"] = L.dropout(h, layer.hyper["p"], rng, training)
                fresh = fresh and cache["mask"] is None
            else:
                raise ValueError(f"unsupported layer kind {kind}")
            if keep:
                caches.append(cache)
        return h

    def backward(self, caches, grad_logits: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients, ordered like :meth:`parameters`."""
        grads: dict[int, dict] = {}
        g = grad_logits
        layers = self.layers
        for idx in range(len(layers) - 1, -1, -1):
            layer, cache = layers[idx], caches[idx]
            kind = layer.kind
            if kind in L.CONV_KINDS:
                g, grads[idx] = L.conv_backward_cm(cache["in_shape"], layer, g, cache["cols"], idx > 0)
            elif kind in L.POOL_KINDS:
                if idx > 0 and layers[idx - 1].kind == LayerKind.RELU:
                    # a pooled value is positive iff its winning ReLU input was,
                    # so the ReLU mask can be applied before routing
                    g = g * (cache["out"] > 0)
                g = L.maxpool_backward(cache["in_shape"], layer, cache["argmax"], g)
            elif kind == LayerKind.RELU:
                if idx + 1 < len(layers) and layers[idx + 1].kind in L.POOL_KINDS:
                    continue
                g = L.relu_backward(cache["out"], g)
            elif kind == LayerKind.FLATTEN:
                c, n = cache["in_shape"][:2]
                g = g.reshape((n, c) + cache["in_shape"][2:])
                g = np.ascontiguousarray(g.swapaxes(0, 1))
            elif kind == LayerKind.DENSE:
                g, grads[idx] = L.dense_backward(cache["x"], layer, g, need_input_grad=idx > 0)
            elif kind == LayerKind.DROPOUT:
                g = L.dropout_backward(g, cache["mask"])
        return [grads[i][name] for i, name, _ in self.named_parameters()]

    def loss_and_grads(self, x, labels, rng=None):
        caches: list = []
        logits = self.forward(x, training=True, rng=rng, caches=caches)
        loss, grad_logits = L.softmax_cross_entropy(logits, labels)
        return loss, logits, self.backward(caches, grad_logits)


def _initialise(layers: list[Layer], seed: int) -> None:
    for index, layer in enumerate(layers):
        if layer.params:
            L.init_uniform(layer, np.random.default_rng([seed, index]))


def _check_resolution(resolution):
    if resolution not in SUPPORTED_RESOLUTIONS:
        raise ConfigError(f"unsupported resolution {resolution}; choose one of {SUPPORTED_RESOLUTIONS}")


def build_ddd2d(resolution: int = 64, seed: int = 0) -> ModelSpec:
    """Three conv/ReLU/pool blocks (16, 32, 64 channels), a 128-unit hidden layer, dropout 0.5."""
    _check_resolution(resolution)
    flat = 64 * (resolution // 8) ** 2
    layers = [
        L.conv_layer(1, 16, 3, 1, 1),
        L.relu_layer(),
        L.maxpool_layer(2),
        L.conv_layer(16, 32, 3, 1, 1),
        L.relu_layer(),
        L.maxpool_layer(2),
        L.conv_layer(32, 64, 3, 1, 1),
        L.relu_layer(),
        L.maxpool_layer(2),
        L.flatten_layer(),
        L.dense_layer(flat, 128),
        L.relu_layer(),
        L.dropout_layer(0.5),
        L.dense_layer(128, NUM_CLASSES),
    ]
    _initialise(layers, seed)
    return ModelSpec(DDD_2D, (1, resolution, resolution), layers)


def build_ddd3d(resolution: int = 64, sequence_length: int = 16, seed: int = 0) -> ModelSpec:
    _check_resolution(resolution)
    if sequence_length < 2:
        raise ConfigError(f"sequence_length must be at least 2 for the temporal pool, got {sequence_length}")
    flat = 16 * (sequence_length // 2) * (resolution // 4) ** 2
    layers = [
        L.conv_layer(1, 8, 3, 1, 1, rank=3),
        L.relu_layer(),
        L.maxpool_layer((1, 2, 2), rank=3),
        L.conv_layer(8, 16, 3, 1, 1, rank=3),
        L.relu_layer(),
        L.maxpool_layer((2, 2, 2), rank=3),
        L.flatten_layer(),
        L.dense_layer(flat, 64),
        L.relu_layer(),
        L.dense_layer(64, NUM_CLASSES),
    ]
    _initialise(layers, seed)
    return ModelSpec(DDD_3D, (1, sequence_length, resolution, resolution), layers)


def build_model(arch_name: str, resolution: int = 64, sequence_length: int | None = None, seed: int = 0):
    if arch_name == DDD_2D:
        return build_ddd2d(resolution, seed)
    if arch_name == DDD_3D:
        return build_ddd3d(resolution, 16 if sequence_length is None else sequence_length, seed)
    raise ConfigError(f"unknown model {arch_name!r}; expected {DDD_2D} or {DDD_3D}")


def weights_extract(model: ModelSpec) -> ModelWeights:
    return ModelWeights(model.name, [(i, n, p.copy()) for i, n, p in model.named_parameters()])


def weights_load(model: ModelSpec, weights: ModelWeights) -> ModelSpec:
    """Copy ``weights`` into ``model`` after checking names and shapes."""
    if weights.arch_name and weights.arch_name != model.name:
        raise IncompatibleWeightsError(f"weights for {weights.arch_name} cannot load into {model.name}")
    expected = [(i, n, p.shape) for i, n, p in model.named_parameters()]
    got = weights.structure()
    if expected != got:
        raise IncompatibleWeightsError(f"weight structure mismatch for {model.name}: {got} != {expected}")
    model.set_parameters(np.array(t, dtype=DTYPE, copy=True) for t in weights.tensors)
    return model
