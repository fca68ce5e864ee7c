"""Arithmetic over layered tensors."""
from __future__ import annotations

from typing import Iterable, List, Sequence

import numpy as np

from ..errors import ShapeError
from .types import Gradient, LayerGradient, ModelParams, PerExampleGradient

__all__ = [
    "add",
    "check_congruent",
    "flatten",
    "global_norm",
    "mean_stack",
    "model_difference",
    "scale",
    "stack_gradients",
    "split_stack",
    "subtract",
    "unflatten",
    "zeros_like",
]


def check_congruent(model: ModelParams, grad: Gradient) -> None:
    """Raise ``ShapeError`` unless ``grad`` has exactly the model's shapes."""
    if len(grad) != model.layer_count:
        raise ShapeError(f"gradient has {len(grad)} layers, model has {model.layer_count}")
    for m, (layer, g) in enumerate(zip(model.layers, grad)):
        if g.weights.shape != layer.weights.shape or g.bias.shape != layer.bias.shape:
            raise ShapeError(
                f"layer {m}: gradient shapes {g.weights.shape}/{g.bias.shape} do not match "
                f"{layer.weights.shape}/{layer.bias.shape}"
            )


def _check_pair(a: Gradient, b: Gradient) -> None:
    if len(a) != len(b) or any(
        x.weights.shape != y.weights.shape or x.bias.shape != y.bias.shape for x, y in zip(a, b)
    ):
        raise ShapeError("layered tensors are not shape-congruent")


def zeros_like(model: ModelParams) -> Gradient:
    return tuple(
        LayerGradient(np.zeros_like(layer.weights), np.zeros_like(layer.bias))
        for layer in model.layers
    )


def add(a: Gradient, b: Gradient) -> Gradient:
    _check_pair(a, b)
    return tuple(LayerGradient(x.weights + y.weights, x.bias + y.bias) for x, y in zip(a, b))


def subtract(a: Gradient, b: Gradient) -> Gradient:
    _check_pair(a, b)
    return tuple(LayerGradient(x.weights - y.weights, x.bias - y.bias) for x, y in zip(a, b))


def scale(a: Gradient, factor: float) -> Gradient:
    return tuple(g.scaled(factor) for g in a)


def model_difference(after: ModelParams, before: ModelParams) -> Gradient:
    """``after - before`` as a layered tensor."""
    return subtract(after.parameters(), before.parameters())


def global_norm(a: Gradient) -> float:
    """l2 norm of all coordinates taken together."""
    return float(np.sqrt(sum(np.sum(g.weights**2) + np.sum(g.bias**2) for g in a)))


def flatten(a: Gradient) -> np.ndarray:
    """Concatenate layers as ``W_0, b_0, W_1, b_1, ...`` in row-major order."""
    parts: List[np.ndarray] = []
    for g in a:
        parts.append(g.weights.reshape(-1))
        parts.append(g.bias.reshape(-1))
    return np.concatenate(parts)


def unflatten(vector: np.ndarray, like: Gradient) -> Gradient:
    """Inverse of :func:`flatten` using the shapes of ``like``."""
    expected = sum(g.weights.size + g.bias.size for g in like)
    if vector.shape != (expected,):
        raise ShapeError(f"vector of shape {vector.shape} cannot fill {expected} coordinates")
    out: List[LayerGradient] = []
    offset = 0
    for g in like:
        w = vector[offset : offset + g.weights.size].reshape(g.weights.shape)
        offset += g.weights.size
        b = vector[offset : offset + g.bias.size].reshape(g.bias.shape)
        offset += g.bias.size
        out.append(LayerGradient(w, b))
    return tuple(out)


def mean_stack(stack: Gradient) -> Gradient:
    """Average a stacked per-example gradient over its leading axis."""
    return tuple(LayerGradient(g.weights.mean(axis=0), g.bias.mean(axis=0)) for g in stack)


def split_stack(stack: Gradient, indices: Iterable[int]) -> List[PerExampleGradient]:
    """Unstack into one ``PerExampleGradient`` per row, tagged with ``indices``."""
    return [
        PerExampleGradient(
            tuple(LayerGradient(g.weights[row], g.bias[row]) for g in stack), int(index)
        )
        for row, index in enumerate(indices)
    ]


def stack_gradients(grads: Sequence[PerExampleGradient]) -> Gradient:
    """Stack per-example gradients along a new leading axis."""
    if not grads:
        raise ValueError("cannot stack zero gradients")
    layers = len(grads[0].per_layer)
    return tuple(
        LayerGradient(
            np.stack([g.per_layer[m].weights for g in grads]),
            np.stack([g.per_layer[m].bias for g in grads]),
        )
        for m in range(layers)
    )
