"""Forward pass, per-example backprop and gradient-matching derivatives."""
from __future__ import annotations

import logging
from typing import List, Literal, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import NumericError, ShapeError
from .layers import (
    activate,
    activation_derivative,
    activation_second_derivative,
    ops_for,
)
from .types import (
    Activation,
    Batch,
    ConvGeometry,
    Example,
    Gradient,
    Layer,
    LayerGradient,
    ModelParams,
    PerExampleGradient,
)
from .utils import check_congruent, split_stack

__all__ = [
    "accuracy",
    "batch_gradient",
    "forward",
    "init_model",
    "input_gradient_of_match_loss",
    "loss",
    "match_loss",
    "per_example_gradient_stack",
    "per_example_gradients",
    "predict",
    "sgd_step",
]

logger = logging.getLogger(__name__)

BatchLike = Union[Batch, Sequence[Example], Example]


def _as_batch(batch: BatchLike) -> Batch:
    if isinstance(batch, Batch):
        return batch
    if isinstance(batch, Example):
        return Batch.from_examples([batch])
    return Batch.from_examples(list(batch))


def _check_features(model: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        logger.error("Feature shape %s does not match input dim %d", x.shape, model.input_dim)
        raise ShapeError(f"features of shape {x.shape} do not match input dim {model.input_dim}")
    return x


def init_model(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    activation: Activation = Activation.RELU,
    conv: ConvGeometry | None = None,
) -> ModelParams:
    """Draw a model with weights and biases uniform in ``±1/sqrt(fan_in)``.

    Parameters
    ----------
    layer_sizes
        ``[input_dim, hidden..., num_classes]``.
    rng
        Generator for the draw.
    activation
        Hidden-layer activation.
    conv
        Optional convolution placed before the dense stack. Its input size
        must equal ``layer_sizes[0]``.

    Returns
    -------
    ModelParams
        A freshly initialized model.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"layer_sizes must hold at least two positive sizes, got {sizes}")
    if activation is Activation.SOFTMAX_OUTPUT:
        raise ValueError("softmax-output is reserved for the last layer")

    layers: List[Layer] = []
    previous = sizes[0]
    if conv is not None:
        if conv.in_dim != sizes[0]:
            raise ShapeError(f"convolution expects {conv.in_dim} inputs, got {sizes[0]}")
        bound = 1.0 / np.sqrt(conv.patch_size)
        layers.append(
            Layer(
                rng.uniform(-bound, bound, (conv.out_channels, conv.patch_size)),
                rng.uniform(-bound, bound, conv.out_channels),
                activation,
                conv,
            )
        )
        previous = conv.out_dim

    widths = sizes[1:]
    for i, width in enumerate(widths):
        bound = 1.0 / np.sqrt(previous)
        act = Activation.SOFTMAX_OUTPUT if i == len(widths) - 1 else activation
        layers.append(
            Layer(
                rng.uniform(-bound, bound, (width, previous)),
                rng.uniform(-bound, bound, width),
                act,
            )
        )
        previous = width
    return ModelParams(tuple(layers))


def _trace(model: ModelParams, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Return each layer's input and pre-activation for a batch ``x``."""
    inputs: List[np.ndarray] = [x]
    pre: List[np.ndarray] = []
    for m, layer in enumerate(model.layers):
        a = ops_for(layer).forward(layer.weights, layer.bias, inputs[-1])
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite pre-activation", layer=m)
        pre.append(a)
        if m < model.layer_count - 1:
            inputs.append(activate(layer.activation, a))
    return inputs, pre


def forward(model: ModelParams, features: np.ndarray) -> np.ndarray:
    """Pre-softmax logits for one feature vector or a ``(n, d)`` matrix."""
    x = _check_features(model, features)
    logits = _trace(model, x)[1][-1]
    return logits[0] if np.ndim(features) == 1 else logits


def predict(model: ModelParams, features: np.ndarray) -> np.ndarray:
    return np.argmax(np.atleast_2d(forward(model, features)), axis=1)


def loss(model: ModelParams, batch: BatchLike) -> float:
    """Mean softmax cross-entropy over ``batch``."""
    b = _as_batch(batch)
    logits = forward(model, b.features)
    return float(-np.mean(log_softmax(logits, axis=1)[np.arange(len(b)), b.labels]))


def accuracy(model: ModelParams, batch: BatchLike) -> float:
    b = _as_batch(batch)
    if len(b) == 0:
        return 0.0
    return float(np.mean(predict(model, b.features) == b.labels))


def _output_error(model: ModelParams, logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    if np.any(labels < 0) or np.any(labels >= model.num_classes):
        raise ValueError(f"labels must lie in [0, {model.num_classes})")
    probs = softmax(logits, axis=1)
    delta = probs.copy()
    delta[np.arange(labels.shape[0]), labels] -= 1.0
    return delta


def _deltas(
    model: ModelParams, pre: List[np.ndarray], output_error: np.ndarray
) -> List[np.ndarray]:
    """Backpropagate ``dLoss/da`` for every layer, one row per example."""
    deltas: List[np.ndarray] = [output_error]
    for m in range(model.layer_count - 1, 0, -1):
        layer = model.layers[m]
        below = model.layers[m - 1]
        d = ops_for(layer).input_vjp(layer.weights, deltas[0]) * activation_derivative(
            below.activation, pre[m - 1]
        )
        if not np.all(np.isfinite(d)):
            raise NumericError("non-finite backpropagated error", layer=m - 1)
        deltas.insert(0, d)
    return deltas


def per_example_gradient_stack(
    model: ModelParams, features: np.ndarray, labels: np.ndarray
) -> Gradient:
    """Per-example gradients stacked along a leading example axis."""
    x = _check_features(model, features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("per-example gradients need a non-empty batch")
    inputs, pre = _trace(model, x)
    deltas = _deltas(model, pre, _output_error(model, pre[-1], y))
    return tuple(
        LayerGradient(*ops_for(layer).weight_grad(deltas[m], inputs[m]))
        for m, layer in enumerate(model.layers)
    )


def per_example_gradients(model: ModelParams, batch: BatchLike) -> List[PerExampleGradient]:
    """One gradient per example, each of that example's loss alone."""
    b = _as_batch(batch)
    if len(b) == 0:
        raise ValueError("per-example gradients need a non-empty batch")
    stack = per_example_gradient_stack(model, b.features, b.labels)
    return split_stack(stack, range(len(b)))


def batch_gradient(model: ModelParams, batch: BatchLike) -> Gradient:
    """Gradient of the mean batch loss, computed with whole-batch matrix products."""
    b = _as_batch(batch)
    if len(b) == 0:
        raise ValueError("batch gradient needs a non-empty batch")
    x = _check_features(model, b.features)
    inputs, pre = _trace(model, x)
    deltas = _deltas(model, pre, _output_error(model, pre[-1], b.labels))
    return tuple(
        LayerGradient(*ops_for(layer).mean_weight_grad(deltas[m], inputs[m]))
        for m, layer in enumerate(model.layers)
    )


def sgd_step(model: ModelParams, grad: Gradient, eta: float) -> ModelParams:
    """Return a new model with every parameter ``p`` replaced by ``p - eta * g``."""
    check_congruent(model, grad)
    return ModelParams(
        tuple(
            layer.replace(layer.weights - eta * g.weights, layer.bias - eta * g.bias)
            for layer, g in zip(model.layers, grad)
        )
    )


# ----------------------------------------------------------------------
# Gradient matching
# ----------------------------------------------------------------------


def match_loss(model: ModelParams, target_grad: Gradient, example: Example) -> float:
    """``||grad_W(example) - target_grad||^2`` summed over every layer."""
    check_congruent(model, target_grad)
    stack = per_example_gradient_stack(
        model, np.asarray(example.features)[None, :], np.array([example.label])
    )
    return float(
        sum(
            np.sum((g.weights[0] - t.weights) ** 2) + np.sum((g.bias[0] - t.bias) ** 2)
            for g, t in zip(stack, target_grad)
        )
    )


def _analytic_input_gradient(
    model: ModelParams, target_grad: Gradient, example: Example
) -> np.ndarray:
    x = _check_features(model, example.features)
    labels = np.array([example.label], dtype=np.int64)
    count = model.layer_count
    ops = [ops_for(layer) for layer in model.layers]

    inputs, pre = _trace(model, x)
    probs = softmax(pre[-1], axis=1)
    deltas = _deltas(model, pre, _output_error(model, pre[-1], labels))

    delta_bar: List[np.ndarray] = []
    h_bar: List[np.ndarray] = []
    for m, layer in enumerate(model.layers):
        gw, gb = ops[m].weight_grad(deltas[m], inputs[m])
        rw = 2.0 * (gw[0] - target_grad[m].weights)
        rb = 2.0 * (gb[0] - target_grad[m].bias)
        delta_bar.append(ops[m].forward(rw, rb, inputs[m]))
        h_bar.append(ops[m].input_vjp(rw, deltas[m]))
    a_bar = [np.zeros_like(a) for a in pre]

    # Reverse the error recursion, lowest layer first.
    for m in range(count - 1):
        above = model.layers[m + 1]
        act = model.layers[m].activation
        u = ops[m + 1].input_vjp(above.weights, deltas[m + 1])
        a_bar[m] += delta_bar[m] * u * activation_second_derivative(act, pre[m])
        delta_bar[m + 1] = delta_bar[m + 1] + ops[m + 1].forward(
            above.weights,
            np.zeros_like(above.bias),
            delta_bar[m] * activation_derivative(act, pre[m]),
        )
        if not np.all(np.isfinite(delta_bar[m + 1])):
            raise NumericError("non-finite error cotangent", layer=m + 1)

    top = delta_bar[-1]
    a_bar[-1] += probs * (top - np.sum(probs * top, axis=1, keepdims=True))

    # Reverse the forward pass.
    for m in range(count - 1, -1, -1):
        h_bar[m] = h_bar[m] + ops[m].input_vjp(model.layers[m].weights, a_bar[m])
        if not np.all(np.isfinite(h_bar[m])):
            raise NumericError("non-finite input cotangent", layer=m)
        if m > 0:
            a_bar[m - 1] += h_bar[m] * activation_derivative(
                model.layers[m - 1].activation, pre[m - 1]
            )
    return h_bar[0][0]


def _finite_difference_input_gradient(
    model: ModelParams, target_grad: Gradient, example: Example, step: float
) -> np.ndarray:
    x = np.asarray(example.features, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        offset = np.zeros_like(x)
        offset[i] = step
        up = match_loss(model, target_grad, Example(x + offset, example.label))
        down = match_loss(model, target_grad, Example(x - offset, example.label))
        grad[i] = (up - down) / (2.0 * step)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite finite-difference gradient")
    return grad


def input_gradient_of_match_loss(
    model: ModelParams,
    target_grad: Gradient,
    seed: Example,
    *,
    method: Literal["analytic", "finite_difference"] = "analytic",
    step: float = 1e-4,
) -> np.ndarray:
    """Derivative of :func:`match_loss` with respect to ``seed.features``.

    Parameters
    ----------
    model
        Model whose parameter gradient is matched.
    target_grad
        Layered tensor shaped like ``model``.
    seed
        Current dummy example; its label is held fixed.
    method
        ``"analytic"`` differentiates the backward pass exactly,
        ``"finite_difference"`` uses central differences with ``step``.

    Returns
    -------
    np.ndarray
        Vector with the length of ``seed.features``.
    """
    check_congruent(model, target_grad)
    if method == "analytic":
        return _analytic_input_gradient(model, target_grad, seed)
    if method == "finite_difference":
        return _finite_difference_input_gradient(model, target_grad, seed, step)
    raise ValueError(f"Unknown differentiation method: {method}")
