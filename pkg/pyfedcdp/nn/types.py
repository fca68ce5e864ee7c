"""Parameter, example and gradient containers for the neural network core."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from ..errors import NumericError, ShapeError

__all__ = [
    "Activation",
    "Batch",
    "ConvGeometry",
    "Example",
    "Gradient",
    "Layer",
    "LayerGradient",
    "ModelParams",
    "PerExampleGradient",
]


class Activation(Enum):
    """Layer nonlinearities."""
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"
    SOFTMAX_OUTPUT = "softmax-output"


@dataclass(frozen=True)
class ConvGeometry:
    """Shape of a valid-padding 2-D convolution over a flattened ``(C, H, W)`` input."""

    in_channels: int
    height: int
    width: int
    kernel: int
    stride: int
    out_channels: int

    def __post_init__(self) -> None:
        for name in ("in_channels", "height", "width", "kernel", "stride", "out_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.kernel > min(self.height, self.width):
            raise ShapeError(
                f"kernel {self.kernel} larger than input {self.height}x{self.width}"
            )

    @property
    def out_height(self) -> int:
        return (self.height - self.kernel) // self.stride + 1

    @property
    def out_width(self) -> int:
        return (self.width - self.kernel) // self.stride + 1

    @property
    def positions(self) -> int:
        return self.out_height * self.out_width

    @property
    def patch_size(self) -> int:
        return self.in_channels * self.kernel * self.kernel

    @property
    def in_dim(self) -> int:
        return self.in_channels * self.height * self.width

    @property
    def out_dim(self) -> int:
        return self.out_channels * self.positions


@dataclass(frozen=True, eq=False)
class Layer:
    """One affine layer followed by its activation.

    Dense weights are ``(out, in)``. Convolution weights are stored 2-D as
    ``(out_channels, in_channels * k * k)`` with one bias per output channel.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation
    conv: Optional[ConvGeometry] = None

    def __post_init__(self) -> None:
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("layer weights must be 2-D and bias 1-D")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"bias length {self.bias.shape[0]} does not match {self.weights.shape[0]} outputs"
            )
        if self.conv is not None and self.weights.shape != (
            self.conv.out_channels,
            self.conv.patch_size,
        ):
            raise ShapeError(
                f"convolution weights {self.weights.shape} do not match geometry {self.conv}"
            )

    @property
    def in_dim(self) -> int:
        return self.conv.in_dim if self.conv is not None else self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.conv.out_dim if self.conv is not None else self.weights.shape[0]

    def replace(self, weights: np.ndarray, bias: np.ndarray) -> "Layer":
        return Layer(weights, bias, self.activation, self.conv)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """An ordered stack of layers; the last one feeds the softmax output."""

    layers: Tuple[Layer, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        for m in range(1, len(self.layers)):
            if self.layers[m - 1].out_dim != self.layers[m].in_dim:
                raise ShapeError(
                    f"layer {m - 1} emits {self.layers[m - 1].out_dim} values "
                    f"but layer {m} expects {self.layers[m].in_dim}"
                )
        for m, layer in enumerate(self.layers):
            if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
                raise NumericError("non-finite model parameter", layer=m)

    @property
    def layer_count(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_parameters(self) -> int:
        return sum(layer.weights.size + layer.bias.size for layer in self.layers)

    def shapes(self) -> Tuple[Tuple[Tuple[int, ...], Tuple[int, ...]], ...]:
        return tuple((layer.weights.shape, layer.bias.shape) for layer in self.layers)

    def parameters(self) -> "Gradient":
        """The parameters viewed as a layered tensor."""
        return tuple(LayerGradient(layer.weights, layer.bias) for layer in self.layers)

    def equals(self, other: "ModelParams") -> bool:
        """Bit-for-bit equality of every parameter."""
        if self.shapes() != other.shapes():
            return False
        return all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass(frozen=True, eq=False)
class LayerGradient:
    """Weight and bias tensors of one layer.

    The arrays either match the layer exactly or carry one extra leading axis
    indexing examples (a stacked per-example gradient).
    """

    weights: np.ndarray
    bias: np.ndarray

    def norm(self) -> float:
        """Joint l2 norm of weights and bias."""
        return float(np.sqrt(np.sum(self.weights**2) + np.sum(self.bias**2)))

    def scaled(self, factor: float) -> "LayerGradient":
        return LayerGradient(self.weights * factor, self.bias * factor)


Gradient = Tuple[LayerGradient, ...]


@dataclass(frozen=True, eq=False)
class Example:
    """A single training example with features normalized to ``[0, 1]``."""

    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class PerExampleGradient:
    """The gradient of one example's loss, shaped like the model."""

    per_layer: Gradient
    example_index: int

    def norms(self) -> np.ndarray:
        return np.array([g.norm() for g in self.per_layer])


@dataclass(frozen=True, eq=False)
class Batch:
    """A batch of examples held as arrays: ``features`` ``(n, d)`` and ``labels`` ``(n,)``."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim == 1:
            features = features[None, :]
        if labels.ndim == 0:
            labels = labels[None]
        if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
            raise ShapeError(
                f"features {features.shape} and labels {labels.shape} do not form a batch"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> "Batch":
        if not examples:
            raise ValueError("cannot build a batch from zero examples")
        return cls(
            np.stack([np.asarray(e.features, dtype=np.float64) for e in examples]),
            np.array([e.label for e in examples], dtype=np.int64),
        )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield self.example(i)

    def example(self, index: int) -> Example:
        return Example(self.features[index], int(self.labels[index]))

    def take(self, indices: np.ndarray) -> "Batch":
        return Batch(self.features[indices], self.labels[indices])
