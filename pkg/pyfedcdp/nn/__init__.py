"""Small feedforward networks with per-example gradients in NumPy."""
from .model import (
    accuracy,
    batch_gradient,
    forward,
    init_model,
    input_gradient_of_match_loss,
    loss,
    match_loss,
    per_example_gradient_stack,
    per_example_gradients,
    predict,
    sgd_step,
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
