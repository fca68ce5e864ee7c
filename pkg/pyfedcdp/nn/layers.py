"""Batched linear maps and activations.

Each layer kind exposes three maps that both backprop and double backprop are
written against:

``forward(W, b, h)``
    the affine map applied to inputs ``h`` of shape ``(n, in)``.
``input_vjp(W, v)``
    the adjoint of ``forward`` in ``h``: ``(n, out) -> (n, in)``.
``weight_grad(delta, h)``
    per-example parameter gradients, the adjoint of ``forward`` in ``(W, b)``.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Protocol, Tuple

import numpy as np
from scipy.special import expit

from .types import Activation, ConvGeometry, Layer

__all__ = [
    "ConvOps",
    "DenseOps",
    "LayerOps",
    "activate",
    "activation_derivative",
    "activation_second_derivative",
    "ops_for",
    "patch_index",
]


class LayerOps(Protocol):
    def forward(self, weights: np.ndarray, bias: np.ndarray, h: np.ndarray) -> np.ndarray: ...

    def input_vjp(self, weights: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    def weight_grad(self, delta: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]: ...

    def mean_weight_grad(
        self, delta: np.ndarray, h: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]: ...


class DenseOps:
    """Fully connected layer ``h @ W.T + b``."""

    def forward(self, weights: np.ndarray, bias: np.ndarray, h: np.ndarray) -> np.ndarray:
        return h @ weights.T + bias

    def input_vjp(self, weights: np.ndarray, v: np.ndarray) -> np.ndarray:
        return v @ weights

    def weight_grad(self, delta: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return np.einsum("no,ni->noi", delta, h), delta.copy()

    def mean_weight_grad(self, delta: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = delta.shape[0]
        return delta.T @ h / n, delta.sum(axis=0) / n


@lru_cache(maxsize=32)
def patch_index(geometry: ConvGeometry) -> np.ndarray:
    """Flat input offsets of every patch, shape ``(positions, in_channels * k * k)``.

    Columns follow the ``(channel, row, column)`` order of the 2-D weight layout.
    """
    g = geometry
    channel, ky, kx = np.meshgrid(
        np.arange(g.in_channels), np.arange(g.kernel), np.arange(g.kernel), indexing="ij"
    )
    within = (channel * g.height * g.width + ky * g.width + kx).reshape(-1)
    oy, ox = np.meshgrid(np.arange(g.out_height), np.arange(g.out_width), indexing="ij")
    origin = (oy * g.stride * g.width + ox * g.stride).reshape(-1)
    index = origin[:, None] + within[None, :]
    index.setflags(write=False)
    return index


class ConvOps:
    """Valid-padding convolution via an im2col gather."""

    def __init__(self, geometry: ConvGeometry) -> None:
        self.geometry = geometry
        self._index = patch_index(geometry)

    def _patches(self, h: np.ndarray) -> np.ndarray:
        return h[:, self._index]

    def forward(self, weights: np.ndarray, bias: np.ndarray, h: np.ndarray) -> np.ndarray:
        out = np.einsum("npk,ck->ncp", self._patches(h), weights) + bias[None, :, None]
        return out.reshape(h.shape[0], -1)

    def input_vjp(self, weights: np.ndarray, v: np.ndarray) -> np.ndarray:
        n = v.shape[0]
        g = self.geometry
        d_patches = np.einsum("ncp,ck->npk", v.reshape(n, g.out_channels, g.positions), weights)
        result = np.zeros((n, g.in_dim))
        rows = np.arange(n)[:, None, None]
        np.add.at(result, (rows, self._index[None, :, :]), d_patches)
        return result

    def weight_grad(self, delta: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g = self.geometry
        d = delta.reshape(delta.shape[0], g.out_channels, g.positions)
        return np.einsum("ncp,npk->nck", d, self._patches(h)), d.sum(axis=2)

    def mean_weight_grad(self, delta: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g = self.geometry
        n = delta.shape[0]
        d = delta.reshape(n, g.out_channels, g.positions)
        return np.einsum("ncp,npk->ck", d, self._patches(h)) / n, d.sum(axis=(0, 2)) / n


_DENSE = DenseOps()


def ops_for(layer: Layer) -> LayerOps:
    """Return the linear maps implementing ``layer``."""
    if layer.conv is None:
        return _DENSE
    return ConvOps(layer.conv)


def activate(activation: Activation, a: np.ndarray) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(a, 0.0)
    if activation is Activation.SIGMOID:
        return expit(a)
    if activation in (Activation.IDENTITY, Activation.SOFTMAX_OUTPUT):
        return a
    raise ValueError(f"Unsupported activation: {activation}")


def activation_derivative(activation: Activation, a: np.ndarray) -> np.ndarray:
    if activation is Activation.RELU:
        return (a > 0).astype(np.float64)
    if activation is Activation.SIGMOID:
        s = expit(a)
        return s * (1.0 - s)
    if activation is Activation.IDENTITY:
        return np.ones_like(a)
    raise ValueError(f"No hidden-layer derivative for {activation}")


def activation_second_derivative(activation: Activation, a: np.ndarray) -> np.ndarray:
    if activation is Activation.SIGMOID:
        s = expit(a)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    if activation in (Activation.RELU, Activation.IDENTITY):
        return np.zeros_like(a)
    raise ValueError(f"No hidden-layer derivative for {activation}")
