"""Fully connected networks built on the tensor ops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, linear, tanh

ACTIVATIONS = ("tanh", "identity")


@dataclass
class Layer:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)
    activation: str = "tanh"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {layer.activation!r}", f"layers[{i}]")
            if layer.bias.shape != (layer.out_dim,):
                raise DimensionError(f"layer {i}: bias shape {layer.bias.shape}")
            if i and self.layers[i - 1].out_dim != layer.in_dim:
                raise DimensionError(f"layer {i}: in-dim {layer.in_dim} does not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    activations: Sequence[str] | None = None,
    out_scale: float = 1.0,
) -> MlpParams:
    """Scaled-normal init; ``out_scale`` shrinks the last layer (policy heads use 0.01)."""
    if len(sizes) < 2:
        raise ConfigError("need at least input and output sizes", "sizes")
    n = len(sizes) - 1
    if activations is None:
        activations = ["tanh"] * (n - 1) + ["identity"]
    if len(activations) != n:
        raise ConfigError(f"{len(activations)} activations for {n} layers", "activations")
    layers = []
    for i, (d_in, d_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = np.sqrt(1.0 / d_in) * (out_scale if i == n - 1 else 1.0)
        w = rng.standard_normal((d_out, d_in)) * scale
        layers.append(Layer(Tensor(w, True), Tensor(np.zeros(d_out), True), activations[i]))
    return MlpParams(layers)


def mlp_forward(params: MlpParams, x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] != params.in_dim:
        raise DimensionError(f"input last dim {x.shape[-1:]} != network in-dim {params.in_dim}")
    for layer in params.layers:
        x = linear(x, layer.weight, layer.bias)
        if layer.activation == "tanh":
            x = tanh(x)
    return x
