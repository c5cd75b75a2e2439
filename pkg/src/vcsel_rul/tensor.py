"""Dense float64 arrays, parameter blocks and activations for the engine.

Every signal is a C-contiguous ``numpy.float64`` array (shape + row-major
data). Layers are batch-first: the leading axis is always the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError, NumericalError

Tensor = NDArray[np.float64]


def as_tensor(values: object, name: str = "tensor") -> Tensor:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    check_finite(arr, name)
    return arr


def check_finite(arr: Tensor, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericalError(f"{name} holds {bad} non-finite value(s)")


@dataclass
class LayerParams:
    """Weights and biases of one layer plus same-shaped gradient accumulators.

    Forward and backward passes never modify ``weights``/``biases``; only an
    optimizer step does. Backward *adds* into the accumulators.
    """

    weights: Tensor
    biases: Tensor
    grad_weights: Tensor = field(init=False)
    grad_biases: Tensor = field(init=False)

    def __post_init__(self) -> None:
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float64)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_biases = np.zeros_like(self.biases)

    @property
    def size(self) -> int:
        return int(self.weights.size + self.biases.size)

    def zero_grad(self) -> None:
        self.grad_weights.fill(0.0)
        self.grad_biases.fill(0.0)

    def flat_values(self) -> Tensor:
        return np.concatenate([self.weights.ravel(), self.biases.ravel()])

    def load_flat(self, values: Tensor) -> None:
        n_w = self.weights.size
        if values.size != self.size:
            raise ConfigurationError(
                f"parameter block expects {self.size} values, got {values.size}"
            )
        self.weights[...] = values[:n_w].reshape(self.weights.shape)
        self.biases[...] = values[n_w:].reshape(self.biases.shape)

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.biases.copy())


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def scaled_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(z: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _relu(z: Tensor) -> Tensor:
    return np.maximum(z, 0.0)


def _relu_grad(z: Tensor, y: Tensor) -> Tensor:
    return (z > 0.0).astype(np.float64)


def _tanh_grad(z: Tensor, y: Tensor) -> Tensor:
    return 1.0 - y * y


def _identity(z: Tensor) -> Tensor:
    return z


def _identity_grad(z: Tensor, y: Tensor) -> Tensor:
    return np.ones_like(z)


ACTIVATION_FUNCTIONS: dict[str, tuple[Callable[[Tensor], Tensor], Callable[[Tensor, Tensor], Tensor]]] = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "identity": (_identity, _identity_grad),
}


def activation_pair(name: str) -> tuple[Callable[[Tensor], Tensor], Callable[[Tensor, Tensor], Tensor]]:
    try:
        return ACTIVATION_FUNCTIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {name!r}; expected one of {sorted(ACTIVATION_FUNCTIONS)}"
        ) from None
