"""Gradient-descent optimizers updating ``LayerParams`` in place."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError
from .tensor import LayerParams, Tensor

_LOG = logging.getLogger(__name__)


def _check_gradients(params: Sequence[LayerParams]) -> None:
    for idx, p in enumerate(params):
        if not (np.all(np.isfinite(p.grad_weights)) and np.all(np.isfinite(p.grad_biases))):
            raise NumericalError(f"non-finite gradient in parameter block {idx}; aborting update")


class Optimizer:
    def __init__(self, learning_rate: float) -> None:
        if not learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {learning_rate!r}")
        self.learning_rate = float(learning_rate)

    def step(self, params: Sequence[LayerParams]) -> None:
        _check_gradients(params)
        self._apply(params)

    def _apply(self, params: Sequence[LayerParams]) -> None:
        raise NotImplementedError


class Sgd(Optimizer):
    def _apply(self, params: Sequence[LayerParams]) -> None:
        for p in params:
            p.weights -= self.learning_rate * p.grad_weights
            p.biases -= self.learning_rate * p.grad_biases


class Adam(Optimizer):
    """Adam with bias-corrected moments.

    State is positional: always pass the same parameter list in the same order.
    """

    def __init__(
        self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> None:
        super().__init__(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._moments: list[tuple[Tensor, Tensor, Tensor, Tensor]] = []

    def _apply(self, params: Sequence[LayerParams]) -> None:
        if not self._moments:
            self._moments = [
                (
                    np.zeros_like(p.weights),
                    np.zeros_like(p.weights),
                    np.zeros_like(p.biases),
                    np.zeros_like(p.biases),
                )
                for p in params
            ]
        elif len(self._moments) != len(params):
            raise ConfigurationError(
                f"adam state tracks {len(self._moments)} parameter blocks, step got {len(params)}"
            )
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, (m_w, v_w, m_b, v_b) in zip(params, self._moments):
            for value, grad, m, v in ((p.weights, p.grad_weights, m_w, v_w), (p.biases, p.grad_biases, m_b, v_b)):
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                value -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def build_optimizer(kind: str, learning_rate: float) -> Optimizer:
    name = kind.strip().lower()
    if name == "sgd":
        return Sgd(learning_rate)
    if name == "adam":
        return Adam(learning_rate)
    raise ConfigurationError(f"optimizer must be 'sgd' or 'adam', got {kind!r}")


def sgd_adam_step(params: Sequence[LayerParams], optimizer: Optimizer) -> None:
    """Apply one in-place update of ``optimizer`` to ``params``."""
    optimizer.step(params)
    _LOG.debug("%s step applied to %d parameter blocks", type(optimizer).__name__, len(params))
