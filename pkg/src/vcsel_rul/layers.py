"""Layers with analytic forward and backward passes.

Each layer records what its backward pass needs during ``forward`` (a
one-entry tape) and consumes it in ``backward``, which returns the gradient
with respect to the layer input and *adds* parameter gradients into the
``LayerParams`` accumulators. Calling ``backward`` with no recorded forward
is a ``UsageError``.

Convolution follows the machine-learning convention: it is a
cross-correlation, the kernel is not flipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError, UsageError
from .tensor import (
    LayerParams,
    Tensor,
    activation_pair,
    as_tensor,
    check_finite,
    glorot_uniform,
    scaled_uniform,
    sigmoid,
)


class Layer:
    name = "layer"

    def __init__(self) -> None:
        self._tape: Optional[tuple] = None

    def params(self) -> list[LayerParams]:
        return []

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def _pop_tape(self) -> tuple:
        if self._tape is None:
            raise UsageError(f"{self.name}: backward called without a recorded forward pass")
        tape = self._tape
        self._tape = None
        return tape


def _require_params(params: Optional[LayerParams], rng: Optional[np.random.Generator], name: str) -> None:
    if params is None and rng is None:
        raise ConfigurationError(f"{name}: pass either explicit params or an rng for initialization")


class Dense(Layer):
    name = "dense"

    def __init__(
        self,
        n_in: int,
        n_out: int,
        activation: str = "identity",
        rng: Optional[np.random.Generator] = None,
        params: Optional[LayerParams] = None,
    ) -> None:
        super().__init__()
        _require_params(params, rng, self.name)
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        self._act, self._act_grad = activation_pair(activation)
        if params is None:
            params = LayerParams(glorot_uniform(rng, (n_out, n_in), n_in, n_out), np.zeros(n_out))
        if params.weights.shape != (n_out, n_in) or params.biases.shape != (n_out,):
            raise ConfigurationError(
                f"dense params have shapes {params.weights.shape}/{params.biases.shape}, "
                f"expected {(n_out, n_in)}/{(n_out,)}"
            )
        self.p = params

    def params(self) -> list[LayerParams]:
        return [self.p]

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ConfigurationError(
                f"dense input has shape {x.shape}, weights have shape {self.p.weights.shape}"
            )
        z = x @ self.p.weights.T + self.p.biases
        y = self._act(z)
        if record:
            self._tape = (x, z, y)
        return y

    def backward(self, dy: Tensor) -> Tensor:
        x, z, y = self._pop_tape()
        dz = dy * self._act_grad(z, y)
        self.p.grad_weights += dz.T @ x
        self.p.grad_biases += dz.sum(axis=0)
        return dz @ self.p.weights


class Conv1D(Layer):
    """Same-padded 1-D cross-correlation over ``(batch, length, channels)``.

    Weights have shape ``(ch_out, kernel, ch_in)``.
    """

    name = "conv1d"

    def __init__(
        self,
        ch_in: int,
        ch_out: int,
        kernel: int = 3,
        activation: str = "identity",
        padding: str = "same",
        rng: Optional[np.random.Generator] = None,
        params: Optional[LayerParams] = None,
    ) -> None:
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigurationError(f"conv1d kernel must be a positive odd integer, got {kernel!r}")
        if padding != "same":
            raise ConfigurationError(f"conv1d padding {padding!r} is not supported; only 'same'")
        _require_params(params, rng, self.name)
        self.ch_in = ch_in
        self.ch_out = ch_out
        self.kernel = kernel
        self.activation = activation
        self._act, self._act_grad = activation_pair(activation)
        if params is None:
            shape = (ch_out, kernel, ch_in)
            params = LayerParams(
                glorot_uniform(rng, shape, kernel * ch_in, kernel * ch_out), np.zeros(ch_out)
            )
        if params.weights.shape != (ch_out, kernel, ch_in) or params.biases.shape != (ch_out,):
            raise ConfigurationError(
                f"conv1d params have shapes {params.weights.shape}/{params.biases.shape}, "
                f"expected {(ch_out, kernel, ch_in)}/{(ch_out,)}"
            )
        self.p = params

    def params(self) -> list[LayerParams]:
        return [self.p]

    def _columns(self, x: Tensor) -> Tensor:
        batch, length, ch = x.shape
        pad = (self.kernel - 1) // 2
        xp = np.zeros((batch, length + 2 * pad, ch))
        xp[:, pad : pad + length, :] = x
        cols = np.stack([xp[:, k : k + length, :] for k in range(self.kernel)], axis=2)
        return cols.reshape(batch, length, self.kernel * ch)

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        if x.ndim != 3 or x.shape[2] != self.ch_in:
            raise ConfigurationError(
                f"conv1d input has shape {x.shape}, filters expect depth {self.ch_in}"
            )
        cols = self._columns(x)
        w_flat = self.p.weights.reshape(self.ch_out, -1)
        z = cols @ w_flat.T + self.p.biases
        y = self._act(z)
        if record:
            self._tape = (x.shape, cols, z, y)
        return y

    def backward(self, dy: Tensor) -> Tensor:
        shape, cols, z, y = self._pop_tape()
        batch, length, ch = shape
        dz = dy * self._act_grad(z, y)
        w_flat = self.p.weights.reshape(self.ch_out, -1)
        self.p.grad_weights += np.einsum("blo,blk->ok", dz, cols).reshape(self.p.weights.shape)
        self.p.grad_biases += dz.sum(axis=(0, 1))
        dcols = (dz @ w_flat).reshape(batch, length, self.kernel, ch)
        pad = (self.kernel - 1) // 2
        dxp = np.zeros((batch, length + 2 * pad, ch))
        for k in range(self.kernel):
            dxp[:, k : k + length, :] += dcols[:, :, k, :]
        return dxp[:, pad : pad + length, :]


class MaxPool1D(Layer):
    """Non-overlapping max pooling; a trailing remainder shorter than ``pool`` is dropped.

    Ties resolve to the lowest index.
    """

    name = "maxpool1d"

    def __init__(self, pool: int = 2) -> None:
        super().__init__()
        if pool < 1:
            raise ConfigurationError(f"pool size must be >= 1, got {pool!r}")
        self.pool = pool

    def output_length(self, length: int) -> int:
        if length < self.pool:
            raise ConfigurationError(f"maxpool1d input length {length} is shorter than pool {self.pool}")
        return length // self.pool

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        batch, length, ch = x.shape
        n_out = self.output_length(length)
        windows = x[:, : n_out * self.pool, :].reshape(batch, n_out, self.pool, ch)
        idx = np.argmax(windows, axis=2)
        y = np.take_along_axis(windows, idx[:, :, None, :], axis=2)[:, :, 0, :]
        if record:
            self._tape = (x.shape, idx)
        return y

    def backward(self, dy: Tensor) -> Tensor:
        shape, idx = self._pop_tape()
        batch, length, ch = shape
        n_out = idx.shape[1]
        routed = np.zeros((batch, n_out, self.pool, ch))
        np.put_along_axis(routed, idx[:, :, None, :], dy[:, :, None, :], axis=2)
        dx = np.zeros(shape)
        dx[:, : n_out * self.pool, :] = routed.reshape(batch, n_out * self.pool, ch)
        return dx


class Flatten(Layer):
    name = "flatten"

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        if record:
            self._tape = (x.shape,)
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: Tensor) -> Tensor:
        (shape,) = self._pop_tape()
        return dy.reshape(shape)


class Concat(Layer):
    """Joins two ``(batch, n)`` and ``(batch, m)`` blocks into ``(batch, n + m)``."""

    name = "concat"

    def forward(self, a: Tensor, b: Tensor, record: bool = True) -> Tensor:
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise ConfigurationError(f"concat expects two (batch, n) blocks, got {a.shape} and {b.shape}")
        if record:
            self._tape = (a.shape[1],)
        return np.concatenate([a, b], axis=1)

    def backward(self, dy: Tensor) -> tuple[Tensor, Tensor]:
        (split,) = self._pop_tape()
        return dy[:, :split], dy[:, split:]


@dataclass
class LstmCellState:
    hidden: Tensor
    cell: Tensor


@dataclass
class _LstmStep:
    xh: Tensor
    i: Tensor
    f: Tensor
    o: Tensor
    g: Tensor
    c_prev: Tensor
    tanh_c: Tensor


def _cell_step(x: Tensor, state: LstmCellState, p: LayerParams) -> tuple[LstmCellState, _LstmStep]:
    n = state.hidden.shape[-1]
    xh = np.concatenate([x, state.hidden], axis=-1)
    a = xh @ p.weights + p.biases
    i = sigmoid(a[..., :n])
    f = sigmoid(a[..., n : 2 * n])
    o = sigmoid(a[..., 2 * n : 3 * n])
    g = np.tanh(a[..., 3 * n :])
    c = f * state.cell + i * g
    tanh_c = np.tanh(c)
    return LstmCellState(o * tanh_c, c), _LstmStep(xh, i, f, o, g, state.cell, tanh_c)


def lstm_cell_step(x: Tensor, state: LstmCellState, params: LayerParams) -> LstmCellState:
    """One recurrence step; gate blocks in ``params`` are ordered input, forget, output, candidate."""
    new_state, _ = _cell_step(x, state, params)
    return new_state


class LstmStack(Layer):
    """Stacked LSTM over ``(batch, steps, features)`` returning the last layer's final hidden state.

    Layer ``l`` holds weights ``(n_in + cells, 4 * cells)`` (input rows first,
    then recurrent rows) and biases ``(4 * cells,)``. States start at zero.
    """

    name = "lstm"

    def __init__(
        self,
        n_features: int,
        cells: Sequence[int],
        rng: Optional[np.random.Generator] = None,
        params: Optional[Sequence[LayerParams]] = None,
    ) -> None:
        super().__init__()
        if not cells:
            raise ConfigurationError("lstm needs at least one layer of cells")
        if params is None and rng is None:
            raise ConfigurationError("lstm: pass either explicit params or an rng for initialization")
        self.n_features = n_features
        self.cells = tuple(int(c) for c in cells)
        self.final_states: list[LstmCellState] = []
        widths = (n_features, *self.cells[:-1])
        if params is None:
            params = [self._init_layer(rng, n_in, n) for n_in, n in zip(widths, self.cells)]
        if len(params) != len(self.cells):
            raise ConfigurationError(f"lstm has {len(self.cells)} layers but {len(params)} param blocks")
        for n_in, n, p in zip(widths, self.cells, params):
            if p.weights.shape != (n_in + n, 4 * n) or p.biases.shape != (4 * n,):
                raise ConfigurationError(
                    f"lstm layer of {n} cells has params {p.weights.shape}/{p.biases.shape}, "
                    f"expected {(n_in + n, 4 * n)}/{(4 * n,)}"
                )
        self.layer_params = list(params)

    @staticmethod
    def _init_layer(rng: np.random.Generator, n_in: int, n: int) -> LayerParams:
        w_in = glorot_uniform(rng, (n_in, 4 * n), n_in, 4 * n)
        w_rec = scaled_uniform(rng, (n, 4 * n), n)
        biases = np.zeros(4 * n)
        biases[n : 2 * n] = 1.0
        return LayerParams(np.vstack([w_in, w_rec]), biases)

    def params(self) -> list[LayerParams]:
        return list(self.layer_params)

    @property
    def output_width(self) -> int:
        return self.cells[-1]

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        if x.ndim != 3 or x.shape[1] < 1:
            raise InputError(f"lstm needs a non-empty (batch, steps, features) sequence, got shape {x.shape}")
        if x.shape[2] != self.n_features:
            raise ConfigurationError(f"lstm input has {x.shape[2]} features, expected {self.n_features}")
        batch, steps, _ = x.shape
        tapes: list[list[_LstmStep]] = []
        final_states = []
        seq = x
        for n, p in zip(self.cells, self.layer_params):
            state = LstmCellState(np.zeros((batch, n)), np.zeros((batch, n)))
            out = np.empty((batch, steps, n))
            layer_tape = []
            for t in range(steps):
                state, step = _cell_step(seq[:, t, :], state, p)
                out[:, t, :] = state.hidden
                layer_tape.append(step)
            tapes.append(layer_tape)
            final_states.append(state)
            seq = out
        if record:
            self._tape = (x.shape, tapes)
            self.final_states = final_states
        return seq[:, -1, :]

    def backward(self, dy: Tensor) -> Tensor:
        shape, tapes = self._pop_tape()
        batch, steps, _ = shape
        d_seq = np.zeros((batch, steps, self.cells[-1]))
        d_seq[:, -1, :] = dy
        for layer in reversed(range(len(self.cells))):
            d_seq = self._layer_backward(self.layer_params[layer], self.cells[layer], tapes[layer], d_seq)
        return d_seq

    @staticmethod
    def _layer_backward(p: LayerParams, n: int, tape: list[_LstmStep], d_hidden: Tensor) -> Tensor:
        batch, steps, _ = d_hidden.shape
        n_in = p.weights.shape[0] - n
        d_x = np.zeros((batch, steps, n_in))
        dh_next = np.zeros((batch, n))
        dc_next = np.zeros((batch, n))
        for t in reversed(range(steps)):
            s = tape[t]
            dh = d_hidden[:, t, :] + dh_next
            do = dh * s.tanh_c
            dc = dc_next + dh * s.o * (1.0 - s.tanh_c * s.tanh_c)
            di = dc * s.g
            dg = dc * s.i
            df = dc * s.c_prev
            dc_next = dc * s.f
            da = np.concatenate(
                [
                    di * s.i * (1.0 - s.i),
                    df * s.f * (1.0 - s.f),
                    do * s.o * (1.0 - s.o),
                    dg * (1.0 - s.g * s.g),
                ],
                axis=1,
            )
            p.grad_weights += s.xh.T @ da
            p.grad_biases += da.sum(axis=0)
            dxh = da @ p.weights.T
            d_x[:, t, :] = dxh[:, :n_in]
            dh_next = dxh[:, n_in:]
        return d_x


# Single-sample functional forms. They add and strip the batch axis.


def dense_forward(x: Tensor, params: LayerParams, activation: str = "identity") -> Tensor:
    x = as_tensor(x, "dense input")
    n_out, n_in = params.weights.shape
    if x.ndim != 1 or x.shape[0] != n_in:
        raise ConfigurationError(f"dense input has shape {x.shape}, weights have shape {params.weights.shape}")
    y = Dense(n_in, n_out, activation, params=params).forward(x[None, :])[0]
    check_finite(y, "dense output")
    return y


def conv1d_forward(
    x: Tensor, params: LayerParams, kernel: int, padding: str = "same", activation: str = "identity"
) -> Tensor:
    x = as_tensor(x, "conv1d input")
    if x.ndim == 1:
        x = x[:, None]
    ch_out, _, ch_in = params.weights.shape
    layer = Conv1D(ch_in, ch_out, kernel, activation, padding, params=params)
    y = layer.forward(x[None, :, :])[0]
    check_finite(y, "conv1d output")
    return y


def maxpool1d_forward(x: Tensor, pool: int) -> Tensor:
    x = as_tensor(x, "maxpool1d input")
    if x.ndim == 1:
        x = x[:, None]
    return MaxPool1D(pool).forward(x[None, :, :])[0]


def lstm_forward(sequence: Tensor, cells: Sequence[int], params: Sequence[LayerParams]) -> Tensor:
    seq = as_tensor(sequence, "lstm input")
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise InputError(f"lstm needs a non-empty (steps, features) sequence, got shape {seq.shape}")
    y = LstmStack(seq.shape[1], cells, params=params).forward(seq[None, :, :])[0]
    check_finite(y, "lstm output")
    return y


def concat(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ConfigurationError(f"concat expects rank-1 operands, got ranks {a.ndim} and {b.ndim}")
    return np.concatenate([a, b])
