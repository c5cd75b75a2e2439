import numpy as np
import pytest

from vcsel_rul.errors import ConfigurationError, InputError, NumericalError, UsageError
from vcsel_rul.layers import (
    Concat,
    Dense,
    Flatten,
    LstmCellState,
    LstmStack,
    MaxPool1D,
    concat,
    conv1d_forward,
    dense_forward,
    lstm_cell_step,
    lstm_forward,
    maxpool1d_forward,
)
from vcsel_rul.tensor import LayerParams, sigmoid


def test_dense_forward_values():
    params = LayerParams(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, -1.0]))
    np.testing.assert_array_equal(dense_forward([1.0, 1.0], params), [3.5, 6.0])
    np.testing.assert_array_equal(dense_forward([-1.0, 0.0], params, "relu"), [0.0, 0.0])


def test_dense_rejects_mismatched_input():
    params = LayerParams(np.ones((2, 3)), np.zeros(2))
    with pytest.raises(ConfigurationError):
        dense_forward([1.0, 2.0], params)


def test_dense_rejects_non_finite_input():
    params = LayerParams(np.ones((1, 2)), np.zeros(1))
    with pytest.raises(NumericalError):
        dense_forward([1.0, float("nan")], params)


def test_conv1d_is_cross_correlation_with_same_padding():
    params = LayerParams(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1), np.zeros(1))
    y = conv1d_forward([1.0, 2.0, 3.0, 4.0], params, kernel=3)
    np.testing.assert_array_equal(y[:, 0], [8.0, 14.0, 20.0, 11.0])


def test_conv1d_rejects_even_kernel():
    params = LayerParams(np.ones((1, 2, 1)), np.zeros(1))
    with pytest.raises(ConfigurationError):
        conv1d_forward([1.0, 2.0], params, kernel=2)


def test_maxpool_drops_remainder():
    y = maxpool1d_forward([1.0, 3.0, 2.0, 2.0, 5.0], 2)
    np.testing.assert_array_equal(y[:, 0], [3.0, 2.0])


def test_maxpool_tie_routes_gradient_to_first_index():
    pool = MaxPool1D(2)
    pool.forward(np.array([[[2.0], [2.0]]]))
    dx = pool.backward(np.array([[[1.0]]]))
    np.testing.assert_array_equal(dx[0, :, 0], [1.0, 0.0])


def test_maxpool_rejects_short_input():
    with pytest.raises(ConfigurationError):
        maxpool1d_forward([1.0], 2)


def test_flatten_roundtrips_shape():
    layer = Flatten()
    x = np.arange(12.0).reshape(2, 3, 2)
    y = layer.forward(x)
    assert y.shape == (2, 6)
    assert layer.backward(y).shape == x.shape


def test_lstm_cell_step_zero_weights():
    n = 2
    biases = np.zeros(4 * n)
    biases[3 * n :] = 1.0
    params = LayerParams(np.zeros((1 + n, 4 * n)), biases)
    state = lstm_cell_step(np.array([0.3]), LstmCellState(np.zeros(n), np.zeros(n)), params)
    c = 0.5 * np.tanh(1.0)
    np.testing.assert_allclose(state.cell, [c, c])
    np.testing.assert_allclose(state.hidden, 0.5 * np.tanh([c, c]))


def test_lstm_gate_order_is_input_forget_output_candidate():
    n = 1
    # input gate shut, forget gate open, output gate open
    biases = np.array([-50.0, 50.0, 50.0, 0.0])
    params = LayerParams(np.zeros((1 + n, 4 * n)), biases)
    state = lstm_cell_step(np.array([1.0]), LstmCellState(np.zeros(n), np.ones(n)), params)
    np.testing.assert_allclose(state.cell, [1.0], atol=1e-12)
    np.testing.assert_allclose(state.hidden, [np.tanh(1.0)], atol=1e-12)


def test_lstm_init_sets_forget_bias():
    stack = LstmStack(1, (3, 2), rng=np.random.default_rng(0))
    for n, p in zip((3, 2), stack.params()):
        np.testing.assert_array_equal(p.biases[n : 2 * n], 1.0)
        np.testing.assert_array_equal(p.biases[:n], 0.0)
        assert p.weights.shape[1] == 4 * n


def test_lstm_forward_matches_stack():
    rng = np.random.default_rng(3)
    stack = LstmStack(1, (4, 2), rng=rng)
    seq = rng.standard_normal(5)
    y = lstm_forward(seq, (4, 2), stack.params())
    np.testing.assert_array_equal(y, stack.forward(seq[None, :, None])[0])
    assert y.shape == (2,)


def test_lstm_final_states_only_recorded():
    stack = LstmStack(1, (2,), rng=np.random.default_rng(0))
    stack.forward(np.ones((1, 3, 1)), record=False)
    assert stack.final_states == []
    y = stack.forward(np.ones((1, 3, 1)))
    np.testing.assert_array_equal(stack.final_states[-1].hidden, y)


def test_lstm_rejects_empty_sequence():
    params = LstmStack(1, (2,), rng=np.random.default_rng(0)).params()
    with pytest.raises(InputError):
        lstm_forward(np.zeros((0, 1)), (2,), params)


def test_backward_without_forward_is_usage_error():
    layer = Dense(2, 1, rng=np.random.default_rng(0))
    with pytest.raises(UsageError):
        layer.backward(np.ones((1, 1)))
    layer.forward(np.ones((1, 2)), record=False)
    with pytest.raises(UsageError):
        layer.backward(np.ones((1, 1)))


def test_backward_consumes_tape():
    layer = Dense(2, 1, rng=np.random.default_rng(0))
    layer.forward(np.ones((1, 2)))
    layer.backward(np.ones((1, 1)))
    with pytest.raises(UsageError):
        layer.backward(np.ones((1, 1)))


def test_backward_accumulates_gradients():
    layer = Dense(2, 1, rng=np.random.default_rng(0))
    x = np.array([[1.0, 2.0]])
    for _ in range(2):
        layer.forward(x)
        layer.backward(np.ones((1, 1)))
    np.testing.assert_array_equal(layer.p.grad_weights, [[2.0, 4.0]])
    layer.zero_grad()
    assert not layer.p.grad_weights.any()


def test_concat_rejects_rank_two():
    with pytest.raises(ConfigurationError):
        concat(np.ones((1, 2)), np.ones(2))
    np.testing.assert_array_equal(concat([1.0], [2.0, 3.0]), [1.0, 2.0, 3.0])


def test_sigmoid_is_stable_at_extremes():
    y = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(y, [0.0, 0.5, 1.0])


@pytest.mark.parametrize("seed", range(10))
def test_lstm_hidden_output_stays_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    stack = LstmStack(1, (6, 3), rng=rng)
    y = stack.forward(3.0 * rng.standard_normal((8, 12, 1)))
    assert np.all(np.abs(y) < 1.0)
    assert all(np.all(np.abs(s.hidden) < 1.0) for s in stack.final_states)


def test_lstm_constant_input_without_recurrence_is_monotone_in_steps():
    n = 3
    rng = np.random.default_rng(7)
    weights = np.zeros((1 + n, 4 * n))
    weights[0] = rng.standard_normal(4 * n)
    params = [LayerParams(weights, rng.standard_normal(4 * n))]
    hidden = np.array([lstm_forward(np.full(steps, 0.8), (n,), params) for steps in range(1, 11)])
    # every unit keeps the sign of its first step and only grows in magnitude
    assert np.all(np.sign(hidden) == np.sign(hidden[0]))
    assert np.all(np.diff(np.abs(hidden), axis=0) >= 0.0)


@pytest.mark.parametrize(
    "x",
    [
        np.random.default_rng(0).standard_normal((3, 7, 2)),
        np.array([[[1.0], [1.0], [2.0], [2.0], [0.0], [5.0]]]),
    ],
)
def test_maxpool_backward_conserves_gradient_sum(x):
    pool = MaxPool1D(2)
    y = pool.forward(x)
    dy = np.random.default_rng(1).standard_normal(y.shape)
    dx = pool.backward(dy)
    assert dx.shape == x.shape
    np.testing.assert_allclose(dx.sum(), dy.sum(), rtol=1e-12)
    np.testing.assert_allclose(dx.sum(axis=1), dy.sum(axis=1), rtol=1e-12)


def test_concat_backward_routes_each_slice_to_its_operand():
    rng = np.random.default_rng(2)
    layer = Concat()
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 5))
    layer.forward(a, b)
    dy = rng.standard_normal((4, 8))
    da, db = layer.backward(dy)
    np.testing.assert_array_equal(da, dy[:, :3])
    np.testing.assert_array_equal(db, dy[:, 3:])

    # changing the gradient of one operand leaves the other untouched
    layer.forward(a, b)
    dy2 = dy.copy()
    dy2[:, 3:] += 10.0
    da2, db2 = layer.backward(dy2)
    np.testing.assert_array_equal(da2, da)
    assert not np.array_equal(db2, db)
