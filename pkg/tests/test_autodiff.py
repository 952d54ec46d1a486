import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from music2dance.autodiff import Adam, Dropout, Linear, Tensor, adam_step, backward, no_grad
from music2dance.autodiff import ops as T
from music2dance.autodiff.gradcheck import check_gradients, numeric_grad, relative_error

SHAPES = [(5,), (3, 4), (2, 3, 4)]


def leaf(rng, shape, low=-2.0, high=2.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def weighted(out, rng_seed=99):
    """Scalar readout with fixed random weights so every output element matters."""
    w = np.random.default_rng(rng_seed).normal(size=out.shape)
    return T.tsum(out * w)


UNARY = {
    "exp": (T.exp, (-2, 2)),
    "log": (T.log, (0.5, 3)),
    "tanh": (T.tanh, (-2, 2)),
    "relu": (T.relu, (-2, 2)),
    "sigmoid": (T.sigmoid, (-4, 4)),
    "silu": (T.silu, (-3, 3)),
    "softplus": (T.softplus, (-3, 3)),
    "square": (T.square, (-2, 2)),
    "scale": (lambda x: T.scale(x, -1.7), (-2, 2)),
    "neg": (lambda x: -x, (-2, 2)),
    "sum_axis": (lambda x: T.tsum(x, axis=-1, keepdims=True), (-2, 2)),
    "mean": (lambda x: T.mean(x, axis=0), (-2, 2)),
    "reshape": (lambda x: T.reshape(x, (-1,)), (-2, 2)),
    "transpose": (lambda x: T.transpose(x), (-2, 2)),
    "swapaxes": (lambda x: T.swapaxes(x, 0, -1), (-2, 2)),
    "softmax": (lambda x: T.softmax(x, axis=-1), (-3, 3)),
    "getitem": (lambda x: x[..., 1:], (-2, 2)),
    "getitem_fancy": (lambda x: x[np.array([0, 0, 1])], (-2, 2)),
    "astype": (lambda x: T.astype(x, np.float64) * 2.0, (-2, 2)),
}


@pytest.mark.parametrize("shape", SHAPES, ids=str)
@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, shape):
    fn, (lo, hi) = UNARY[name]
    rng = np.random.default_rng(abs(hash((name, shape))) % 2 ** 32)
    for _ in range(3):
        x = leaf(rng, shape, lo, hi)
        if name == "relu":
            x.data[np.abs(x.data) < 1e-3] = 0.5  # stay clear of the kink
        assert check_gradients(lambda: weighted(fn(x)), [x]) < 1e-5


BINARY = {
    "add": T.add, "sub": T.sub, "mul": T.mul,
    "div": lambda a, b: T.div(a, T.exp(b)),
}


@pytest.mark.parametrize("shapes", [((4,), (4,)), ((3, 4), (4,)), ((2, 3, 4), (3, 1))], ids=str)
@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients_with_broadcasting(name, shapes):
    rng = np.random.default_rng(len(name))
    a, b = leaf(rng, shapes[0]), leaf(rng, shapes[1])
    assert check_gradients(lambda: weighted(BINARY[name](a, b)), [a, b]) < 1e-5


@pytest.mark.parametrize("shapes", [((4, 4), (4, 4)), ((2, 3), (3, 5)), ((2, 3, 4), (4, 2)),
                                    ((2, 2, 3, 4), (2, 2, 4, 3))], ids=str)
def test_matmul_gradients(shapes):
    rng = np.random.default_rng(1)
    a, b = leaf(rng, shapes[0]), leaf(rng, shapes[1])
    assert check_gradients(lambda: weighted(T.matmul(a, b)), [a, b]) < 1e-5


def test_matmul_values_and_errors():
    x = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(T.matmul(np.eye(3), x).data, x)
    assert T.matmul(np.ones((2, 3)), np.ones((3, 4))).shape == (2, 4)
    with pytest.raises(ValueError):
        T.matmul(np.ones((2, 3)), np.ones((4, 2)))


@pytest.mark.parametrize("shape", [(4, 3), (2, 5, 3), (2, 2, 2, 3)], ids=str)
def test_linear_and_layer_norm_gradients(shape):
    rng = np.random.default_rng(2)
    x, w, b = leaf(rng, shape), leaf(rng, (3, 5)), leaf(rng, (5,))
    assert check_gradients(lambda: weighted(T.linear(x, w, b)), [x, w, b]) < 1e-5
    g, beta = leaf(rng, (3,)), leaf(rng, (3,))
    assert check_gradients(lambda: weighted(T.layer_norm(x, g, beta)), [x, g, beta]) < 1e-5


@pytest.mark.parametrize("shape", [(6, 3), (2, 7, 4), (3, 2, 5, 2)], ids=str)
def test_conv1d_causal_gradients(shape):
    rng = np.random.default_rng(3)
    x, k, b = leaf(rng, shape), leaf(rng, (shape[-1], 4)), leaf(rng, (shape[-1],))
    assert check_gradients(lambda: weighted(T.conv1d_causal(x, k, b)), [x, k, b]) < 1e-5


@pytest.mark.parametrize("axis", [0, 1, -1])
def test_concat_gradients(axis):
    rng = np.random.default_rng(4)
    a, b = leaf(rng, (2, 3, 4)), leaf(rng, (2, 3, 4))
    assert check_gradients(lambda: weighted(T.concat([a, b], axis=axis)), [a, b]) < 1e-5


@pytest.mark.parametrize("idx_shape", [(3,), (2, 4), (2, 2, 3)], ids=str)
def test_embedding_gradients(idx_shape):
    rng = np.random.default_rng(5)
    table = leaf(rng, (6, 3))
    idx = rng.integers(0, 6, size=idx_shape)
    assert check_gradients(lambda: weighted(T.embedding_lookup(table, idx)), [table]) < 1e-5


def test_embedding_out_of_vocabulary():
    with pytest.raises(IndexError):
        T.embedding_lookup(Tensor(np.zeros((4, 2))), np.array([4]))


@pytest.mark.parametrize("shape", SHAPES, ids=str)
def test_dropout_gradients_with_fixed_mask(shape):
    rng = np.random.default_rng(6)
    x = leaf(rng, shape)
    fn = lambda: weighted(T.dropout(x, 0.3, True, np.random.default_rng(0)))  # noqa: E731
    assert check_gradients(fn, [x]) < 1e-5


def test_masked_softmax_gradient():
    rng = np.random.default_rng(7)
    x = leaf(rng, (3, 4))
    mask = np.array([0.0, -np.inf, 0.0, 0.0])
    assert check_gradients(lambda: weighted(T.softmax(x + mask, axis=-1)), [x]) < 1e-5


# -- values -------------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(np.zeros(3)).data, [1 / 3] * 3, rtol=1e-15)
    np.testing.assert_array_equal(T.softmax(np.array([0.0, -np.inf])).data, [1.0, 0.0])


def test_softmax_fully_masked_row_is_flagged():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = T.softmax(np.array([[0.0, 1.0], [-np.inf, -np.inf]]), axis=-1)
    np.testing.assert_array_equal(out.data[1], 0.0)
    assert out.flags.tolist() == [False, True]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=20, size=(5, 7))
    x[rng.random(x.shape) < 0.3] = -np.inf
    x[:, 0] = rng.normal()
    out = T.softmax(x, axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(out[np.isneginf(x)] == 0.0)


def test_tanh_and_dropout_eval():
    assert T.tanh(np.zeros(1)).data[0] == 0.0
    assert np.all(np.abs(T.tanh(np.linspace(-30, 30, 7)).data) <= 1.0)
    x = np.random.default_rng(0).normal(size=(4, 4))
    np.testing.assert_array_equal(T.dropout(x, 0.5, training=False).data, x)
    d = Dropout(0.5, np.random.default_rng(0)).eval()
    np.testing.assert_array_equal(d(Tensor(x)).data, x)


def test_dropout_keeps_expectation():
    x = np.ones(200_000)
    out = T.dropout(x, 0.25, True, np.random.default_rng(0)).data
    assert set(np.unique(out)) == {0.0, 1 / 0.75}
    assert abs(out.mean() - 1.0) < 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 8))
def test_conv1d_is_causal(seed, t):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 10, 3))
    k = rng.normal(size=(3, 4))
    before = T.conv1d_causal(x, Tensor(k)).data
    x2 = x.copy()
    x2[:, t + 1:] = rng.normal(size=x2[:, t + 1:].shape)
    after = T.conv1d_causal(x2, Tensor(k)).data
    np.testing.assert_array_equal(after[:, :t + 1], before[:, :t + 1])


# -- backward driver ----------------------------------------------------------

def test_backward_simple_cases():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward(T.tsum(x))
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])
    x.grad = None
    backward(T.tsum(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_accumulates_and_clears_graph():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * 2.0
    loss = T.tsum(y + y * x)
    backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0 + 2 * 2 * 3.0])
    assert loss._parents == () and y._parents == ()


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


@pytest.mark.parametrize("seed", range(3))
def test_mlp_gradient(seed):
    rng = np.random.default_rng(seed)
    l1, l2 = Linear(5, 7, rng), Linear(7, 2, rng)
    for p in l1.parameters() + l2.parameters():
        p.data = p.data.astype(np.float64)
    x = rng.normal(size=(4, 5))
    fn = lambda: T.mean(T.square(l2(T.tanh(l1(x))) - 1.0))  # noqa: E731
    assert check_gradients(fn, l1.parameters() + l2.parameters()) < 1e-4


def test_gradcheck_catches_wrong_gradient():
    x = Tensor(np.array([0.3, -0.8]), requires_grad=True)

    def bad_square(t):
        return T.make_op(t.data ** 2, (t,), lambda g: (g * t.data,))  # missing factor 2

    assert check_gradients(lambda: T.tsum(bad_square(x)), [x]) > 0.4


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9])) == pytest.approx(1e-3)
    assert relative_error(np.array([2.0]), np.array([1.0])) == 0.5
    grads = numeric_grad(lambda: T.tsum(T.square(x)), [x := Tensor(np.array([1.5]))])
    np.testing.assert_allclose(grads[0], [3.0], rtol=1e-8)


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    p = np.array([1.0, -2.0])
    new, m, v = adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2), 1, 1e-3)
    np.testing.assert_array_equal(new, p)


def test_adam_first_step_closed_form():
    g = np.array([0.5, -2e-3, 3.0])
    lr, b1, b2, eps = 1e-4, 0.9, 0.999, 1e-8
    new, m, v = adam_step(np.zeros(3), g, np.zeros(3), np.zeros(3), 1, lr, b1, b2, eps)
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    np.testing.assert_allclose(new, -lr * m_hat / (np.sqrt(v_hat) + eps), rtol=1e-12)
    np.testing.assert_allclose(new, -lr * g / (np.abs(g) + eps), rtol=1e-12)


def test_adam_moments_decay():
    m, v = np.ones(2), np.ones(2)
    p = np.zeros(2)
    for step in range(1, 20001):
        p, m, v = adam_step(p, np.zeros(2), m, v, step, 1e-4)
    assert np.all(m < 1e-12) and np.all(v < 1e-8)


def test_adam_optimiser_state_round_trip():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=3), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.ones(3)
    opt.step()
    state = opt.state_dict()
    q = Tensor(p.data.copy(), requires_grad=True)
    opt2 = Adam([q], lr=0.1)
    opt2.load_state_dict(state)
    for o, t in ((opt, p), (opt2, q)):
        t.grad = np.full(3, 0.5)
        o.step()
    np.testing.assert_array_equal(p.data, q.data)
