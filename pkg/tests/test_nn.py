import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fortattack.errors import (
    DimensionError,
    EmptySupportError,
    NonFiniteError,
    PoisonedUpdateError,
    UsageError,
)
from fortattack.nn import (
    AdamHyper,
    AdamState,
    Layer,
    MlpParams,
    Tape,
    Tensor,
    adam_step,
    backward,
    dump_arrays,
    init_mlp,
    load_arrays,
    log_softmax,
    masked_softmax,
    mlp_forward,
    softmax,
    square,
    tsum,
)
from fortattack.nn import tensor as T


def layer(w, b, act="identity"):
    return Layer(Tensor(np.array(w, float), True), Tensor(np.array(b, float), True), act)


def fd_grad(f, arr, eps=1e-5):
    """Central finite differences of scalar f() w.r.t. arr (mutated in place)."""
    g = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + eps
        hi = f()
        arr[i] = old - eps
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


# mlp_forward

def test_identity_layer_passes_input_through():
    net = MlpParams([layer(np.eye(2), [0, 0])])
    x = np.array([[3.0, 4.0]])
    np.testing.assert_array_equal(mlp_forward(net, x).data, x)


def test_zero_weight_layer_outputs_bias():
    net = MlpParams([layer(np.zeros((2, 3)), [1, 2])])
    out = mlp_forward(net, np.array([7.0, -1.0, 2.5]))
    np.testing.assert_array_equal(out.data, [1.0, 2.0])


def test_two_layer_hand_evaluated():
    net = MlpParams([
        layer([[0.5, -1.0], [2.0, 0.25]], [0.1, -0.2], "tanh"),
        layer([[1.0, -2.0]], [0.3]),
    ])
    x = [1.0, 2.0]
    # hidden pre-activations: 0.5*1 - 1*2 + 0.1 = -1.4 ; 2*1 + 0.25*2 - 0.2 = 2.3
    h1, h2 = math.tanh(-1.4), math.tanh(2.3)
    expected = 1.0 * h1 - 2.0 * h2 + 0.3
    assert mlp_forward(net, x).data[0] == pytest.approx(expected, abs=1e-15)


def test_forward_shape_mismatch_raises():
    net = MlpParams([layer(np.eye(2), [0, 0])])
    with pytest.raises(DimensionError):
        mlp_forward(net, np.ones(3))


def test_non_chaining_layers_rejected():
    with pytest.raises(DimensionError):
        MlpParams([layer(np.ones((3, 2)), np.zeros(3)), layer(np.ones((1, 2)), [0.0])])


def test_forward_is_deterministic():
    net = init_mlp([5, 16, 16, 3], np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((4, 5))
    a = mlp_forward(net, x).data
    b = mlp_forward(net, x).data
    assert a.tobytes() == b.tobytes()


def test_parameter_count_is_function_of_sizes():
    a = init_mlp([6, 64, 64, 32], np.random.default_rng(0))
    b = init_mlp([6, 64, 64, 32], np.random.default_rng(99))
    assert a.num_parameters() == b.num_parameters() == 6 * 64 + 64 + 64 * 64 + 64 + 64 * 32 + 32


# backward

def test_sum_of_identity_layer_weight_grad_is_outer_product():
    x = np.array([0.3, -1.2, 2.0])
    net = MlpParams([layer(np.eye(3)[:2], [0.0, 0.0])])
    with Tape() as tape:
        loss = tsum(mlp_forward(net, x))
    gw, gb = backward(tape, loss, net.parameters())
    np.testing.assert_allclose(gw, np.outer(np.ones(2), x), atol=1e-12)

    w = net.layers[0].weight.data
    numeric = fd_grad(lambda: float(np.sum(w @ x)), w)
    np.testing.assert_allclose(gw, numeric, atol=1e-8)
    np.testing.assert_allclose(gb, [1.0, 1.0])


def test_constant_loss_gives_zero_gradients():
    net = init_mlp([2, 3, 1], np.random.default_rng(0))
    with Tape() as tape:
        loss = tsum(Tensor([1.0, 2.0]) * 3.0)
    grads = backward(tape, loss, net.parameters())
    assert all(not g.any() for g in grads)


def test_scalar_square_gradient():
    w = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = square(w)
    (g,) = backward(tape, loss, [w])
    assert g == 6.0


def test_unused_parameter_gradient_is_zero():
    used = Tensor(2.0, True)
    unused = Tensor(np.ones(3), True)
    with Tape() as tape:
        loss = used * used
    g_used, g_unused = backward(tape, loss, [used, unused])
    assert g_used == 4.0
    np.testing.assert_array_equal(g_unused, np.zeros(3))


def test_loss_not_on_tape_is_usage_error():
    w = Tensor(1.0, True)
    with Tape():
        pass
    with Tape() as tape:
        _ = w * 2.0
    with pytest.raises(UsageError):
        backward(tape, Tensor(5.0), [w])


def test_tape_replay_is_bit_exact():
    net = init_mlp([4, 8, 8, 2], np.random.default_rng(3))
    x = np.random.default_rng(4).standard_normal((5, 4))
    with Tape() as tape:
        out = log_softmax(mlp_forward(net, x))
        loss = tsum(out)
    replayed = tape.replay()
    originals = [n.out.data for n in tape.nodes]
    assert len(replayed) == len(originals)
    for a, b in zip(replayed, originals):
        assert a.tobytes() == b.tobytes()


@settings(max_examples=25, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 16), min_size=2, max_size=4),
    seed=st.integers(0, 2**31 - 1),
)
def test_gradient_check_random_mlps(sizes, seed):
    rng = np.random.default_rng(seed)
    net = init_mlp(sizes, rng, activations=["tanh"] * (len(sizes) - 1))
    x = rng.standard_normal((3, sizes[0]))
    target = rng.standard_normal((3, sizes[-1]))

    def loss_value():
        return float(np.sum((mlp_forward(net, x).data - target) ** 2))

    with Tape() as tape:
        loss = tsum(square(mlp_forward(net, x) - target))
    grads = backward(tape, loss, net.parameters())
    for p, g in zip(net.parameters(), grads):
        numeric = fd_grad(loss_value, p.data)
        rel = np.abs(g - numeric) / np.maximum(1e-6, np.abs(g) + np.abs(numeric))
        assert rel.max() < 1e-4


def test_broadcast_gradients_reduce_to_operand_shape():
    a = Tensor(np.arange(6.0).reshape(2, 3), True)
    b = Tensor(np.array([1.0, 2.0, 3.0]), True)
    with Tape() as tape:
        loss = tsum(a * b)
    ga, gb = backward(tape, loss, [a, b])
    np.testing.assert_array_equal(ga, np.broadcast_to(b.data, (2, 3)))
    np.testing.assert_array_equal(gb, a.data.sum(axis=0))


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError):
        T.exp(Tensor(1e4))


# softmax

def test_softmax_uniform():
    np.testing.assert_allclose(softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)


def test_softmax_two_logits():
    p = softmax(np.array([1.0, 0.0]))
    e = math.e
    np.testing.assert_allclose(p, [e / (e + 1), 1 / (e + 1)], atol=1e-15)
    np.testing.assert_allclose(p, [0.7311, 0.2689], atol=5e-5)


def test_softmax_masked_middle():
    p = softmax(np.array([5.0, 5.0, 5.0]), np.array([True, False, True]))
    assert p[1] == 0.0
    np.testing.assert_allclose(p, [0.5, 0.0, 0.5], atol=1e-15)


def test_softmax_all_masked_raises():
    with pytest.raises(EmptySupportError):
        softmax(np.ones(3), np.zeros(3, bool))


def test_masked_softmax_allow_empty_gives_zero_row():
    p = masked_softmax(np.ones((2, 3)), np.array([[True, True, False], [False] * 3]), allow_empty=True)
    np.testing.assert_allclose(p.data[0], [0.5, 0.5, 0.0])
    np.testing.assert_array_equal(p.data[1], np.zeros(3))


@settings(max_examples=200, deadline=None)
@given(
    logits=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12),
    shift=st.floats(-1e3, 1e3),
)
def test_softmax_normalized_and_shift_invariant(logits, shift):
    x = np.array(logits)
    p = softmax(x)
    assert abs(p.sum() - 1.0) < 1e-9
    assert (p > 0).any()
    np.testing.assert_allclose(softmax(x + shift), p, atol=1e-9)


def test_masked_softmax_gradient_matches_fd():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 4))
    mask = np.array([[True, False, True, True], [True, True, False, False]])
    w = rng.standard_normal((2, 4))
    xt = Tensor(x, True)
    with Tape() as tape:
        loss = tsum(masked_softmax(xt, mask) * w) + tsum(log_softmax(xt, mask) * w)
    (g,) = backward(tape, loss, [xt])

    def f():
        return float(np.sum(masked_softmax(x, mask).data * w) + np.sum(log_softmax(x, mask).data * w))

    np.testing.assert_allclose(g, fd_grad(f, x), atol=1e-8)


# adam

def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    state = AdamState.zeros_like(p)
    new, state2 = adam_step(p, [np.zeros(2)], state)
    np.testing.assert_array_equal(new[0], p[0])
    assert state2.step == 1


def test_adam_descends_on_square():
    w = np.array([1.0])
    new, _ = adam_step([w], [2 * w], AdamState.zeros_like([w]))
    assert new[0][0] < 1.0


def test_adam_matches_scalar_recurrence():
    # f(w) = (w - 3)^2 / 2 ; grad = w - 3
    hyper = AdamHyper(lr=0.1)
    w = np.array([0.5])
    state = AdamState.zeros_like([w])
    ws = w.copy()
    for _ in range(3):
        (w,), state = adam_step([w], [w - 3.0], state, hyper)

    # independent scalar recurrence
    x, m, v = 0.5, 0.0, 0.0
    for t in range(1, 4):
        g = x - 3.0
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9**t)
        vhat = v / (1 - 0.999**t)
        x = x - 0.1 * mhat / (math.sqrt(vhat) + 1e-8)
    assert w[0] == pytest.approx(x, abs=1e-14)
    assert state.step == 3
    assert ws[0] == 0.5


def test_adam_refuses_non_finite_gradient():
    w = [np.array([1.0])]
    state = AdamState.zeros_like(w)
    with pytest.raises(PoisonedUpdateError):
        adam_step(w, [np.array([np.nan])], state)
    assert state.step == 0


# serialization

def test_array_container_round_trip_is_bit_exact():
    rng = np.random.default_rng(0)
    arrays = {"w": rng.standard_normal((3, 4)), "b": np.array([np.pi, -0.0, 1e-310])}
    blob = dump_arrays(arrays, {"kind": "test"})
    back, meta = load_arrays(blob)
    assert meta == {"kind": "test"}
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    assert dump_arrays(back, meta) == blob
