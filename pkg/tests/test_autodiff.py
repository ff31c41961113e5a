import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rpanav.autodiff import (
    LSTM,
    AdamState,
    CheckpointError,
    Linear,
    ParameterStore,
    ShapeError,
    Value,
    adam_step,
    clip_global_norm,
    concat,
    dropout,
    embedding,
    global_norm,
    kernels,
    log_softmax,
    lstm_cell,
    matmul,
    mse,
    nll,
    pick,
    relu,
    sigmoid,
    softmax,
    tanh,
    vsum,
)
from rpanav.autodiff import _fallback, checkpoint
from rpanav.autodiff.gradcheck import check_gradients


def test_softmax_uniform_logits():
    out = softmax(Value([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_sigmoid_zero():
    assert sigmoid(Value(0.0)).item() == 0.5


def test_mse_identical():
    assert mse(Value([1.0, 2.0]), Value([1.0, 2.0])).item() == 0.0


def test_backward_square():
    x = Value(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_backward_sigmoid_at_zero():
    x = Value(0.0, requires_grad=True)
    sigmoid(x).backward()
    assert x.grad == pytest.approx(0.25)


def test_backward_requires_scalar_root():
    x = Value(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        (x * 2.0).backward()


@pytest.mark.parametrize("build, needle", [
    (lambda: matmul(Value(np.ones((2, 3))), Value(np.ones((4, 2)))), "matmul"),
    (lambda: Value(np.ones((2, 3))) + Value(np.ones((4,))), "add"),
    (lambda: concat([Value(np.ones((2, 3))), Value(np.ones((3, 3)))], axis=1), "concat"),
    (lambda: mse(Value(np.ones(3)), Value(np.ones(4))), "mse"),
    (lambda: softmax(Value(np.ones((2, 3))), mask=np.ones((2, 2), bool)), "softmax"),
    (lambda: lstm_cell(Value(np.ones((1, 3))), Value(np.ones((1, 2))), Value(np.ones((1, 2))),
                       Value(np.ones((4, 8))), Value(np.ones((2, 8))), Value(np.ones(8))), "lstm_cell"),
])
def test_shape_errors_name_the_primitive(build, needle):
    with pytest.raises(ShapeError, match=needle):
        build()


def test_embedding_rejects_out_of_range():
    with pytest.raises(IndexError):
        embedding(Value(np.ones((4, 2))), [0, 4])


def _uniform(rng, *shape):
    return Value(rng.uniform(-2, 2, size=shape), requires_grad=True)


def _primitive_cases():
    """(name, builder) where builder(rng) -> (loss_fn, inputs)."""
    def unary(fn):
        def build(rng):
            x = _uniform(rng, 3, 4)
            w = rng.normal(size=(3, 4))
            return (lambda: vsum(fn(x) * w)), [x]
        return build

    def matmul_case(rng):
        a, b = _uniform(rng, 3, 4), _uniform(rng, 4, 2)
        return (lambda: vsum(tanh(matmul(a, b)))), [a, b]

    def batched_matmul_case(rng):
        a, b = _uniform(rng, 2, 3, 4), _uniform(rng, 4, 2)
        return (lambda: vsum(tanh(matmul(a, b)))), [a, b]

    def add_case(rng):
        a, b = _uniform(rng, 3, 4), _uniform(rng, 4)
        return (lambda: vsum(tanh(a + b))), [a, b]

    def mul_case(rng):
        a, b = _uniform(rng, 3, 4), _uniform(rng, 3, 1)
        return (lambda: vsum(a * b * a)), [a, b]

    def concat_case(rng):
        a, b = _uniform(rng, 2, 3), _uniform(rng, 2, 2)
        w = rng.normal(size=(2, 5))
        return (lambda: vsum(tanh(concat([a, b], axis=1)) * w)), [a, b]

    def softmax_case(rng):
        x = _uniform(rng, 3, 5)
        w = rng.normal(size=(3, 5))
        return (lambda: vsum(softmax(x) * w)), [x]

    def masked_softmax_case(rng):
        x = _uniform(rng, 3, 5)
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1], [1, 0, 1, 0, 1]], bool)
        w = rng.normal(size=(3, 5))
        return (lambda: vsum(softmax(x, mask) * w)), [x]

    def log_softmax_case(rng):
        x = _uniform(rng, 3, 5)
        w = rng.normal(size=(3, 5))
        return (lambda: vsum(log_softmax(x) * w)), [x]

    def embedding_case(rng):
        table = _uniform(rng, 5, 3)
        ids = np.array([0, 2, 2, 4])
        w = rng.normal(size=(4, 3))
        return (lambda: vsum(tanh(embedding(table, ids)) * w)), [table]

    def dropout_case(rng):
        x = _uniform(rng, 4, 4)
        seed = int(rng.integers(1 << 30))
        return (lambda: vsum(tanh(dropout(x, 0.5, np.random.default_rng(seed), True)))), [x]

    def mse_case(rng):
        a, b = _uniform(rng, 3, 4), _uniform(rng, 3, 4)
        return (lambda: mse(a, b)), [a, b]

    def nll_case(rng):
        x = _uniform(rng, 4, 6)
        idx = np.array([0, 5, 2, 2])
        return (lambda: nll(log_softmax(x), idx)), [x]

    def pick_case(rng):
        x = _uniform(rng, 4, 6)
        idx = np.array([1, 1, 3, 0])
        return (lambda: vsum(tanh(pick(x, idx)))), [x]

    def lstm_case(rng):
        x, h, c = _uniform(rng, 2, 3), _uniform(rng, 2, 4), _uniform(rng, 2, 4)
        wx, wh, b = _uniform(rng, 3, 16), _uniform(rng, 4, 16), _uniform(rng, 16)
        w = rng.normal(size=(2, 4))

        def f():
            h1, c1 = lstm_cell(x, h, c, wx, wh, b)
            h2, c2 = lstm_cell(x, h1, c1, wx, wh, b)
            return vsum(h2 * w) + vsum(c2)
        return f, [x, h, c, wx, wh, b]

    def slice_reshape_case(rng):
        x = _uniform(rng, 3, 4)
        return (lambda: vsum(tanh(x[:, 1:3].reshape(6) * 2.0))), [x]

    return {
        "sigmoid": unary(sigmoid), "tanh": unary(tanh), "relu": unary(relu),
        "matmul": matmul_case, "batched_matmul": batched_matmul_case, "add": add_case,
        "mul": mul_case, "concat": concat_case, "softmax": softmax_case,
        "masked_softmax": masked_softmax_case, "log_softmax": log_softmax_case,
        "embedding": embedding_case, "dropout": dropout_case, "mse": mse_case,
        "nll": nll_case, "pick": pick_case, "lstm_cell": lstm_case,
        "slice_reshape": slice_reshape_case,
    }


PRIMITIVES = _primitive_cases()


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    f, inputs = PRIMITIVES[name](rng)
    assert check_gradients(f, inputs, step=1e-3) < 1e-4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    out = softmax(Value(x)).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


def test_gradient_accumulates_over_two_uses():
    x = Value(np.array([0.3, -1.2]), requires_grad=True)
    w1, w2 = np.array([1.5, 2.0]), np.array([-0.5, 4.0])
    (vsum(tanh(x) * w1) + vsum(sigmoid(x) * w2)).backward()
    both = x.grad.copy()

    parts = []
    for fn, w in ((tanh, w1), (sigmoid, w2)):
        x.grad = None
        vsum(fn(x) * w).backward()
        parts.append(x.grad.copy())
    np.testing.assert_allclose(both, parts[0] + parts[1], rtol=1e-14)


def _store_with_grads(grads):
    store = ParameterStore()
    for k, g in enumerate(grads):
        p = store.add(f"p{k}", np.zeros_like(np.asarray(g, dtype=float)))
        p.grad = np.asarray(g, dtype=float).copy()
    return store


def test_clip_at_bound_is_unchanged():
    store = _store_with_grads([[3.0, 4.0]])
    assert clip_global_norm(store, 5.0) == pytest.approx(5.0)
    np.testing.assert_array_equal(store["p0"].grad, [3.0, 4.0])


def test_clip_scales_by_half():
    store = _store_with_grads([[3.0, 4.0]])
    assert clip_global_norm(store, 2.5) == pytest.approx(5.0)
    np.testing.assert_allclose(store["p0"].grad, [1.5, 2.0])


def test_clip_zero_gradients():
    store = _store_with_grads([[0.0, 0.0], [0.0]])
    assert clip_global_norm(store, 1.0) == 0.0
    np.testing.assert_array_equal(store["p0"].grad, [0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(arrays(np.float64, st.integers(1, 5), elements=st.floats(-1e3, 1e3)),
                min_size=1, max_size=4),
       st.floats(1e-3, 1e3))
def test_clip_never_increases_norm(grads, bound):
    store = _store_with_grads(grads)
    before = global_norm(store)
    clip_global_norm(store, bound)
    after = global_norm(store)
    assert after <= before + 1e-9
    assert after <= bound + 1e-9


def test_adam_first_step():
    store = ParameterStore()
    p = store.add("w", np.array([2.0]))
    state = AdamState.for_store(store, lr=0.1)
    p.grad = np.array([1.0])
    adam_step(store, state)
    # m_hat = 1, v_hat = 1: delta = -lr / (1 + eps)
    assert p.data[0] - 2.0 == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)


def test_adam_zero_gradient_no_decay():
    store = ParameterStore()
    p = store.add("w", np.array([2.0, -1.0]))
    state = AdamState.for_store(store, lr=0.1)
    p.grad = np.zeros(2)
    adam_step(store, state)
    np.testing.assert_array_equal(p.data, [2.0, -1.0])


def test_adam_weight_decay_enters_gradient():
    store = ParameterStore()
    p = store.add("w", np.array([2.0]))
    state = AdamState.for_store(store, lr=0.1, weight_decay=0.5)
    p.grad = np.zeros(1)
    adam_step(store, state)
    # g = 0.5 * 2 = 1 > 0 so the step is -lr in sign
    assert p.data[0] == pytest.approx(2.0 - 0.1 / (1.0 + 1e-8))


def test_adam_is_deterministic():
    out = []
    for _ in range(2):
        rng = np.random.default_rng(5)
        store = ParameterStore()
        Linear(store, "a", 3, 2, rng)
        state = AdamState.for_store(store, lr=0.01, weight_decay=5e-4)
        for _, v in store.items():
            v.grad = np.ones_like(v.data) * 0.3
        adam_step(store, state)
        out.append(store.snapshot())
    for k in out[0]:
        assert out[0][k].tobytes() == out[1][k].tobytes()


def test_adam_detects_shape_drift():
    store = ParameterStore()
    store.add("w", np.zeros(2))
    state = AdamState.for_store(store)
    state.m["w"] = np.zeros(3)
    with pytest.raises(ValueError):
        adam_step(store, state)


def test_store_iterates_sorted_and_rejects_duplicates():
    store = ParameterStore()
    store.add("b", np.zeros(1))
    store.add("a", np.zeros(1))
    assert list(store) == ["a", "b"]
    with pytest.raises(KeyError):
        store.add("a", np.zeros(1))


def test_lstm_forget_bias_is_one(rng):
    store = ParameterStore()
    cell = LSTM(store, "enc", 3, 5, rng)
    np.testing.assert_array_equal(cell.bias.data[5:10], 1.0)
    bound = 1 / np.sqrt(5)
    assert np.abs(cell.w_x.data).max() <= bound


def test_checkpoint_round_trip(tmp_path, rng):
    store = ParameterStore("policy")
    Linear(store, "head", 4, 3, rng)
    LSTM(store, "dec", 2, 3, rng)
    path = tmp_path / "p.ckpt"
    checkpoint.save(path, store)
    blob = path.read_bytes()
    assert blob[:8] == b"RPANAVCK"
    assert struct.unpack_from("<I", blob, 8)[0] == 1

    other = ParameterStore("policy")
    Linear(other, "head", 4, 3, np.random.default_rng(0))
    LSTM(other, "dec", 2, 3, np.random.default_rng(0))
    checkpoint.load_into(path, other)
    for k, v in store.items():
        assert v.data.tobytes() == other[k].data.tobytes()


def test_checkpoint_rejects_unknown_version(tmp_path, rng):
    store = ParameterStore("policy")
    Linear(store, "head", 2, 2, rng)
    blob = bytearray(checkpoint.dumps(store.snapshot(), "policy"))
    struct.pack_into("<I", blob, 8, 99)
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.loads(bytes(blob))


def test_checkpoint_rejects_wrong_component(tmp_path, rng):
    store = ParameterStore("envmodel")
    Linear(store, "proj", 2, 2, rng)
    path = tmp_path / "e.ckpt"
    checkpoint.save(path, store)
    with pytest.raises(CheckpointError, match="component"):
        checkpoint.load_arrays(path, "policy")


def test_training_state_round_trip(tmp_path, rng):
    store = ParameterStore("policy")
    Linear(store, "head", 3, 2, rng)
    adam = AdamState.for_store(store, lr=0.01, weight_decay=1e-3)
    for _, v in store.items():
        v.grad = rng.normal(size=v.shape)
    adam_step(store, adam)
    checkpoint.save_training_state(tmp_path / "s.ckpt", store, adam, 17)

    other = ParameterStore("policy")
    Linear(other, "head", 3, 2, np.random.default_rng(99))
    adam2, it = checkpoint.load_training_state(tmp_path / "s.ckpt", other)
    assert it == 17 and adam2.step == 1 and adam2.lr == 0.01
    for k in store:
        np.testing.assert_array_equal(adam2.m[k], adam.m[k])
        np.testing.assert_array_equal(other[k].data, store[k].data)


def test_forward_and_backward_are_bit_deterministic():
    def run():
        rng = np.random.default_rng(11)
        store = ParameterStore()
        cell = LSTM(store, "l", 3, 4, rng)
        head = Linear(store, "h", 4, 2, rng)
        x = Value(rng.normal(size=(2, 3)))
        h, c = cell.zero_state(2)
        for _ in range(3):
            h, c = cell.step(x, h, c)
        loss = nll(log_softmax(head(h)), np.array([0, 1]))
        loss.backward()
        return loss.data.tobytes(), [v.grad.tobytes() for _, v in store.items()]

    assert run() == run()


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_compiled_kernels_match_fallback(rng):
    from rpanav.autodiff import _kernels

    gates, c = rng.normal(size=(5, 12)), rng.normal(size=(5, 3))
    hc_a, cache_a = _kernels.lstm_forward(gates, c)
    hc_b, cache_b = _fallback.lstm_forward(gates, c)
    np.testing.assert_allclose(hc_a, hc_b, rtol=1e-13, atol=1e-15)
    d = rng.normal(size=(5, 6))
    for a, b in zip(_kernels.lstm_backward(d, c, cache_a), _fallback.lstm_backward(d, c, cache_b)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    x = rng.normal(size=(2, 3, 4)) * 10
    mask = rng.random((2, 3, 4)) > 0.3
    mask[..., 0] = True
    np.testing.assert_allclose(_kernels.masked_softmax(x, mask), _fallback.masked_softmax(x, mask),
                               rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(_kernels.sigmoid(x), _fallback.sigmoid(x), rtol=1e-14)
