import numpy as np
import pytest

from equiswarm import autodiff as ad
from equiswarm.autodiff import (
    AdamState,
    ShapeError,
    Tape,
    TapeExhaustedError,
    Tensor,
    adam_step,
    load_checkpoint,
    save_checkpoint,
)


def finite_difference(fn, tensors, which, step=1e-5):
    """Central-difference gradient of a scalar fn w.r.t. tensors[which]."""
    base = tensors[which]
    grad = np.zeros_like(base.data)
    flat = base.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(*tensors).item()
        flat[i] = orig - step
        dn = fn(*tensors).item()
        flat[i] = orig
        gflat[i] = (up - dn) / (2 * step)
    return grad


def check_grads(fn, tensors, rel_tol=1e-4):
    with Tape() as tape:
        loss = fn(*tensors)
        grads = tape.backward(loss)
    for t in tensors:
        if not t.requires_grad:
            continue
        fd = finite_difference(fn, tensors, tensors.index(t))
        an = grads[t]
        assert np.all(np.abs(an - fd) <= rel_tol * (1.0 + np.abs(fd))), \
            f"analytic {an} vs finite-difference {fd}"


def _p(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_square_derivative_at_three():
    x = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
        grads = tape.backward(y)
    assert grads[x] == pytest.approx(6.0)


def test_softmax_single_element_row():
    out = ad.softmax(Tensor([[4.2]]))
    assert np.allclose(out.data, [[1.0]])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    out = ad.softmax(Tensor(rng.normal(size=(7, 5)) * 10))
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_layer_norm_constant_vector_is_zero():
    out = ad.layer_norm(Tensor([3.0, 3.0, 3.0, 3.0]))
    assert np.allclose(out.data, 0.0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_sum_of_linear_map_gradient_broadcasts_input_per_row():
    rng = np.random.default_rng(1)
    W = _p(rng, 4, 3)
    x = Tensor(rng.normal(size=(3, 1)))
    with Tape() as tape:
        grads = tape.backward(ad.tsum(W @ x))
    assert np.allclose(grads[W], np.tile(x.data.T, (4, 1)))


def test_gradient_zero_for_unused_parameter():
    rng = np.random.default_rng(2)
    used = _p(rng, 3)
    unused = _p(rng, 3)
    with Tape() as tape:
        grads = tape.backward(ad.tsum(used * used))
    assert unused not in grads and unused.grad is None


def test_second_backward_rejected():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        y = x * x
        tape.backward(y)
        with pytest.raises(TapeExhaustedError):
            tape.backward(y)


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * x
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)


def test_forward_without_tape_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * x
    assert not y.requires_grad and y._leaf


def test_forward_determinism():
    rng = np.random.default_rng(3)
    a = Tensor(rng.normal(size=(5, 5)))
    b = Tensor(rng.normal(size=(5, 5)))
    one = ad.tanh(a @ b)
    two = ad.tanh(a @ b)
    assert (one.data == two.data).all()


def test_gather_rows_forward_and_grad():
    rng = np.random.default_rng(4)
    x = _p(rng, 6, 3)
    idx = np.array([0, 2, 2, 5])
    with Tape() as tape:
        out = ad.gather_rows(x, idx)
        grads = tape.backward(ad.tsum(out))
    assert (out.data == x.data[idx]).all()
    expected = np.zeros((6, 3))
    np.add.at(expected, idx, 1.0)
    assert (grads[x] == expected).all()


PRIMITIVE_CASES = []


def _case(name):
    def deco(fn):
        PRIMITIVE_CASES.append((name, fn))
        return fn
    return deco


@_case("matmul")
def _c_matmul(rng):
    return lambda a, b: ad.tsum(ad.tanh(a @ b)), [_p(rng, 4, 3), _p(rng, 3, 5)]


@_case("matmul_batched")
def _c_matmul_batched(rng):
    return (lambda a, b: ad.tsum(ad.tanh(a @ b)),
            [_p(rng, 2, 3, 4, 3), _p(rng, 3, 3, 2)])


@_case("add_broadcast")
def _c_add(rng):
    return lambda a, b: ad.tsum(ad.tanh(a + b)), [_p(rng, 4, 3), _p(rng, 3)]


@_case("mul_broadcast")
def _c_mul(rng):
    return lambda a, b: ad.tsum(ad.tanh(a * b)), [_p(rng, 4, 3), _p(rng, 4, 1)]


@_case("sub")
def _c_sub(rng):
    return lambda a, b: ad.tsum(ad.tanh(a - b)), [_p(rng, 5), _p(rng, 5)]


@_case("tanh")
def _c_tanh(rng):
    return lambda a: ad.tsum(ad.tanh(a)), [_p(rng, 6)]


@_case("exp")
def _c_exp(rng):
    return lambda a: ad.tsum(ad.exp(a)), [_p(rng, 6)]


@_case("log")
def _c_log(rng):
    t = Tensor(np.abs(np.random.default_rng(17).normal(size=6)) + 0.5, requires_grad=True)
    return lambda a: ad.tsum(ad.log(a)), [t]


@_case("pow_const")
def _c_pow(rng):
    t = Tensor(np.abs(rng.normal(size=6)) + 0.5, requires_grad=True)
    return lambda a: ad.tsum(ad.pow_const(a, -0.5)), [t]


@_case("softmax")
def _c_softmax(rng):
    return lambda a: ad.tsum(ad.softmax(a) * np.arange(5.0)), [_p(rng, 3, 5)]


@_case("layer_norm")
def _c_layer_norm(rng):
    return (lambda a: ad.tsum(ad.layer_norm(a) * np.arange(6.0)), [_p(rng, 2, 6)])


@_case("concat")
def _c_concat(rng):
    return (lambda a, b: ad.tsum(ad.tanh(ad.concat([a, b], axis=-1))),
            [_p(rng, 2, 3), _p(rng, 2, 4)])


@_case("mean_axis")
def _c_mean(rng):
    return lambda a: ad.tsum(ad.tanh(ad.mean(a, axis=1))), [_p(rng, 3, 4)]


@_case("mean_all")
def _c_mean_all(rng):
    return lambda a: ad.mean(a * a), [_p(rng, 3, 4)]


@_case("clip")
def _c_clip(rng):
    # keep samples away from the clip kinks so central differences are valid
    data = rng.uniform(-0.8, 0.8, size=8)
    data[:3] = [1.7, -1.9, 2.5]
    return lambda a: ad.tsum(ad.clip(a, -1.0, 1.0) * np.arange(8.0)), \
        [Tensor(data, requires_grad=True)]


@_case("minimum")
def _c_minimum(rng):
    a = rng.normal(size=7)
    b = a + np.where(rng.uniform(size=7) > 0.5, 0.3, -0.3)
    return (lambda x, y: ad.tsum(ad.minimum(x, y) * np.arange(7.0)),
            [Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)])


@_case("gather_rows")
def _c_gather(rng):
    return (lambda a: ad.tsum(ad.tanh(ad.gather_rows(a, np.array([1, 1, 0, 3])))),
            [_p(rng, 5, 2)])


@_case("transpose")
def _c_transpose(rng):
    return (lambda a: ad.tsum(ad.tanh(ad.transpose(a, (1, 0, 2)))), [_p(rng, 2, 3, 4)])


@_case("reshape")
def _c_reshape(rng):
    return (lambda a: ad.tsum(ad.tanh(ad.reshape(a, (6, 2)))), [_p(rng, 3, 4)])


@pytest.mark.parametrize("name,builder", PRIMITIVE_CASES, ids=[n for n, _ in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, builder):
    # several random draws per primitive: ~100 checks across the suite
    for seed in range(6):
        fn, tensors = builder(np.random.default_rng(100 + seed))
        check_grads(fn, tensors)


def test_chained_graph_gradient():
    rng = np.random.default_rng(5)
    W1, W2 = _p(rng, 6, 4), _p(rng, 3, 6)
    x = Tensor(rng.normal(size=(4, 2)))

    def loss(w1, w2):
        h = ad.tanh(w1 @ x)
        return ad.mean(ad.layer_norm(ad.transpose(w2 @ h, (1, 0))) * np.arange(3.0))

    check_grads(loss, [W1, W2])


# --- Adam -------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    state = AdamState()
    adam_step({"p": p}, {"p": np.zeros(2)}, state, lr=0.1)
    assert (p.data == [1.0, 2.0]).all()


def test_adam_first_step_matches_hand_recurrence():
    # bias-corrected first step: delta = -lr * g / (|g| + eps)
    g = np.array([0.3, -0.7])
    p = Tensor(np.zeros(2), requires_grad=True)
    lr, eps = 1e-2, 2e-6
    adam_step({"p": p}, {"p": g.copy()}, AdamState(), lr=lr, eps=eps)
    expected = -lr * g / (np.abs(g) + eps)
    assert np.allclose(p.data, expected, rtol=0, atol=1e-12)


def test_adam_clips_global_norm_to_five():
    g = np.zeros(100)
    g[0] = 10.0  # global norm 10 -> scaled by 0.5
    p = Tensor(np.zeros(100), requires_grad=True)
    state = AdamState()
    norm = adam_step({"p": p}, {"p": g}, state, lr=1.0, max_grad_norm=5.0)
    assert norm == pytest.approx(10.0)
    assert state.m["p"][0] == pytest.approx(0.1 * 5.0)  # (1-beta1) * clipped g


def test_adam_rejects_nan_gradient_naming_parameter():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(FloatingPointError, match="bad_param"):
        adam_step({"bad_param": p}, {"bad_param": np.array([np.nan, 0.0])}, AdamState(), lr=0.1)


# --- checkpoint container ---------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    tensors = {
        "layer.weight": rng.normal(size=(4, 3)),
        "layer.bias": rng.normal(size=4).astype(np.float32),
        "scalar": np.array(2.5),
    }
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, tensors)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert loaded[k].dtype == np.asarray(tensors[k]).dtype
        assert np.array_equal(loaded[k], tensors[k])


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(path)


def test_float32_mode_round_trip():
    ad.set_default_dtype(np.float32)
    try:
        t = Tensor([1.0, 2.0])
        assert t.dtype == np.float32
    finally:
        ad.set_default_dtype(np.float64)
    assert Tensor([1.0]).dtype == np.float64
