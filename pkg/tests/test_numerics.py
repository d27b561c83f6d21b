import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from te2sl.numerics import (
    AdamW,
    ConfigError,
    NumericError,
    Parameter,
    ShapeError,
    Tensor,
    causal_self_attention,
    depthwise_conv1d,
    grad_check,
    layer_norm,
    matmul,
    mse_loss,
    softmax,
    softmax_cross_entropy,
    tsum,
)


def rand(rng, *shape):
    return Parameter(rng.normal(size=shape))


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor(b)).data, b)


def test_matmul_arithmetic():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.data, [[17.0], [39.0]])


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    ref = np.zeros((4, 2))
    for i in range(4):
        for j in range(2):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, ref, rtol=0, atol=1e-14)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_nan_input_rejected():
    with pytest.raises(NumericError):
        Tensor([1.0, float("nan")])


# ---------------------------------------------------------------------------
# layer norm


def test_layer_norm_constant_row_is_zero():
    out = layer_norm(Tensor(np.full((1, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_standardized_row():
    out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_layer_norm_gradient(seed):
    rng = np.random.default_rng(seed)
    x, g, b = rand(rng, 3, 6), rand(rng, 6), rand(rng, 6)
    w = rng.normal(size=(3, 6))
    assert grad_check(lambda: tsum(layer_norm(x, g, b) * w), [x, g, b], eps=1e-5) < 1e-5


# ---------------------------------------------------------------------------
# softmax / cross-entropy / mse


def test_cross_entropy_uniform():
    loss = softmax_cross_entropy(Tensor(np.zeros((1, 8))), [3])
    assert loss.item() == pytest.approx(math.log(8), abs=1e-15)


def test_cross_entropy_near_delta():
    z = np.zeros((1, 5))
    z[0, 2] = 1e3
    assert softmax_cross_entropy(Tensor(z), [2]).item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_logsumexp_oracle():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(6, 7)) * 4
    t = rng.integers(0, 7, size=6)
    mask = np.array([1, 0, 1, 1, 0, 1], dtype=bool)
    ref = np.mean([np.log(np.sum(np.exp(z[i]))) - z[i, t[i]] for i in range(6) if mask[i]])
    assert softmax_cross_entropy(Tensor(z), t, mask).item() == pytest.approx(ref, abs=1e-12)


def test_cross_entropy_masked_rows_get_no_gradient():
    rng = np.random.default_rng(4)
    z = rand(rng, 3, 4)
    softmax_cross_entropy(z, [0, 1, 2], [True, False, True]).backward()
    assert np.all(z.grad[1] == 0.0)
    assert np.any(z.grad[0] != 0.0)


def test_cross_entropy_errors():
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 1], [False, False])
    with pytest.raises(IndexError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(5)
    p = softmax(Tensor(rng.normal(size=(4, 9)) * 10)).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_mse_cases():
    a = Tensor(np.zeros((2, 3)))
    assert mse_loss(a, a).item() == 0.0
    assert mse_loss(a, Tensor(np.ones((2, 3)))).item() == 1.0
    rng = np.random.default_rng(6)
    x, y = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    ref = sum((x[i, j] - y[i, j]) ** 2 for i in range(4) for j in range(5)) / 20
    assert mse_loss(Tensor(x), Tensor(y)).item() == pytest.approx(ref, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.lists(st.floats(-1e3, 1e3), min_size=12, max_size=12))
def test_mse_nonnegative(xs, ys):
    a = Tensor(np.array(xs))
    b = Tensor(np.array(ys[: len(xs)]))
    assert mse_loss(a, b).item() >= 0.0
    assert mse_loss(a, a).item() == 0.0


# ---------------------------------------------------------------------------
# attention


def test_attention_single_key_is_value_path():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 4))
    wq, wk, wv, wo = (Tensor(rng.normal(size=(4, 4))) for _ in range(4))
    out = causal_self_attention(Tensor(x), wq, wk, wv, wo, heads=2)
    np.testing.assert_allclose(out.data, x @ wv.data @ wo.data, atol=1e-14)


def test_attention_is_causal():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(5, 4))
    ws = [Tensor(rng.normal(size=(4, 4))) for _ in range(4)]
    base = causal_self_attention(Tensor(x), *ws, heads=2).data
    for t in range(4):
        y = x.copy()
        y[t + 1] += 3.0
        out = causal_self_attention(Tensor(y), *ws, heads=2).data
        np.testing.assert_array_equal(out[: t + 1], base[: t + 1])


@pytest.mark.parametrize("seed", range(5))
def test_attention_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 4, 4)
    ws = [rand(rng, 4, 4) for _ in range(4)]
    w = rng.normal(size=(4, 4))
    assert grad_check(lambda: tsum(causal_self_attention(x, *ws, heads=2) * w), [x, *ws], eps=1e-5) < 1e-5


def test_attention_head_divisibility():
    ws = [Tensor(np.ones((3, 3))) for _ in range(4)]
    with pytest.raises(ConfigError):
        causal_self_attention(Tensor(np.ones((2, 3))), *ws, heads=2)


# ---------------------------------------------------------------------------
# depthwise conv


def test_depthwise_identity_and_scaling():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(6, 3)))
    k = np.zeros((3, 3))
    k[1] = 1.0
    np.testing.assert_array_equal(depthwise_conv1d(x, Tensor(k)).data, x.data)
    np.testing.assert_array_equal(depthwise_conv1d(x, Tensor(2 * k)).data, 2 * x.data)


def test_depthwise_sliding_window_oracle():
    rng = np.random.default_rng(10)
    x, k = rng.normal(size=(7, 2)), rng.normal(size=(5, 2))
    ref = np.zeros_like(x)
    for t in range(7):
        for j in range(5):
            s = t + j - 2
            if 0 <= s < 7:
                ref[t] += k[j] * x[s]
    np.testing.assert_allclose(depthwise_conv1d(Tensor(x), Tensor(k)).data, ref, atol=1e-14)


def test_depthwise_even_width_rejected():
    with pytest.raises(ConfigError):
        depthwise_conv1d(Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2))))


# ---------------------------------------------------------------------------
# AdamW


def test_adamw_first_step_is_sign_step():
    p = Parameter(np.array([0.5, -2.0, 3.0]), name="p")
    opt = AdamW([p], lr=0.01, weight_decay=0.0, eps=1e-12)
    g = np.array([0.3, -0.7, 2.0])
    p.grad = g.copy()
    opt.step()
    np.testing.assert_allclose(opt.m["p"], 0.1 * g)
    np.testing.assert_allclose(opt.v["p"], 0.001 * g * g)
    np.testing.assert_allclose(p.data, [0.49, -1.99, 2.99], atol=1e-9)


def test_adamw_pure_decay():
    p = Parameter(np.array([1.0, -4.0]), name="p")
    opt = AdamW([p], lr=0.1, weight_decay=0.001)
    opt.step()
    np.testing.assert_array_equal(p.data, np.array([1.0, -4.0]) * 0.9999)


def test_adamw_matches_scalar_recurrence():
    rng = np.random.default_rng(11)
    grads = rng.normal(size=(10, 3))
    p = Parameter(rng.normal(size=3), name="p")
    theta = p.data.copy()
    opt = AdamW([p], lr=0.05, beta1=0.8, beta2=0.99, eps=1e-8, weight_decay=0.01)
    for i in range(3):
        th, m, v = theta[i], 0.0, 0.0
        for t in range(1, 11):
            g = grads[t - 1, i]
            m = 0.8 * m + 0.2 * g
            v = 0.99 * v + 0.01 * g * g
            th = th * (1 - 0.05 * 0.01)
            th = th - 0.05 * (m / (1 - 0.8**t)) / (math.sqrt(v / (1 - 0.99**t)) + 1e-8)
        theta[i] = th
    for t in range(10):
        p.grad = grads[t].copy()
        opt.step()
    np.testing.assert_allclose(p.data, theta, rtol=0, atol=1e-12)


def test_adamw_skips_frozen_and_zeroes_grads():
    a = Parameter(np.ones(2), name="a")
    b = Parameter(np.ones(2), name="b", trainable=False)
    opt = AdamW([a, b], lr=0.1)
    a.grad = np.ones(2)
    opt.step()
    np.testing.assert_array_equal(b.data, np.ones(2))
    np.testing.assert_array_equal(a.grad, np.zeros(2))


def test_adamw_nonfinite_gradient_names_parameter():
    a = Parameter(np.ones(2), name="layer.weight")
    opt = AdamW([a])
    a.grad = np.array([1.0, np.inf])
    with pytest.raises(NumericError, match="layer.weight"):
        opt.step()


# ---------------------------------------------------------------------------
# grad_check itself


def test_grad_check_linear_exact():
    rng = np.random.default_rng(12)
    x = rand(rng, 5)
    w = rng.normal(size=5)
    # no truncation error for a linear f, so the widest step minimizes roundoff
    assert grad_check(lambda: tsum(x * w), [x], eps=1e-3) < 1e-10


def test_grad_check_quadratic():
    x = Parameter(np.ones(3))
    assert grad_check(lambda: tsum(x * x), [x], eps=1e-4) < 1e-8
    x.zero_grad()
    tsum(x * x).backward()
    np.testing.assert_allclose(x.grad, 2.0)


def test_grad_check_detects_corrupted_gradient():
    rng = np.random.default_rng(13)
    x = rand(rng, 4)
    f = lambda: tsum(x * x * x)  # noqa: E731
    assert grad_check(f, [x], analytic=[3 * x.data**2 * 1.01]) > 1e-3


def test_grad_check_eps_bounds():
    x = Parameter(np.ones(2))
    with pytest.raises(ValueError):
        grad_check(lambda: tsum(x), [x], eps=1e-2)


def test_ops_deterministic():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(2, 5, 4))
    ws = [Tensor(rng.normal(size=(4, 4))) for _ in range(4)]
    a = causal_self_attention(Tensor(x), *ws, heads=2).data
    b = causal_self_attention(Tensor(x.copy()), *ws, heads=2).data
    assert a.tobytes() == b.tobytes()
