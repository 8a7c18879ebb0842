"""Core numeric tests: forward/backward against scalar and finite-difference
oracles, loss values against hand arithmetic, Adam against a scripted scalar
reference, and PRNG determinism with a committed golden vector."""

import copy
import math
from pathlib import Path

import numpy as np
import pytest

from privgan_lab.numkit import (
    PROB_EPS,
    AdamState,
    ContractError,
    MlpModel,
    Rng,
    ShapeError,
    adam_step,
    backward,
    bce_loss,
    categorical_ce_loss,
    forward,
    sample_noise,
)

FIXTURES = Path(__file__).parent / "fixtures"


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def test_forward_identity_linear_layer():
    model = MlpModel([3, 3], ["linear"], [np.eye(3)], [np.zeros((1, 3))])
    x = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
    out, _ = forward(model, x)
    np.testing.assert_array_equal(out, x)


def test_forward_softmax_symmetry():
    model = MlpModel([3, 3], ["softmax"], [np.eye(3)], [np.zeros((1, 3))])
    out, _ = forward(model, np.zeros((1, 3)))
    np.testing.assert_allclose(out, np.full((1, 3), 1.0 / 3.0), atol=1e-12)


def test_forward_two_layer_scalar_reference():
    # independent scalar-by-scalar evaluation of a fixed 2-layer net
    w0 = np.array([[0.5, -1.0, 0.25], [1.5, 0.5, -0.75]])
    b0 = np.array([[0.1, -0.2, 0.3]])
    w1 = np.array([[2.0], [-1.0], [0.5]])
    b1 = np.array([[-0.05]])
    model = MlpModel([2, 3, 1], ["leaky_relu", "tanh"], [w0, w1], [b0, b1])
    x = np.array([[0.8, -0.4]])

    z0 = [sum(x[0][i] * w0[i][j] for i in range(2)) + b0[0][j] for j in range(3)]
    a0 = [z if z > 0 else 0.2 * z for z in z0]
    z1 = sum(a0[j] * w1[j][0] for j in range(3)) + b1[0][0]
    expected = math.tanh(z1)

    out, cache = forward(model, x)
    assert out.shape == (1, 1)
    assert abs(out[0, 0] - expected) < 1e-14
    assert len(cache.pre_acts) == 2


def test_forward_softmax_rows_sum_to_one():
    rng = Rng(3)
    model = MlpModel.init([4, 8, 5], ["leaky_relu", "softmax"], rng)
    out, _ = forward(model, rng.normal(10, 4) * 3.0)
    np.testing.assert_allclose(out.sum(axis=1), np.ones(10), atol=1e-9)


def test_forward_sigmoid_clamped_into_open_interval():
    model = MlpModel([1, 1], ["sigmoid"], [np.array([[100.0]])], [np.zeros((1, 1))])
    out, _ = forward(model, np.array([[5.0], [-5.0]]))
    assert np.all(out >= PROB_EPS)
    assert np.all(out <= 1.0 - PROB_EPS)


def test_forward_dimension_mismatch_names_layer():
    model = MlpModel.init([4, 2], ["linear"], Rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        forward(model, np.zeros((3, 5)))


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_backward_zero_loss_grad_gives_zero_grads():
    rng = Rng(1)
    model = MlpModel.init([3, 4, 2], ["leaky_relu", "tanh"], rng)
    out, cache = forward(model, rng.normal(5, 3))
    res = backward(model, cache, np.zeros_like(out))
    for g in res.weight_grads + res.bias_grads:
        assert not g.any()


def test_backward_linear_1x1_squared_error():
    # loss = (w·x − t)² at x=2, w=3, t=0: dL/dw = 2·(wx)·x = 24
    model = MlpModel([1, 1], ["linear"], [np.array([[3.0]])], [np.zeros((1, 1))])
    out, cache = forward(model, np.array([[2.0]]))
    loss_grad = 2.0 * out  # d/dpred of (pred − 0)²
    res = backward(model, cache, loss_grad)
    assert res.weight_grads[0][0, 0] == pytest.approx(24.0, abs=1e-12)


def test_backward_stale_cache_rejected():
    rng = Rng(2)
    a = MlpModel.init([3, 2], ["tanh"], rng)
    b = MlpModel.init([3, 2], ["tanh"], rng)
    out, cache = forward(a, rng.normal(4, 3))
    with pytest.raises(ContractError, match="different model"):
        backward(b, cache, np.zeros_like(out))


def _fd_weight_grad(model, x, loss_fn, layer, i, j, h=1e-5):
    w = model.weights[layer]
    orig = w[i, j]
    w[i, j] = orig + h
    up = loss_fn(forward(model, x)[0])
    w[i, j] = orig - h
    down = loss_fn(forward(model, x)[0])
    w[i, j] = orig
    return (up - down) / (2.0 * h)


@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences_three_layer(seed):
    rng = Rng(100 + seed)
    model = MlpModel.init([4, 6, 5, 3], ["leaky_relu", "tanh", "linear"], rng)
    x = rng.normal(7, 4)
    target = rng.normal(7, 3)

    def loss_fn(pred):
        return float(0.5 * np.sum((pred - target) ** 2))

    out, cache = forward(model, x)
    res = backward(model, cache, out - target)
    worst = 0.0
    for layer in range(3):
        for i in range(model.weights[layer].shape[0]):
            for j in range(model.weights[layer].shape[1]):
                fd = _fd_weight_grad(model, x, loss_fn, layer, i, j)
                an = res.weight_grads[layer][i, j]
                worst = max(worst, abs(an - fd) / max(abs(fd), 1.0))
    assert worst < 1e-5


def test_backward_input_grad_matches_finite_differences():
    rng = Rng(11)
    model = MlpModel.init([3, 5, 2], ["leaky_relu", "tanh"], rng)
    x = rng.normal(1, 3)
    target = rng.normal(1, 2)
    out, cache = forward(model, x)
    res = backward(model, cache, out - target)
    h = 1e-6
    for k in range(3):
        xp, xm = x.copy(), x.copy()
        xp[0, k] += h
        xm[0, k] -= h
        fd = (
            0.5 * np.sum((forward(model, xp)[0] - target) ** 2)
            - 0.5 * np.sum((forward(model, xm)[0] - target) ** 2)
        ) / (2 * h)
        assert abs(res.input_grad[0, k] - fd) < 1e-6


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def test_bce_perfect_prediction_near_zero():
    pred = np.ones((2, 1))
    target = np.ones((2, 1))
    loss, _ = bce_loss(pred, target)
    assert loss == pytest.approx(-math.log(1.0 - PROB_EPS), abs=1e-12)
    assert loss < 1e-6


def test_bce_uniform_prediction_is_log2():
    loss, _ = bce_loss(np.full((4, 1), 0.5), np.array([[1.0], [0.0], [1.0], [0.0]]))
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_bce_hand_value():
    loss, _ = bce_loss(np.array([[0.9], [0.2]]), np.array([[1.0], [0.0]]))
    assert loss == pytest.approx(-0.5 * (math.log(0.9) + math.log(0.8)), abs=1e-12)


def test_bce_shape_mismatch():
    with pytest.raises(ShapeError):
        bce_loss(np.zeros((2, 1)), np.zeros((3, 1)))


def test_categorical_one_hot_correct_is_near_zero():
    pred = np.array([[1.0 - 2e-7, 1e-7, 1e-7]])
    loss, _ = categorical_ce_loss(pred, [0])
    assert loss < 1e-6


def test_categorical_uniform_is_log_n():
    pred = np.full((3, 5), 0.2)
    loss, _ = categorical_ce_loss(pred, [0, 3, 4])
    assert loss == pytest.approx(math.log(5.0), abs=1e-12)


def test_categorical_hand_value_and_gradient():
    pred = np.array([[0.7, 0.2, 0.1]])
    loss, grad = categorical_ce_loss(pred, [1])
    assert loss == pytest.approx(-math.log(0.2), abs=1e-12)
    np.testing.assert_allclose(grad, np.array([[0.7, -0.8, 0.1]]), atol=1e-12)


def test_categorical_out_of_range_class():
    with pytest.raises(ContractError, match="out of range"):
        categorical_ce_loss(np.full((1, 3), 1 / 3), [3])


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_is_identity():
    params = [np.array([[1.0, -2.0]]), np.array([[0.5]])]
    state = AdamState.for_params(params, lr=0.1, beta1=0.5)
    before = [p.copy() for p in params]
    adam_step(params, [np.zeros_like(p) for p in params], state)
    for p, b in zip(params, before):
        np.testing.assert_array_equal(p, b)
    assert state.t == 1


def test_adam_scalar_first_step_reference():
    # scripted scalar reference: m̂ = v̂ = 1 after one unit-gradient step
    lr, b1, b2, eps = 0.1, 0.5, 0.999, 1e-8
    m = (1 - b1) * 1.0
    v = (1 - b2) * 1.0
    m_hat = m / (1 - b1)
    v_hat = v / (1 - b2)
    expected = 1.0 - lr * m_hat / (math.sqrt(v_hat) + eps)

    params = [np.array([[1.0]])]
    state = AdamState.for_params(params, lr=lr, beta1=b1, beta2=b2, eps=eps)
    adam_step(params, [np.array([[1.0]])], state)
    assert params[0][0, 0] == pytest.approx(expected, abs=1e-15)
    assert params[0][0, 0] == pytest.approx(1.0 - 0.1 / (1.0 + eps), abs=1e-15)


def test_adam_determinism_bitwise():
    rng = Rng(5)
    params1 = [rng.normal(3, 4)]
    grads = [Rng(6).normal(3, 4)]
    params2 = [p.copy() for p in params1]
    s1 = AdamState.for_params(params1, lr=0.01, beta1=0.9)
    s2 = AdamState.for_params(params2, lr=0.01, beta1=0.9)
    for _ in range(5):
        adam_step(params1, grads, s1)
        adam_step(params2, grads, s2)
    np.testing.assert_array_equal(params1[0], params2[0])


def test_adam_increments_t_once_per_call():
    params = [np.zeros((2, 2))]
    state = AdamState.for_params(params, lr=0.1, beta1=0.5)
    for expected_t in range(1, 4):
        adam_step(params, [np.ones((2, 2))], state)
        assert state.t == expected_t


def test_adam_shape_mismatch():
    params = [np.zeros((2, 2))]
    state = AdamState.for_params(params, lr=0.1, beta1=0.5)
    with pytest.raises(ShapeError):
        adam_step(params, [np.ones((2, 3))], state)


# ---------------------------------------------------------------------------
# rng
# ---------------------------------------------------------------------------


def test_sample_noise_determinism():
    a = sample_noise(Rng(42), 8, 5)
    b = sample_noise(Rng(42), 8, 5)
    np.testing.assert_array_equal(a, b)


def test_sample_noise_statistics():
    x = sample_noise(Rng(123), 100_000, 1)
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.03


def test_sample_noise_golden_vector():
    row = sample_noise(Rng(7), 1, 100)[0]
    golden = np.array(
        [float(v) for v in (FIXTURES / "noise_seed7_dim100.csv").read_text().strip().split(",")]
    )
    np.testing.assert_array_equal(row, golden)


def test_substreams_are_order_independent():
    a = Rng(9).substream("alpha").normal(2, 2)
    r = Rng(9)
    r.substream("beta").normal(4, 4)  # consuming another stream first
    b = r.substream("alpha").normal(2, 2)
    np.testing.assert_array_equal(a, b)


def test_sample_noise_rejects_nonpositive():
    with pytest.raises(ContractError):
        sample_noise(Rng(0), 0, 3)


# ---------------------------------------------------------------------------
# gradient suite across layer/loss combinations (spec invariant)
# ---------------------------------------------------------------------------


def _random_net_config(rng, final_act):
    dims = [int(d) for d in rng.integers(2, 6, 3)]
    if final_act == "sigmoid":
        out_dim = 1
    else:
        out_dim = int(rng.integers(2, 5, 1)[0])
    return dims + [out_dim]


@pytest.mark.parametrize("final_act,loss_kind", [
    ("sigmoid", "bce"),
    ("softmax", "ce"),
    ("tanh", "mse"),
    ("linear", "mse"),
])
@pytest.mark.parametrize("hidden_act", ["leaky_relu", "tanh"])
def test_gradient_suite_all_combinations(final_act, loss_kind, hidden_act):
    checked = 0
    attempt = 0
    while checked < 20:
        attempt += 1
        rng = Rng(1000 * attempt + hash((final_act, hidden_act)) % 997)
        dims = _random_net_config(rng, final_act)
        acts = [hidden_act] * (len(dims) - 2) + [final_act]
        model = MlpModel.init(dims, acts, rng)
        x = rng.normal(4, dims[0])
        # keep leaky-relu pre-activations away from the kink so central
        # differences see a single linear regime
        _, cache = forward(model, x)
        if hidden_act == "leaky_relu" and min(
            np.abs(z).min() for z in cache.pre_acts[:-1]
        ) < 1e-3:
            continue
        checked += 1

        if loss_kind == "bce":
            target = (rng.uniform(4, dims[-1]) > 0.5).astype(float)

            def loss_fn(pred):
                return bce_loss(pred, target)[0]

            out, cache = forward(model, x)
            grad = bce_loss(out, target)[1]
        elif loss_kind == "ce":
            target = rng.integers(0, dims[-1], 4)

            def loss_fn(pred):
                return categorical_ce_loss(pred, target)[0]

            out, cache = forward(model, x)
            grad = categorical_ce_loss(out, target)[1]
        else:
            target = rng.normal(4, dims[-1])

            def loss_fn(pred):
                return float(0.5 * np.mean((pred - target) ** 2))

            out, cache = forward(model, x)
            grad = (out - target) / out.size

        res = backward(model, cache, grad)
        worst = 0.0
        for layer in range(len(model.weights)):
            w = model.weights[layer]
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    fd = _fd_weight_grad(model, x, loss_fn, layer, i, j)
                    an = res.weight_grads[layer][i, j]
                    worst = max(worst, abs(an - fd) / max(abs(fd), 1.0))
        assert worst < 1e-5, f"config {attempt}: relative error {worst}"


def test_model_rejects_softmax_before_final():
    with pytest.raises(ContractError, match="final"):
        MlpModel.init([3, 4, 2], ["softmax", "linear"], Rng(0))
