import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import DEEP_CONV, MLP, SMALL_CONV, linear_net, make_net, random_input
from oracles import central_difference, naive_conv2d, naive_maxpool, rel_err
from txuxi.errors import EmptyInputError, InputShapeError, LabelError, SelectorError, TraceError
from txuxi.micronet import (Conv2D, Dense, Flatten, MaxPool2D, Network, ReLU, TrainConfig, backward_params,
                            build_network, deeplift, forward, input_gradient, layer_activations, lrp, lrp_layers,
                            predict_logits, train)
from txuxi.micronet.network import run_layers, selected_scores


def score(net, x, target):
    return float(predict_logits(net, x)[target])


def kink_margin(net, x):
    """Smallest |pre-ReLU activation| over the forward pass."""
    _, tr = forward(net, x)
    return min(float(np.abs(tr.activations[i]).min()) for i, l in enumerate(net.layers) if isinstance(l, ReLU))


# forward ---------------------------------------------------------------

def test_zero_image_through_zero_bias_conv_is_zero():
    conv = Conv2D(np.random.default_rng(0).normal(size=(3, 1, 3, 3)), np.zeros(3), 1, 1)
    assert not conv.forward(np.zeros((1, 1, 6, 6))).any()


def test_identity_dense_adds_bias():
    b = np.array([0.5, -1.0, 2.0])
    net = Network((Dense(np.eye(3), b),), (3,), "classification")
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(predict_logits(net, x), x + b)


def test_conv_relu_pool_matches_naive_loops():
    rng = np.random.default_rng(3)
    w, b = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2)
    x = rng.normal(size=(1, 8, 8))
    net = Network((Conv2D(w, b, 1, 1), ReLU(), MaxPool2D(2, 2), Flatten()), (1, 8, 8), "classification")
    expected = naive_maxpool(np.maximum(naive_conv2d(x, w, b, 1, 1), 0), 2, 2)
    np.testing.assert_allclose(predict_logits(net, x), expected.ravel(), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (2, 0), (1, 2)])
def test_conv_stride_and_padding_match_naive_loops(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    w, b = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    x = rng.normal(size=(2, 7, 7))
    got = Conv2D(w, b, stride, padding).forward(x[None])[0]
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, stride, padding), rtol=1e-12, atol=1e-12)


def test_forward_rejects_wrong_shape(small_net):
    with pytest.raises(InputShapeError):
        forward(small_net, np.zeros((1, 7, 8)))


def test_forward_accepts_single_and_batched(small_net):
    x = random_input((4, 1, 8, 8))
    out, trace = forward(small_net, x)
    assert out.shape == (4, 3) and len(trace) == len(small_net.layers) + 1
    single, _ = forward(small_net, x[2])
    np.testing.assert_allclose(single, out[2], rtol=1e-12)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)


def test_default_network_shapes():
    net = build_network(4)
    assert net.shapes[-1] == (4,) and net.shapes[9] == (32, 8, 8) and net.dtype == np.float32
    out, _ = forward(net, np.zeros((1, 64, 64)))
    assert out.shape == (4,) and np.isfinite(out).all()


# layer activations and replay --------------------------------------------

def test_last_layer_activation_is_pre_head_output(small_net):
    _, tr = forward(small_net, random_input((1, 8, 8)))
    np.testing.assert_array_equal(layer_activations(tr, len(small_net.layers) - 1), tr.logits[0])


def test_relu_first_on_negative_input_is_zero():
    net = Network((ReLU(), Flatten(), Dense(np.ones((2, 4)), np.zeros(2))), (1, 2, 2), "classification")
    _, tr = forward(net, -np.ones((1, 2, 2)))
    assert not layer_activations(tr, 0).any()


def test_layer_index_out_of_range(small_net):
    _, tr = forward(small_net, random_input((1, 8, 8)))
    with pytest.raises(IndexError):
        layer_activations(tr, len(small_net.layers))
    with pytest.raises(IndexError):
        layer_activations(tr, -1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 16), idx=st.integers(0, len(DEEP_CONV) - 1))
def test_replay_from_any_activation_is_bitwise(seed, idx):
    net = make_net(DEEP_CONV, (1, 8, 8), seed=seed, dtype=np.float32)
    _, tr = forward(net, random_input((3, 1, 8, 8), seed).astype(np.float32))
    acts, _ = run_layers(net, tr.activations[idx + 1], start=idx + 1)
    np.testing.assert_array_equal(acts[-1], tr.logits)
    for k, a in enumerate(acts):
        np.testing.assert_array_equal(a, tr.activations[idx + 1 + k])


# parameter gradients -------------------------------------------------------

def test_zero_loss_grad_gives_zero_param_grads(small_net):
    _, tr = forward(small_net, random_input((2, 1, 8, 8)))
    for gw, gb in backward_params(small_net, tr, np.zeros((2, 3))):
        assert not gw.any() and not gb.any()


def test_single_dense_mse_closed_form():
    rng = np.random.default_rng(0)
    W, b, x, y = rng.normal(size=(2, 3)), rng.normal(size=2), rng.normal(size=3), rng.normal(size=2)
    net = Network((Dense(W, b),), (3,), "classification")
    out, tr = forward(net, x)
    gw, gb = backward_params(net, tr, 2 * (out_logits := tr.logits[0]) - 2 * y)[0]
    np.testing.assert_allclose(gw, 2 * np.outer(W @ x + b - y, x), rtol=1e-12)
    np.testing.assert_allclose(gb, 2 * (out_logits - y), rtol=1e-12)


def test_backward_params_rejects_foreign_trace(small_net):
    other = make_net(MLP, (1, 8, 8))
    _, tr = forward(other, random_input((1, 8, 8)))
    with pytest.raises(TraceError):
        backward_params(small_net, tr, np.zeros(2))


@pytest.mark.parametrize("seed", range(4))
def test_param_grads_match_finite_differences(seed):
    net = make_net(SMALL_CONV, seed=seed)
    x = random_input((1, 8, 8), seed)
    if kink_margin(net, x) < 1e-4:
        pytest.skip("input sits on a ReLU kink")
    y = np.random.default_rng(seed).normal(size=3)

    def loss(params):
        return float(np.sum((predict_logits(net.with_params(params), x) - y) ** 2))

    _, tr = forward(net, x)
    grads = backward_params(net, tr, 2 * (tr.logits[0] - y))
    params = [(w.copy(), b.copy()) for w, b in net.params()]
    for k, (w, b) in enumerate(params):
        for arr, g in ((w, grads[k][0]), (b, grads[k][1])):
            orig = arr.copy()

            def f(v, arr=arr):
                arr[...] = v
                return loss(params)

            fd = central_difference(f, orig.copy())
            arr[...] = orig
            assert rel_err(g, fd) < 1e-3


# input gradients -----------------------------------------------------------

@pytest.mark.parametrize("mode", ["standard", "guided"])
def test_linear_input_gradient_is_weight(mode):
    w = np.arange(12.0).reshape(3, 4) - 5
    net = linear_net(w, 0.3)
    _, tr = forward(net, random_input((1, 3, 4)))
    np.testing.assert_array_equal(input_gradient(net, tr, 0, mode)[0], w)


@pytest.mark.parametrize("seed", range(5))
def test_input_gradient_matches_finite_differences(seed):
    net = make_net(DEEP_CONV, seed=seed)
    x = random_input((1, 8, 8), seed)
    if kink_margin(net, x) < 1e-4:
        pytest.skip("input sits on a ReLU kink")
    _, tr = forward(net, x)
    for t in range(3):
        fd = central_difference(lambda v: score(net, v, t), x.copy())
        assert rel_err(input_gradient(net, tr, t), fd) < 1e-3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_guided_gradient_nonnegative_for_nonnegative_nets(seed):
    net = make_net(SMALL_CONV, seed=seed)
    net = net.with_params([(np.abs(w), np.abs(b)) for w, b in net.params()])
    _, tr = forward(net, random_input((1, 8, 8), seed))
    assert (input_gradient(net, tr, seed % 3, "guided") >= 0).all()


def test_invalid_target_raises(small_net):
    _, tr = forward(small_net, random_input((1, 8, 8)))
    for bad in (3, -1, 1.5):
        with pytest.raises(SelectorError):
            input_gradient(small_net, tr, bad)


def test_regression_target_defaults_to_only_output():
    net = linear_net(np.ones((2, 2)))
    _, tr = forward(net, np.ones((1, 2, 2)))
    assert input_gradient(net, tr).shape == (1, 2, 2)


# relevance propagation -----------------------------------------------------

def test_lrp_single_dense_layer():
    net = Network((Dense(np.array([[2.0, 3.0]]), np.zeros(1)),), (2,), "regression")
    _, tr = forward(net, np.array([1.0, 1.0]))
    np.testing.assert_allclose(lrp(net, tr, 0), [2.0, 3.0], rtol=1e-6)


def test_lrp_bias_share_follows_input_magnitude():
    net = Network((Dense(np.array([[1.0, 1.0]]), np.array([2.0])),), (2,), "regression")
    _, tr = forward(net, np.array([1.0, 3.0]))
    # z = 6: direct parts 1 and 3, bias 2 split 1:3
    np.testing.assert_allclose(lrp(net, tr, 0), [1.5, 4.5], rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 16), bias=st.sampled_from([0.0, 0.1, 1.0]))
def test_lrp_conserves_relevance_at_every_layer(seed, bias):
    net = make_net(DEEP_CONV, seed=seed, bias_scale=bias)
    x = random_input((1, 8, 8), seed)
    _, tr = forward(net, x)
    t = int(np.argmax(tr.logits[0]))
    sums = [float(r.sum()) for r in lrp_layers(net, tr, t)]
    top = float(tr.logits[0, t])
    for s in sums:
        assert abs(s - top) <= 0.01 * abs(top) + 1e-12


def test_lrp_rejects_foreign_trace(small_net):
    _, tr = forward(make_net(MLP, (1, 8, 8)), random_input((1, 8, 8)))
    with pytest.raises(TraceError):
        lrp(small_net, tr, 0)


def test_lrp_zero_preactivation_falls_back_to_square_rule():
    net = Network((Dense(np.array([[1.0, -1.0]]), np.zeros(1)),), (2,), "regression")
    _, tr = forward(net, np.array([2.0, 2.0]))
    r = lrp(net, tr, 0)
    assert np.isfinite(r).all() and abs(r.sum()) < 1e-12


def test_deeplift_zero_delta():
    net = make_net(DEEP_CONV, seed=1)
    x = random_input((1, 8, 8), 1)
    assert not deeplift(net, x, x.copy(), 0).any()


def test_deeplift_linear_is_weight_times_input():
    w = np.random.default_rng(2).normal(size=(4, 4))
    x = random_input((1, 4, 4), 2)
    np.testing.assert_allclose(deeplift(linear_net(w, 0.7), x, np.zeros_like(x)), w * x, rtol=1e-12, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_deeplift_summation_to_delta(seed):
    net = make_net(DEEP_CONV, seed=seed, bias_scale=0.3)
    x = random_input((1, 8, 8), seed)
    base = random_input((1, 8, 8), seed + 1, 0, 0.5)
    t = seed % 3
    delta = score(net, x, t) - score(net, base, t)
    total = float(deeplift(net, x, base, t).sum())
    assert abs(total - delta) <= 0.01 * abs(delta) + 1e-9


def test_deeplift_shape_mismatch():
    net = make_net()
    with pytest.raises(InputShapeError):
        deeplift(net, np.zeros((1, 8, 8)), np.zeros((1, 4, 4)), 0)


# training ------------------------------------------------------------------

def test_zero_learning_rate_leaves_parameters():
    net = make_net(MLP, (1, 4, 4), dtype=np.float32)
    data = [(random_input((4, 4), i), i % 2) for i in range(10)]
    trained, hist = train(net, data, TrainConfig(learning_rate=0.0, epochs=3, batch_size=4))
    for (w0, b0), (w1, b1) in zip(net.params(), trained.params()):
        np.testing.assert_array_equal(w0, w1)
        np.testing.assert_array_equal(b0, b1)
    assert len(hist) == 3


def test_linear_regression_fits_least_squares():
    rng = np.random.default_rng(5)
    w_true = rng.normal(size=4)
    X = rng.normal(size=(20, 4))
    y = X @ w_true + 0.5
    net = Network((Dense(np.zeros((1, 4), np.float32), np.zeros(1, np.float32)),), (4,), "regression")
    trained, hist = train(net, list(zip(X, y)), TrainConfig(learning_rate=0.05, epochs=200, batch_size=4,
                                                            loss="mse", momentum=0.0))
    assert hist[-1] < 1e-3
    coef, *_ = np.linalg.lstsq(np.hstack([X, np.ones((20, 1))]), y, rcond=None)
    np.testing.assert_allclose(trained.layers[0].weight[0], coef[:4], atol=1e-2)


def test_training_is_bitwise_deterministic():
    data = [(random_input((8, 8), i), i % 3, (random_input((8, 8), i + 50) > 0.7)) for i in range(24)]
    cfg = TrainConfig(learning_rate=0.05, epochs=3, batch_size=5, seed=9, augment=True, weight_decay=1e-4,
                      schedule="cosine")
    net = make_net(SMALL_CONV, dtype=np.float32)
    a, ha = train(net, data, cfg)
    b, hb = train(net, data, cfg)
    assert ha == hb
    for (w0, b0), (w1, b1) in zip(a.params(), b.params()):
        assert w0.tobytes() == w1.tobytes() and b0.tobytes() == b1.tobytes()


def test_training_reduces_loss():
    data = [(np.full((8, 8), i % 2, dtype=float), i % 2) for i in range(16)]
    net = make_net(SMALL_CONV, dtype=np.float32)
    _, hist = train(net, data, TrainConfig(learning_rate=0.05, epochs=15, batch_size=4))
    assert hist[-1] < hist[0]


def test_empty_dataset_and_bad_labels():
    net = make_net(SMALL_CONV, dtype=np.float32)
    with pytest.raises(EmptyInputError):
        train(net, [], TrainConfig())
    with pytest.raises(LabelError):
        train(net, [(np.zeros((8, 8)), 5)], TrainConfig())
    with pytest.raises(LabelError):
        train(net, [(np.zeros((8, 8)), 0.5)], TrainConfig(loss="mse"))


def test_train_config_validation():
    for bad in ({"learning_rate": -1}, {"batch_size": 0}, {"loss": "hinge"}, {"schedule": "step"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_selected_scores_pick_target_column():
    net = make_net()
    z = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(selected_scores(net, z, [2, 0]), [2.0, 3.0])
