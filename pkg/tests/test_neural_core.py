import math

import numpy as np
import pytest

from latent_recourse import autodiff as ad
from latent_recourse.autodiff import Tape, Tensor, backward, grad, grad_check
from latent_recourse.errors import ContractError, NumericError, ShapeError
from latent_recourse.nn import (DenseNetwork, Layer, accuracy, bce_with_logits, cross_entropy, forward,
                                predict_proba, train_classifier)
from latent_recourse.optim import AdamState, adam_step

from . import oracles
from .primitives import PRIMITIVES, mlp_builder, mlp_sampler


# ---- forward

def test_zero_network_softmax_is_uniform():
    net = DenseNetwork.zeros([4, 2], ["softmax"])
    p = forward(net, np.random.default_rng(0).normal(size=(5, 4))).data
    assert np.array_equal(p, np.full((5, 2), 0.5))


def test_sigmoid_layer_values():
    net = DenseNetwork([Layer(np.array([[2.0]]), np.array([0.0]), "sigmoid")])
    assert forward(net, np.array([[0.0]])).data[0, 0] == 0.5
    expected = oracles.sigmoid(2.0)
    assert expected == pytest.approx(0.880797, abs=1e-6)
    assert forward(net, np.array([[1.0]])).data[0, 0] == pytest.approx(expected, abs=1e-12)


def test_forward_dimension_mismatch_names_layer():
    net = DenseNetwork.build([3, 4, 2], ["tanh", "softmax"], np.random.default_rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        forward(net, np.zeros((1, 5)))


def test_softmax_only_last():
    with pytest.raises(ContractError):
        DenseNetwork.zeros([2, 2, 2], ["softmax", "identity"])


def test_forward_deterministic():
    net = DenseNetwork.build([3, 8, 2], ["relu", "softmax"], np.random.default_rng(5))
    x = np.random.default_rng(6).normal(size=(10, 3))
    assert np.array_equal(forward(net, x).data, forward(net, x).data)


def test_softmax_rows_sum_to_one():
    net = DenseNetwork.build([3, 5], ["softmax"], np.random.default_rng(5))
    x = np.random.default_rng(1).normal(scale=30.0, size=(50, 3))
    p = forward(net, x).data
    assert np.all(p >= 0)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-9


def test_glorot_bounds():
    net = DenseNetwork.build([10, 30], ["identity"], np.random.default_rng(0))
    a = math.sqrt(6.0 / 40)
    assert np.all(np.abs(net.layers[0].weight.data) <= a)
    assert np.all(net.layers[0].bias.data == 0)


# ---- backward

def test_constant_loss_zero_gradient():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.add(ad.scale(ad.sum_(x), 0.0), 3.0)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.zeros(2))


def test_square_gradient_matches_finite_difference():
    fd = oracles.central_difference(lambda v: v * v, 3.0)
    assert fd == pytest.approx(6.0, abs=1e-8)
    (g,) = grad(lambda x: ad.sum_(ad.square(x)), np.array([3.0]))
    assert g[0] == pytest.approx(fd, abs=1e-8)


def test_bce_gradient_at_zero_logit():
    fd = oracles.central_difference(lambda s: float(oracles.softplus(s) - s), 0.0)
    assert fd == pytest.approx(-0.5, abs=1e-8)
    (g,) = grad(lambda s: ad.sum_(bce_with_logits(s, np.array([[1.0]]))), np.array([[0.0]]))
    assert g[0, 0] == pytest.approx(-0.5, abs=1e-12)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ad.scale(x, 2.0)
    with pytest.raises(ContractError):
        backward(tape, y)


def test_backward_resets_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.square(x))
    assert len(tape) > 0
    backward(tape, loss)
    assert len(tape) == 0


def test_backward_wrt_leaves_other_leaves_alone():
    x = Tensor(np.ones(2), requires_grad=True)
    w = Tensor(np.full(2, 3.0), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum_(ad.mul(x, w))
    backward(tape, loss, wrt=[x])
    assert np.array_equal(x.grad, [3.0, 3.0])
    assert w.grad is None


def test_gradients_accumulate_on_reuse():
    (g,) = grad(lambda x: ad.sum_(ad.add(ad.mul(x, x), x)), np.array([2.0]))
    assert g[0] == pytest.approx(5.0)


def test_no_tape_no_records():
    x = Tensor(np.ones(2), requires_grad=True)
    y = ad.exp(x)
    assert not y.requires_grad


# ---- grad_check

@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_grad_check(name):
    builder, sampler = PRIMITIVES[name]
    rep = grad_check(builder, sampler, tolerance=1e-4, n_points=20, seed=11)
    assert rep.passed, str(rep)


def test_linear_graph_passes():
    rep = grad_check(lambda a, b: ad.add(ad.scale(a, 3.0), b),
                     lambda rng: [rng.normal(size=(2, 2)), rng.normal(size=(2, 2))])
    assert rep.passed
    assert rep.max_rel_error < 1e-6


def test_corrupted_rule_detected():
    def bad_square(a):
        return ad.apply_op("bad_square", a.data ** 2, (a,), lambda g: (g * (2.0 * a.data + 0.1),))

    rep = grad_check(lambda a: bad_square(a), lambda rng: [rng.uniform(-2, 2, size=(1,))],
                     n_points=30, seed=2)
    assert not rep.passed
    # projection scales both sides equally, so the relative error is 0.1/|fd| up to the floor
    assert rep.max_rel_error >= 0.1 / 4.0


def test_tanh_mlp_passes():
    rep = grad_check(mlp_builder, mlp_sampler, tolerance=1e-4, n_points=25, seed=4)
    assert rep.passed, str(rep)


@pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
def test_grad_check_names_non_finite_op():
    with pytest.raises(NumericError, match="log"):
        grad_check(lambda a: ad.log(a), lambda rng: [np.array([-1.0, 2.0])], n_points=1)


def test_grad_check_rejects_bad_tolerance():
    with pytest.raises(ContractError):
        grad_check(lambda a: a, lambda rng: [np.zeros(1)], tolerance=0)


# ---- adam

def test_adam_zero_gradient_no_change():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=0.1)
    adam_step([p], [np.zeros(2)], state)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_is_minus_lr():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState.for_params([p], lr=0.01)
    adam_step([p], [np.array([1.0])], state)
    assert p.data[0] == pytest.approx(oracles.adam_reference([1.0], lr=0.01)[0], abs=1e-15)
    assert p.data[0] == pytest.approx(-0.01, rel=1e-6)


def test_adam_two_steps_match_recurrence():
    p = Tensor(np.array([0.5]), requires_grad=True)
    state = AdamState.for_params([p], lr=0.02)
    for g in (0.7, 0.7):
        adam_step([p], [np.array([g])], state)
    ref = oracles.adam_reference([0.7, 0.7], lr=0.02, p0=0.5)[-1]
    assert p.data[0] == pytest.approx(ref, abs=1e-15)


def test_adam_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    state = AdamState.for_params([p])
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(2)], state)


# ---- training

def test_separable_blobs_high_accuracy():
    rng = np.random.default_rng(0)
    y = np.where(rng.random(400) < 0.5, -1, 1)
    X = rng.normal(size=(400, 2)) * 0.5 + y[:, None] * 2.0
    net = train_classifier(X, y, "linear-softmax", epochs=20, seed=0, lr=0.05)
    assert accuracy(net, X, y) >= 0.99


def test_training_deterministic():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    y = np.where(X[:, 0] > 0, 1, -1)
    a = train_classifier(X, y, "mlp", epochs=3, seed=9)
    b = train_classifier(X, y, "mlp", epochs=3, seed=9)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weight.data, lb.weight.data)


def test_zero_l1_matches_unpenalized():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(150, 3))
    y = np.where(X[:, 1] > 0, 1, -1)
    h0, h1 = [], []
    train_classifier(X, y, epochs=4, seed=3, history=h0)
    train_classifier(X, y, l1_weight=0.0, epochs=4, seed=3, history=h1)
    assert h0 == h1


def test_single_class_constant_predictor():
    X = np.random.default_rng(3).normal(size=(50, 2))
    y = np.ones(50, dtype=int)
    with pytest.warns(UserWarning):
        net = train_classifier(X, y, epochs=2, seed=0)
    assert accuracy(net, X, y) == 1.0
    assert accuracy(net, -5 * X, y) == 1.0


def test_empty_dataset_rejected():
    with pytest.raises(Exception):
        train_classifier(np.zeros((0, 2)), np.zeros(0), epochs=1)


def test_cross_entropy_value():
    logits = Tensor(np.array([[0.0, 0.0], [2.0, 0.0]]))
    ce = float(cross_entropy(logits, [1, 0]).data)
    ref = (math.log(2) + math.log1p(math.exp(-2.0))) / 2
    assert ce == pytest.approx(ref, abs=1e-12)


def test_predict_proba_shape():
    net = DenseNetwork.build([3, 2], ["softmax"], np.random.default_rng(0))
    assert predict_proba(net, np.zeros((4, 3))).shape == (4, 2)
