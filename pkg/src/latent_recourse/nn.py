"""Dense feed-forward networks, losses, and classifier training."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .errors import ContractError, DataError, ShapeError
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid", "softmax")
PROB_CLAMP = 1e-7


@dataclass
class Layer:
    weight: Tensor  # (fan_in, fan_out)
    bias: Tensor
    activation: str = "identity"

    def __post_init__(self):
        if not isinstance(self.weight, Tensor):
            self.weight = Tensor(self.weight, requires_grad=True)
        if not isinstance(self.bias, Tensor):
            self.bias = Tensor(self.bias, requires_grad=True)

    @property
    def fan_in(self):
        return self.weight.shape[0]

    @property
    def fan_out(self):
        return self.weight.shape[1]


@dataclass
class DenseNetwork:
    layers: list = field(default_factory=list)

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ContractError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and i != len(self.layers) - 1:
                raise ContractError(f"layer {i}: softmax only allowed as the final activation")
            if i and self.layers[i - 1].fan_out != layer.fan_in:
                raise ShapeError(f"layer {i}: input dim {layer.fan_in} != previous output "
                                 f"{self.layers[i - 1].fan_out}")

    @classmethod
    def build(cls, sizes, activations, rng):
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ContractError("need one activation per layer")
        layers = []
        for fin, fout, act in zip(sizes[:-1], sizes[1:], activations):
            a = np.sqrt(6.0 / (fin + fout))
            w = Tensor(rng.uniform(-a, a, size=(fin, fout)), requires_grad=True)
            b = Tensor(np.zeros(fout), requires_grad=True)
            layers.append(Layer(w, b, act))
        return cls(layers)

    @classmethod
    def zeros(cls, sizes, activations):
        layers = [Layer(Tensor(np.zeros((i, o)), requires_grad=True),
                        Tensor(np.zeros(o), requires_grad=True), act)
                  for i, o, act in zip(sizes[:-1], sizes[1:], activations)]
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].fan_in

    @property
    def output_dim(self):
        return self.layers[-1].fan_out

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def weights(self):
        return [layer.weight for layer in self.layers]

    def logits(self, x):
        """Output before a final softmax (identical to ``forward`` otherwise)."""
        h = _as_2d(x)
        for i, layer in enumerate(self.layers):
            if h.shape[1] != layer.fan_in:
                raise ShapeError(f"layer {i}: expected input width {layer.fan_in}, got {h.shape[1]}")
            act = "identity" if layer.activation == "softmax" else layer.activation
            h = ad.dense(h, layer.weight, layer.bias, act)
        return h

    def forward(self, x):
        out = self.logits(x)
        if self.layers[-1].activation == "softmax":
            out = ad.softmax(out)
        return out

    __call__ = forward


def forward(net, x):
    return net.forward(x)


def _as_2d(x):
    x = ad.as_tensor(x)
    if x.data.ndim == 1:
        x = Tensor(x.data[None, :]) if not x.requires_grad else _row(x)
    return x


def _row(x):
    return ad.apply_op("reshape", x.data[None, :], (x,), lambda g: (g[0],))


# ---------------------------------------------------------------- losses

def cross_entropy(logits, targets):
    """Mean categorical cross-entropy; ``targets`` are class indices."""
    targets = np.asarray(targets, dtype=np.intp)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(targets)), targets] = 1.0
    return ad.neg(ad.mean(ad.sum_(ad.mul(ad.log_softmax(logits), onehot), axis=1)))


def bce_with_logits(logit, target):
    """Elementwise binary cross-entropy in logit space: softplus(s) - y*s."""
    return ad.sub(ad.softplus(logit), ad.mul(logit, np.asarray(target, dtype=np.float64)))


def bce_prob(p, target):
    """Binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = np.asarray(target, dtype=np.float64)
    return ad.neg(ad.add(ad.mul(ad.log(p), t), ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - t)))


def l1_penalty(net):
    return ad.add_n([ad.sum_(ad.abs_(w)) for w in net.weights()])


# ---------------------------------------------------------------- labels / prediction

def labels_to_index(y):
    y = np.asarray(y)
    if not np.all(np.isin(y, (-1, 1))):
        raise DataError("labels must be in {-1, 1}")
    return ((y + 1) // 2).astype(np.intp)


def index_to_labels(idx):
    return np.where(np.asarray(idx) == 1, 1, -1)


def predict_proba(net, X):
    return net.forward(np.asarray(X, dtype=np.float64)).data


def predict_labels(net, X):
    """Labels in {-1, 1}; ties go to -1."""
    p = predict_proba(net, X)
    return np.where(p[:, 1] > p[:, 0], 1, -1)


def accuracy(net, X, y):
    return float(np.mean(predict_labels(net, X) == np.asarray(y)))


# ---------------------------------------------------------------- training

ARCHITECTURES = ("linear-softmax", "mlp")


def make_classifier(architecture, input_dim, rng, hidden=(32, 32, 32)):
    if architecture == "linear-softmax":
        return DenseNetwork.build([input_dim, 2], ["softmax"], rng)
    if architecture == "mlp":
        sizes = [input_dim, *hidden, 2]
        return DenseNetwork.build(sizes, ["relu"] * len(hidden) + ["softmax"], rng)
    raise ContractError(f"unknown architecture {architecture!r}")


def train_classifier(X, y, architecture="linear-softmax", l1_weight=0.0, epochs=30, seed=0,
                     batch_size=128, lr=1e-3, hidden=(32, 32, 32), history=None):
    """Cross-entropy + ``l1_weight * sum|W|`` minimized with Adam over mini-batches.

    ``y`` holds labels in {-1, 1}. When ``history`` is a list, the mean
    training loss of each epoch is appended to it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("train_classifier: empty dataset")
    if l1_weight < 0:
        raise ContractError("l1_weight must be >= 0")
    idx = labels_to_index(y)
    rng = np.random.default_rng(seed)
    net = make_classifier(architecture, X.shape[1], rng, hidden)

    classes = np.unique(idx)
    if len(classes) == 1:
        warnings.warn("train_classifier: single-class dataset, fitting a constant predictor",
                      stacklevel=2)
        for layer in net.layers:
            layer.weight.data[:] = 0.0
            layer.bias.data[:] = 0.0
        net.layers[-1].bias.data[classes[0]] = 1.0
        return net

    params = net.parameters()
    state = AdamState.for_params(params, lr=lr)
    n = len(X)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            with Tape() as tape:
                loss = cross_entropy(net.logits(X[rows]), idx[rows])
                if l1_weight > 0:
                    loss = ad.add(loss, ad.scale(l1_penalty(net), l1_weight))
            total += float(loss.data) * len(rows)
            backward(tape, loss)
            adam_step(params, [p.grad for p in params], state)
            for p in params:
                p.grad = None
        if history is not None:
            history.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, total / n)
    return net
