"""Catalogue of differentiable primitives with input samplers on [-2, 2].

Kinked ops (abs, relu, clip) are sampled away from the kink so central
differences with h=1e-6 never straddle it.
"""

import numpy as np

from latent_recourse import autodiff as ad
from latent_recourse import genmodel, nn


def _u(shape, lo=-2.0, hi=2.0):
    return lambda rng: rng.uniform(lo, hi, size=shape)


def _away(shape, kinks=(0.0,), gap=0.05):
    def draw(rng):
        v = rng.uniform(-2.0, 2.0, size=shape)
        for k in kinks:
            near = np.abs(v - k) < gap
            v[near] = k + np.sign(v[near] - k + 1e-12) * gap * 2
        return v
    return draw


def _pos(shape):
    return _u(shape, 0.2, 2.0)


def _many(*draws):
    return lambda rng: [d(rng) for d in draws]


BOUNDS = [0, 2, 5, 6]
S = (3, 2)

PRIMITIVES = {
    "add": (lambda a, b: ad.add(a, b), _many(_u(S), _u(S))),
    "add_broadcast": (lambda a, b: ad.add(a, b), _many(_u(S), _u((2,)))),
    "sub": (lambda a, b: ad.sub(a, b), _many(_u(S), _u(S))),
    "mul": (lambda a, b: ad.mul(a, b), _many(_u(S), _u(S))),
    "div": (lambda a, b: ad.div(a, b), _many(_u(S), _pos(S))),
    "add_n": (lambda a, b, c: ad.add_n([a, b, c]), _many(_u(S), _u(S), _u(S))),
    "neg": (lambda a: ad.neg(a), _many(_u(S))),
    "scale": (lambda a: ad.scale(a, -1.7), _many(_u(S))),
    "exp": (lambda a: ad.exp(a), _many(_u(S))),
    "log": (lambda a: ad.log(a), _many(_pos(S))),
    "square": (lambda a: ad.square(a), _many(_u(S))),
    "abs": (lambda a: ad.abs_(a), _many(_away(S))),
    "tanh": (lambda a: ad.tanh(a), _many(_u(S))),
    "relu": (lambda a: ad.relu(a), _many(_away(S))),
    "sigmoid": (lambda a: ad.sigmoid(a), _many(_u(S))),
    "softplus": (lambda a: ad.softplus(a), _many(_u(S))),
    "clip": (lambda a: ad.clip(a, -1.0, 1.0), _many(_away(S, (-1.0, 1.0)))),
    "sum_all": (lambda a: ad.sum_(a), _many(_u(S))),
    "sum_axis1": (lambda a: ad.sum_(a, axis=1), _many(_u(S))),
    "mean_axis0": (lambda a: ad.mean(a, axis=0), _many(_u(S))),
    "matmul": (lambda a, b: ad.matmul(a, b), _many(_u(S), _u((2, 4)))),
    "take_cols": (lambda a: ad.take_cols(a, [2, 0, 2]), _many(_u((3, 4)))),
    "take_slice": (lambda a: ad.take_cols(a, slice(1, 3)), _many(_u((3, 4)))),
    "concat": (lambda a, b: ad.concat([a, b]), _many(_u(S), _u((3, 1)))),
    "dense_identity": (lambda x, w, b: ad.dense(x, w, b, "identity"), _many(_u(S), _u((2, 3)), _u((3,)))),
    "dense_relu": (lambda x, w, b: ad.dense(x, w, b, "relu"),
                   _many(_u(S), _u((2, 3)), lambda rng: rng.uniform(-2, 2, 3) + 3.0)),
    "dense_tanh": (lambda x, w, b: ad.dense(x, w, b, "tanh"), _many(_u(S), _u((2, 3)), _u((3,)))),
    "dense_sigmoid": (lambda x, w, b: ad.dense(x, w, b, "sigmoid"), _many(_u(S), _u((2, 3)), _u((3,)))),
    "segment_log_softmax": (lambda a: ad.segment_log_softmax(a, BOUNDS), _many(_u((2, 6)))),
    "log_softmax": (lambda a: ad.log_softmax(a), _many(_u(S))),
    "softmax": (lambda a: ad.softmax(a), _many(_u((2, 4)))),
    "cross_entropy": (lambda a: nn.cross_entropy(a, [1, 0, 1]), _many(_u(S))),
    "bce_with_logits": (lambda a: nn.bce_with_logits(a, np.array([[1.0, 0.0]] * 3)), _many(_u(S))),
    "bce_prob": (lambda a: nn.bce_prob(ad.sigmoid(a), np.array([[1.0, 0.0]] * 3)), _many(_u(S))),
    "kl_standard_normal": (lambda m, lv: genmodel.kl_standard_normal(m, lv), _many(_u(S), _u(S))),
    "gaussian_nll": (lambda x, m, lv: genmodel.gaussian_nll(x, m, lv), _many(_u(S), _u(S), _u(S))),
    "reparam_sample": (lambda m, lv, e: genmodel.reparam_sample(m, lv, e), _many(_u(S), _u(S), _u(S))),
    "soft_clamp": (lambda a: genmodel.soft_clamp(ad.scale(a, 6.0)), _many(_u(S))),
}


def mlp_builder(x, w1, b1, w2, b2, w3, b3):
    h = ad.dense(x, w1, b1, "tanh")
    h = ad.dense(h, w2, b2, "tanh")
    return ad.dense(h, w3, b3, "identity")


mlp_sampler = _many(_u((2, 3)), _u((3, 4)), _u((4,)), _u((4, 4)), _u((4,)), _u((4, 2)), _u((2,)))
