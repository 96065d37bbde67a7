"""Pure numpy implementations of the compiled kernels (same signatures)."""

import numpy as np

BACKEND = "python"


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check(x, w, b):
    if w.shape[0] != x.shape[1] or b.shape[0] != w.shape[1]:
        raise ValueError("dense_forward: shape mismatch")


def dense_forward(x, w, b, act):
    _check(x, w, b)
    pre = x @ w + b
    if act == 0:
        return pre
    if act == 1:
        return np.maximum(pre, 0.0)
    if act == 2:
        return np.tanh(pre)
    return _sigmoid(pre)


def dense_backward(x, w, out, gout, act):
    if act == 0:
        gpre = gout
    elif act == 1:
        gpre = np.where(out > 0, gout, 0.0)
    elif act == 2:
        gpre = gout * (1.0 - out * out)
    else:
        gpre = gout * out * (1.0 - out)
    return gpre @ w.T, x.T @ gpre, gpre.sum(axis=0)


def segment_log_softmax(logits, bounds):
    out = np.empty_like(logits)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        block = logits[:, lo:hi]
        mx = block.max(axis=1, keepdims=True)
        lse = mx + np.log(np.exp(block - mx).sum(axis=1, keepdims=True))
        out[:, lo:hi] = block - lse
    return out


def segment_log_softmax_backward(out, gout, bounds):
    gin = np.empty_like(gout)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        tot = gout[:, lo:hi].sum(axis=1, keepdims=True)
        gin[:, lo:hi] = gout[:, lo:hi] - np.exp(out[:, lo:hi]) * tot
    return gin


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
