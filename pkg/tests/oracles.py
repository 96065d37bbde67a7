"""Independent reference computations used to freeze expected values.

Nothing here imports the package's autodiff or optimizer; every value is
computed with plain numpy/math so a bug in the library cannot leak into
its own oracle.
"""

import math

import numpy as np


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def central_difference(f, x, h=1e-4):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def kl_closed_form(mu, logvar):
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    return 0.5 * float(np.sum(mu ** 2 + np.exp(logvar) - 1.0 - logvar))


def adam_reference(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, p0=0.0):
    """Scalar Adam trajectory written out from the textbook recurrence."""
    p, m, v = p0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out


def softplus(v):
    return np.logaddexp(0.0, v)


def identity_objective(x1, x1_star, lam, weight=2.0):
    """Cross-entropy toward class 1 for logit difference ``weight*x1`` plus lam*(x1 - x1*)^2."""
    return softplus(-weight * x1) + lam * (x1 - x1_star) ** 2


def grid_minimizer(x_star, lam, lo=-4.0, hi=4.0, step=1e-3, weight=2.0):
    """1-D grid search over x1 (x2.. stay at x* by symmetry) for the identity testbed."""
    grid = np.arange(lo, hi + step / 2, step)
    vals = identity_objective(grid, x_star[0], lam, weight)
    best = np.array(x_star, dtype=float)
    best[0] = grid[int(np.argmin(vals))]
    return best
