"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Setting ``LATENT_RECOURSE_PURE=1`` forces the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("LATENT_RECOURSE_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND

dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward
segment_log_softmax = _impl.segment_log_softmax
segment_log_softmax_backward = _impl.segment_log_softmax_backward
softplus = _impl.softplus

ACTIVATIONS = {"identity": 0, "relu": 1, "tanh": 2, "sigmoid": 3}


def available_backends():
    """Names of kernel modules importable in this environment."""
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return names
    return ["cython"] + names


def load_backend(name):
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name):
    """Switch the process-wide kernels; returns the previous backend name."""
    global BACKEND, dense_forward, dense_backward, segment_log_softmax, segment_log_softmax_backward, softplus
    impl = load_backend(name)
    prev = BACKEND
    BACKEND = impl.BACKEND
    dense_forward = impl.dense_forward
    dense_backward = impl.dense_backward
    segment_log_softmax = impl.segment_log_softmax
    segment_log_softmax_backward = impl.segment_log_softmax_backward
    softplus = impl.softplus
    return prev
