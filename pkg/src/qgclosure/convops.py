"""Circular 2-D convolution kernels with interchangeable backends.

The convolution stack is the hottest non-FFT loop during closure
training, so it compiles to a C extension (:mod:`qgclosure._convkernel`,
built from Cython) with a pure-numpy fallback based on im2col and BLAS
matrix products.  The backend is chosen at import time: the compiled
kernel when present, numpy otherwise.  ``QGCLOSURE_CONV_BACKEND`` or
:func:`set_backend` overrides the choice; both backends produce results
equal to machine precision and each is deterministic run to run.

Conventions match the usual machine-learning cross-correlation: inputs
are channel stacks ``x[c, i, j]``, weights ``w[o, c, p, q]`` with odd
kernel size, biases ``b[o]``, and indices wrap periodically so the
output keeps the input's spatial shape.
"""

import os

import numpy as np

from .autodiff import Var, value_of

try:
    from . import _convkernel
except ImportError:
    _convkernel = None


def _check_shapes(x, w, b):
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"weights must be (out, in, k, k), got {w.shape}")
    if w.shape[2] % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {w.shape[2]}")
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ValueError(f"input channels {x.shape} do not match weights {w.shape}")
    if x.shape[1] != x.shape[2]:
        raise ValueError(f"input must be square, got {x.shape}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")


def _im2col(x, k):
    """Stack the k*k circular shifts of x as (c*k*k, n*n) columns."""
    c, n, _ = x.shape
    p = k // 2
    cols = np.empty((c, k * k, n * n), dtype=x.dtype)
    for dp in range(k):
        for dq in range(k):
            shifted = np.roll(x, (p - dp, p - dq), axis=(1, 2))
            cols[:, dp * k + dq, :] = shifted.reshape(c, n * n)
    return cols.reshape(c * k * k, n * n)


def _forward_numpy(x, w, b):
    o, c, k, _ = w.shape
    n = x.shape[1]
    cols = _im2col(x, k)
    y = w.reshape(o, c * k * k) @ cols
    y += b[:, None]
    return y.reshape(o, n, n)


def _backward_input_numpy(gy, w):
    o, c, k, _ = w.shape
    n = gy.shape[1]
    p = k // 2
    gcols = w.reshape(o, c * k * k).T @ gy.reshape(o, n * n)
    gcols = gcols.reshape(c, k * k, n, n)
    gx = np.zeros((c, n, n), dtype=gy.dtype)
    for dp in range(k):
        for dq in range(k):
            gx += np.roll(gcols[:, dp * k + dq], (dp - p, dq - p), axis=(1, 2))
    return gx


def _backward_weights_numpy(x, gy, k):
    o = gy.shape[0]
    c, n, _ = x.shape
    cols = _im2col(x, k)
    gw = gy.reshape(o, n * n) @ cols.T
    return gw.reshape(o, c, k, k)


def _forward_compiled(x, w, b):
    return _convkernel.forward(x, w, b)


def _backward_input_compiled(gy, w):
    return _convkernel.backward_input(gy, w)


def _backward_weights_compiled(x, gy, k):
    return _convkernel.backward_weights(x, gy, k)


_BACKENDS = {"numpy": (_forward_numpy, _backward_input_numpy, _backward_weights_numpy)}
if _convkernel is not None:
    _BACKENDS["compiled"] = (_forward_compiled, _backward_input_compiled,
                             _backward_weights_compiled)

_active = os.environ.get("QGCLOSURE_CONV_BACKEND")
if _active is None:
    _active = "compiled" if "compiled" in _BACKENDS else "numpy"
if _active not in _BACKENDS:
    raise ImportError(
        f"QGCLOSURE_CONV_BACKEND={_active!r} is not available; "
        f"choices: {sorted(_BACKENDS)}"
    )


def available_backends():
    """Names of the usable convolution backends."""
    return sorted(_BACKENDS)


def active_backend():
    """Backend currently used by conv2d and its adjoints."""
    return _active


def set_backend(name):
    """Select a convolution backend by name; raises on unknown names."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown conv backend {name!r}; choices: {sorted(_BACKENDS)}")
    _active = name


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b):
    """Bias plus circular cross-correlation of a channel stack.

    y[o, i, j] = b[o] + sum_{c,p,q} w[o, c, p, q] * x[c, (i+p-k//2) % n, (j+q-k//2) % n]
    """
    x, w, b = _as_c(x), _as_c(w), _as_c(b)
    _check_shapes(x, w, b)
    return _BACKENDS[_active][0](x, w, b)


def conv2d_backward_input(gy, w):
    """Adjoint of :func:`conv2d_forward` in its input argument."""
    gy, w = _as_c(gy), _as_c(w)
    return _BACKENDS[_active][1](gy, w)


def conv2d_backward_weights(x, gy, k):
    """Adjoint of :func:`conv2d_forward` in its weight argument."""
    x, gy = _as_c(x), _as_c(gy)
    return _BACKENDS[_active][2](x, gy, k)


def conv2d(x, w, b):
    """Differentiable circular convolution; any argument may be traced."""
    vx, vw, vb = value_of(x), value_of(w), value_of(b)
    y = conv2d_forward(vx, vw, vb)
    tape = None
    for arg in (x, w, b):
        if isinstance(arg, Var):
            tape = arg.tape
            break
    if tape is None:
        return y
    k = vw.shape[2]
    parents, vjps = [], []
    if isinstance(x, Var):
        parents.append(x.node)
        vjps.append(lambda g: conv2d_backward_input(g, vw))
    if isinstance(w, Var):
        parents.append(w.node)
        vjps.append(lambda g: conv2d_backward_weights(vx, g, k))
    if isinstance(b, Var):
        parents.append(b.node)
        vjps.append(lambda g: g.sum(axis=(1, 2)))
    traced = (isinstance(x, Var), isinstance(w, Var), isinstance(b, Var))

    def fwd(*pv):
        it = iter(pv)
        ax = next(it) if traced[0] else vx
        aw = next(it) if traced[1] else vw
        ab = next(it) if traced[2] else vb
        return conv2d_forward(ax, aw, ab)

    return tape.emit("conv2d", y, tuple(parents), tuple(vjps), fwd)
