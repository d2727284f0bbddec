"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tape` records every primitive applied to traced variables
(:class:`Var`) as a Wengert list.  :func:`backward` walks that list in
reverse, accumulating vector-Jacobian products into the leaves.  The
primitive set is deliberately small: arithmetic via operator overloads,
plus the handful of named primitives a spectral solver and a periodic
CNN need (``fft_fwd``/``fft_inv`` live in :mod:`qgclosure.spectral`,
``conv2d`` in :mod:`qgclosure.convops`; both register through
:func:`Tape.emit`).

Complex arrays are differentiated with respect to the real inner
product ``<a, b> = Re(sum(a * conj(b)))``, which makes every adjoint
below literal matrix transposition over the underlying real vector
space.  All losses are real scalars, so this convention produces
ordinary gradients for the real parameters at the leaves.

Traced code is written once: each primitive accepts either plain
ndarrays or :class:`Var` and performs the identical numpy call in both
cases, so a recorded forward pass reproduces the untraced computation
bitwise and :meth:`Tape.replay` can verify it.
"""

import numpy as np


def value_of(x):
    """Return the ndarray behind ``x``, whether traced or not."""
    return x.value if isinstance(x, Var) else x


class TapeNode:
    """One recorded primitive: its output value, parents and vjps."""

    __slots__ = ("kind", "value", "parents", "vjps", "fwd", "grad")

    def __init__(self, kind, value, parents, vjps, fwd):
        self.kind = kind
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.fwd = fwd
        self.grad = None


class Tape:
    """Append-only record of primitives for one differentiated pass."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value, kind="leaf"):
        """Wrap ``value`` as a traced variable with no parents."""
        node = TapeNode(kind, np.asarray(value), (), (), None)
        self.nodes.append(node)
        return Var(node.value, self, node)

    def emit(self, kind, value, parents, vjps, fwd=None):
        """Record a primitive output.

        Parameters
        ----------
        kind : str
            Name of the primitive, used in error messages and replay.
        value : ndarray
            Forward result.
        parents : tuple of TapeNode or None
            One entry per differentiable input; None marks a constant.
        vjps : tuple of callable or None
            ``vjps[i](g)`` maps the output cotangent to parent ``i``'s
            cotangent.  Aligned with ``parents``.
        fwd : callable, optional
            Recomputes ``value`` from the parent values; used by
            :meth:`replay`.  Constants must be captured in the closure.
        """
        node = TapeNode(kind, value, parents, vjps, fwd)
        self.nodes.append(node)
        return Var(value, self, node)

    def replay(self):
        """Re-execute the recorded forward pass from the leaf values.

        Returns the list of recomputed node values (leaves return their
        stored value).  Nodes recorded without a ``fwd`` callable raise,
        since the tape would silently go stale.
        """
        values = {}
        out = []
        for node in self.nodes:
            if not node.parents:
                val = node.value
            else:
                if node.fwd is None:
                    raise ValueError(f"primitive {node.kind!r} recorded without replay support")
                val = node.fwd(*[values[id(p)] for p in node.parents])
            values[id(node)] = val
            out.append(val)
        return out


class Var:
    """A traced value on a tape.

    Supports the arithmetic operators needed by the solver and the CNN;
    everything else must go through a registered primitive.  Mixing with
    plain ndarrays or python scalars treats them as constants.
    """

    __slots__ = ("value", "tape", "node")

    # Reject silent coercion by numpy ufuncs: ndarray <op> Var must fall
    # back to the reflected python operator, not an object array.
    __array_ufunc__ = None

    def __init__(self, value, tape, node):
        self.value = value
        self.tape = tape
        self.node = node

    @property
    def grad(self):
        """Cotangent accumulated by :func:`backward`, or None."""
        return self.node.grad

    def __array__(self, dtype=None, copy=None):
        raise TypeError(
            "cannot convert a traced Var to a plain array; apply registered "
            "primitives or read .value explicitly"
        )

    def __repr__(self):
        return f"Var(kind={self.node.kind!r}, shape={np.shape(self.value)})"

    def __add__(self, other):
        return _add(self, other)

    def __radd__(self, other):
        return _add(self, other)

    def __sub__(self, other):
        return _add(self, _neg(other))

    def __rsub__(self, other):
        return _add(_neg(self), other)

    def __neg__(self):
        return _neg(self)

    def __mul__(self, other):
        return _mul(self, other)

    def __rmul__(self, other):
        return _mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("division by a traced Var is not a registered primitive")
        return _mul(1.0 / other, self)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _add(a, b):
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    out = va + vb
    if tape is None:
        return out
    if isinstance(a, Var) and isinstance(b, Var) and np.shape(va) != np.shape(vb):
        raise ValueError("traced add requires matching shapes")
    parents, vjps = [], []
    for x, vx in ((a, va), (b, vb)):
        if isinstance(x, Var):
            parents.append(x.node)
            vjps.append(lambda g: g)
        else:
            parents.append(None)
            vjps.append(None)
    if isinstance(a, Var) and isinstance(b, Var):
        fwd = lambda pa, pb: pa + pb
    elif isinstance(a, Var):
        fwd = lambda pa: pa + vb
    else:
        fwd = lambda pb: va + pb
    return tape.emit("add", out, tuple(p for p in parents if p is not None),
                     tuple(v for v in vjps if v is not None), fwd)


def _neg(x):
    if not isinstance(x, Var):
        return -x
    out = -x.value
    return x.tape.emit("neg", out, (x.node,), (lambda g: -g,), lambda p: -p)


def _mul(a, b):
    """Pointwise product; adjoints use the conjugate of the other factor.

    For real data this is the usual product rule; for complex data the
    conjugate makes the vjp the adjoint under the real inner product, so
    constant diagonal multipliers (ik, -1/k^2, masks) need no special
    casing.
    """
    tape = _tape_of(a, b)
    va, vb = value_of(a), value_of(b)
    out = va * vb
    if tape is None:
        return out
    parents, vjps = [], []
    if isinstance(a, Var):
        parents.append(a.node)
        vjps.append(lambda g: g * np.conj(vb))
    if isinstance(b, Var):
        parents.append(b.node)
        vjps.append(lambda g: g * np.conj(va))
    if isinstance(a, Var) and isinstance(b, Var):
        fwd = lambda pa, pb: pa * pb
    elif isinstance(a, Var):
        fwd = lambda pa: pa * vb
    else:
        fwd = lambda pb: va * pb
    return tape.emit("mul", out, tuple(parents), tuple(vjps), fwd)


def relu(x):
    """Elementwise max(x, 0) with subgradient 1 on x > 0."""
    vx = value_of(x)
    out = np.maximum(vx, 0.0)
    if not isinstance(x, Var):
        return out
    mask = (vx > 0.0).astype(vx.dtype)
    return x.tape.emit("relu", out, (x.node,), (lambda g: g * mask,),
                       lambda p: np.maximum(p, 0.0))


def mean(x):
    """Mean over all elements, returning a scalar."""
    vx = value_of(x)
    out = np.mean(vx)
    if not isinstance(x, Var):
        return out
    shape = vx.shape
    size = vx.size

    def vjp(g):
        return np.full(shape, g / size)

    return x.tape.emit("mean", out, (x.node,), (vjp,), lambda p: np.mean(p))


def expand0(x):
    """Insert a leading axis (field -> single-channel stack)."""
    vx = value_of(x)
    out = vx[None]
    if not isinstance(x, Var):
        return out
    return x.tape.emit("expand0", out, (x.node,), (lambda g: g[0],), lambda p: p[None])


def squeeze0(x):
    """Drop a leading length-one axis."""
    vx = value_of(x)
    if vx.shape[0] != 1:
        raise ValueError("squeeze0 requires a leading axis of length 1")
    out = vx[0]
    if not isinstance(x, Var):
        return out
    return x.tape.emit("squeeze0", out, (x.node,), (lambda g: g[None],), lambda p: p[0])


def backward(tape, loss):
    """Accumulate cotangents of a scalar ``loss`` into every tape node.

    After the call, each :class:`Var` created on ``tape`` exposes its
    gradient through ``.grad`` (None if the loss does not depend on it).
    """
    if not isinstance(loss, Var):
        raise TypeError("backward expects a traced scalar Var")
    if np.ndim(loss.value) != 0:
        raise ValueError("backward expects a scalar loss")
    for node in tape.nodes:
        node.grad = None
    loss.node.grad = np.asarray(1.0)
    for node in reversed(tape.nodes):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            pg = vjp(g)
            if parent.grad is None:
                parent.grad = pg
            else:
                parent.grad = parent.grad + pg


def record(fn, leaves):
    """Trace ``fn`` over wrapped ``leaves``.

    Parameters
    ----------
    fn : callable
        Receives the list of leaf Vars, returns a scalar Var.
    leaves : sequence of ndarray
        Differentiated inputs, wrapped in tape order.

    Returns
    -------
    (loss, tape, leaf_vars)
    """
    tape = Tape()
    leaf_vars = [tape.leaf(np.asarray(a, dtype=np.asarray(a).dtype)) for a in leaves]
    loss = fn(leaf_vars)
    if not isinstance(loss, Var):
        raise TypeError("recorded function must return a traced scalar")
    return loss, tape, leaf_vars


def value_and_grad(fn, leaves):
    """Loss value and gradients of ``fn`` with respect to ``leaves``."""
    loss, tape, leaf_vars = record(fn, leaves)
    backward(tape, loss)
    grads = [v.grad if v.grad is not None else np.zeros_like(v.value) for v in leaf_vars]
    return float(loss.value), grads


def grad_check(fn, leaves, eps=1e-6, n_samples=None, rng=None, floor=1e-8):
    """Compare reverse-mode gradients against central differences.

    Parameters
    ----------
    fn : callable
        Same contract as :func:`record`; must also accept plain arrays
        and then return a plain scalar (true for anything built from the
        registered primitives).
    leaves : sequence of ndarray
        Real-valued inputs to perturb.
    eps : float
        Central-difference step.
    n_samples : int, optional
        Number of coordinates to test, spread across all leaves; by
        default every coordinate is tested.
    rng : numpy.random.Generator, optional
        Source for coordinate sampling when ``n_samples`` is given.
    floor : float
        Coordinates where both gradients fall below this magnitude are
        counted as matching, since central differences carry roundoff
        noise of order eps_machine / eps.

    Returns
    -------
    dict with ``max_rel_err``, ``n_checked`` and ``worst`` (leaf index,
    flat coordinate, analytic and numeric values at the worst mismatch).
    """
    leaves = [np.asarray(a, dtype=float) for a in leaves]
    _, grads = value_and_grad(fn, leaves)

    coords = [(i, j) for i, a in enumerate(leaves) for j in range(a.size)]
    if n_samples is not None and n_samples < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        picks = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[int(p)] for p in picks]

    max_rel = 0.0
    worst = None
    for i, j in coords:
        flat = leaves[i].reshape(-1)
        keep = flat[j]
        flat[j] = keep + eps
        f_plus = float(fn(leaves))
        flat[j] = keep - eps
        f_minus = float(fn(leaves))
        flat[j] = keep
        fd = (f_plus - f_minus) / (2.0 * eps)
        ad = float(grads[i].reshape(-1)[j])
        denom = max(abs(fd), abs(ad))
        rel = 0.0 if denom < floor else abs(fd - ad) / denom
        if rel >= max_rel:
            max_rel = rel
            worst = {"leaf": i, "coord": j, "analytic": ad, "numeric": fd}
    return {"max_rel_err": max_rel, "n_checked": len(coords), "worst": worst}
