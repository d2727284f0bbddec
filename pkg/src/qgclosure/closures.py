"""Subgrid closure models for the coarse-grained vorticity equation.

Every closure exposes ``tendency(omega_hat, grid) -> spectral tendency``
with raw coefficient arrays, which is the exact contract the solver's
right-hand side expects.  Three variants are provided:

``zero``
    No model; the coarse solver runs bare.
``smagorinsky_dynamic``
    Vorticity-form eddy viscosity nu_e = C |S| with the coefficient set
    each call by a Germano least-squares fit against a spectral test
    filter at twice the grid filter width.  The divergence form
    R = div(nu_e grad omega) makes the closure exactly dissipative in
    the domain mean whenever C >= 0, which the clip guarantees.
``cnn``
    A periodic convolutional network mapping normalized vorticity to a
    residual tendency.  Its forward pass is built from the registered
    autodiff primitives, so the same code serves plain evaluation and
    gradient-based training.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import value_of
from .convops import conv2d
from .spectral import SpectralField, fft_fwd, fft_inv


class Closure:
    """Interface: a named spectral tendency term for the coarse solver."""

    variant = None

    def tendency(self, omega_hat, grid):
        raise NotImplementedError

    def __call__(self, omega_hat, grid):
        return self.tendency(omega_hat, grid)


class ZeroClosure(Closure):
    """No subgrid model."""

    variant = "zero"

    def tendency(self, omega_hat, grid):
        return np.zeros((grid.n, grid.n), dtype=np.complex128)


class DynamicSmagorinsky(Closure):
    """Dynamic eddy-viscosity closure in vorticity form.

    The deformation magnitude comes from the streamfunction,
    |S| = sqrt(4 psi_xy^2 + (psi_xx - psi_yy)^2), and the model tendency
    is R = div(nu_e grad omega) with nu_e = C |S|.  C absorbs the
    squared filter width; the conventional Smagorinsky constant is
    reported as cs2 = C / (2 pi / n)^2.  C is refit at every call from
    the Germano identity between the grid filter and a sharp test
    filter of ``test_ratio`` times its width, averaged over the domain
    and clipped at zero.

    The fit is algebraic and non-smooth, so this closure rejects traced
    inputs instead of producing wrong gradients.
    """

    variant = "smagorinsky_dynamic"

    def __init__(self, test_ratio=2.0, denom_floor=1e-14):
        if test_ratio <= 1.0:
            raise ValueError("test filter must be wider than the grid filter")
        self.test_ratio = test_ratio
        self.denom_floor = denom_floor
        self.last_cs2 = None

    def tendency(self, omega_hat, grid):
        if isinstance(omega_hat, autodiff.Var):
            raise TypeError("the dynamic Smagorinsky closure is not differentiable")
        om = np.asarray(omega_hat)
        psih = grid.inv_laplacian_mult * om

        strain = self._strain(psih, grid)
        gx = fft_inv(grid.ikx * om)
        gy = fft_inv(grid.iky * om)
        u = fft_inv(-grid.iky * psih)
        v = fft_inv(grid.ikx * psih)
        w = fft_inv(om)

        k_test = grid.n / (2.0 * self.test_ratio)
        tmask = grid.ksq <= k_test ** 2

        def filt(f):
            return fft_inv(tmask * fft_fwd(f))

        om_t = tmask * om
        psih_t = tmask * psih
        strain_t = self._strain(psih_t, grid)
        gx_t = fft_inv(grid.ikx * om_t)
        gy_t = fft_inv(grid.iky * om_t)

        lx = filt(u) * filt(w) - filt(u * w)
        ly = filt(v) * filt(w) - filt(v * w)
        r2 = self.test_ratio ** 2
        mx = r2 * strain_t * gx_t - filt(strain * gx)
        my = r2 * strain_t * gy_t - filt(strain * gy)

        denom = float(np.sum(mx * mx + my * my))
        if denom < self.denom_floor:
            coef = 0.0
        else:
            coef = max(float(np.sum(lx * mx + ly * my)) / denom, 0.0)
        delta = grid.length / grid.n
        self.last_cs2 = coef / delta ** 2

        nu_e = coef * strain
        return grid.ikx * fft_fwd(nu_e * gx) + grid.iky * fft_fwd(nu_e * gy)

    @staticmethod
    def _strain(psih, grid):
        psi_xy = fft_inv(-grid.kx * grid.ky * psih)
        psi_diff = fft_inv((-grid.kx ** 2 + grid.ky ** 2) * psih)
        return np.sqrt(4.0 * psi_xy ** 2 + psi_diff ** 2)


@dataclass(frozen=True)
class Normalization:
    """Input/output scales frozen into a trained closure."""

    omega_scale: float
    residual_scale: float

    def __post_init__(self):
        if not (self.omega_scale > 0 and self.residual_scale > 0):
            raise ValueError("normalization scales must be positive")


class CnnParams:
    """Validated weight/bias stack of the convolutional closure.

    Layers map 1 -> width -> ... -> width -> 1 channels with a shared
    odd kernel size; ReLU sits between layers but not after the last.
    """

    def __init__(self, layers):
        layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                  for w, b in layers]
        if not layers:
            raise ValueError("at least one layer is required")
        k = layers[0][0].shape[2]
        if k % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {k}")
        prev_out = 1
        for i, (w, b) in enumerate(layers):
            if w.ndim != 4 or w.shape[2] != k or w.shape[3] != k:
                raise ValueError(f"layer {i} weights must be (out, in, {k}, {k})")
            if w.shape[1] != prev_out:
                raise ValueError(f"layer {i} expects {w.shape[1]} channels, got {prev_out}")
            if b.shape != (w.shape[0],):
                raise ValueError(f"layer {i} bias shape {b.shape} mismatches {w.shape[0]}")
            prev_out = w.shape[0]
        if prev_out != 1:
            raise ValueError("final layer must produce one channel")
        self.layers = layers

    @property
    def depth(self):
        return len(self.layers)

    @property
    def kernel(self):
        return self.layers[0][0].shape[2]

    @property
    def width(self):
        return self.layers[0][0].shape[0] if self.depth > 1 else 1

    def flat(self):
        """Leaves in a fixed order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in self.layers:
            out.append(w)
            out.append(b)
        return out

    @staticmethod
    def from_flat(arrays):
        if len(arrays) % 2 != 0:
            raise ValueError("expected alternating weight/bias arrays")
        return CnnParams(list(zip(arrays[0::2], arrays[1::2])))


def cnn_init(seed, depth=10, width=64, kernel=5):
    """Uniform He-style initialization: U(+-sqrt(1/fan_in)), zero biases."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if width < 1:
        raise ValueError("width must be >= 1")
    if kernel % 2 != 1:
        raise ValueError("kernel size must be odd")
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(depth):
        c_in = 1 if i == 0 else width
        c_out = 1 if i == depth - 1 else width
        bound = math.sqrt(1.0 / (c_in * kernel * kernel))
        w = rng.uniform(-bound, bound, size=(c_out, c_in, kernel, kernel))
        layers.append((w, np.zeros(c_out)))
    return CnnParams(layers)


def cnn_forward_normalized(layers, omega_vals, omega_scale):
    """Network output in residual-scale units; inputs raw or traced.

    ``layers`` is a sequence of (w, b) pairs whose entries may be plain
    arrays or traced Vars; ``omega_vals`` is the real vorticity field.
    """
    h = autodiff.expand0(omega_vals * (1.0 / omega_scale))
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = conv2d(h, w, b)
        if i != last:
            h = autodiff.relu(h)
    return autodiff.squeeze0(h)


class CnnClosure(Closure):
    """Trained convolutional closure ready to drive the coarse solver."""

    variant = "cnn"

    def __init__(self, params, norm):
        if not isinstance(params, CnnParams):
            params = CnnParams(params)
        self.params = params
        self.norm = norm

    def predict_values(self, omega_vals):
        """Residual tendency on the collocation grid (physical units)."""
        out = cnn_forward_normalized(self.params.layers, omega_vals,
                                     self.norm.omega_scale)
        return out * self.norm.residual_scale

    def tendency(self, omega_hat, grid):
        return fft_fwd(self.predict_values(fft_inv(omega_hat)))


def cnn_eval(omega_bar, params, norm):
    """Typed closure evaluation on a filtered vorticity field.

    Returns the spectral residual tendency; flags non-finite activations
    rather than letting them propagate into an integration.
    """
    closure = CnnClosure(params, norm)
    out = closure.tendency(omega_bar.coeffs, omega_bar.grid)
    if not np.all(np.isfinite(value_of(out))):
        raise FloatingPointError("closure produced non-finite output")
    return SpectralField(omega_bar.grid, out)
