"""Spectral fields and operators on the doubly periodic square domain.

Fields live on an n-by-n collocation grid over [0, 2*pi)^2 with integer
wavenumbers.  The transform convention is mean-preserving:

    coeffs = fft2(values) / n**2        (coefficient at k = 0 is the mean)
    values = Re(ifft2(coeffs) * n**2)

so Parseval's identity reads mean(f**2) = sum(|coeffs|**2).  Transforms
go through scipy.fft with explicit ``norm`` arguments matching the
convention above.

The typed layer (:class:`RealField`, :class:`SpectralField` and the
operator functions) validates shapes and symmetry; the ``*_hat`` /
``fft_*`` helpers work on raw coefficient arrays or traced
:class:`~qgclosure.autodiff.Var` values and are shared by the solver,
the closures, and the differentiable rollout, so the traced forward
pass performs the same numpy calls as the plain one.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .autodiff import Var, value_of

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Grid:
    """Square collocation grid and its wavenumber bookkeeping.

    Parameters
    ----------
    n : int
        Points per side; even and at least 8.
    length : float
        Domain size; the solver is nondimensionalized on 2*pi.
    """

    n: int
    length: float = TWO_PI

    def __post_init__(self):
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"grid size must be even and >= 8, got {self.n}")
        if self.length != TWO_PI:
            raise ValueError("domain length is fixed at 2*pi")

    @cached_property
    def k1d(self):
        """Integer wavenumbers in fft order, as floats."""
        return sfft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def kx(self):
        """Wavenumber along axis 0, broadcast to (n, n)."""
        return np.broadcast_to(self.k1d[:, None], (self.n, self.n))

    @cached_property
    def ky(self):
        """Wavenumber along axis 1, broadcast to (n, n)."""
        return np.broadcast_to(self.k1d[None, :], (self.n, self.n))

    @cached_property
    def ksq(self):
        return self.kx ** 2 + self.ky ** 2

    @cached_property
    def k1d_deriv(self):
        """Wavenumbers for odd derivatives: the unpaired Nyquist mode is
        zeroed so first derivatives of real fields stay real-consistent."""
        k = self.k1d.copy()
        k[self.n // 2] = 0.0
        return k

    @cached_property
    def ikx(self):
        return 1j * np.broadcast_to(self.k1d_deriv[:, None], (self.n, self.n))

    @cached_property
    def iky(self):
        return 1j * np.broadcast_to(self.k1d_deriv[None, :], (self.n, self.n))

    @cached_property
    def inv_laplacian_mult(self):
        """Multiplier for the zero-mean inverse Laplacian (-1/k^2, 0 at k=0)."""
        m = np.zeros((self.n, self.n))
        m[self.ksq > 0] = -1.0 / self.ksq[self.ksq > 0]
        return m

    @cached_property
    def dealias_mask(self):
        """Square 2/3-rule mask keeping max(|kx|, |ky|) <= n//3, as float."""
        keep = self.n // 3
        return ((np.abs(self.kx) <= keep) & (np.abs(self.ky) <= keep)).astype(float)

    @cached_property
    def x(self):
        """Collocation coordinates along one axis."""
        return self.length * np.arange(self.n) / self.n

    @cached_property
    def mesh(self):
        """(X, Y) coordinate arrays, X varying along axis 0."""
        xg, yg = np.meshgrid(self.x, self.x, indexing="ij")
        return xg, yg


@dataclass(frozen=True)
class RealField:
    """Real values on a grid; rejects wrong shapes and non-finite data."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"field shape {vals.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("real field contains non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a real field under the mean-preserving convention.

    Hermitian symmetry (coeffs at -k equal to the conjugate at +k) is an
    invariant maintained by construction from real data; it is verified
    where it matters, in :func:`to_real`.
    """

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"coeff shape {coeffs.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("spectral field contains non-finite values")
        object.__setattr__(self, "coeffs", coeffs)


def fft_fwd(values):
    """Transform real values to coefficients (mean-preserving scaling).

    Accepts a plain (n, n) array or a traced Var; when traced, records
    the adjoint under the real inner product, Re(ifft2(g)).
    """
    v = value_of(values)
    out = sfft.fft2(v, norm="forward")
    if not isinstance(values, Var):
        return out
    return values.tape.emit(
        "fft_fwd", out, (values.node,),
        (lambda g: np.real(sfft.ifft2(g)),),
        lambda p: sfft.fft2(p, norm="forward"),
    )


def fft_inv(coeffs):
    """Synthesize real values from coefficients, discarding the imaginary part.

    The adjoint (unnormalized fft2) is exact for this definition, so
    traced rollouts may apply it to any coefficient array.
    """
    c = value_of(coeffs)
    out = np.real(sfft.ifft2(c, norm="forward"))
    if not isinstance(coeffs, Var):
        return out
    return coeffs.tape.emit(
        "fft_inv", out, (coeffs.node,),
        (lambda g: sfft.fft2(g),),
        lambda p: np.real(sfft.ifft2(p, norm="forward")),
    )


def _mirror(coeffs):
    idx = (-np.arange(coeffs.shape[0])) % coeffs.shape[0]
    return coeffs[np.ix_(idx, idx)]


def hermitian_error(coeffs):
    """Largest deviation from coeffs(-k) == conj(coeffs(k))."""
    return float(np.max(np.abs(coeffs - np.conj(_mirror(coeffs)))))


def to_spectral(field):
    """Forward transform of a :class:`RealField`."""
    return SpectralField(field.grid, fft_fwd(field.values))


def to_real(field, rtol=1e-8):
    """Inverse transform of a :class:`SpectralField`.

    Raises ValueError when Hermitian symmetry is broken beyond ``rtol``
    relative to the largest coefficient, since the result would silently
    drop a genuine imaginary part.
    """
    scale = float(np.max(np.abs(field.coeffs)))
    if hermitian_error(field.coeffs) > rtol * scale:
        raise ValueError("coefficients are not Hermitian-symmetric; field is not real")
    return RealField(field.grid, fft_inv(field.coeffs))


def derivative(field, axis, order=1):
    """Spectral partial derivative along an axis (0 = x, 1 = y).

    Odd orders zero the Nyquist wavenumber (its sine companion has no
    grid representation, so zero is the exact band-limited derivative);
    even orders keep it.
    """
    if axis not in (0, 1):
        raise ValueError(f"axis must be 0 or 1, got {axis}")
    if order < 1:
        raise ValueError(f"derivative order must be >= 1, got {order}")
    g = field.grid
    if order % 2 == 1:
        k = g.k1d_deriv
    else:
        k = g.k1d
    k2d = k[:, None] if axis == 0 else k[None, :]
    return SpectralField(g, ((1j * k2d) ** order) * field.coeffs)


def laplacian(field):
    """Spectral Laplacian."""
    return SpectralField(field.grid, -field.grid.ksq * field.coeffs)


def inv_laplacian(field):
    """Zero-mean inverse Laplacian; the k = 0 mode is gauged to zero."""
    return SpectralField(field.grid, field.grid.inv_laplacian_mult * field.coeffs)


def jacobian_hat(psih, omegah, grid):
    """Dealiased advection term J(psi, omega) on raw or traced coefficients.

    Derivatives are taken spectrally, the pointwise products in physical
    space, and the transform of the product is masked with the 2/3 rule
    so quadratic aliases never reach retained modes.
    """
    px = fft_inv(grid.ikx * psih)
    py = fft_inv(grid.iky * psih)
    ox = fft_inv(grid.ikx * omegah)
    oy = fft_inv(grid.iky * omegah)
    return grid.dealias_mask * fft_fwd(px * oy - py * ox)


def jacobian(psi, omega):
    """Typed wrapper around :func:`jacobian_hat` for matching grids."""
    if psi.grid != omega.grid:
        raise ValueError("jacobian requires both fields on the same grid")
    return SpectralField(psi.grid, jacobian_hat(psi.coeffs, omega.coeffs, psi.grid))


def velocity(psi_hat):
    """Velocity components (u, v) = (-dpsi/dy, dpsi/dx) as real fields."""
    g = psi_hat.grid
    u = fft_inv(-g.iky * psi_hat.coeffs)
    v = fft_inv(g.ikx * psi_hat.coeffs)
    return RealField(g, u), RealField(g, v)
