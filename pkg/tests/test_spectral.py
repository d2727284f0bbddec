"""Transform conventions, spectral calculus, and the dealiased Jacobian."""

import numpy as np
import pytest

from qgclosure import Grid
from qgclosure.spectral import (
    RealField,
    SpectralField,
    derivative,
    fft_fwd,
    fft_inv,
    hermitian_error,
    inv_laplacian,
    jacobian,
    jacobian_hat,
    laplacian,
    to_real,
    to_spectral,
    velocity,
)

from conftest import random_real_field, random_spectral


def test_grid_constraints():
    with pytest.raises(ValueError):
        Grid(7)
    with pytest.raises(ValueError):
        Grid(4)
    with pytest.raises(ValueError):
        Grid(16, length=1.0)
    g = Grid(16)
    assert g.k1d.min() == -8 and g.k1d.max() == 7


def test_dealias_mask_square_and_symmetric():
    g = Grid(48)
    kmax = 48 // 3
    mask = g.dealias_mask.astype(bool)
    assert mask[kmax, 0] and not mask[kmax + 1, 0]
    assert mask[0, kmax] and not mask[0, kmax + 1]
    assert mask[kmax, kmax] and not mask[kmax + 1, 1]
    # symmetric under k -> -k
    idx = (-np.arange(48)) % 48
    assert np.array_equal(mask, mask[np.ix_(idx, idx)])


def test_zero_field_transforms_to_zero():
    g = Grid(16)
    fh = to_spectral(RealField(g, np.zeros((16, 16))))
    assert np.all(fh.coeffs == 0)
    back = to_real(SpectralField(g, np.zeros((16, 16), dtype=complex)))
    assert np.all(back.values == 0)


def test_single_mode_coefficient_is_half():
    g = Grid(64)
    x, _ = g.mesh
    fh = to_spectral(RealField(g, np.cos(3 * x)))
    assert abs(fh.coeffs[3, 0] - 0.5) < 1e-14
    assert abs(fh.coeffs[-3, 0] - 0.5) < 1e-14
    other = fh.coeffs.copy()
    other[3, 0] = other[-3, 0] = 0.0
    assert np.max(np.abs(other)) < 1e-14


def test_single_mode_synthesis():
    g = Grid(32)
    c = np.zeros((32, 32), dtype=complex)
    c[1, 0] = 0.5
    c[-1, 0] = 0.5
    f = to_real(SpectralField(g, c))
    x, _ = g.mesh
    np.testing.assert_allclose(f.values, np.cos(x), atol=1e-13)


@pytest.mark.parametrize("n", [16, 32, 64, 128, 256])
def test_round_trip_identity(n, rng):
    g = Grid(n)
    f = random_real_field(rng, n, zero_mean=False)
    back = to_real(to_spectral(RealField(g, f)))
    assert np.max(np.abs(back.values - f)) < 1e-12 * np.max(np.abs(f))


@pytest.mark.parametrize("n", [16, 64, 256])
def test_parseval(n, rng):
    f = random_real_field(rng, n, zero_mean=False)
    coeffs = fft_fwd(f)
    lhs = np.mean(f * f)
    rhs = np.sum(np.abs(coeffs) ** 2)
    assert abs(lhs - rhs) < 1e-12 * lhs
    # the k = 0 coefficient is the mean
    assert abs(coeffs[0, 0] - f.mean()) < 1e-14


def test_to_real_rejects_broken_symmetry():
    g = Grid(16)
    c = np.zeros((16, 16), dtype=complex)
    c[1, 0] = 1.0  # no conjugate partner at (-1, 0)
    with pytest.raises(ValueError):
        to_real(SpectralField(g, c))
    assert hermitian_error(c) == 1.0


def test_rejects_non_finite_and_wrong_shape():
    g = Grid(16)
    bad = np.zeros((16, 16))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        RealField(g, bad)
    with pytest.raises(ValueError):
        RealField(g, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        SpectralField(g, np.full((16, 16), np.inf, dtype=complex))


def test_derivative_analytic():
    g = Grid(64)
    x, y = g.mesh
    fh = to_spectral(RealField(g, np.cos(3 * x)))
    dx = to_real(derivative(fh, axis=0)).values
    np.testing.assert_allclose(dx, -3 * np.sin(3 * x), atol=1e-12)
    dy = to_real(derivative(fh, axis=1)).values
    np.testing.assert_allclose(dy, 0.0, atol=1e-13)
    dxx = to_real(derivative(fh, axis=0, order=2)).values
    np.testing.assert_allclose(dxx, -9 * np.cos(3 * x), atol=1e-11)


def test_derivative_rejects_bad_arguments(rng):
    fh = random_spectral(rng, Grid(16))
    with pytest.raises(ValueError):
        derivative(fh, axis=2)
    with pytest.raises(ValueError):
        derivative(fh, axis=0, order=0)


def test_odd_derivative_output_stays_hermitian(rng):
    # the Nyquist column flips sign under k -> -k for an i*k multiplier,
    # so it must be zeroed for the derivative of a real field to be real
    fh = random_spectral(rng, Grid(16))
    d = derivative(fh, axis=0)
    assert hermitian_error(d.coeffs) < 1e-13 * max(np.max(np.abs(d.coeffs)), 1.0)


def test_laplacian_analytic():
    g = Grid(64)
    x, y = g.mesh
    fh = to_spectral(RealField(g, np.cos(3 * x)))
    lap = to_real(laplacian(fh)).values
    np.testing.assert_allclose(lap, -9 * np.cos(3 * x), atol=1e-11)
    # constant maps to zero
    ch = to_spectral(RealField(g, np.full((64, 64), 2.5)))
    assert np.max(np.abs(laplacian(ch).coeffs)) == 0.0
    # mixed mode (3, 4) scales by -(9 + 16)
    c = np.zeros((64, 64), dtype=complex)
    c[3, 4] = 1.0
    c[-3, -4] = 1.0
    got = laplacian(SpectralField(g, c)).coeffs
    assert got[3, 4] == -25.0


def test_inv_laplacian_gauge_and_inverse(rng):
    g = Grid(64)
    x, _ = g.mesh
    fh = to_spectral(RealField(g, np.cos(3 * x)))
    psi = to_real(inv_laplacian(fh)).values
    np.testing.assert_allclose(psi, -np.cos(3 * x) / 9, atol=1e-13)
    c = np.zeros((64, 64), dtype=complex)
    c[3, 4] = 1.0
    assert inv_laplacian(SpectralField(g, c)).coeffs[3, 4] == -1.0 / 25.0
    # constant input is gauged away
    const = to_spectral(RealField(g, np.ones((64, 64))))
    assert np.max(np.abs(inv_laplacian(const).coeffs)) == 0.0
    # laplacian(inv_laplacian(f)) recovers f minus its mean
    f = random_real_field(rng, 64, zero_mean=False)
    fh = to_spectral(RealField(g, f))
    back = to_real(laplacian(inv_laplacian(fh))).values
    np.testing.assert_allclose(back, f - f.mean(), atol=1e-12 * np.max(np.abs(f)))


def test_jacobian_analytic():
    g = Grid(64)
    x, y = g.mesh
    psih = to_spectral(RealField(g, np.sin(x)))
    omh = to_spectral(RealField(g, np.sin(y)))
    J = to_real(jacobian(psih, omh)).values
    np.testing.assert_allclose(J, np.cos(x) * np.cos(y), atol=1e-12)


def test_jacobian_parallel_gradients_vanish():
    g = Grid(32)
    c = np.zeros((32, 32), dtype=complex)
    c[3, 0] = 0.5
    c[-3, 0] = 0.5
    omh = SpectralField(g, c)
    J = jacobian(inv_laplacian(omh), omh)
    assert np.max(np.abs(J.coeffs)) < 1e-15


def test_jacobian_grid_mismatch_rejected(rng):
    a = random_spectral(rng, Grid(16))
    b = random_spectral(rng, Grid(32))
    with pytest.raises(ValueError):
        jacobian(a, b)


def test_jacobian_antisymmetry(rng):
    g = Grid(32)
    a = random_spectral(rng, g)
    b = random_spectral(rng, g)
    jab = jacobian_hat(a.coeffs, b.coeffs, g)
    jba = jacobian_hat(b.coeffs, a.coeffs, g)
    scale = np.max(np.abs(jab))
    assert np.max(np.abs(jab + jba)) < 1e-14 * scale


def test_jacobian_quadratic_conservation(rng):
    # <J>, <omega J> and <psi J> all vanish for the dealiased product
    g = Grid(64)
    omh = random_spectral(rng, g, kmax=20)
    psih = inv_laplacian(omh)
    jh = jacobian_hat(psih.coeffs, omh.coeffs, g)
    norm = np.sum(np.abs(omh.coeffs) ** 2)
    assert abs(jh[0, 0]) < 1e-12
    assert abs(np.sum(np.conj(omh.coeffs) * jh).real) < 1e-10 * norm
    assert abs(np.sum(np.conj(psih.coeffs) * jh).real) < 1e-10 * norm


def test_jacobian_matches_fine_grid_quadrature(rng):
    # band-limited coarse fields, multiplied on a twice-finer grid where
    # no product mode can alias, then truncated back: the dealiased
    # coarse Jacobian must agree on every retained mode
    n_lo, n_hi = 32, 64
    glo, ghi = Grid(n_lo), Grid(n_hi)
    psih = random_spectral(rng, glo, kmax=5).coeffs
    omh = random_spectral(rng, glo, kmax=5).coeffs
    J_lo = jacobian_hat(psih, omh, glo)

    h = n_lo // 2
    hi_idx = np.r_[0:h, n_hi - h + 1:n_hi]
    lo_idx = np.r_[0:h, h + 1:n_lo]

    def embed(c_lo):
        c_hi = np.zeros((n_hi, n_hi), dtype=complex)
        c_hi[np.ix_(hi_idx, hi_idx)] = c_lo[np.ix_(lo_idx, lo_idx)]
        return c_hi

    px = fft_inv(embed(1j * glo.kx * psih))
    py = fft_inv(embed(1j * glo.ky * psih))
    ox = fft_inv(embed(1j * glo.kx * omh))
    oy = fft_inv(embed(1j * glo.ky * omh))
    J_hi = fft_fwd(px * oy - py * ox)
    J_ref = np.zeros((n_lo, n_lo), dtype=complex)
    J_ref[np.ix_(lo_idx, lo_idx)] = J_hi[np.ix_(hi_idx, hi_idx)]

    retained = glo.dealias_mask.astype(bool)
    scale = np.max(np.abs(J_ref[retained]))
    assert np.max(np.abs(J_lo - J_ref)[retained]) < 1e-13 * scale


def test_velocity_analytic_and_divergence_free(rng):
    g = Grid(64)
    x, y = g.mesh
    u, v = velocity(to_spectral(RealField(g, np.cos(y))))
    np.testing.assert_allclose(u.values, np.sin(y), atol=1e-13)
    np.testing.assert_allclose(v.values, 0.0, atol=1e-13)
    u, v = velocity(to_spectral(RealField(g, np.cos(x))))
    np.testing.assert_allclose(u.values, 0.0, atol=1e-13)
    np.testing.assert_allclose(v.values, -np.sin(x), atol=1e-13)
    psih = random_spectral(rng, g)
    u, v = velocity(psih)
    div = fft_inv(g.ikx * fft_fwd(u.values) + g.iky * fft_fwd(v.values))
    assert np.max(np.abs(div)) < 1e-12 * max(np.max(np.abs(u.values)), 1.0)


def test_derivative_commutes_with_cutoff(rng):
    from qgclosure.filtering import cutoff_filter

    g = Grid(32)
    fh = random_spectral(rng, g)
    a = cutoff_filter(derivative(fh, axis=0), 6)
    b = derivative(cutoff_filter(fh, 6), axis=0)
    assert np.array_equal(a.coeffs, b.coeffs)
