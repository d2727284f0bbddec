"""Quadratic integrals, shell spectra, transfer/flux, stability checks."""

import numpy as np
import pytest

from qgclosure import Grid
from qgclosure.dynamics import QGState
from qgclosure.spectral import SpectralField, fft_fwd, jacobian_hat, to_real
from qgclosure.diagnostics import (
    SpectrumAccumulator,
    enstrophy_flux,
    enstrophy_spectrum,
    enstrophy_transfer,
    energy_spectrum,
    stability_check,
    time_average,
    total_energy,
    total_enstrophy,
)

from conftest import random_spectral


def _single_mode(grid, kx, ky, amp=1.0):
    x, y = grid.mesh
    return SpectralField(grid, fft_fwd(amp * np.cos(kx * x + ky * y)))


def test_total_enstrophy_single_cosine():
    # omega = cos(3x): mean(omega^2)/2 = 1/4
    g = Grid(32)
    f = _single_mode(g, 3, 0)
    assert total_enstrophy(f) == pytest.approx(0.25, rel=1e-14)


def test_total_energy_single_cosine():
    # psi = -omega/k^2 so energy = enstrophy / 9 for the |k| = 3 mode
    g = Grid(32)
    f = _single_mode(g, 3, 0)
    assert total_energy(f) == pytest.approx(0.25 / 9.0, rel=1e-14)


def test_totals_match_collocation_averages(rng):
    g = Grid(32)
    f = random_spectral(rng, g)
    vals = to_real(f).values
    assert total_enstrophy(f) == pytest.approx(np.mean(vals**2) / 2, rel=1e-12)


def test_energy_ignores_mean_mode():
    g = Grid(16)
    c = np.zeros((16, 16), dtype=complex)
    c[0, 0] = 2.0
    f = SpectralField(g, c)
    assert total_energy(f) == 0.0
    assert total_enstrophy(f) == pytest.approx(2.0, rel=1e-15)


def test_enstrophy_spectrum_single_modes():
    g = Grid(32)
    # (3, 0) lands in shell 3; (3, 4) rounds |k| = 5 into shell 5
    z = enstrophy_spectrum(_single_mode(g, 3, 0)).values
    assert z[3] == pytest.approx(0.25, rel=1e-14)
    # other shells hold only FFT roundoff dust
    assert np.sum(np.abs(np.delete(z, 3))) < 1e-28

    z2 = enstrophy_spectrum(_single_mode(g, 3, 4, amp=2.0)).values
    assert z2[5] == pytest.approx(1.0, rel=1e-14)


def test_spectrum_bins_and_shapes():
    g = Grid(64)
    s = enstrophy_spectrum(_single_mode(g, 2, 0))
    assert s.k.shape == s.values.shape == (33,)
    assert s.k[0] == 0.0 and s.k[-1] == 32.0
    assert s.kind == "enstrophy"


def test_spectra_sum_to_totals(rng):
    # binning must repartition, not lose, the quadratic integrals; the
    # corner modes beyond n//2 fold into the top shell
    g = Grid(32)
    f = random_spectral(rng, g, kmax=None)
    z = enstrophy_spectrum(f)
    e = energy_spectrum(f)
    assert np.sum(z.values) == pytest.approx(total_enstrophy(f), rel=1e-12)
    assert np.sum(e.values) == pytest.approx(total_energy(f), rel=1e-12)


def test_spectrum_matches_per_mode_loop(rng):
    # independent oracle: visit every mode, round |k|, accumulate
    g = Grid(16)
    f = random_spectral(rng, g)
    z = np.zeros(9)
    for p in range(16):
        for q in range(16):
            kx, ky = g.kx[p, q], g.ky[p, q]
            shell = min(int(round(np.hypot(kx, ky))), 8)
            z[shell] += 0.5 * abs(f.coeffs[p, q]) ** 2
    np.testing.assert_allclose(enstrophy_spectrum(f).values, z, rtol=0, atol=1e-15)


def test_transfer_matches_per_mode_loop(rng):
    g = Grid(32)
    f = random_spectral(rng, g, kmax=9)
    psih = g.inv_laplacian_mult * f.coeffs
    jh = jacobian_hat(psih, f.coeffs, g)
    contrib = np.real(np.conj(f.coeffs) * (-jh))
    t = np.zeros(17)
    for p in range(32):
        for q in range(32):
            shell = min(int(round(np.hypot(g.kx[p, q], g.ky[p, q]))), 16)
            t[shell] += contrib[p, q]
    np.testing.assert_allclose(enstrophy_transfer(f).values, t, rtol=0, atol=1e-15)


def test_transfer_zero_for_linear_fields():
    # a single mode advects itself nowhere: J(psi, omega) = 0
    g = Grid(32)
    t = enstrophy_transfer(_single_mode(g, 3, 4)).values
    np.testing.assert_allclose(t, 0.0, atol=1e-16)


def test_transfer_conserves_enstrophy(rng):
    # dealiased advection only moves enstrophy between shells
    g = Grid(32)
    f = random_spectral(rng, g, kmax=10)
    t = enstrophy_transfer(f)
    scale = np.sum(np.abs(t.values))
    assert abs(np.sum(t.values)) <= 1e-10 * max(scale, 1.0)


def test_flux_is_negative_cumulative_transfer_and_closes(rng):
    g = Grid(32)
    f = random_spectral(rng, g, kmax=10)
    t = enstrophy_transfer(f)
    pi = enstrophy_flux(f)
    np.testing.assert_allclose(pi.values, -np.cumsum(t.values), rtol=0, atol=0)
    scale = np.sum(np.abs(t.values))
    assert abs(pi.values[-1]) <= 1e-10 * max(scale, 1.0)
    assert pi.kind == "flux"


def test_stability_check_ok():
    g = Grid(16)
    f = random_spectral(np.random.default_rng(0), g)
    st = QGState(f, 1.5)
    status = stability_check(st, reference_enstrophy=total_enstrophy(f))
    assert status.state == "ok"
    assert status.cause is None


def test_stability_check_non_finite():
    # the field type refuses non-finite input, so model what an
    # integrator overflow leaves behind by poisoning the buffer in place
    g = Grid(16)
    f = random_spectral(np.random.default_rng(2), g)
    f.coeffs[1, 0] = np.nan
    out = stability_check(QGState(f, 2.0), reference_enstrophy=1.0)
    assert out.state == "diverged"
    assert out.cause == "non_finite"
    assert out.t_event == 2.0


def test_stability_check_norm_blowup():
    g = Grid(16)
    f = random_spectral(np.random.default_rng(1), g)
    ref = total_enstrophy(f)
    big = SpectralField(g, f.coeffs * 1e4)  # enstrophy grows by 1e8
    out = stability_check(QGState(big, 3.0), reference_enstrophy=ref)
    assert out.state == "diverged"
    assert out.cause == "norm_blowup"
    assert out.t_event == 3.0
    # a looser budget accepts the same state
    ok = stability_check(QGState(big, 3.0), reference_enstrophy=ref,
                         blowup_factor=1e9)
    assert ok.state == "ok"


def test_spectrum_accumulator_running_mean():
    g = Grid(16)
    a = _single_mode(g, 2, 0, amp=1.0)
    b = _single_mode(g, 2, 0, amp=3.0)
    acc = SpectrumAccumulator()
    time_average(acc, enstrophy_spectrum(a))
    time_average(acc, enstrophy_spectrum(b))
    mean = acc.mean()
    # Z(2) averages (1/4 + 9/4) / 2 = 5/4
    assert mean.values[2] == pytest.approx(1.25, rel=1e-14)
    assert acc.count == 2


def test_spectrum_accumulator_rejects_mismatched_kind():
    g = Grid(16)
    f = _single_mode(g, 2, 0)
    acc = SpectrumAccumulator()
    acc.add(enstrophy_spectrum(f))
    with pytest.raises(ValueError):
        acc.add(energy_spectrum(f))


def test_spectrum_accumulator_empty_mean_raises():
    with pytest.raises(ValueError):
        SpectrumAccumulator().mean()
