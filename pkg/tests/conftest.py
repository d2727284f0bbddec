"""Shared fixtures and field builders for the test suite."""

import numpy as np
import pytest
import scipy.fft as sfft

from qgclosure import Grid
from qgclosure.spectral import SpectralField, fft_fwd


def random_real_field(rng, n, zero_mean=True):
    """Plain white-noise collocation field, optionally mean-free."""
    f = rng.standard_normal((n, n))
    if zero_mean:
        f -= f.mean()
    return f


def random_spectral(rng, grid, kmax=None, zero_mean=True):
    """Hermitian coefficients built by transforming a random real field."""
    c = fft_fwd(random_real_field(rng, grid.n, zero_mean))
    if kmax is not None:
        c = c * ((np.abs(grid.kx) <= kmax) & (np.abs(grid.ky) <= kmax))
    return SpectralField(grid, c)


def spectrum_shaped_field(n, seed, slope=-1.5, amplitude=5.0):
    """Random-phase field with a decaying shell spectrum.

    White noise makes the Germano fit clip to zero, so closure tests
    need fields whose small scales are weaker than their large scales.
    """
    rng = np.random.default_rng(seed)
    grid = Grid(n)
    amp = (1.0 + grid.ksq) ** (slope / 2)
    phase = rng.uniform(0.0, 2.0 * np.pi, (n, n))
    vals = np.real(sfft.ifft2(amp * np.exp(1j * phase)) * (n * n))
    vals -= vals.mean()
    return amplitude * vals / vals.std()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
