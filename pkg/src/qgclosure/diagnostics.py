"""Spectral diagnostics: integrals, shell spectra, fluxes, stability.

Shell quantities bin each mode by rounding |k| to the nearest integer.
Bins run from 0 to n//2; the few corner modes with |k| beyond n//2 are
folded into the top bin so that the binned spectrum sums exactly to the
corresponding quadratic integral.

With the mean-preserving transform convention, the domain averages are

    total enstrophy  = 0.5 * sum |omega_hat|^2        = mean(omega^2) / 2
    total energy     = 0.5 * sum |omega_hat|^2 / k^2  = mean(|grad psi|^2) / 2

with the k = 0 mode carrying no energy under the zero-mean gauge.
"""

from dataclasses import dataclass, field

import numpy as np

from .spectral import SpectralField, jacobian_hat


@dataclass(frozen=True)
class StabilityStatus:
    """Outcome of a divergence check on one state."""

    state: str
    cause: str = None
    t_event: float = None


@dataclass(frozen=True)
class SpectrumSeries:
    """Shell-binned values over integer wavenumbers 0..n//2."""

    k: np.ndarray
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.k.shape != self.values.shape:
            raise ValueError("wavenumber and value arrays must align")


def _shell_index(grid):
    idx = np.rint(np.sqrt(grid.ksq)).astype(np.intp)
    return np.minimum(idx, grid.n // 2)


def _shell_sum(grid, weights):
    nbins = grid.n // 2 + 1
    return np.bincount(_shell_index(grid).ravel(), weights.ravel(), minlength=nbins)


def total_enstrophy_hat(coeffs):
    """Domain-mean enstrophy from raw coefficients."""
    return 0.5 * float(np.sum(np.abs(coeffs) ** 2))


def total_energy_hat(coeffs, grid):
    """Domain-mean kinetic energy from raw coefficients."""
    mult = np.zeros((grid.n, grid.n))
    nz = grid.ksq > 0
    mult[nz] = 1.0 / grid.ksq[nz]
    return 0.5 * float(np.sum(np.abs(coeffs) ** 2 * mult))


def total_enstrophy(field):
    """Domain-mean enstrophy of a spectral vorticity field."""
    return total_enstrophy_hat(field.coeffs)


def total_energy(field):
    """Domain-mean kinetic energy of a spectral vorticity field."""
    return total_energy_hat(field.coeffs, field.grid)


def enstrophy_spectrum(field):
    """Shell-binned enstrophy; sums to :func:`total_enstrophy` exactly."""
    grid = field.grid
    z = _shell_sum(grid, 0.5 * np.abs(field.coeffs) ** 2)
    k = np.arange(grid.n // 2 + 1, dtype=float)
    return SpectrumSeries(k=k, values=z, kind="enstrophy")


def energy_spectrum(field):
    """Shell-binned kinetic energy under the zero-mean gauge."""
    grid = field.grid
    mult = np.zeros((grid.n, grid.n))
    nz = grid.ksq > 0
    mult[nz] = 1.0 / grid.ksq[nz]
    e = _shell_sum(grid, 0.5 * np.abs(field.coeffs) ** 2 * mult)
    k = np.arange(grid.n // 2 + 1, dtype=float)
    return SpectrumSeries(k=k, values=e, kind="energy")


def enstrophy_transfer(field):
    """Shell-resolved enstrophy tendency from advection.

    T(k) = sum over the shell of Re[conj(omega_hat) * (-J_hat)], i.e.
    the rate at which the dealiased nonlinear term feeds each shell.
    """
    grid = field.grid
    psih = grid.inv_laplacian_mult * field.coeffs
    jh = jacobian_hat(psih, field.coeffs, grid)
    contrib = np.real(np.conj(field.coeffs) * (-jh))
    t = _shell_sum(grid, contrib)
    k = np.arange(grid.n // 2 + 1, dtype=float)
    return SpectrumSeries(k=k, values=t, kind="transfer")


def enstrophy_flux(field):
    """Spectral enstrophy flux Pi(k) = -sum_{k' <= k} T(k').

    For fields confined to the dealiased band the advective transfer is
    conservative, so Pi at the last shell vanishes to roundoff.
    """
    t = enstrophy_transfer(field)
    return SpectrumSeries(k=t.k, values=-np.cumsum(t.values), kind="flux")


def stability_check(state, reference_enstrophy, blowup_factor=1e6):
    """Diagnose one state: finite and within a norm budget.

    ``reference_enstrophy`` uses the raw 0.5*sum|coeffs|^2 measure of
    the run's initial condition; exceeding ``blowup_factor`` times it
    counts as divergence even while values remain finite.
    """
    coeffs = state.omega_hat.coeffs
    if not np.all(np.isfinite(coeffs)):
        return StabilityStatus(state="diverged", cause="non_finite", t_event=state.t)
    ens = 0.5 * float(np.sum(np.abs(coeffs) ** 2))
    if reference_enstrophy > 0 and ens > blowup_factor * reference_enstrophy:
        return StabilityStatus(state="diverged", cause="norm_blowup", t_event=state.t)
    return StabilityStatus(state="ok")


@dataclass
class SpectrumAccumulator:
    """Running mean of shell spectra sharing one kind and binning."""

    k: np.ndarray = None
    kind: str = None
    count: int = 0
    _sum: np.ndarray = field(default=None, repr=False)

    def add(self, series):
        if self.count == 0:
            self.k = series.k.copy()
            self.kind = series.kind
            self._sum = series.values.astype(float).copy()
        else:
            if series.kind != self.kind or series.k.shape != self.k.shape:
                raise ValueError("accumulator and series bins do not match")
            self._sum += series.values
        self.count += 1

    def mean(self):
        if self.count == 0:
            raise ValueError("no spectra accumulated")
        return SpectrumSeries(k=self.k, values=self._sum / self.count, kind=self.kind)


def time_average(accumulator, series):
    """Fold one spectrum into a running mean; returns the accumulator."""
    accumulator.add(series)
    return accumulator
