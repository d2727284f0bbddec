"""Sharp spectral coarse-graining and subgrid residual extraction.

A fine field is reduced in two steps that commute for the retained
modes: a circular cutoff keeping |k| <= k_c and a truncation onto the
coarse grid with n_lo = n_hi / delta points per side, where
k_c = n_lo // 2.  Coefficients strictly inside the cutoff survive
bitwise; the coarse grid's negative-Nyquist lines (|kx| or |ky| equal
to n_lo/2) cannot be represented Hermitian-consistently after
truncation and are zeroed, which touches only the four axis modes
sitting exactly on |k| = k_c.

The subgrid residual compares the coarse solver's advection term with
the projected fine one:

    R = J_lo(psi_bar, omega_bar) - project(J_hi(psi, omega))

so a coarse run driven by the exact R reproduces the projected fine
trajectory; R is exactly the tendency the coarse grid is missing.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .spectral import Grid, SpectralField, jacobian_hat


@dataclass(frozen=True)
class FilterSpec:
    """Fine grid, coarse-graining factor, and the grids they imply."""

    grid_hi: Grid
    delta: int

    def __post_init__(self):
        if self.delta < 2:
            raise ValueError(f"coarse-graining factor must be >= 2, got {self.delta}")
        if self.grid_hi.n % self.delta != 0:
            raise ValueError(
                f"grid size {self.grid_hi.n} not divisible by delta={self.delta}"
            )
        n_lo = self.grid_hi.n // self.delta
        if n_lo < 8 or n_lo % 2 != 0:
            raise ValueError(f"coarse grid size {n_lo} must be even and >= 8")

    @cached_property
    def grid_lo(self):
        return Grid(self.grid_hi.n // self.delta)

    @property
    def cutoff_k(self):
        """Inclusive circular cutoff radius of the combined filter."""
        return self.grid_lo.n // 2


def cutoff_filter(field, k_c):
    """Zero all modes with |k| > k_c, keeping the grid unchanged."""
    if k_c <= 0:
        raise ValueError(f"cutoff wavenumber must be positive, got {k_c}")
    grid = field.grid
    mask = grid.ksq <= float(k_c) ** 2
    return SpectralField(grid, field.coeffs * mask)


def _truncation_indices(n_hi, n_lo):
    """Fine-grid fft indices of the coarse wavenumbers -n_lo/2+1..n_lo/2-1."""
    h = n_lo // 2
    return np.r_[0:h, n_hi - h + 1:n_hi]


def project(field, spec):
    """Cutoff-filter and truncate a fine field onto the coarse grid.

    Retained coefficients (|k| < k_c, plus |k| = k_c off the Nyquist
    lines) are copied bitwise; everything else is zeroed.
    """
    if field.grid != spec.grid_hi:
        raise ValueError("field grid does not match the filter's fine grid")
    n_hi, n_lo = spec.grid_hi.n, spec.grid_lo.n
    h = n_lo // 2
    hi_idx = _truncation_indices(n_hi, n_lo)
    lo_idx = np.r_[0:h, h + 1:n_lo]
    lo = np.zeros((n_lo, n_lo), dtype=np.complex128)
    lo[np.ix_(lo_idx, lo_idx)] = field.coeffs[np.ix_(hi_idx, hi_idx)]
    lo[spec.grid_lo.ksq > float(h) ** 2] = 0.0
    return SpectralField(spec.grid_lo, lo)


def zero_pad(field, grid_hi):
    """Embed a coarse field into a finer grid, inverse of truncation.

    The coarse negative-Nyquist lines are ambiguous on the fine grid
    (they alias +n_lo/2 and -n_lo/2 together), so fields carrying
    non-negligible content there are rejected.
    """
    n_lo, n_hi = field.grid.n, grid_hi.n
    if n_hi <= n_lo or n_hi % n_lo != 0:
        raise ValueError(f"target grid {n_hi} must be a multiple of {n_lo}")
    h = n_lo // 2
    scale = float(np.max(np.abs(field.coeffs)))
    nyq = max(float(np.max(np.abs(field.coeffs[h, :]))),
              float(np.max(np.abs(field.coeffs[:, h]))))
    if nyq > 1e-12 * scale:
        raise ValueError("coarse field has content on its Nyquist lines; cannot zero-pad")
    lo_idx = np.r_[0:h, h + 1:n_lo]
    hi_idx = _truncation_indices(n_hi, n_lo)
    hi = np.zeros((n_hi, n_hi), dtype=np.complex128)
    hi[np.ix_(hi_idx, hi_idx)] = field.coeffs[np.ix_(lo_idx, lo_idx)]
    return SpectralField(grid_hi, hi)


def sgs_residual(omega_hi, spec):
    """Subgrid advection residual of one fine state on the coarse grid."""
    if omega_hi.grid != spec.grid_hi:
        raise ValueError("state grid does not match the filter's fine grid")
    g_hi, g_lo = spec.grid_hi, spec.grid_lo
    psi_hi = g_hi.inv_laplacian_mult * omega_hi.coeffs
    j_hi = SpectralField(g_hi, jacobian_hat(psi_hi, omega_hi.coeffs, g_hi))
    j_bar = project(j_hi, spec)
    om_lo = project(omega_hi, spec)
    psi_lo = g_lo.inv_laplacian_mult * om_lo.coeffs
    j_lo = jacobian_hat(psi_lo, om_lo.coeffs, g_lo)
    return SpectralField(g_lo, j_lo - j_bar.coeffs)


@dataclass(frozen=True)
class Sample:
    """One training sample: filtered state and its subgrid residual."""

    t: float
    omega_bar: SpectralField
    residual: SpectralField


@dataclass(frozen=True)
class SampleSet:
    """Uniformly spaced samples extracted from one fine trajectory."""

    samples: tuple
    source_id: int
    dt_sample: float

    def __post_init__(self):
        if len(self.samples) >= 2:
            times = np.array([s.t for s in self.samples])
            gaps = np.diff(times)
            if np.max(np.abs(gaps - self.dt_sample)) > 1e-9 * max(1.0, self.dt_sample):
                raise ValueError("sample times are not uniformly spaced at dt_sample")

    @property
    def grid(self):
        return self.samples[0].omega_bar.grid


def sample_from_state(omega_hi, t, spec):
    """Filtered state plus residual for one fine snapshot."""
    return Sample(t=t, omega_bar=project(omega_hi, spec),
                  residual=sgs_residual(omega_hi, spec))


def extract_samples(trajectory, spec, source_id=0):
    """Project every stored state of a fine trajectory into samples."""
    if trajectory.grid != spec.grid_hi:
        raise ValueError("trajectory grid does not match the filter's fine grid")
    samples = tuple(
        sample_from_state(st.omega_hat, st.t, spec) for st in trajectory.states
    )
    if not samples:
        raise ValueError("trajectory holds no stored states")
    dt_sample = trajectory.params.dt * trajectory.cadence
    return SampleSet(samples=samples, source_id=source_id, dt_sample=dt_sample)
