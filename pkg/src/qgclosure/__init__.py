"""Differentiable pseudo-spectral 2D quasi-geostrophic turbulence with
learnable subgrid closures.

The package couples a forced-dissipative vorticity solver, sharp
spectral coarse-graining, three closure models (none, dynamic
Smagorinsky, convolutional network), a small reverse-mode autodiff
tape that differentiates the solver end to end, Adam training loops
for instantaneous and rollout objectives, and shell-spectrum
diagnostics.  See the command-line interface (``qgclosure --help``)
for the end-to-end experiment pipeline.
"""

from .autodiff import Tape, Var, backward, grad_check, record, value_and_grad
from .closures import (CnnClosure, CnnParams, Closure, DynamicSmagorinsky,
                       Normalization, ZeroClosure, cnn_eval, cnn_init)
from .config import ConfigError, RunConfig, load_config, validate_config
from .convops import active_backend, available_backends, set_backend
from .diagnostics import (SpectrumAccumulator, SpectrumSeries, StabilityStatus,
                          energy_spectrum, enstrophy_flux, enstrophy_spectrum,
                          enstrophy_transfer, stability_check, time_average,
                          total_energy, total_enstrophy)
from .dynamics import (DivergedError, ForcingParams, QGParams, QGState,
                       SpinupResult, Trajectory, forcing_field, forcing_hat,
                       random_initial_vorticity, rhs, rollout_bookkeeping,
                       simulate, spinup, step_rk4)
from .filtering import (FilterSpec, Sample, SampleSet, cutoff_filter,
                        extract_samples, project, sample_from_state,
                        sgs_residual, zero_pad)
from .spectral import (Grid, RealField, SpectralField, derivative,
                       inv_laplacian, jacobian, laplacian, to_real,
                       to_spectral, velocity)
from .training import (AdamState, TrainConfig, TrainReport, adam_update,
                       aposteriori_loss, apriori_loss, dataset_normalization,
                       init_adam, train)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
