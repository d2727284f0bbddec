"""Forced-dissipative barotropic quasi-geostrophic dynamics.

The prognostic variable is the vorticity omega = Laplacian(psi), which
obeys

    d omega / dt = -J(psi, omega) + nu * Laplacian(omega) - mu * omega + F
                   (+ closure tendency on coarse grids)

with the quasi-periodically modulated deterministic forcing

    F(x, y, t) = c * [cos(k*y + pi*sin(f1*t)) - cos(k*x + pi*sin(f2*t))].

Time stepping is classical fixed-step RK4 with the forcing evaluated at
the stage times.  The right-hand side is written over raw coefficient
arrays (or traced variables) so the differentiable rollout used in
closure training runs the identical code path as plain simulation.

One nondimensional time unit corresponds to UNIT_TIME_SECONDS; this is
documentation only and never enters any computation.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import StabilityStatus, stability_check, total_energy_hat
from .spectral import Grid, RealField, SpectralField, fft_fwd, fft_inv

UNIT_TIME_SECONDS = 1.2e6

DEFAULT_FORCING_AMPLITUDE = math.sqrt(6.0)


class DivergedError(RuntimeError):
    """A required integration produced non-finite or blown-up fields."""

    def __init__(self, t_event, cause="non_finite"):
        super().__init__(f"integration diverged at t={t_event:.6g} ({cause})")
        self.t_event = t_event
        self.cause = cause


@dataclass(frozen=True)
class QGParams:
    """Viscosity, linear drag and time step of one integration."""

    nu: float
    mu: float
    dt: float

    def __post_init__(self):
        if self.nu < 0 or self.mu < 0:
            raise ValueError("nu and mu must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class ForcingParams:
    """Deterministic forcing: amplitude, wavenumber and phase frequencies."""

    amplitude: float = DEFAULT_FORCING_AMPLITUDE
    k: int = 4
    freq1: float = 1.4
    freq2: float = 1.5

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ValueError("forcing amplitude must be positive")
        if self.k < 1:
            raise ValueError("forcing wavenumber must be >= 1")


@dataclass(frozen=True)
class QGState:
    """Spectral vorticity and its time."""

    omega_hat: SpectralField
    t: float


@dataclass
class Trajectory:
    """States stored every ``cadence`` steps, plus the final state.

    ``truncated`` marks an integration that stopped early; ``status``
    then carries the diverged-state diagnosis.
    """

    grid: Grid
    params: QGParams
    cadence: int
    states: list = field(default_factory=list)
    final: QGState = None
    truncated: bool = False
    status: StabilityStatus = None


def forcing_hat(t, grid, fp):
    """Exact spectral coefficients of the forcing at time t.

    Each cosine occupies two conjugate modes, so the array has exactly
    four non-zero entries; this is bitwise-stable and avoids a transform
    per RK4 stage.
    """
    if 2 * fp.k >= grid.n:
        raise ValueError(f"forcing wavenumber {fp.k} not resolvable on n={grid.n}")
    phase1 = math.pi * math.sin(fp.freq1 * t)
    phase2 = math.pi * math.sin(fp.freq2 * t)
    c = fp.amplitude
    fh = np.zeros((grid.n, grid.n), dtype=np.complex128)
    fh[0, fp.k] = 0.5 * c * complex(math.cos(phase1), math.sin(phase1))
    fh[0, grid.n - fp.k] = np.conj(fh[0, fp.k])
    fh[fp.k, 0] = -0.5 * c * complex(math.cos(phase2), math.sin(phase2))
    fh[grid.n - fp.k, 0] = np.conj(fh[fp.k, 0])
    return fh


def forcing_field(t, grid, fp):
    """Forcing evaluated on the collocation grid, from the same phases."""
    xg, yg = grid.mesh
    phase1 = math.pi * math.sin(fp.freq1 * t)
    phase2 = math.pi * math.sin(fp.freq2 * t)
    vals = fp.amplitude * (np.cos(fp.k * yg + phase1) - np.cos(fp.k * xg + phase2))
    return RealField(grid, vals)


class RhsContext:
    """Precomputed multipliers binding grid, parameters and closure.

    ``forcing=None`` runs the unforced equation.  The closure, when
    present, is called as ``closure(omega_hat, grid)`` with raw (or
    traced) coefficients and must return a spectral tendency on the
    same grid.
    """

    def __init__(self, grid, params, forcing, closure=None):
        self.grid = grid
        self.params = params
        self.forcing = forcing
        self.closure = closure
        self.linear_mult = -params.nu * grid.ksq - params.mu

    def rhs(self, om, t):
        """Tendency of the spectral vorticity; om may be raw or traced."""
        g = self.grid
        psih = g.inv_laplacian_mult * om
        px = fft_inv(g.ikx * psih)
        py = fft_inv(g.iky * psih)
        ox = fft_inv(g.ikx * om)
        oy = fft_inv(g.iky * om)
        adv = g.dealias_mask * fft_fwd(px * oy - py * ox)
        out = self.linear_mult * om - adv
        if self.forcing is not None:
            out = out + forcing_hat(t, g, self.forcing)
        if self.closure is not None:
            out = out + self.closure(om, g)
        return out

    def step(self, om, t):
        """One classical RK4 step from (om, t)."""
        dt = self.params.dt
        k1 = self.rhs(om, t)
        k2 = self.rhs(om + (0.5 * dt) * k1, t + 0.5 * dt)
        k3 = self.rhs(om + (0.5 * dt) * k2, t + 0.5 * dt)
        k4 = self.rhs(om + dt * k3, t + dt)
        return om + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rhs(state, params, forcing, closure=None):
    """Typed tendency for a single state (see :class:`RhsContext`)."""
    g = state.omega_hat.grid
    ctx = RhsContext(g, params, forcing, closure)
    return SpectralField(g, ctx.rhs(state.omega_hat.coeffs, state.t))


def step_rk4(state, params, forcing, closure=None):
    """Advance one state by a single RK4 step."""
    g = state.omega_hat.grid
    ctx = RhsContext(g, params, forcing, closure)
    om = ctx.step(state.omega_hat.coeffs, state.t)
    return QGState(SpectralField(g, om), state.t + params.dt)


def rollout_bookkeeping(les_steps, delta, dt):
    """Step/time accounting tying a coarse run to its fine reference.

    A coarse run of ``les_steps`` steps at dt_les = delta * dt covers
    the same interval as ``les_steps * delta`` fine steps at dt; both
    products are returned so callers can assert the equality.
    """
    if les_steps < 1 or delta < 1 or dt <= 0:
        raise ValueError("les_steps, delta must be >= 1 and dt > 0")
    dt_les = delta * dt
    return {
        "les_steps": les_steps,
        "dns_steps": les_steps * delta,
        "dt": dt,
        "dt_les": dt_les,
        "t_span": les_steps * dt_les,
        "t_span_fine": (les_steps * delta) * dt,
    }


def random_initial_vorticity(grid, seed, kmin=2, kmax=6):
    """Random large-scale vorticity, unit enstrophy, zero mean.

    Gaussian white noise is band-passed to the shell kmin <= |k| <= kmax
    and rescaled so that 0.5 * sum|omega_hat|^2 == 1.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((grid.n, grid.n))
    nh = fft_fwd(noise)
    kmag = np.sqrt(grid.ksq)
    nh = nh * ((kmag >= kmin) & (kmag <= kmax))
    ens = 0.5 * np.sum(np.abs(nh) ** 2)
    if ens == 0.0:
        raise ValueError("empty wavenumber shell for initial condition")
    return SpectralField(grid, nh / math.sqrt(ens))


@dataclass
class SpinupResult:
    """Final state plus the energy series recorded while spinning up."""

    state: QGState
    times: np.ndarray
    energies: np.ndarray


def spinup(grid, params, forcing, seed, n_steps, monitor_every=50, kmin=2, kmax=6):
    """Integrate from a random initial condition toward stationarity.

    Raises :class:`DivergedError` if the field ever turns non-finite;
    spin-up is a prerequisite of everything downstream, so there is no
    truncated-result path here.
    """
    ctx = RhsContext(grid, params, forcing)
    om = random_initial_vorticity(grid, seed, kmin, kmax).coeffs
    t = 0.0
    times = [0.0]
    energies = [total_energy_hat(om, grid)]
    for i in range(n_steps):
        om = ctx.step(om, t)
        t = (i + 1) * params.dt
        if not np.all(np.isfinite(om)):
            raise DivergedError(t)
        if (i + 1) % monitor_every == 0:
            times.append(t)
            energies.append(total_energy_hat(om, grid))
    state = QGState(SpectralField(grid, om), t)
    return SpinupResult(state, np.asarray(times), np.asarray(energies))


def simulate(state, n_steps, params, forcing, closure=None, store_every=1,
             on_state=None, blowup_factor=1e6):
    """Integrate ``n_steps`` RK4 steps, storing states every ``store_every``.

    The initial state is stored (or streamed) first.  When ``on_state``
    is given it receives ``(index, QGState)`` for each stored state and
    nothing accumulates in memory; otherwise states collect on the
    returned :class:`Trajectory`.  Divergence (non-finite values, or
    enstrophy exceeding ``blowup_factor`` times the initial enstrophy)
    stops the run early and marks the trajectory truncated instead of
    raising, so callers can inspect partial results.
    """
    grid = state.omega_hat.grid
    ctx = RhsContext(grid, params, forcing, closure)
    reference = 0.5 * float(np.sum(np.abs(state.omega_hat.coeffs) ** 2))
    traj = Trajectory(grid=grid, params=params, cadence=store_every)

    def emit(idx, st):
        if on_state is not None:
            on_state(idx, st)
        else:
            traj.states.append(st)

    emit(0, state)
    om = state.omega_hat.coeffs
    t = state.t
    stored = 1
    for i in range(1, n_steps + 1):
        om = ctx.step(om, t)
        t = state.t + i * params.dt
        if not np.all(np.isfinite(om)):
            traj.truncated = True
            traj.status = StabilityStatus(state="diverged", cause="non_finite", t_event=t)
            return traj
        if i % store_every == 0:
            st = QGState(SpectralField(grid, om), t)
            status = stability_check(st, reference, blowup_factor)
            if status.state != "ok":
                traj.truncated = True
                traj.status = status
                return traj
            emit(stored, st)
            stored += 1
    traj.final = QGState(SpectralField(grid, om), t)
    return traj
