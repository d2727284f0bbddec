"""Adam training of the convolutional closure, instantaneous or rolled out.

Two strategies share one loop:

``apriori``
    Each window is a single stored sample; the loss is the mean squared
    error between the network output and the stored subgrid residual.
``aposteriori``
    Each window is N+1 consecutive samples.  The coarse solver is
    differentiated through an N-step rollout that starts from the
    window's first filtered state, and the loss averages the mean
    squared vorticity mismatch over the N predicted states.

Both losses are computed in normalized units (residuals divided by the
residual scale, vorticity by the vorticity scale), which conditions the
fixed learning rate against the physical magnitudes; this rescales the
MSE by a constant factor only.  Every window gets its own tape, so a
rollout that diverges is skipped and logged without poisoning the rest
of its batch.  Runs are deterministic: the only randomness is the
shuffle stream seeded from the config, and batches average gradients in
a fixed order.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .closures import CnnParams, Normalization, cnn_forward_normalized, cnn_init
from .dynamics import DivergedError, RhsContext
from .spectral import fft_fwd, fft_inv


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and architecture settings for one training."""

    strategy: str = "aposteriori"
    n_rollout: int = 1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    depth: int = 10
    width: int = 64
    kernel: int = 5

    def __post_init__(self):
        if self.strategy not in ("apriori", "aposteriori"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.n_rollout < 1:
            raise ValueError("n_rollout must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class AdamState:
    """First/second moment estimates and the bias-correction step count."""

    m: list
    v: list
    step: int = 0


def init_adam(arrays):
    """Zero moments shaped like the parameter list."""
    return AdamState(m=[np.zeros_like(a) for a in arrays],
                     v=[np.zeros_like(a) for a in arrays])


def adam_update(arrays, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step; returns (new arrays, applied flag).

    Non-finite gradients skip the update entirely (moments and step
    count untouched) so a single bad batch cannot corrupt the moments.
    """
    if len(grads) != len(arrays):
        raise ValueError("gradient list does not match parameter list")
    for g, a in zip(grads, arrays):
        if g.shape != a.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {a.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        return list(arrays), False
    state.step += 1
    t = state.step
    out = []
    for i, (a, g) in enumerate(zip(arrays, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / (1.0 - beta1 ** t)
        v_hat = state.v[i] / (1.0 - beta2 ** t)
        out.append(a - lr * m_hat / (np.sqrt(v_hat) + eps))
    return out, True


@dataclass(frozen=True)
class _Window:
    """One gradient unit: either a stored sample or a rollout block."""

    input_real: np.ndarray = None
    target_norm: np.ndarray = None
    om0: np.ndarray = None
    t0: float = None
    targets_norm: tuple = None


@dataclass
class TrainReport:
    """Everything a training run produced, including its event log."""

    params: CnnParams
    norm: Normalization
    strategy: str
    n_rollout: int
    epoch_losses: list = field(default_factory=list)
    diverged: list = field(default_factory=list)
    skipped_updates: int = 0
    aborted: bool = False
    wall_time: float = 0.0

    @property
    def diverged_per_epoch(self):
        counts = [0] * len(self.epoch_losses)
        for epoch, _, _ in self.diverged:
            if epoch < len(counts):
                counts[epoch] += 1
        return counts


def dataset_normalization(datasets):
    """Population standard deviations of filtered vorticity and residual.

    Computed over every collocation value of every sample, in a fixed
    order, so repeated runs see identical scales.
    """
    acc = {"omega": [0.0, 0.0, 0], "residual": [0.0, 0.0, 0]}
    for ds in datasets:
        for s in ds.samples:
            for key, fld in (("omega", s.omega_bar), ("residual", s.residual)):
                vals = fft_inv(fld.coeffs)
                a = acc[key]
                a[0] += float(np.sum(vals))
                a[1] += float(np.sum(vals * vals))
                a[2] += vals.size
    scales = {}
    for key, (s1, s2, cnt) in acc.items():
        if cnt == 0:
            raise ValueError("cannot normalize an empty dataset")
        var = s2 / cnt - (s1 / cnt) ** 2
        scales[key] = float(np.sqrt(max(var, 0.0)))
    if scales["omega"] <= 0 or scales["residual"] <= 0:
        raise ValueError("degenerate dataset: zero variance in fields")
    return Normalization(omega_scale=scales["omega"], residual_scale=scales["residual"])


def _build_windows(cfg, datasets, norm):
    windows = []
    for ds in datasets:
        if cfg.strategy == "apriori":
            for s in ds.samples:
                windows.append(_Window(
                    input_real=fft_inv(s.omega_bar.coeffs),
                    target_norm=fft_inv(s.residual.coeffs) / norm.residual_scale,
                ))
        else:
            n = cfg.n_rollout
            block = n + 1
            i0 = 0
            while i0 + n < len(ds.samples):
                chunk = ds.samples[i0:i0 + block]
                windows.append(_Window(
                    om0=chunk[0].omega_bar.coeffs,
                    t0=chunk[0].t,
                    targets_norm=tuple(
                        fft_inv(s.omega_bar.coeffs) / norm.omega_scale
                        for s in chunk[1:]
                    ),
                ))
                i0 += block
    if not windows:
        raise ValueError("dataset provides no training windows for this configuration")
    return windows


def _window_loss_fn(cfg, window, norm, les_params, forcing, grid):
    inv_oscale = 1.0 / norm.omega_scale
    rscale = norm.residual_scale

    def fn(leaves):
        layers = list(zip(leaves[0::2], leaves[1::2]))
        if cfg.strategy == "apriori":
            pred = cnn_forward_normalized(layers, window.input_real, norm.omega_scale)
            d = pred - window.target_norm
            return autodiff.mean(d * d)

        def closure(om, g):
            vals = fft_inv(om)
            out = cnn_forward_normalized(layers, vals, norm.omega_scale)
            return fft_fwd(out * rscale)

        ctx = RhsContext(grid, les_params, forcing, closure)
        om = window.om0
        t = window.t0
        loss = None
        for i, target in enumerate(window.targets_norm):
            om = ctx.step(om, t)
            t = window.t0 + (i + 1) * les_params.dt
            if not np.all(np.isfinite(autodiff.value_of(om))):
                raise DivergedError(t)
            d = fft_inv(om) * inv_oscale - target
            term = autodiff.mean(d * d)
            loss = term if loss is None else loss + term
        return loss * (1.0 / len(window.targets_norm))

    return fn


def apriori_loss(params, samples, norm):
    """Mean normalized-residual MSE of a parameter set over samples."""
    total = 0.0
    for s in samples:
        pred = cnn_forward_normalized(params.layers, fft_inv(s.omega_bar.coeffs),
                                      norm.omega_scale)
        d = pred - fft_inv(s.residual.coeffs) / norm.residual_scale
        total += float(np.mean(d * d))
    return total / len(samples)


def aposteriori_loss(params, window_samples, norm, les_params, forcing):
    """Normalized rollout MSE over one window of consecutive samples.

    ``window_samples`` holds N+1 samples; the rollout starts from the
    first and is scored against the remaining N.  Raises
    :class:`~qgclosure.dynamics.DivergedError` if the rollout blows up.
    """
    if len(window_samples) < 2:
        raise ValueError("a rollout window needs at least two samples")
    grid = window_samples[0].omega_bar.grid
    cfg = TrainConfig(strategy="aposteriori", n_rollout=len(window_samples) - 1)
    window = _Window(
        om0=window_samples[0].omega_bar.coeffs,
        t0=window_samples[0].t,
        targets_norm=tuple(fft_inv(s.omega_bar.coeffs) / norm.omega_scale
                           for s in window_samples[1:]),
    )
    fn = _window_loss_fn(cfg, window, norm, les_params, forcing, grid)
    closure_layers = [(w, b) for w, b in params.layers]
    flat = []
    for w, b in closure_layers:
        flat.extend([w, b])
    # evaluate untraced: primitives pass plain arrays straight through
    return float(fn(flat))


def train(cfg, datasets, les_params=None, forcing=None, progress=None):
    """Fit a convolutional closure to extracted samples.

    Parameters
    ----------
    cfg : TrainConfig
    datasets : sequence of SampleSet
        Training trajectories on the coarse grid.
    les_params, forcing : QGParams, ForcingParams
        Coarse solver settings; required for the aposteriori strategy,
        where ``les_params.dt`` must equal the sample spacing.
    progress : callable, optional
        Receives (epoch index, mean loss, diverged count) per epoch.

    Returns a :class:`TrainReport`; ``aborted`` is set when an entire
    epoch produced no usable window (every rollout diverged).
    """
    if not datasets:
        raise ValueError("no datasets supplied")
    grid = datasets[0].samples[0].omega_bar.grid
    if cfg.strategy == "aposteriori":
        if les_params is None or forcing is None:
            raise ValueError("aposteriori training requires solver parameters")
        for ds in datasets:
            if abs(ds.dt_sample - les_params.dt) > 1e-9 * max(1.0, abs(ds.dt_sample)):
                raise ValueError(
                    f"sample spacing {ds.dt_sample} does not match solver dt {les_params.dt}"
                )

    t_start = time.perf_counter()
    norm = dataset_normalization(datasets)
    windows = _build_windows(cfg, datasets, norm)
    params = cnn_init(cfg.seed, cfg.depth, cfg.width, cfg.kernel)
    flat = params.flat()
    adam = init_adam(flat)
    rng = np.random.default_rng(cfg.seed)

    report = TrainReport(params=params, norm=norm, strategy=cfg.strategy,
                         n_rollout=cfg.n_rollout)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(windows))
        loss_sum, loss_cnt = 0.0, 0
        diverged_before = len(report.diverged)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad_sum = None
            contributed = 0
            for widx in batch:
                fn = _window_loss_fn(cfg, windows[int(widx)], norm,
                                     les_params, forcing, grid)
                try:
                    loss, grads = autodiff.value_and_grad(fn, flat)
                except DivergedError as err:
                    report.diverged.append((epoch, int(widx), err.t_event))
                    continue
                loss_sum += loss
                loss_cnt += 1
                contributed += 1
                if grad_sum is None:
                    grad_sum = grads
                else:
                    grad_sum = [a + b for a, b in zip(grad_sum, grads)]
            if contributed == 0:
                continue
            grad_mean = [g / contributed for g in grad_sum]
            flat, applied = adam_update(flat, grad_mean, adam, cfg.lr,
                                        cfg.beta1, cfg.beta2, cfg.eps)
            if not applied:
                report.skipped_updates += 1
        if loss_cnt == 0:
            report.aborted = True
            break
        report.epoch_losses.append(loss_sum / loss_cnt)
        if progress is not None:
            progress(epoch, report.epoch_losses[-1],
                     len(report.diverged) - diverged_before)

    report.params = CnnParams.from_flat(flat)
    report.wall_time = time.perf_counter() - t_start
    return report
