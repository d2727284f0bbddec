"""INI run configuration: schema, defaults, parsing and validation.

One file describes a whole experiment: fine-grid physics, the
coarse-graining factor, spin-up protocol, trajectory generation,
training settings and evaluation settings.  Unknown sections or keys
are rejected (they are almost always typos), and validation reports
every problem at once.
"""

import configparser
import math
from dataclasses import dataclass, fields

from .dynamics import ForcingParams, QGParams
from .filtering import FilterSpec
from .spectral import Grid
from .training import TrainConfig

# RK4's stability interval on the negative real axis bounds the viscous
# term: dt * nu * k_max^2 must stay below this for the dealiased band.
RK4_REAL_STABILITY = 2.8


class ConfigError(Exception):
    """Configuration file is malformed or inconsistent."""


@dataclass
class RunConfig:
    """Flat view of one experiment configuration."""

    # [grid]
    n_hi: int = 256
    delta: int = 8
    # [physics]
    nu: float = 5e-4
    mu: float = 2e-2
    dt: float = 1e-3
    # [forcing]
    forcing_amplitude: float = math.sqrt(6.0)
    forcing_k: int = 4
    forcing_freq1: float = 1.4
    forcing_freq2: float = 1.5
    # [spinup]
    spinup_n: int = 128
    spinup_dt: float = 2e-3
    spinup_steps: int = 25000
    settle_steps: int = 2500
    spinup_kmin: int = 2
    spinup_kmax: int = 6
    # [dns]
    dns_steps: int = 11992
    dns_store_every: int = 0
    # [training]
    strategy: str = "aposteriori"
    n_rollout: int = 1
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 16
    train_seed: int = 0
    cnn_depth: int = 10
    cnn_width: int = 64
    cnn_kernel: int = 5
    # [evaluate]
    les_steps: int = 3000
    spectrum_every: int = 10
    closures: str = "zero,smagorinsky"

    @property
    def n_lo(self):
        return self.n_hi // self.delta

    @property
    def dt_les(self):
        return self.dt * self.delta

    def qg_params(self):
        return QGParams(nu=self.nu, mu=self.mu, dt=self.dt)

    def les_params(self):
        return QGParams(nu=self.nu, mu=self.mu, dt=self.dt_les)

    def spinup_params(self):
        return QGParams(nu=self.nu, mu=self.mu, dt=self.spinup_dt)

    def forcing(self):
        return ForcingParams(amplitude=self.forcing_amplitude, k=self.forcing_k,
                             freq1=self.forcing_freq1, freq2=self.forcing_freq2)

    def filter_spec(self):
        return FilterSpec(grid_hi=Grid(self.n_hi), delta=self.delta)

    def train_config(self, strategy=None, n_rollout=None, seed=None, epochs=None):
        return TrainConfig(
            strategy=strategy if strategy is not None else self.strategy,
            n_rollout=n_rollout if n_rollout is not None else self.n_rollout,
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            epochs=epochs if epochs is not None else self.epochs,
            batch_size=self.batch_size,
            seed=seed if seed is not None else self.train_seed,
            depth=self.cnn_depth, width=self.cnn_width, kernel=self.cnn_kernel,
        )


_SCHEMA = {
    "grid": {"n_hi": "n_hi", "delta": "delta"},
    "physics": {"nu": "nu", "mu": "mu", "dt": "dt"},
    "forcing": {"amplitude": "forcing_amplitude", "k": "forcing_k",
                "freq1": "forcing_freq1", "freq2": "forcing_freq2"},
    "spinup": {"n": "spinup_n", "dt": "spinup_dt", "steps": "spinup_steps",
               "settle_steps": "settle_steps", "kmin": "spinup_kmin",
               "kmax": "spinup_kmax"},
    "dns": {"steps": "dns_steps", "store_every": "dns_store_every"},
    "training": {"strategy": "strategy", "n_rollout": "n_rollout", "lr": "lr",
                 "beta1": "beta1", "beta2": "beta2", "eps": "eps",
                 "epochs": "epochs", "batch_size": "batch_size",
                 "seed": "train_seed", "cnn_depth": "cnn_depth",
                 "cnn_width": "cnn_width", "cnn_kernel": "cnn_kernel"},
    "evaluate": {"les_steps": "les_steps", "spectrum_every": "spectrum_every",
                 "closures": "closures"},
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def load_config(path):
    """Parse and validate an INI file into a :class:`RunConfig`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = RunConfig()
    problems = []
    for section in parser.sections():
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                problems.append(f"unknown key {key!r} in [{section}]")
                continue
            attr = _SCHEMA[section][key]
            kind = _FIELD_TYPES[attr]
            try:
                if kind is int:
                    value = int(raw)
                elif kind is float:
                    value = float(raw)
                else:
                    value = raw.strip()
            except ValueError:
                problems.append(
                    f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}"
                )
                continue
            setattr(cfg, attr, value)
    if problems:
        raise ConfigError("; ".join(problems))
    validate_config(cfg)
    return cfg


def _stability_problems(label, dt, nu, n):
    out = []
    guard = dt * nu * (n / 3.0) ** 2
    if guard >= RK4_REAL_STABILITY:
        out.append(
            f"{label}: dt*nu*(n/3)^2 = {guard:.3g} exceeds the RK4 "
            f"stability bound {RK4_REAL_STABILITY}"
        )
    return out


def validate_config(cfg):
    """Raise :class:`ConfigError` listing every inconsistency found."""
    p = []
    if cfg.n_hi < 8 or cfg.n_hi % 2 != 0:
        p.append(f"grid n_hi = {cfg.n_hi} must be even and >= 8")
    if cfg.delta < 2:
        p.append(f"delta = {cfg.delta} must be >= 2")
    elif cfg.n_hi % cfg.delta != 0:
        p.append(f"n_hi = {cfg.n_hi} is not divisible by delta = {cfg.delta}")
    else:
        n_lo = cfg.n_hi // cfg.delta
        if n_lo < 8 or n_lo % 2 != 0:
            p.append(f"coarse grid n_lo = {n_lo} must be even and >= 8")
        elif cfg.forcing_k >= n_lo // 2:
            p.append(
                f"forcing wavenumber {cfg.forcing_k} is not retained by the "
                f"filter cutoff {n_lo // 2}"
            )
    if cfg.nu < 0 or cfg.mu < 0:
        p.append("nu and mu must be non-negative")
    if cfg.dt <= 0 or cfg.spinup_dt <= 0:
        p.append("time steps must be positive")
    else:
        p += _stability_problems("dns", cfg.dt, cfg.nu, cfg.n_hi)
        p += _stability_problems("spinup", cfg.spinup_dt, cfg.nu, cfg.spinup_n)
        if cfg.delta >= 2 and cfg.n_hi % cfg.delta == 0:
            p += _stability_problems("les", cfg.dt_les, cfg.nu, cfg.n_lo)
    if cfg.spinup_n < 8 or cfg.spinup_n % 2 != 0:
        p.append(f"spinup n = {cfg.spinup_n} must be even and >= 8")
    elif cfg.spinup_n > cfg.n_hi:
        p.append("spinup grid must not exceed the fine grid")
    elif cfg.n_hi % cfg.spinup_n != 0:
        p.append(f"n_hi = {cfg.n_hi} is not a multiple of spinup n = {cfg.spinup_n}")
    if not (1 <= cfg.spinup_kmin <= cfg.spinup_kmax):
        p.append("spinup shell requires 1 <= kmin <= kmax")
    if cfg.spinup_steps < 0 or cfg.settle_steps < 0:
        p.append("spinup step counts must be non-negative")
    if cfg.dns_steps < 0:
        p.append("dns steps must be non-negative")
    if cfg.dns_store_every < 0:
        p.append("dns store cadence must be non-negative (0 means every delta)")
    if cfg.strategy not in ("apriori", "aposteriori"):
        p.append(f"training strategy {cfg.strategy!r} must be apriori or aposteriori")
    if cfg.n_rollout < 1:
        p.append("n_rollout must be >= 1")
    if cfg.lr <= 0:
        p.append("learning rate must be positive")
    if cfg.epochs < 1 or cfg.batch_size < 1:
        p.append("epochs and batch_size must be >= 1")
    if cfg.cnn_depth < 1 or cfg.cnn_width < 1:
        p.append("cnn depth and width must be >= 1")
    if cfg.cnn_kernel < 1 or cfg.cnn_kernel % 2 != 1:
        p.append(f"cnn kernel = {cfg.cnn_kernel} must be odd and >= 1")
    if cfg.les_steps < 1:
        p.append("les_steps must be >= 1")
    if cfg.spectrum_every < 1:
        p.append("spectrum_every must be >= 1")
    if p:
        raise ConfigError("; ".join(p))
