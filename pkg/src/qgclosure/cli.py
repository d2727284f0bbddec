"""Command-line pipeline for the closure experiments.

Five verbs chain into a full study:

    spinup        random start -> stationary fine-grid snapshot
    dns           fine-grid trajectory, snapshots at the coarse cadence
    make-dataset  filtered states + subgrid residuals from trajectories
    train         fit the convolutional closure (apriori or aposteriori)
    evaluate      coarse runs per closure vs the filtered reference

Every verb takes --config, --out (a directory with fixed file names
inside) and where relevant --seed.  Exit codes: 0 success, 2 broken
configuration or inputs, 3 divergence in a required integration.
"""

import argparse
import os
import sys

import numpy as np

from . import fileio
from .closures import CnnClosure, DynamicSmagorinsky, ZeroClosure
from .config import ConfigError, load_config
from .diagnostics import (SpectrumAccumulator, StabilityStatus, enstrophy_flux,
                          enstrophy_spectrum, total_energy,
                          total_enstrophy)
from .dynamics import (DivergedError, QGState, rollout_bookkeeping, simulate,
                       spinup)
from .filtering import SampleSet, project, sample_from_state
from .filtering import zero_pad as spectral_zero_pad
from .spectral import Grid, SpectralField, to_real, to_spectral
from .training import train


def _say(msg):
    print(msg, flush=True)


def cmd_spinup(args):
    cfg = load_config(args.config)
    grid_sp = Grid(cfg.spinup_n)
    _say(f"spinup: {cfg.spinup_steps} steps on {cfg.spinup_n}^2 "
         f"(dt={cfg.spinup_dt}), seed {args.seed}")
    result = spinup(grid_sp, cfg.spinup_params(), cfg.forcing(), args.seed,
                    cfg.spinup_steps, kmin=cfg.spinup_kmin, kmax=cfg.spinup_kmax)
    # stationarity: compare energy means over the two halves of the
    # last 20% of the monitor series
    energies = result.energies
    drift = None
    tail = energies[-max(2, round(0.2 * len(energies))):]
    if len(tail) >= 2:
        half = len(tail) // 2
        e_old = float(np.mean(tail[:half]))
        e_new = float(np.mean(tail[half:]))
        drift = abs(e_new - e_old) / max(abs(e_new), 1e-30)
        _say(f"spinup: energy {e_new:.4g}, tail-half relative drift {drift:.2e}")

    state = result.state
    if cfg.n_hi != cfg.spinup_n:
        grid_hi = Grid(cfg.n_hi)
        upsampled = spectral_zero_pad(state.omega_hat, grid_hi)
        state = QGState(upsampled, state.t)
        _say(f"spinup: settling {cfg.settle_steps} steps on {cfg.n_hi}^2 "
             f"(dt={cfg.dt})")
    if cfg.settle_steps > 0:
        traj = simulate(state, cfg.settle_steps, cfg.qg_params(), cfg.forcing(),
                        store_every=cfg.settle_steps + 1)
        if traj.truncated:
            raise DivergedError(traj.status.t_event, traj.status.cause)
        state = traj.final
    path = os.path.join(args.out, "spinup.qgf")
    fileio.write_snapshot(path, to_real(state.omega_hat), state.t)
    fileio.write_manifest(os.path.join(args.out, "spinup_stats.json"), {
        "seed": args.seed,
        "spinup_n": cfg.spinup_n,
        "steps": cfg.spinup_steps,
        "t_end": state.t,
        "energy": total_energy(state.omega_hat),
        "enstrophy": total_enstrophy(state.omega_hat),
        "stationarity_drift": drift,
    })
    _say(f"spinup: wrote {path} (t={state.t:.4g}, "
         f"energy {total_energy(state.omega_hat):.4g}, "
         f"enstrophy {total_enstrophy(state.omega_hat):.4g})")
    return 0


def _load_state(path, expected_n):
    om_hat, t = fileio.snapshot_state(path)
    if om_hat.grid.n != expected_n:
        raise ConfigError(
            f"snapshot {path} is {om_hat.grid.n}^2 but the config expects {expected_n}^2"
        )
    return QGState(om_hat, t)


def cmd_dns(args):
    cfg = load_config(args.config)
    state = _load_state(args.init, cfg.n_hi)
    os.makedirs(args.out, exist_ok=True)
    files, times = [], []

    def on_state(idx, st):
        name = f"snap_{idx:06d}.qgf"
        fileio.write_snapshot(os.path.join(args.out, name),
                              to_real(st.omega_hat), st.t)
        files.append(name)
        times.append(st.t)

    cadence = cfg.dns_store_every if cfg.dns_store_every else cfg.delta
    _say(f"dns: {cfg.dns_steps} steps on {cfg.n_hi}^2, storing every "
         f"{cadence} steps")
    traj = simulate(state, cfg.dns_steps, cfg.qg_params(), cfg.forcing(),
                    store_every=cadence, on_state=on_state)
    manifest = {
        "format": "qg-trajectory",
        "version": 1,
        "n": cfg.n_hi,
        "dt": cfg.dt,
        "cadence": cadence,
        "nu": cfg.nu,
        "mu": cfg.mu,
        "files": files,
        "times": times,
        "truncated": traj.truncated,
    }
    fileio.write_manifest(os.path.join(args.out, "manifest.json"), manifest)
    if traj.truncated:
        _say(f"dns: diverged at t={traj.status.t_event:.4g} ({traj.status.cause})")
        return 3
    _say(f"dns: wrote {len(files)} snapshots to {args.out}")
    return 0


def cmd_make_dataset(args):
    cfg = load_config(args.config)
    spec = cfg.filter_spec()
    segments = []
    for sid, man_path in enumerate(args.manifests):
        man = fileio.read_manifest(man_path)
        if man.get("format") != "qg-trajectory":
            raise ConfigError(f"{man_path}: not a trajectory manifest")
        if man.get("truncated"):
            raise ConfigError(f"{man_path}: trajectory is truncated; refusing to sample")
        if man.get("n") != cfg.n_hi or man.get("cadence") != cfg.delta:
            raise ConfigError(
                f"{man_path}: trajectory (n={man.get('n')}, cadence="
                f"{man.get('cadence')}) does not match the config"
            )
        base = os.path.dirname(os.path.abspath(man_path))
        samples = []
        for name in man["files"]:
            field, t = fileio.read_snapshot(os.path.join(base, name))
            if field.grid.n != cfg.n_hi:
                raise ConfigError(f"{name}: wrong grid {field.grid.n}")
            samples.append(sample_from_state(to_spectral(field), t, spec))
        segments.append(SampleSet(samples=tuple(samples), source_id=sid,
                                  dt_sample=man["dt"] * man["cadence"]))
        _say(f"make-dataset: {man_path}: {len(samples)} samples")
    path = os.path.join(args.out, "dataset.qgds")
    fileio.write_dataset(path, segments, delta=cfg.delta)
    total = sum(len(s.samples) for s in segments)
    _say(f"make-dataset: wrote {total} samples ({len(segments)} segments) to {path}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    segments, delta = fileio.read_dataset(args.data)
    if delta != cfg.delta:
        raise ConfigError(f"dataset delta {delta} does not match config {cfg.delta}")
    if segments and segments[0].grid.n != cfg.n_lo:
        raise ConfigError(
            f"dataset grid {segments[0].grid.n} does not match n_lo {cfg.n_lo}"
        )
    tc = cfg.train_config(strategy=args.strategy, n_rollout=args.n_rollout,
                          seed=args.seed, epochs=args.epochs)
    _say(f"train: strategy {tc.strategy}, rollout {tc.n_rollout}, "
         f"{tc.epochs} epochs, batch {tc.batch_size}, seed {tc.seed}")

    def progress(epoch, loss, diverged):
        _say(f"train: epoch {epoch} loss {loss:.6e} diverged {diverged}")

    report = train(tc, segments, les_params=cfg.les_params(),
                   forcing=cfg.forcing(), progress=progress)
    os.makedirs(args.out, exist_ok=True)
    fileio.write_train_log_csv(os.path.join(args.out, "train_log.csv"), report)
    if report.aborted:
        _say("train: aborted, an entire epoch diverged")
        return 3
    fileio.write_checkpoint(os.path.join(args.out, "checkpoint.qgnn"),
                            report.params, report.norm)
    _say(f"train: done in {report.wall_time:.1f}s, "
         f"final loss {report.epoch_losses[-1]:.6e}, "
         f"{len(report.diverged)} diverged windows")
    return 0


def _parse_closures(entries):
    """Closure run specs: 'zero', 'smagorinsky', or NAME=CHECKPOINT."""
    runs = []
    seen = set()
    for entry in entries:
        entry = entry.strip()
        if not entry:
            continue
        if "=" in entry:
            name, path = entry.split("=", 1)
            name = name.strip()
            params, norm = fileio.read_checkpoint(path.strip())
            closure = CnnClosure(params, norm)
        elif entry == "zero":
            name, closure = "zero", ZeroClosure()
        elif entry == "smagorinsky":
            name, closure = "smagorinsky", DynamicSmagorinsky()
        else:
            raise ConfigError(
                f"unknown closure {entry!r}; use zero, smagorinsky, or NAME=CKPT"
            )
        if not name or not all(c.isalnum() or c in "-_" for c in name):
            raise ConfigError(f"closure run name {name!r} must be alphanumeric/-/_")
        if name in ("reference",) or name in seen:
            raise ConfigError(f"duplicate or reserved closure run name {name!r}")
        seen.add(name)
        runs.append((name, closure))
    if not runs:
        raise ConfigError("no closure runs requested")
    return runs


def _write_run_outputs(out_dir, name, spec_acc, flux_acc, final_state, status):
    run_dir = os.path.join(out_dir, name)
    os.makedirs(run_dir, exist_ok=True)
    # averages over a partial run would not be comparable, so a run that
    # did not finish keeps only its status and last healthy state
    if status.state == "ok" and spec_acc.count:
        fileio.write_spectrum_csv(os.path.join(run_dir, "spectrum.csv"),
                                  spec_acc.mean())
        fileio.write_spectrum_csv(os.path.join(run_dir, "flux.csv"),
                                  flux_acc.mean())
    if final_state is not None:
        fileio.write_snapshot(os.path.join(run_dir, "final.qgf"),
                              to_real(final_state.omega_hat), final_state.t)
    payload = {"run": name, "state": status.state, "cause": status.cause,
               "t_event": status.t_event}
    fileio.write_manifest(os.path.join(run_dir, "status.json"), payload)


def cmd_evaluate(args):
    cfg = load_config(args.config)
    spec = cfg.filter_spec()
    state_hi = _load_state(args.init, cfg.n_hi)
    entries = args.closure if args.closure else cfg.closures.split(",")
    runs = _parse_closures(entries)
    for name, closure in runs:
        if closure.variant == "cnn" and closure.params.kernel > cfg.n_lo:
            raise ConfigError(f"closure {name}: kernel exceeds the coarse grid")

    os.makedirs(args.out, exist_ok=True)
    keeping = rollout_bookkeeping(cfg.les_steps, cfg.delta, cfg.dt)
    om_bar0 = project(state_hi.omega_hat, spec)
    t0 = state_hi.t
    statuses = {}

    # Reference: fine-grid run, filtered at the spectrum cadence.
    spec_acc, flux_acc = SpectrumAccumulator(), SpectrumAccumulator()
    last_filtered = [None]

    def on_ref(idx, st):
        filtered = project(st.omega_hat, spec)
        spec_acc.add(enstrophy_spectrum(filtered))
        flux_acc.add(enstrophy_flux(filtered))
        last_filtered[0] = QGState(filtered, st.t)

    _say(f"evaluate: reference run, {keeping['dns_steps']} fine steps")
    ref = simulate(state_hi, keeping["dns_steps"], cfg.qg_params(), cfg.forcing(),
                   store_every=cfg.delta * cfg.spectrum_every, on_state=on_ref)
    if ref.truncated:
        _write_run_outputs(args.out, "reference", spec_acc, flux_acc,
                           last_filtered[0], ref.status)
        raise DivergedError(ref.status.t_event, ref.status.cause)
    ref_final = QGState(project(ref.final.omega_hat, spec), ref.final.t)
    ok = StabilityStatus(state="ok")
    _write_run_outputs(args.out, "reference", spec_acc, flux_acc, ref_final, ok)
    statuses["reference"] = "ok"

    for name, closure in runs:
        acc_s, acc_f = SpectrumAccumulator(), SpectrumAccumulator()
        last = [None]

        def on_les(idx, st):
            acc_s.add(enstrophy_spectrum(st.omega_hat))
            acc_f.add(enstrophy_flux(st.omega_hat))
            last[0] = st

        _say(f"evaluate: closure {name}, {cfg.les_steps} coarse steps")
        traj = simulate(QGState(om_bar0, t0), cfg.les_steps, cfg.les_params(),
                        cfg.forcing(), closure=closure,
                        store_every=cfg.spectrum_every, on_state=on_les)
        status = traj.status if traj.truncated else ok
        final_state = last[0] if traj.truncated else traj.final
        _write_run_outputs(args.out, name, acc_s, acc_f, final_state, status)
        statuses[name] = status.state
        if traj.truncated:
            _say(f"evaluate: {name} diverged at t={status.t_event:.4g}")
        else:
            _say(f"evaluate: {name} finished "
                 f"(enstrophy {total_enstrophy(final_state.omega_hat):.4g})")

    summary = dict(keeping)
    summary.update({
        "n_hi": cfg.n_hi, "n_lo": cfg.n_lo, "t0": t0,
        "t_end": t0 + keeping["t_span"],
        "spectrum_every": cfg.spectrum_every,
        "runs": statuses,
    })
    fileio.write_manifest(os.path.join(args.out, "summary.json"), summary)
    _say(f"evaluate: wrote {args.out}/summary.json")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="qgclosure",
        description="Pseudo-spectral 2D turbulence solver with learnable "
                    "subgrid closures",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_help):
        p.add_argument("--config", "-c", required=True, help="INI config file")
        p.add_argument("--out", "-o", required=True, help="output directory")
        if seed_help:
            p.add_argument("--seed", type=int, default=0, help=seed_help)

    p = sub.add_parser("spinup", help="produce a statistically steady snapshot")
    common(p, "random initial condition seed")
    p.set_defaults(func=cmd_spinup)

    p = sub.add_parser("dns", help="run a fine trajectory from a snapshot")
    common(p, None)
    p.add_argument("--init", required=True, help="initial snapshot (.qgf)")
    p.set_defaults(func=cmd_dns)

    p = sub.add_parser("make-dataset", help="extract filtered samples + residuals")
    common(p, None)
    p.add_argument("manifests", nargs="+", help="trajectory manifest.json files")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train the convolutional closure")
    common(p, None)
    p.add_argument("--data", required=True, help="dataset file (.qgds)")
    p.add_argument("--strategy", choices=["apriori", "aposteriori"],
                   help="override the configured strategy")
    p.add_argument("--n-rollout", type=int, dest="n_rollout",
                   help="override the configured rollout length")
    p.add_argument("--epochs", type=int, default=None,
                   help="override the configured epoch count")
    p.add_argument("--seed", type=int, default=None,
                   help="override the configured training seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="coarse runs per closure vs reference")
    common(p, None)
    p.add_argument("--init", required=True, help="held-out snapshot (.qgf)")
    p.add_argument("--closure", action="append", default=None,
                   help="zero | smagorinsky | NAME=CHECKPOINT (repeatable)")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, fileio.FormatError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DivergedError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
