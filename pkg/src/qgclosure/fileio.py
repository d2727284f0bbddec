"""Binary and text file formats.

All binary payloads are little-endian float64.  Writers stage into a
temporary file in the destination directory and rename into place, so
readers never observe a half-written file.

Snapshot (magic ``QGF1``)
    header: magic, version u16, n u32, time f64, domain length f64;
    payload: n*n vorticity values, row-major.
Checkpoint (magic ``QGNN``)
    header: magic, version u16, depth u16, kernel u16, per-layer
    (in u32, out u32), omega scale f64, residual scale f64;
    payload: per layer, weights (out*in*k*k) then biases (out).
Dataset (magic ``QGDS``)
    header: magic, version u16, n u32, delta u32, dt_sample f64,
    segment count u32; per segment: source id u32, sample count u32,
    then per sample time f64, filtered vorticity coefficients n*n
    complex (re/im f64 pairs), residual coefficients likewise.
    Coefficients are stored verbatim, so write-read-write cycles are
    byte-identical.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .closures import CnnParams, Normalization
from .filtering import Sample, SampleSet
from .spectral import Grid, RealField, SpectralField, fft_fwd, hermitian_error

SNAPSHOT_MAGIC = b"QGF1"
CHECKPOINT_MAGIC = b"QGNN"
DATASET_MAGIC = b"QGDS"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A file failed structural validation."""


def atomic_write_bytes(path, payload):
    """Write bytes then rename into place within the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _take(buf, offset, fmt):
    size = struct.calcsize(fmt)
    if offset + size > len(buf):
        raise FormatError("file truncated inside header")
    return struct.unpack_from(fmt, buf, offset), offset + size


def _take_floats(buf, offset, count):
    size = count * 8
    if offset + size > len(buf):
        raise FormatError("file truncated inside payload")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return arr.astype(np.float64), offset + size


def _take_complex(buf, offset, count):
    size = count * 16
    if offset + size > len(buf):
        raise FormatError("file truncated inside payload")
    arr = np.frombuffer(buf, dtype="<c16", count=count, offset=offset)
    return arr.astype(np.complex128), offset + size


def write_snapshot(path, field, t):
    """Store a real vorticity field and its time."""
    header = struct.pack("<4sHIdd", SNAPSHOT_MAGIC, FORMAT_VERSION,
                         field.grid.n, float(t), field.grid.length)
    atomic_write_bytes(path, header + field.values.astype("<f8").tobytes())


def read_snapshot(path):
    """Load a snapshot as (RealField, time)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, version, n, t, length), offset = _take(buf, 0, "<4sHIdd")
    if magic != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: not a snapshot file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported snapshot version {version}")
    vals, offset = _take_floats(buf, offset, n * n)
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    if not np.all(np.isfinite(vals)):
        raise FormatError(f"{path}: non-finite field values")
    try:
        grid = Grid(int(n), float(length))
    except ValueError as err:
        raise FormatError(f"{path}: {err}") from err
    return RealField(grid, vals.reshape(n, n)), float(t)


def snapshot_state(path):
    """Load a snapshot directly as a spectral state (omega_hat, t)."""
    fld, t = read_snapshot(path)
    return SpectralField(fld.grid, fft_fwd(fld.values)), t


def write_checkpoint(path, params, norm):
    """Store trained closure weights plus their normalization."""
    parts = [struct.pack("<4sHHH", CHECKPOINT_MAGIC, FORMAT_VERSION,
                         params.depth, params.kernel)]
    for w, _ in params.layers:
        parts.append(struct.pack("<II", w.shape[1], w.shape[0]))
    parts.append(struct.pack("<dd", norm.omega_scale, norm.residual_scale))
    for w, b in params.layers:
        parts.append(w.astype("<f8").tobytes())
        parts.append(b.astype("<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_checkpoint(path):
    """Load a checkpoint as (CnnParams, Normalization)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, version, depth, kernel), offset = _take(buf, 0, "<4sHHH")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    shapes = []
    for _ in range(depth):
        (c_in, c_out), offset = _take(buf, offset, "<II")
        shapes.append((int(c_in), int(c_out)))
    (omega_scale, residual_scale), offset = _take(buf, offset, "<dd")
    layers = []
    for c_in, c_out in shapes:
        w, offset = _take_floats(buf, offset, c_out * c_in * kernel * kernel)
        b, offset = _take_floats(buf, offset, c_out)
        layers.append((w.reshape(c_out, c_in, kernel, kernel), b))
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    try:
        params = CnnParams(layers)
        norm = Normalization(omega_scale, residual_scale)
    except ValueError as err:
        raise FormatError(f"{path}: {err}") from err
    return params, norm


def write_dataset(path, segments, delta):
    """Store extracted sample segments as spectral coefficients."""
    if not segments:
        raise ValueError("no segments to write")
    n = segments[0].grid.n
    dt_sample = segments[0].dt_sample
    for seg in segments:
        if seg.grid.n != n:
            raise ValueError("segments live on different grids")
        if abs(seg.dt_sample - dt_sample) > 1e-12 * max(1.0, dt_sample):
            raise ValueError("segments have different sample spacing")
    parts = [struct.pack("<4sHIIdI", DATASET_MAGIC, FORMAT_VERSION, n,
                         int(delta), float(dt_sample), len(segments))]
    for seg in segments:
        parts.append(struct.pack("<II", int(seg.source_id), len(seg.samples)))
        for s in seg.samples:
            parts.append(struct.pack("<d", float(s.t)))
            parts.append(s.omega_bar.coeffs.astype("<c16").tobytes())
            parts.append(s.residual.coeffs.astype("<c16").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_dataset(path):
    """Load a dataset as (segments, delta); segments are SampleSets."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, version, n, delta, dt_sample, n_seg), offset = _take(buf, 0, "<4sHIIdI")
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    try:
        grid = Grid(int(n))
    except ValueError as err:
        raise FormatError(f"{path}: {err}") from err
    segments = []
    for _ in range(n_seg):
        (source_id, n_samples), offset = _take(buf, offset, "<II")
        samples = []
        for _ in range(n_samples):
            (t,), offset = _take(buf, offset, "<d")
            om, offset = _take_complex(buf, offset, n * n)
            res, offset = _take_complex(buf, offset, n * n)
            if not (np.all(np.isfinite(om)) and np.all(np.isfinite(res))):
                raise FormatError(f"{path}: non-finite sample data")
            fields = []
            for flat in (om, res):
                coeffs = flat.reshape(n, n)
                scale = float(np.max(np.abs(coeffs)))
                if scale > 0 and hermitian_error(coeffs) > 1e-8 * scale:
                    raise FormatError(f"{path}: coefficients are not a real field")
                fields.append(SpectralField(grid, coeffs))
            samples.append(Sample(t=float(t), omega_bar=fields[0],
                                  residual=fields[1]))
        segments.append(SampleSet(samples=tuple(samples), source_id=int(source_id),
                                  dt_sample=float(dt_sample)))
    if offset != len(buf):
        raise FormatError(f"{path}: {len(buf) - offset} trailing bytes")
    return segments, int(delta)


def write_manifest(path, payload):
    """Deterministic JSON manifest (sorted keys, fixed separators)."""
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def read_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise FormatError(f"{path}: invalid manifest JSON ({err})") from err


def write_spectrum_csv(path, series):
    """Shell spectrum as two-column CSV with shortest-repr floats."""
    lines = ["k,value"]
    for k, v in zip(series.k, series.values):
        lines.append(f"{int(k)},{float(v)!r}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_train_log_csv(path, report):
    """Per-epoch training log; columns are reproducible run to run."""
    lines = ["epoch,loss,diverged_count"]
    counts = report.diverged_per_epoch
    for i, loss in enumerate(report.epoch_losses):
        lines.append(f"{i},{float(loss)!r},{counts[i]}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
