"""Dataset container file format, CSV import and standard normalisation.

LTSF-TENSOR v1 layout (little-endian)::

    b"LTSF"                       magic
    u16 version = 1
    u32 metadata_len
    metadata_len bytes            UTF-8, newline-separated key=value, includes name=
    train block, then test block:
        u8  ndim = 3
        3 x u64 dims              (trajectories, time, dim)
        u8  has_timestamps
        [time x f64 timestamps]   only when has_timestamps == 1
        traj*time*dim x f32       row-major (traj, time, dim)
"""
from __future__ import annotations

import csv
import io
import math
import os
import struct
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .dynsys import TrajectorySet
from .numkit import Rng

MAGIC = b"LTSF"
VERSION = 1
STD_FLOOR = 1e-8
_MAX_ELEMENTS = 1 << 40


class FormatError(ValueError):
    """Malformed LTSF-TENSOR file."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ShapeOverflowError(FormatError):
    pass


class CsvImportError(ValueError):
    pass


@dataclass
class DatasetContainer:
    name: str
    train: TrajectorySet
    test: TrajectorySet
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.train.n_traj == 0 or self.test.n_traj == 0:
            raise ValueError("train and test sets must both be non-empty")
        if self.train.dim != self.test.dim:
            raise ValueError(f"train dim {self.train.dim} != test dim {self.test.dim}")
        if (self.train.timestamps is None) != (self.test.timestamps is None):
            raise ValueError("train and test must share the timestamp convention")

    def truncate_train(self, n: int) -> DatasetContainer:
        """Keep only the first ``n`` training trajectories."""
        return DatasetContainer(self.name, self.train.subset(slice(0, n)), self.test, dict(self.metadata))


def container_from_generated(name: str, spec, trajectories: TrajectorySet) -> DatasetContainer:
    """Split generator output (train trajectories first) into a container."""
    n = spec.n_train
    meta = {"system": spec.system, "seed": spec.seed, "noise": int(spec.noise_enabled)}
    meta.update({k: repr(v) for k, v in sorted(spec.overrides.items())})
    return DatasetContainer(name, trajectories.subset(slice(0, n)), trajectories.subset(slice(n, None)), meta)


@dataclass(frozen=True)
class Header:
    """Shapes and metadata read without touching the value blocks."""

    metadata: dict
    train_shape: tuple[int, int, int]
    test_shape: tuple[int, int, int]
    train_timestamps: bool
    test_timestamps: bool


def _encode_metadata(meta: dict) -> bytes:
    lines = []
    for key, value in meta.items():
        key, value = str(key), str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"metadata entry {key!r} cannot contain '=' in the key or newlines")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _decode_metadata(raw: bytes) -> dict:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("metadata is not valid UTF-8") from exc
    meta = {}
    for line in text.split("\n"):
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"metadata line without '=': {line!r}")
        meta[key] = value
    return meta


def encode_header(meta: dict, version: int = VERSION) -> bytes:
    blob = _encode_metadata(meta)
    return MAGIC + struct.pack("<HI", version, len(blob)) + blob


def encode_block_header(shape, timestamps=None) -> bytes:
    out = struct.pack("<B3QB", 3, *shape, 0 if timestamps is None else 1)
    if timestamps is not None:
        out += np.asarray(timestamps, dtype="<f8").tobytes()
    return out


def _write_block(fh, ts: TrajectorySet):
    fh.write(encode_block_header(ts.shape, ts.timestamps))
    fh.write(np.ascontiguousarray(ts.data, dtype="<f4").tobytes())


def save(container: DatasetContainer, path) -> None:
    meta = {"name": container.name}
    meta.update({k: v for k, v in container.metadata.items() if k != "name"})
    with open(path, "wb") as fh:
        fh.write(encode_header(meta))
        _write_block(fh, container.train)
        _write_block(fh, container.test)


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"file truncated while reading {what} (wanted {n} bytes, got {len(buf)})")
    return buf


def _read_preamble(fh) -> dict:
    magic = fh.read(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}: not an LTSF-TENSOR file")
    version, meta_len = struct.unpack("<HI", _read_exact(fh, 6, "header"))
    if version != VERSION:
        raise VersionError(f"unsupported LTSF-TENSOR version {version}")
    return _decode_metadata(_read_exact(fh, meta_len, "metadata"))


def _read_block_header(fh, what):
    ndim = struct.unpack("<B", _read_exact(fh, 1, what))[0]
    if ndim != 3:
        raise FormatError(f"{what}: expected a 3-D tensor, found ndim={ndim}")
    dims = struct.unpack("<3Q", _read_exact(fh, 24, what))
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_ELEMENTS:
        raise ShapeOverflowError(f"{what}: shape {dims} is too large")
    flag = struct.unpack("<B", _read_exact(fh, 1, what))[0]
    if flag not in (0, 1):
        raise FormatError(f"{what}: invalid timestamp flag {flag}")
    return dims, count, bool(flag)


def _read_block(fh, what, skip_values=False):
    dims, count, has_ts = _read_block_header(fh, what)
    ts = None
    if has_ts:
        ts = np.frombuffer(_read_exact(fh, 8 * dims[1], f"{what} timestamps"), dtype="<f8").astype(np.float64)
    if skip_values:
        here = fh.tell()
        fh.seek(0, os.SEEK_END)
        if fh.tell() - here < 4 * count:
            raise TruncatedError(f"file truncated inside {what} values")
        fh.seek(here + 4 * count)
        return dims, has_ts
    values = np.frombuffer(_read_exact(fh, 4 * count, f"{what} values"), dtype="<f4")
    return TrajectorySet(values.reshape(dims).astype(np.float64), ts)


def read_header(path) -> Header:
    """Parse metadata and tensor shapes, verifying the file size, without loading values."""
    with open(path, "rb") as fh:
        meta = _read_preamble(fh)
        train_dims, train_ts = _read_block(fh, "train_data", skip_values=True)
        test_dims, test_ts = _read_block(fh, "test_data", skip_values=True)
    return Header(meta, tuple(train_dims), tuple(test_dims), train_ts, test_ts)


def load(path) -> DatasetContainer:
    with open(path, "rb") as fh:
        meta = _read_preamble(fh)
        if meta.get("format", "dataset") != "dataset":
            raise FormatError(f"{path} holds a {meta['format']}, not a dataset")
        if "name" not in meta:
            raise FormatError("metadata lacks the required name entry")
        train = _read_block(fh, "train_data")
        test = _read_block(fh, "test_data")
        if fh.read(1):
            raise FormatError("trailing bytes after test_data")
    name = meta.pop("name")
    return DatasetContainer(name, train, test, meta)


def export_csv(container: DatasetContainer, directory) -> list[str]:
    """Write ``train.csv`` and ``test.csv`` in long format (traj, step, time, d0, d1, ...)."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for split, ts in (("train", container.train), ("test", container.test)):
        path = os.path.join(directory, f"{split}.csv")
        times = ts.times()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["traj", "step", "time"] + [f"d{j}" for j in range(ts.dim)])
            for i in range(ts.n_traj):
                for s in range(ts.traj_len):
                    w.writerow([i, s, repr(float(times[s]))] + [repr(float(v)) for v in ts.data[i, s]])
        written.append(path)
    return written


# ---------------------------------------------------------------- CSV import


def n_windows(length: int, traj_len: int, stride: int) -> int:
    if length < traj_len:
        return 0
    return (length - traj_len) // stride + 1


def window(series: np.ndarray, traj_len: int, stride: int) -> np.ndarray:
    """All length-``traj_len`` windows advancing by ``stride``, shape (windows, traj_len, dim)."""
    count = n_windows(len(series), traj_len, stride)
    starts = np.arange(count) * stride
    return np.stack([series[s:s + traj_len] for s in starts]) if count else np.empty((0, traj_len, series.shape[1]))


def import_csv(
    path,
    traj_len: int,
    stride: int = 1,
    split: float | str = 0.8,
    columns=None,
    time_column: str | None = None,
    name: str | None = None,
    subsample: float | None = None,
    seed: int = 0,
) -> DatasetContainer:
    """Window one long multivariate series into train/test trajectory sets.

    ``split`` is either a fraction of rows (train gets the initial rows) or a
    timestamp string compared against ``time_column``; train rows are those
    at or before it.  Windows never straddle the split.  ``subsample`` keeps
    each window independently with that probability, drawing from a splitmix64
    stream seeded with ``seed``.
    """
    if traj_len < 2:
        raise ValueError("traj_len must be at least 2")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvImportError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = list(reader)
    if time_column is not None and time_column not in header:
        raise CsvImportError(f"{path}: time column {time_column!r} not found")
    if columns is None:
        columns = [h for h in header if h != time_column]
    elif isinstance(columns, str):
        columns = [c.strip() for c in columns.split(",") if c.strip()]
    missing = [c for c in columns if c not in header]
    if missing:
        raise CsvImportError(f"{path}: columns not found: {', '.join(missing)}")
    col_idx = [header.index(c) for c in columns]

    values = np.empty((len(rows), len(columns)))
    for r, row in enumerate(rows):
        for j, c in enumerate(col_idx):
            cell = row[c].strip() if c < len(row) else ""
            try:
                values[r, j] = float(cell)
            except ValueError:
                raise CsvImportError(
                    f"{path}: non-numeric value {cell!r} at row {r + 2}, column {columns[j]!r}"
                ) from None
            if not math.isfinite(values[r, j]):
                raise CsvImportError(f"{path}: non-finite value at row {r + 2}, column {columns[j]!r}")
    if len(values) < traj_len:
        raise CsvImportError(f"{path}: series has {len(values)} rows, shorter than traj_len={traj_len}")

    if isinstance(split, str):
        if time_column is None:
            raise CsvImportError("a timestamp split needs time_column")
        ti = header.index(time_column)
        cut = _parse_time(split)
        stamps = [_parse_time(row[ti]) for row in rows]
        split_row = sum(1 for s in stamps if s <= cut)
    else:
        if not 0.0 < split < 1.0:
            raise ValueError(f"split fraction must lie in (0, 1), got {split}")
        split_row = int(math.floor(split * len(values)))

    parts = {}
    for side, seg in (("train", values[:split_row]), ("test", values[split_row:])):
        if len(seg) < traj_len:
            raise CsvImportError(f"{path}: {side} side has {len(seg)} rows, shorter than traj_len={traj_len}")
        parts[side] = window(seg, traj_len, stride)

    if subsample is not None:
        if not 0.0 < subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")
        rng = Rng(seed)
        for side in ("train", "test"):
            keep = np.array([rng.uniform() < subsample for _ in range(len(parts[side]))], dtype=bool)
            if not keep.any():
                keep[0] = True
            parts[side] = parts[side][keep]

    meta = {"source": os.path.basename(str(path)), "traj_len": traj_len, "stride": stride,
            "split": split, "columns": ",".join(columns), "split_row": split_row}
    if subsample is not None:
        meta.update(subsample=subsample, seed=seed)
    name = name or os.path.splitext(os.path.basename(str(path)))[0]
    return DatasetContainer(name, TrajectorySet(parts["train"]), TrajectorySet(parts["test"]), meta)


def _parse_time(text: str):
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text).timestamp()
    except ValueError:
        raise CsvImportError(f"cannot parse timestamp {text!r}") from None


# ---------------------------------------------------------------- normalisation


@dataclass
class StandardScaler:
    mean: np.ndarray
    std: np.ndarray

    def forward(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


def fit_scaler(train: TrajectorySet) -> StandardScaler:
    """Per-dimension mean and population std over every training state."""
    if train.n_traj == 0:
        raise ValueError("cannot fit a scaler on an empty set")
    flat = train.data.reshape(-1, train.dim)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    return StandardScaler(mean.copy(), std)


def apply(scaler: StandardScaler, ts: TrajectorySet, direction: str = "forward") -> TrajectorySet:
    if direction == "forward":
        data = scaler.forward(ts.data)
    elif direction == "inverse":
        data = scaler.inverse(ts.data)
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return TrajectorySet(data, ts.timestamps)


def normalize(container: DatasetContainer) -> tuple[DatasetContainer, StandardScaler]:
    """Standardise both splits with statistics of the training split only."""
    scaler = fit_scaler(container.train)
    out = DatasetContainer(
        container.name,
        apply(scaler, container.train),
        apply(scaler, container.test),
        dict(container.metadata),
    )
    return out, scaler


def describe(container: DatasetContainer) -> str:
    buf = io.StringIO()
    buf.write(f"name: {container.name}\n")
    for split, ts in (("train_data", container.train), ("test_data", container.test)):
        d = ts.data
        buf.write(f"{split}: {ts.shape}  min={d.min():.6g} max={d.max():.6g} mean={d.mean():.6g} std={d.std():.6g}\n")
    for k, v in container.metadata.items():
        buf.write(f"  {k}={v}\n")
    return buf.getvalue()
