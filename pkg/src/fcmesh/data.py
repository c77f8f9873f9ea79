"""Dataset container, file I/O and ingestion-time preprocessing.

A dataset is an N x M matrix of voxel intensities plus voxel coordinates,
per-scan class labels, a per-scan phase tag (encoding/retrieval) and an
optional trial layout. Two on-disk formats are supported: a CSV pair
(signals table + coordinate sidecar) and a compact little-endian binary.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

PHASE_ENCODING = 0
PHASE_RETRIEVAL = 1
_PHASE_NAMES = {PHASE_ENCODING: "encoding", PHASE_RETRIEVAL: "retrieval"}
_PHASE_IDS = {v: k for k, v in _PHASE_NAMES.items()}

_BINARY_MAGIC = b"FCLRF1\x00\x00"
_BINARY_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Immutable sample-by-voxel dataset.

    signals: (N, M) float64, one row per scan
    coords:  (M, 3) float64 voxel positions
    labels:  (N,) int class ids in 1..n_classes
    phase:   (N,) uint8, 0=encoding 1=retrieval
    trials:  optional (N, 2) int, columns (trial id, scan index within trial)
    """

    signals: np.ndarray
    coords: np.ndarray
    labels: np.ndarray
    phase: np.ndarray
    trials: np.ndarray | None = None

    def __post_init__(self):
        signals = np.asarray(self.signals, dtype=np.float64)
        coords = np.asarray(self.coords, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        phase = np.asarray(self.phase, dtype=np.uint8)
        trials = self.trials
        if trials is not None:
            trials = np.asarray(trials, dtype=np.int64)
        if signals.ndim != 2:
            raise DataError("signals must be a 2-D matrix")
        n, m = signals.shape
        if coords.shape != (m, 3):
            raise DataError(
                f"coords shape {coords.shape} does not match {m} voxels"
            )
        if labels.shape != (n,):
            raise DataError("labels length does not match scan count")
        if phase.shape != (n,):
            raise DataError("phase length does not match scan count")
        if trials is not None and trials.shape != (n, 2):
            raise DataError("trial layout must have one (trial, scan) row per scan")
        if not np.isfinite(signals).all():
            raise DataError("signals contain non-finite values")
        if not np.isfinite(coords).all():
            raise DataError("coords contain non-finite values")
        if n == 0 or m == 0:
            raise DataError("dataset is empty")
        if labels.min() < 1:
            raise DataError("labels must be positive integers starting at 1")
        for arr in (signals, coords, labels, phase, trials):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "trials", trials)

    @property
    def n_scans(self) -> int:
        return self.signals.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.signals.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max())

    def constant_columns(self) -> np.ndarray:
        """Indices of zero-variance voxel columns."""
        return np.flatnonzero(np.ptp(self.signals, axis=0) == 0.0)

    def take_rows(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.signals[rows],
            self.coords,
            self.labels[rows],
            self.phase[rows],
            None if self.trials is None else self.trials[rows],
        )


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "by-phase"  # by-phase | by-fraction
    fraction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("by-phase", "by-fraction"):
            raise ConfigError(f"unknown split mode {self.mode!r}")
        if self.mode == "by-fraction":
            if self.fraction is None or not (0.0 < self.fraction < 1.0):
                raise ConfigError("by-fraction split needs fraction in (0,1)")


# ---------------------------------------------------------------------------
# preprocessing

def shift_onsets(d: Dataset, lag: int) -> Dataset:
    """Advance label/phase/trial assignments by `lag` scans.

    The label of original scan i attaches to the signal of scan i+lag
    (hemodynamic-lag compensation); the last `lag` labels have no signal
    and are dropped.
    """
    lag = int(lag)
    if lag < 0:
        raise ConfigError("lag must be nonnegative")
    if lag >= d.n_scans:
        raise DataError(f"lag {lag} >= number of scans {d.n_scans}")
    if lag == 0:
        return d
    keep = d.n_scans - lag
    return Dataset(
        d.signals[lag:],
        d.coords,
        d.labels[:keep],
        d.phase[:keep],
        None if d.trials is None else d.trials[:keep],
    )


def detrend_linear(d: Dataset) -> Dataset:
    """Subtract each voxel's OLS linear trend in scan index.

    Output columns have zero mean (the fit includes an intercept).
    """
    n = d.n_scans
    if n < 3:
        raise DataError("detrending needs at least 3 scans")
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    slopes = tc @ (d.signals - d.signals.mean(axis=0)) / (tc @ tc)
    fitted = d.signals.mean(axis=0) + np.outer(tc, slopes)
    return Dataset(d.signals - fitted, d.coords, d.labels, d.phase, d.trials)


def split_train_test(d: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Partition scans into train/test datasets.

    by-phase: encoding rows train, retrieval rows test.
    by-fraction: seeded shuffle, first round(fraction*N) rows train;
    row order within each part follows the original scan order.
    """
    if spec.mode == "by-phase":
        train_rows = np.flatnonzero(d.phase == PHASE_ENCODING)
        test_rows = np.flatnonzero(d.phase == PHASE_RETRIEVAL)
        if len(train_rows) == 0 or len(test_rows) == 0:
            raise DataError("by-phase split requires both phases present")
    else:
        rng = np.random.default_rng(spec.seed)
        perm = rng.permutation(d.n_scans)
        n_train = int(round(spec.fraction * d.n_scans))
        n_train = min(max(n_train, 1), d.n_scans - 1)
        train_rows = np.sort(perm[:n_train])
        test_rows = np.sort(perm[n_train:])
    return d.take_rows(train_rows), d.take_rows(test_rows)


# ---------------------------------------------------------------------------
# I/O

def _check_constant(d: Dataset, allow_constant: bool) -> Dataset:
    const = d.constant_columns()
    if len(const) == 0:
        return d
    if not allow_constant:
        raise DataError(
            f"zero-variance voxel columns {const.tolist()}; "
            "pass allow_constant to drop them"
        )
    keep = np.setdiff1d(np.arange(d.n_voxels), const)
    if len(keep) == 0:
        raise DataError("all voxel columns are constant")
    return Dataset(d.signals[:, keep], d.coords[keep], d.labels, d.phase, d.trials)


def load_dataset(path, format: str = "csv", allow_constant: bool = False) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if format == "csv":
        d = _load_csv(path)
    elif format == "binary":
        d = _load_binary(path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")
    present = set(np.unique(d.labels).tolist())
    missing = sorted(set(range(1, d.n_classes + 1)) - present)
    if missing:
        raise DataError(
            f"{path}: label ids must be contiguous 1..{d.n_classes}; missing {missing}"
        )
    return _check_constant(d, allow_constant)


def save_dataset(d: Dataset, path, format: str = "csv") -> None:
    path = Path(path)
    if format == "csv":
        _save_csv(d, path)
    elif format == "binary":
        _save_binary(d, path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")


def coords_sidecar_path(path: Path) -> Path:
    return path.with_suffix(".coords.csv")


def _save_csv(d: Dataset, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["scan", "phase", "label", "trial", "scan_in_trial"]
            + [f"v{j + 1}" for j in range(d.n_voxels)]
        )
        for i in range(d.n_scans):
            trial = "" if d.trials is None else str(d.trials[i, 0])
            sit = "" if d.trials is None else str(d.trials[i, 1])
            w.writerow(
                [i, _PHASE_NAMES[int(d.phase[i])], int(d.labels[i]), trial, sit]
                + [format(v, ".17g") for v in d.signals[i]]
            )
    with open(coords_sidecar_path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["voxel", "x", "y", "z"])
        for j in range(d.n_voxels):
            w.writerow([j + 1] + [format(v, ".17g") for v in d.coords[j]])


def _load_csv(path: Path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    fixed = ["scan", "phase", "label", "trial", "scan_in_trial"]
    if header[: len(fixed)] != fixed:
        raise FormatError(f"{path}: malformed header {header[:5]!r}")
    m = len(header) - len(fixed)
    if m < 1:
        raise FormatError(f"{path}: no voxel columns")
    body = rows[1:]
    n = len(body)
    signals = np.empty((n, m))
    labels = np.empty(n, dtype=np.int64)
    phase = np.empty(n, dtype=np.uint8)
    trials = np.zeros((n, 2), dtype=np.int64)
    has_trials = True
    try:
        for i, row in enumerate(body):
            if len(row) != len(header):
                raise FormatError(f"{path}: row {i} has {len(row)} fields")
            if row[1] not in _PHASE_IDS:
                raise FormatError(f"{path}: row {i} unknown phase {row[1]!r}")
            phase[i] = _PHASE_IDS[row[1]]
            labels[i] = int(row[2])
            if row[3] == "" or row[4] == "":
                has_trials = False
            else:
                trials[i] = (int(row[3]), int(row[4]))
            signals[i] = [float(v) for v in row[5:]]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc

    cpath = coords_sidecar_path(path)
    if not cpath.exists():
        cpath = path.parent / "coords.csv"
    if not cpath.exists():
        raise FormatError(f"missing coordinate sidecar for {path}")
    with open(cpath, newline="") as fh:
        crows = list(csv.reader(fh))
    if not crows or crows[0] != ["voxel", "x", "y", "z"]:
        raise FormatError(f"{cpath}: malformed coords header")
    if len(crows) - 1 != m:
        raise DataError(
            f"{cpath}: {len(crows) - 1} coordinate rows for {m} voxels"
        )
    try:
        coords = np.array([[float(v) for v in r[1:4]] for r in crows[1:]])
    except ValueError as exc:
        raise FormatError(f"{cpath}: {exc}") from exc
    return Dataset(signals, coords, labels, phase, trials if has_trials else None)


def _save_binary(d: Dataset, path: Path) -> None:
    has_trials = d.trials is not None
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(
            struct.pack(
                "<IIIIB",
                _BINARY_VERSION,
                d.n_scans,
                d.n_voxels,
                d.n_classes,
                1 if has_trials else 0,
            )
        )
        fh.write(d.coords.astype("<f4").tobytes())
        fh.write(d.signals.astype("<f4").tobytes())
        fh.write(d.labels.astype("<u2").tobytes())
        fh.write(d.phase.astype("u1").tobytes())
        if has_trials:
            fh.write(d.trials.astype("<u4").tobytes())


def _read_exact(fh, nbytes, path, what):
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(f"{path}: truncated file while reading {what}")
    return buf


def _load_binary(path: Path) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(len(_BINARY_MAGIC))
        if magic != _BINARY_MAGIC:
            raise FormatError(f"{path}: bad magic bytes {magic!r}")
        version, n, m, omega, has_trials = struct.unpack(
            "<IIIIB", _read_exact(fh, 17, path, "header")
        )
        if version != _BINARY_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        coords = np.frombuffer(
            _read_exact(fh, 12 * m, path, "coords"), dtype="<f4"
        ).reshape(m, 3)
        signals = np.frombuffer(
            _read_exact(fh, 4 * n * m, path, "signals"), dtype="<f4"
        ).reshape(n, m)
        labels = np.frombuffer(_read_exact(fh, 2 * n, path, "labels"), dtype="<u2")
        phase = np.frombuffer(_read_exact(fh, n, path, "phase"), dtype="u1")
        trials = None
        if has_trials:
            trials = np.frombuffer(
                _read_exact(fh, 8 * n, path, "trials"), dtype="<u4"
            ).reshape(n, 2)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    d = Dataset(signals, coords, labels, phase, trials)
    if d.n_classes != omega:
        raise DataError(
            f"{path}: header claims {omega} classes, labels span {d.n_classes}"
        )
    return d
