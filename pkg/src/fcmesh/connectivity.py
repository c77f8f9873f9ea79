"""Within-patch functional connectivity and discriminative matrices.

Correlation of two voxel time series comes in three variants: zero-order
(full-series Pearson), peak (Pearson over per-trial maxima) and scan
(Pearson over the values at a fixed within-trial scan). Per-class
connectivity stacks feed the Std / Ent discriminative matrices that drive
threshold-adaptive neighbourhood selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, ZeroVarianceError
from .patching import Patching

MEASURES = ("zero-order", "peak", "scan")


@dataclass(frozen=True)
class ConnectivitySet:
    """Per-patch symmetric correlation matrices.

    matrices[m] is the (pi_m, pi_m) correlation matrix of patch m+1, rows
    ordered by the patch's sorted global voxel indices.
    """

    patching: Patching
    matrices: tuple
    measure: str
    class_label: int | None = None
    pair_evaluations: int = 0

    def matrix_for(self, voxel: int) -> tuple[np.ndarray, int]:
        """(patch matrix, within-patch index) for a global voxel index."""
        m, j = self.patching.local_index(voxel)
        return self.matrices[m - 1], j


@dataclass(frozen=True)
class DiscriminativeSet:
    """Per-patch Std or Ent matrices (nonnegative, zero diagonal)."""

    patching: Patching
    matrices: tuple
    kind: str  # std | ent
    n_classes: int
    bins: int | None = None

    def matrix_for(self, voxel: int) -> tuple[np.ndarray, int]:
        m, j = self.patching.local_index(voxel)
        return self.matrices[m - 1], j


# ---------------------------------------------------------------------------
# pairwise correlation measures

def zero_order_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson coefficient cov(x,y) / sqrt(var(x) var(y)).

    Population covariance/variance (divisor T) in both numerator and
    denominator, so the ratio is estimator-invariant.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("series must be 1-D and equal length")
    if len(x) < 2:
        raise DataError("correlation needs at least 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(xc @ xc)
    vy = float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        raise ZeroVarianceError("zero-variance series in correlation")
    r = float(xc @ yc) / np.sqrt(vx * vy)
    return float(np.clip(r, -1.0, 1.0))


def _trial_groups(trials: np.ndarray) -> list[np.ndarray]:
    """Row indices per trial, ordered by trial id."""
    ids = np.unique(trials[:, 0])
    return [np.flatnonzero(trials[:, 0] == t) for t in ids]


def peak_series(x: np.ndarray, trials: np.ndarray) -> np.ndarray:
    """Per-trial maximum signal value (the activation peak)."""
    return np.array([x[rows].max() for rows in _trial_groups(trials)])


def scan_series(x: np.ndarray, trials: np.ndarray, scan_index: int) -> np.ndarray:
    """Per-trial value at within-trial position scan_index."""
    out = []
    for rows in _trial_groups(trials):
        hit = rows[trials[rows, 1] == scan_index]
        if len(hit) != 1:
            tid = int(trials[rows[0], 0])
            raise DataError(f"trial {tid} has no scan at index {scan_index}")
        out.append(x[hit[0]])
    return np.array(out)


def _require_trials(trials, what: str) -> np.ndarray:
    if trials is None:
        raise DataError(f"{what} requires a trial layout")
    trials = np.asarray(trials)
    if len(np.unique(trials[:, 0])) < 2:
        raise DataError(f"{what} requires at least 2 trials")
    return trials


def peak_correlation(x, y, trials) -> float:
    """Pearson correlation of the per-trial activation peaks."""
    trials = _require_trials(trials, "peak correlation")
    return zero_order_correlation(peak_series(np.asarray(x), trials),
                                  peak_series(np.asarray(y), trials))


def scan_correlation(x, y, scan_index: int, trials) -> float:
    """Pearson correlation of per-trial values at one scan of interest."""
    trials = _require_trials(trials, "scan correlation")
    return zero_order_correlation(
        scan_series(np.asarray(x), trials, scan_index),
        scan_series(np.asarray(y), trials, scan_index),
    )


# ---------------------------------------------------------------------------
# per-patch connectivity

def _measure_series(d: Dataset, measure: str, scan_index: int | None) -> np.ndarray:
    """(T', M) matrix whose columns are the series fed to Pearson."""
    if measure == "zero-order":
        return d.signals
    trials = _require_trials(d.trials, f"{measure} correlation")
    groups = _trial_groups(trials)
    if measure == "peak":
        return np.vstack([d.signals[rows].max(axis=0) for rows in groups])
    if measure == "scan":
        if scan_index is None:
            raise ConfigError("scan correlation needs scan_index")
        rows_per_trial = []
        for rows in groups:
            hit = rows[trials[rows, 1] == scan_index]
            if len(hit) != 1:
                tid = int(trials[rows[0], 0])
                raise DataError(f"trial {tid} has no scan at index {scan_index}")
            rows_per_trial.append(hit[0])
        return d.signals[rows_per_trial]
    raise ConfigError(f"unknown correlation measure {measure!r}")


def _patch_correlation(series: np.ndarray, idx: np.ndarray, patch_id: int) -> np.ndarray:
    """Correlation matrix of the columns `idx` of `series` (exact symmetry)."""
    sub = series[:, idx]
    t = sub.shape[0]
    if t < 2:
        raise DataError(f"patch {patch_id}: fewer than 2 samples for correlation")
    centered = sub - sub.mean(axis=0)
    norms = np.linalg.norm(centered, axis=0)
    dead = np.flatnonzero(norms == 0.0)
    if len(dead):
        named = [(patch_id, int(idx[v])) for v in dead]
        raise ZeroVarianceError(
            f"zero-variance series, (patch, voxel) pairs: {named}"
        )
    z = centered / norms
    fc = z.T @ z
    fc = np.triu(fc, 1)  # mirror the upper triangle for exact symmetry
    fc = np.clip(fc, -1.0, 1.0)
    fc = fc + fc.T
    np.fill_diagonal(fc, 1.0)
    return fc


def within_cluster_fc(
    d: Dataset,
    patching: Patching,
    measure: str = "zero-order",
    scan_index: int | None = None,
    class_label: int | None = None,
) -> ConnectivitySet:
    """One correlation matrix per patch over the dataset's full series.

    pair_evaluations counts the unique within-patch pairs actually
    correlated, sum of pi_m (pi_m - 1) / 2.
    """
    if len(patching.assignment) != d.n_voxels:
        raise DataError("patching and dataset disagree on voxel count")
    series = _measure_series(d, measure, scan_index)
    mats = []
    pairs = 0
    for m, idx in enumerate(patching.patches, start=1):
        mats.append(_patch_correlation(series, idx, m))
        pairs += len(idx) * (len(idx) - 1) // 2
    return ConnectivitySet(patching, tuple(mats), measure, class_label, pairs)


def per_class_fc(
    d: Dataset,
    patching: Patching,
    measure: str = "zero-order",
    scan_index: int | None = None,
) -> list[ConnectivitySet]:
    """Connectivity sets computed on each class's row subset, omega = 1..n."""
    out = []
    for omega in range(1, d.n_classes + 1):
        rows = np.flatnonzero(d.labels == omega)
        if len(rows) < 2:
            raise DataError(f"class {omega} has fewer than 2 scans")
        sub = d.take_rows(rows)
        if measure != "zero-order":
            _require_trials(sub.trials, f"class {omega} {measure} correlation")
        out.append(
            within_cluster_fc(sub, patching, measure, scan_index, class_label=omega)
        )
    return out


def _check_same_patching(fc_by_class: list[ConnectivitySet]) -> Patching:
    if len(fc_by_class) < 2:
        raise DataError("discriminative matrices need at least 2 classes")
    ref = fc_by_class[0].patching
    for fc in fc_by_class[1:]:
        if fc.patching is not ref and not np.array_equal(
            fc.patching.assignment, ref.assignment
        ):
            raise DataError("connectivity sets use different patchings")
        if fc.measure != fc_by_class[0].measure:
            raise DataError("connectivity sets use different measures")
    return ref


def discriminative_std(fc_by_class: list[ConnectivitySet]) -> DiscriminativeSet:
    """Per-pair sample standard deviation (divisor omega-1) across classes."""
    patching = _check_same_patching(fc_by_class)
    mats = []
    for m in range(patching.n_patches):
        stack = np.stack([fc.matrices[m] for fc in fc_by_class])
        std = stack.std(axis=0, ddof=1)
        std[np.ptp(stack, axis=0) == 0.0] = 0.0  # exact zero for zero dispersion
        np.fill_diagonal(std, 0.0)
        mats.append(std)
    return DiscriminativeSet(patching, tuple(mats), "std", len(fc_by_class))


def discriminative_entropy(fc_by_class: list[ConnectivitySet], bins: int = 8) -> DiscriminativeSet:
    """Normalized entropy of per-class coefficients over equal-width bins.

    Coefficients are histogrammed into `bins` equal-width bins spanning
    [-1, 1]; entropy (base 2) over nonempty bins is divided by
    log2(min(n_classes, bins)) so entries lie in [0, 1].
    """
    if bins < 2:
        raise ConfigError("entropy needs at least 2 bins")
    patching = _check_same_patching(fc_by_class)
    omega = len(fc_by_class)
    norm = np.log2(min(omega, bins))
    mats = []
    for m in range(patching.n_patches):
        stack = np.stack([fc.matrices[m] for fc in fc_by_class])
        binned = np.clip(((stack + 1.0) / 2.0 * bins).astype(np.int64), 0, bins - 1)
        counts = np.stack([(binned == b).sum(axis=0) for b in range(bins)])
        p = counts / omega
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
        ent = terms.sum(axis=0) / norm
        np.fill_diagonal(ent, 0.0)
        mats.append(ent)
    return DiscriminativeSet(patching, tuple(mats), "ent", omega, bins)
