"""Functional neighbourhoods, mesh arc-weight regression and feature assembly.

A neighbourhood is the set of voxels a seed is regressed on; per sample,
the ridge-regularized least-squares weights of that regression (over a
short window of scans) are the mesh features. Concatenating every seed's
weight vector per sample yields the feature matrix, with a column map
tying each column to its (seed, neighbour) arc.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .connectivity import ConnectivitySet, DiscriminativeSet
from .data import Dataset
from .errors import ComputeError, ConfigError, DataError, FormatError

NEIGHBOR_MODES = ("positive", "negative", "threshold-std", "threshold-ent", "euclidean")

_FEATURE_MAGIC = b"FCLRFF1\x00"


@dataclass(frozen=True)
class Neighborhood:
    """Ordered neighbour set of one seed voxel (global indices)."""

    seed: int
    neighbors: tuple
    mode: str

    def __post_init__(self):
        if self.seed in self.neighbors:
            raise DataError("seed cannot be its own neighbour")
        if len(set(self.neighbors)) != len(self.neighbors):
            raise DataError("duplicate neighbours")

    @property
    def order(self) -> int:
        return len(self.neighbors)


@dataclass(frozen=True)
class WindowSpec:
    """How a sample index resolves to the scan window used for regression.

    kind="trial": all scans of the sample's trial.
    kind="sliding": `length` consecutive scans centered at the sample,
    clipped at the series boundaries.
    """

    kind: str = "sliding"
    length: int = 5

    def __post_init__(self):
        if self.kind not in ("trial", "sliding"):
            raise ConfigError(f"unknown window kind {self.kind!r}")
        if self.kind == "sliding" and self.length < 1:
            raise ConfigError("sliding window length must be >= 1")


@dataclass(frozen=True)
class FeatureMatrix:
    """N x K arc-weight matrix with per-column (seed, neighbour) identity."""

    values: np.ndarray
    column_map: tuple
    discarded: tuple = field(default_factory=tuple)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.column_map):
            raise DataError("values shape does not match column map")
        if len(set(self.column_map)) != len(self.column_map):
            raise DataError("column map entries must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# neighbourhood construction

def neighbors_by_sign(
    fc: ConnectivitySet, seed: int, p: int, sign: str = "positive"
) -> Neighborhood:
    """Iteratively pick the p most positively (or negatively) correlated
    patch co-members of the seed; ties go to the lower within-patch index."""
    if sign not in ("positive", "negative"):
        raise ConfigError(f"sign must be positive or negative, got {sign!r}")
    row, j = fc.matrix_for(seed)
    pi = row.shape[0]
    if not (1 <= p <= pi - 1):
        raise ConfigError(f"p={p} out of range for patch of size {pi}")
    coeffs = row[j]
    patch = fc.patching.patches[fc.patching.patch_of(seed) - 1]
    taken = np.zeros(pi, dtype=bool)
    taken[j] = True
    chosen = []
    for _ in range(p):
        masked = np.where(taken, -np.inf if sign == "positive" else np.inf, coeffs)
        k = int(np.argmax(masked) if sign == "positive" else np.argmin(masked))
        taken[k] = True
        chosen.append(int(patch[k]))
    return Neighborhood(seed, tuple(chosen), sign)


def neighbors_by_threshold(
    disc: DiscriminativeSet, seed: int, tau: float
) -> Neighborhood:
    """All patch co-members whose discriminative entry is >= tau."""
    if not (0.0 <= tau <= 1.0 + 1e-12):
        raise ConfigError(f"tau must be in [0,1], got {tau}")
    row, j = disc.matrix_for(seed)
    patch = disc.patching.patches[disc.patching.patch_of(seed) - 1]
    hits = np.flatnonzero(row[j] >= tau)
    hits = hits[hits != j]
    return Neighborhood(seed, tuple(int(patch[k]) for k in hits),
                        f"threshold-{disc.kind}")


def neighbors_by_euclidean(coords: np.ndarray, seed: int, p: int) -> Neighborhood:
    """The p spatially closest voxels; distance ties go to the lower index."""
    coords = np.asarray(coords, dtype=np.float64)
    m = coords.shape[0]
    if not (1 <= p <= m - 1):
        raise ConfigError(f"p={p} out of range for {m} voxels")
    d2 = ((coords - coords[seed]) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(m), d2))
    order = order[order != seed]
    return Neighborhood(seed, tuple(int(k) for k in order[:p]), "euclidean")


def build_neighborhoods(
    mode: str,
    *,
    fc: ConnectivitySet | None = None,
    disc: DiscriminativeSet | None = None,
    coords: np.ndarray | None = None,
    p: int | None = None,
    tau: float | None = None,
) -> dict[int, Neighborhood]:
    """One neighbourhood per voxel under the chosen selection mode.

    Sign modes cap p at each patch's capacity so small patches degrade
    gracefully instead of failing the whole volume.
    """
    if mode in ("positive", "negative"):
        if fc is None or p is None:
            raise ConfigError(f"mode {mode} needs fc and p")
        out = {}
        for patch in fc.patching.patches:
            cap = len(patch) - 1
            for seed in patch:
                seed = int(seed)
                if cap == 0:
                    out[seed] = Neighborhood(seed, (), mode)
                else:
                    out[seed] = neighbors_by_sign(fc, seed, min(p, cap), mode)
        return out
    if mode in ("threshold-std", "threshold-ent"):
        if disc is None or tau is None:
            raise ConfigError(f"mode {mode} needs disc and tau")
        return {
            int(seed): neighbors_by_threshold(disc, int(seed), tau)
            for patch in disc.patching.patches
            for seed in patch
        }
    if mode == "euclidean":
        if coords is None or p is None:
            raise ConfigError("euclidean mode needs coords and p")
        m = len(coords)
        return {
            seed: neighbors_by_euclidean(coords, seed, min(p, m - 1))
            for seed in range(m)
        }
    raise ConfigError(f"unknown neighbour mode {mode!r}")


# ---------------------------------------------------------------------------
# arc-weight regression

def estimate_arc_weights(
    seed_window: np.ndarray,
    neighbor_windows: np.ndarray,
    ridge: float = 0.0,
) -> tuple[np.ndarray, float]:
    """Weights minimizing ||seed - a . neighbours||^2 + ridge ||a||^2.

    Solved through the p x p normal equations with a Cholesky
    factorization; a singular Gram matrix triggers one jittered retry.
    With ridge=0 and fewer scans than neighbours the minimum-norm
    solution is returned. Also returns the residual energy.
    """
    y = np.asarray(seed_window, dtype=np.float64)
    x = np.atleast_2d(np.asarray(neighbor_windows, dtype=np.float64))
    p, r = x.shape
    if y.shape != (r,):
        raise DataError("seed window length does not match neighbour windows")
    if r < 1 or p < 1:
        raise DataError("empty regression problem")
    if not (np.isfinite(y).all() and np.isfinite(x).all()):
        raise DataError("non-finite values in regression inputs")
    if ridge < 0:
        raise ConfigError("ridge must be nonnegative")

    if ridge == 0.0 and r < p:
        weights = np.linalg.pinv(x.T) @ y
    else:
        gram = x @ x.T
        rhs = x @ y
        trace = float(np.trace(gram))
        lam = ridge
        try:
            weights = cho_solve(cho_factor(gram + lam * np.eye(p), lower=True), rhs)
        except np.linalg.LinAlgError:
            lam = max(lam, 1e-10 * trace / p) if trace > 0 else max(lam, 1e-10)
            try:
                weights = cho_solve(
                    cho_factor(gram + lam * np.eye(p), lower=True), rhs
                )
            except np.linalg.LinAlgError as exc:
                raise ComputeError(
                    f"normal equations not positive definite after jitter: {exc}"
                ) from exc
    resid = y - weights @ x
    return weights, float(resid @ resid)


def _resolve_windows(d: Dataset, spec: WindowSpec) -> list[tuple]:
    """Per-sample window keys: ("s", start, stop) or ("t", row, row, ...)."""
    n = d.n_scans
    if spec.kind == "trial":
        if d.trials is None:
            raise DataError("trial windows need a trial layout")
        keys = []
        for i in range(n):
            tid = d.trials[i, 0]
            rows = np.flatnonzero(d.trials[:, 0] == tid)
            keys.append(("t",) + tuple(int(r) for r in rows))
        return keys
    r = min(spec.length, n)
    half = r // 2
    keys = []
    for i in range(n):
        start = min(max(i - half, 0), n - r)
        keys.append(("s", start, start + r))
    return keys


def _window_rows(key) -> np.ndarray:
    if key[0] == "s":
        return np.arange(key[1], key[2])
    return np.array(key[1:], dtype=np.int64)


def default_window(d: Dataset) -> WindowSpec:
    return WindowSpec("trial") if d.trials is not None else WindowSpec("sliding", 5)


def extract_fc_lrf(
    d: Dataset,
    neighborhoods: dict[int, Neighborhood],
    window: WindowSpec | None = None,
    ridge: float | None = None,
) -> FeatureMatrix:
    """Assemble the arc-weight feature matrix (one row per sample).

    Voxels with empty neighbourhoods are discarded; the column map is a
    pure function of the neighbourhoods, so train and test extractions
    share an identical feature space. ridge=None applies the adaptive
    default 1e-8 * trace(Gram)/p per regression.
    """
    if window is None:
        window = default_window(d)
    retained = sorted(j for j, nb in neighborhoods.items() if nb.order > 0)
    discarded = tuple(sorted(j for j, nb in neighborhoods.items() if nb.order == 0))
    if not retained:
        raise DataError("no features retained: all neighbourhoods are empty")
    for j in retained:
        if not (0 <= j < d.n_voxels):
            raise DataError(f"neighbourhood seed {j} outside dataset")
    column_map = tuple(
        (j, k) for j in retained for k in neighborhoods[j].neighbors
    )
    col_start = {}
    pos = 0
    for j in retained:
        col_start[j] = pos
        pos += neighborhoods[j].order

    keys = _resolve_windows(d, window)
    values = np.empty((d.n_scans, pos))
    cache: dict = {}
    for i, key in enumerate(keys):
        row = cache.get(key)
        if row is None:
            rows = _window_rows(key)
            row = np.empty(pos)
            for j in retained:
                nb = neighborhoods[j]
                seed_w = d.signals[rows, j]
                nbr_w = d.signals[np.ix_(rows, np.array(nb.neighbors))].T
                if ridge is None:
                    gram_trace = float((nbr_w * nbr_w).sum())
                    lam = 1e-8 * gram_trace / nb.order
                else:
                    lam = ridge
                w, _ = estimate_arc_weights(seed_w, nbr_w, lam)
                row[col_start[j] : col_start[j] + nb.order] = w
            cache[key] = row
        values[i] = row
    return FeatureMatrix(values, column_map, discarded)


def neighborhood_ssd(d: Dataset, seed: int, neighborhood: Neighborhood) -> np.ndarray:
    """Per-sample sum of squared intensity differences seed vs neighbours."""
    if neighborhood.order == 0:
        raise DataError("empty neighbourhood")
    nbr = np.array(neighborhood.neighbors)
    diff = d.signals[:, [seed]] - d.signals[:, nbr]
    return (diff**2).sum(axis=1)


# ---------------------------------------------------------------------------
# serialization

def save_features(fm: FeatureMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<II", fm.n_samples, fm.n_features))
        fh.write(fm.values.astype("<f4").tobytes())
        for seed, nbr in fm.column_map:
            fh.write(struct.pack("<II", seed, nbr))


def load_features(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(_FEATURE_MAGIC))
        if magic != _FEATURE_MAGIC:
            raise FormatError(f"{path}: bad feature magic {magic!r}")
        n, k = struct.unpack("<II", fh.read(8))
        values = np.frombuffer(fh.read(4 * n * k), dtype="<f4").reshape(n, k)
        pairs = []
        for _ in range(k):
            pairs.append(struct.unpack("<II", fh.read(8)))
    return FeatureMatrix(values, tuple(pairs))


def save_features_csv(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"v{s}_n{t}" for s, t in fm.column_map])
        for row in fm.values:
            w.writerow([format(v, ".17g") for v in row])


def save_neighborhoods_csv(neighborhoods: dict[int, Neighborhood], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "neighbor", "rank", "mode"])
        for seed in sorted(neighborhoods):
            nb = neighborhoods[seed]
            for rank, k in enumerate(nb.neighbors):
                w.writerow([seed, k, rank, nb.mode])
