"""Voxel partitioning into spatially coherent local patches.

The main partitioner is self-tuning spectral clustering on coordinate
distance (locally scaled Gaussian affinity, symmetric-normalized graph
Laplacian, seeded k-means on the embedding); a plain coordinate k-means
is offered as a cheap fallback. Above 4096 voxels the volume is tiled
by recursive median splits and each tile is clustered independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import squareform, pdist

from .errors import ComputeError, ConfigError, DataError

DENSE_EIG_LIMIT = 4096
DEFAULT_K_SCALE = 7


@dataclass(frozen=True)
class Patching:
    """Disjoint assignment of M voxels to C nonempty patches.

    assignment: (M,) patch ids in 1..C
    patches: per-patch sorted arrays of global voxel indices; the position
      of a voxel in its patch array is its within-patch (translated) index.
    """

    assignment: np.ndarray
    patches: tuple

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        assignment.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)

    @classmethod
    def from_assignment(cls, assignment: np.ndarray) -> "Patching":
        assignment = np.asarray(assignment, dtype=np.int64)
        ids = np.unique(assignment)
        if ids[0] < 1 or ids[-1] != len(ids):
            raise DataError("patch ids must be contiguous starting at 1")
        patches = tuple(
            np.flatnonzero(assignment == c) for c in range(1, len(ids) + 1)
        )
        return cls(assignment, patches)

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(p) for p in self.patches])

    def patch_of(self, voxel: int) -> int:
        return int(self.assignment[voxel])

    def local_index(self, voxel: int) -> tuple[int, int]:
        """Map a global voxel index to (patch id, within-patch index)."""
        m = self.patch_of(voxel)
        j = int(np.searchsorted(self.patches[m - 1], voxel))
        return m, j

    def pair_count(self) -> int:
        """Number of within-patch voxel pairs (connectivity work)."""
        return int(sum(s * (s - 1) // 2 for s in self.sizes))

    def compactness(self, coords: np.ndarray) -> float:
        """Mean within-patch pairwise Euclidean distance."""
        total, pairs = 0.0, 0
        for idx in self.patches:
            if len(idx) < 2:
                continue
            total += pdist(coords[idx]).sum()
            pairs += len(idx) * (len(idx) - 1) // 2
        return total / pairs if pairs else 0.0


def build_local_scaling_affinity(coords: np.ndarray, k_scale: int = DEFAULT_K_SCALE) -> np.ndarray:
    """Locally scaled Gaussian affinity exp(-d_ij^2 / (sigma_i sigma_j)).

    sigma_i is the distance from voxel i to its k_scale-th nearest
    neighbour. Duplicate coordinates make sigma collapse to zero and are
    rejected.
    """
    coords = np.asarray(coords, dtype=np.float64)
    m = coords.shape[0]
    if m < 2:
        raise DataError("affinity needs at least 2 voxels")
    if not (1 <= k_scale < m):
        raise ConfigError(f"k_scale must be in [1, {m - 1}]")
    dist = squareform(pdist(coords))
    # k_scale-th neighbour excluding self: column k_scale of the row-sorted matrix
    sigma = np.sort(dist, axis=1)[:, k_scale]
    if np.any(sigma == 0.0):
        bad = np.flatnonzero(sigma == 0.0)
        pairs = []
        for i in bad[:5]:
            twins = np.flatnonzero((dist[i] == 0.0) & (np.arange(m) != i))
            pairs.append((int(i), twins.tolist()))
        raise DataError(f"duplicate voxel coordinates (voxel, twins): {pairs}")
    aff = np.exp(-(dist**2) / np.outer(sigma, sigma))
    np.fill_diagonal(aff, 1.0)
    return (aff + aff.T) / 2.0


def _kmeans_pp_init(x: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((c, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, c):
        total = d2.sum()
        if total <= 0:
            centers[i] = x[rng.integers(n)]
        else:
            centers[i] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, float]:
    n, c = x.shape[0], centers.shape[0]
    assign = np.full(n, -1)
    xsq = (x**2).sum(axis=1)
    for _ in range(max_iter):
        d2 = xsq[:, None] - 2.0 * x @ centers.T + (centers**2).sum(axis=1)
        new_assign = np.argmin(d2, axis=1)
        # empty-cluster repair: reseed at the point farthest from its center
        for cid in range(c):
            if not np.any(new_assign == cid):
                far = int(np.argmax(d2[np.arange(n), new_assign]))
                new_assign[far] = cid
                d2[far, :] = np.inf
                d2[far, cid] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for cid in range(c):
            centers[cid] = x[assign == cid].mean(axis=0)
    d2 = xsq[:, None] - 2.0 * x @ centers.T + (centers**2).sum(axis=1)
    inertia = float(d2[np.arange(n), assign].sum())
    return assign, inertia


def _kmeans(x: np.ndarray, c: int, seed: int, n_init: int = 10, max_iter: int = 100) -> np.ndarray:
    """Seeded k-means++ with empty-cluster repair; returns 0-based labels."""
    if c == 1:
        return np.zeros(x.shape[0], dtype=np.int64)
    if c == x.shape[0]:
        return np.arange(x.shape[0], dtype=np.int64)
    rng = np.random.default_rng(seed)
    best_assign, best_inertia = None, np.inf
    for _ in range(n_init):
        centers = _kmeans_pp_init(x, c, rng)
        assign, inertia = _lloyd(x, centers.copy(), max_iter)
        if inertia < best_inertia - 1e-12:
            best_assign, best_inertia = assign, inertia
    return best_assign


def _canonical_patching(labels0: np.ndarray) -> Patching:
    """Relabel clusters by first occurrence so ids are order-canonical."""
    remap, next_id = {}, 1
    out = np.empty(len(labels0), dtype=np.int64)
    for i, lab in enumerate(labels0):
        if lab not in remap:
            remap[lab] = next_id
            next_id += 1
        out[i] = remap[lab]
    return Patching.from_assignment(out)


def spectral_partition(affinity: np.ndarray, c: int, seed: int = 0) -> Patching:
    """Normalized spectral clustering of a symmetric nonnegative affinity."""
    affinity = np.asarray(affinity, dtype=np.float64)
    m = affinity.shape[0]
    if affinity.shape != (m, m):
        raise DataError("affinity must be square")
    if not np.allclose(affinity, affinity.T, atol=1e-12):
        raise DataError("affinity must be symmetric")
    if np.any(affinity < 0):
        raise DataError("affinity must be nonnegative")
    if not (1 <= c <= m):
        raise ConfigError(f"C must be in [1, {m}]")
    if c == 1:
        return Patching.from_assignment(np.ones(m, dtype=np.int64))
    w = affinity.copy()
    np.fill_diagonal(w, 0.0)
    deg = w.sum(axis=1)
    deg[deg == 0.0] = 1.0  # isolated voxel: embeds at the origin
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(m) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    try:
        eigvals, eigvecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise ComputeError(f"eigendecomposition failed: {exc}") from exc
    emb = eigvecs[:, :c]
    norms = np.linalg.norm(emb, axis=1)
    norms[norms == 0.0] = 1.0
    emb = emb / norms[:, None]
    labels0 = _kmeans(emb, c, seed)
    return _canonical_patching(labels0)


def kmeans_partition(coords: np.ndarray, c: int, seed: int = 0) -> Patching:
    """Squared-Euclidean k-means directly on voxel coordinates."""
    coords = np.asarray(coords, dtype=np.float64)
    m = coords.shape[0]
    if not (1 <= c <= m):
        raise ConfigError(f"C must be in [1, {m}]")
    return _canonical_patching(_kmeans(coords, c, seed))


def _median_split_tiles(coords: np.ndarray, idx: np.ndarray, limit: int) -> list[np.ndarray]:
    if len(idx) <= limit:
        return [idx]
    sub = coords[idx]
    axis = int(np.argmax(np.ptp(sub, axis=0)))
    order = idx[np.argsort(sub[:, axis], kind="stable")]
    half = len(order) // 2
    return _median_split_tiles(coords, order[:half], limit) + _median_split_tiles(
        coords, order[half:], limit
    )


def spectral_partition_coords(
    coords: np.ndarray,
    c: int,
    k_scale: int = DEFAULT_K_SCALE,
    seed: int = 0,
) -> Patching:
    """Self-tuning spectral partition of voxel coordinates.

    Dense eigendecomposition up to DENSE_EIG_LIMIT voxels; larger volumes
    are tiled by recursive median splits, each tile gets a proportional
    share of C and is clustered independently.
    """
    coords = np.asarray(coords, dtype=np.float64)
    m = coords.shape[0]
    if not (1 <= c <= m):
        raise ConfigError(f"C must be in [1, {m}]")
    if m <= DENSE_EIG_LIMIT:
        aff = build_local_scaling_affinity(coords, min(k_scale, m - 1))
        return spectral_partition(aff, c, seed)
    tiles = _median_split_tiles(coords, np.arange(m), DENSE_EIG_LIMIT)
    if c < len(tiles):
        raise ConfigError(
            f"C={c} too small for blocked clustering of {m} voxels "
            f"({len(tiles)} tiles); need C >= {len(tiles)}"
        )
    # proportional allocation, largest remainders, at least 1 per tile
    sizes = np.array([len(t) for t in tiles], dtype=np.float64)
    quota = sizes / m * c
    alloc = np.maximum(np.floor(quota).astype(int), 1)
    while alloc.sum() > c:
        alloc[int(np.argmax(alloc))] -= 1
    rem = quota - alloc
    while alloc.sum() < c:
        i = int(np.argmax(rem))
        alloc[i] += 1
        rem[i] = -np.inf
    assignment = np.empty(m, dtype=np.int64)
    offset = 0
    for tile, c_tile in zip(tiles, alloc):
        sub = spectral_partition_coords(coords[tile], int(c_tile), k_scale, seed)
        assignment[tile] = sub.assignment + offset
        offset += sub.n_patches
    return Patching.from_assignment(assignment)
