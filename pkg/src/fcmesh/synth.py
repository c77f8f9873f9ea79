"""Synthetic datasets with planted class-dependent connectivity.

Voxels are grouped into spatially separated communities; within a
community, every pair's expected correlation under class w equals the
planted coupling coupling[w][g] (equicorrelated construction, Cholesky
factor of (1-c) I + c 11^T). Optional extras: a per-(class, community)
mean shift so raw-intensity baselines are tunable, measurement noise that
attenuates the correlations, and a planted mesh whose seed voxels are
noisy linear combinations of known neighbours with known weights.

Also hosts the brute-force oracles used to validate the fast paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PHASE_ENCODING, PHASE_RETRIEVAL, Dataset
from .errors import ConfigError, DataError
from .connectivity import zero_order_correlation


@dataclass(frozen=True)
class SynthSpec:
    n_voxels: int = 100
    n_communities: int = 4
    n_classes: int = 2
    trials_per_class: int = 6  # per phase
    scans_per_trial: int = 8
    coupling: tuple = ()  # (n_classes, n_communities) nested tuple
    noise_sigma: float = 0.0  # extra independent noise on every sample
    mean_shift_scale: float = 0.0  # per-(class, community) mean offsets
    mesh_order: int = 0  # planted mesh neighbours per community seed voxel
    mesh_snr: float = 10.0
    blob_spacing: float = 10.0
    blob_jitter: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be nonnegative")
        if self.n_communities < 1 or self.n_voxels < self.n_communities:
            raise ConfigError("invalid community count")
        c = np.asarray(self.coupling, dtype=np.float64)
        if c.shape != (self.n_classes, self.n_communities):
            raise ConfigError(
                f"coupling must be {self.n_classes}x{self.n_communities}"
            )
        if np.any(np.abs(c) > 1.0):
            raise ConfigError("coupling magnitudes must be in [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    communities: np.ndarray  # (M,) ids in 1..G
    expected_correlation: np.ndarray  # (n_classes, G), after noise attenuation
    mesh_weights: dict = field(default_factory=dict)  # seed -> (neighbors, weights)

    def to_dict(self) -> dict:
        return {
            "communities": self.communities.tolist(),
            "expected_correlation": self.expected_correlation.tolist(),
            "mesh_weights": {
                str(s): {"neighbors": list(map(int, nb)), "weights": list(map(float, w))}
                for s, (nb, w) in self.mesh_weights.items()
            },
        }


def _community_sizes(m: int, g: int) -> np.ndarray:
    sizes = np.full(g, m // g)
    sizes[: m % g] += 1
    return sizes


def _equicorrelated(rng, c: float, n_vox: int, n_rows: int) -> np.ndarray:
    """(n_rows, n_vox) unit-variance draws with pairwise correlation c."""
    if c >= 0.0:
        f = rng.standard_normal((n_rows, 1))
        e = rng.standard_normal((n_rows, n_vox))
        return np.sqrt(c) * f + np.sqrt(1.0 - c) * e
    lam_min = 1.0 + (n_vox - 1) * c
    if lam_min <= 0.0:
        raise DataError(
            f"coupling {c} infeasible for community of {n_vox} voxels "
            "(implied covariance not positive definite)"
        )
    cov = np.full((n_vox, n_vox), c)
    np.fill_diagonal(cov, 1.0)
    chol = np.linalg.cholesky(cov)
    return rng.standard_normal((n_rows, n_vox)) @ chol.T


def _blob_centers(g: int, spacing: float) -> np.ndarray:
    side = int(np.ceil(g ** (1.0 / 3.0)))
    centers = []
    for gx in range(side):
        for gy in range(side):
            for gz in range(side):
                centers.append((gx, gy, gz))
                if len(centers) == g:
                    return np.array(centers, dtype=np.float64) * spacing
    return np.array(centers[:g], dtype=np.float64) * spacing


def generate_synthetic(spec: SynthSpec) -> tuple[Dataset, GroundTruth]:
    """Draw a dataset (both phases) and its generating ground truth."""
    rng = np.random.default_rng(spec.seed)
    m, g, omega = spec.n_voxels, spec.n_communities, spec.n_classes
    coupling = np.asarray(spec.coupling, dtype=np.float64)
    sizes = _community_sizes(m, g)
    communities = np.repeat(np.arange(1, g + 1), sizes)
    members = [np.flatnonzero(communities == gid + 1) for gid in range(g)]

    centers = _blob_centers(g, spec.blob_spacing)
    coords = centers[communities - 1] + rng.normal(0, spec.blob_jitter, (m, 3))

    mean_shift = (
        rng.normal(0.0, 1.0, (omega, g)) * spec.mean_shift_scale
        if spec.mean_shift_scale > 0
        else np.zeros((omega, g))
    )

    # trial schedule: per phase, trials of every class, order shuffled
    scans_pt = spec.scans_per_trial
    rows_per_phase = omega * spec.trials_per_class * scans_pt
    n = 2 * rows_per_phase
    signals = np.empty((n, m))
    labels = np.empty(n, dtype=np.int64)
    phase = np.empty(n, dtype=np.uint8)
    trials = np.empty((n, 2), dtype=np.int64)

    mesh_weights: dict = {}
    if spec.mesh_order > 0:
        for gid in range(g):
            vox = members[gid]
            if len(vox) < spec.mesh_order + 1:
                raise ConfigError("community too small for planted mesh order")
            seed_vox = int(vox[0])
            nbrs = [int(v) for v in vox[1 : spec.mesh_order + 1]]
            w = rng.uniform(0.5, 1.5, spec.mesh_order) * rng.choice(
                [-1.0, 1.0], spec.mesh_order
            )
            mesh_weights[seed_vox] = (nbrs, w)

    row = 0
    trial_id = 1
    for ph in (PHASE_ENCODING, PHASE_RETRIEVAL):
        schedule = np.repeat(np.arange(1, omega + 1), spec.trials_per_class)
        schedule = rng.permutation(schedule)
        for cls in schedule:
            block = np.empty((scans_pt, m))
            for gid in range(g):
                vox = members[gid]
                z = _equicorrelated(rng, coupling[cls - 1, gid], len(vox), scans_pt)
                block[:, vox] = z + mean_shift[cls - 1, gid]
            if spec.noise_sigma > 0:
                block += rng.normal(0.0, spec.noise_sigma, block.shape)
            for seed_vox, (nbrs, w) in mesh_weights.items():
                mix = block[:, nbrs] @ w
                noise_std = np.sqrt(max(mix.var(), 1e-12) / spec.mesh_snr)
                block[:, seed_vox] = mix + rng.normal(0.0, noise_std, scans_pt)
            sl = slice(row, row + scans_pt)
            signals[sl] = block
            labels[sl] = cls
            phase[sl] = ph
            trials[sl, 0] = trial_id
            trials[sl, 1] = np.arange(scans_pt)
            row += scans_pt
            trial_id += 1

    attenuation = 1.0 / (1.0 + spec.noise_sigma**2)
    truth = GroundTruth(communities, coupling * attenuation, mesh_weights)
    return Dataset(signals, coords, labels, phase, trials), truth


# ---------------------------------------------------------------------------
# brute-force oracles

def oracle_least_squares(seed_window, neighbor_windows) -> np.ndarray:
    """Minimum-norm least squares through the explicit pseudo-inverse."""
    x = np.atleast_2d(np.asarray(neighbor_windows, dtype=np.float64))
    y = np.asarray(seed_window, dtype=np.float64)
    return np.linalg.pinv(x.T) @ y


def oracle_all_pairs_correlation(d: Dataset) -> np.ndarray:
    """Full M x M Pearson matrix by direct double loop (small M only)."""
    if d.n_voxels > 200:
        raise ConfigError("oracle limited to 200 voxels")
    m = d.n_voxels
    out = np.eye(m)
    for j in range(m):
        for k in range(j + 1, m):
            r = zero_order_correlation(d.signals[:, j], d.signals[:, k])
            out[j, k] = out[k, j] = r
    return out
