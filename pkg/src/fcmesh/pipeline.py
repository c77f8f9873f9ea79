"""End-to-end run: load -> preprocess -> patch -> connectivity -> mesh ->
classify -> report, plus the parameter-sweep driver.

Configuration is a JSON-friendly dict; see PipelineConfig. Artifacts are
written atomically beside a manifest carrying the config hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, asdict
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (
    column_fingerprint,
    cross_validate,
    evaluate,
    predict,
    train_knn,
    train_linear_svm,
)
from .connectivity import (
    MEASURES,
    discriminative_entropy,
    discriminative_std,
    per_class_fc,
    within_cluster_fc,
)
from .data import (
    Dataset,
    SplitSpec,
    detrend_linear,
    load_dataset,
    shift_onsets,
    split_train_test,
)
from .errors import ConfigError
from .mesh import (
    WindowSpec,
    build_neighborhoods,
    default_window,
    extract_fc_lrf,
    save_features,
    save_neighborhoods_csv,
)
from .patching import (
    DEFAULT_K_SCALE,
    Patching,
    kmeans_partition,
    spectral_partition_coords,
)

MODE_ALIASES = {
    "P": "positive",
    "N": "negative",
    "S": "threshold-std",
    "E": "threshold-ent",
    "euclidean": "euclidean",
}


@dataclass
class PipelineConfig:
    dataset: str = ""
    format: str = "csv"  # csv | binary
    allow_constant: bool = False
    onset_lag: int = 0
    detrend: bool = True
    split_mode: str = "by-phase"  # by-phase | by-fraction
    split_fraction: float | None = None
    partitioner: str = "spectral"  # spectral | kmeans
    n_patches: int = 16
    k_scale: int = DEFAULT_K_SCALE
    seed: int = 0
    measure: str = "zero-order"
    scan_index: int | None = None
    neighbor_mode: str = "S"  # P | N | S | E | euclidean
    p: int | None = None
    tau: float | None = None
    entropy_bins: int = 8
    window_kind: str | None = None  # None = auto, else trial | sliding
    window_length: int = 5
    ridge: float | None = None
    classifier: str = "knn"  # knn | svm
    cv_grid: dict = field(default_factory=lambda: {"k": [1, 3, 5]})
    cv_folds: int = 3
    output_dir: str = "fcmesh-out"

    def validate(self) -> None:
        if self.neighbor_mode not in MODE_ALIASES:
            raise ConfigError(f"unknown neighbour mode {self.neighbor_mode!r}")
        mode = MODE_ALIASES[self.neighbor_mode]
        needs_tau = mode.startswith("threshold")
        if needs_tau:
            if self.tau is None or self.p is not None:
                raise ConfigError(f"mode {self.neighbor_mode} needs tau (and not p)")
            if not (0.0 <= self.tau <= 1.0):
                raise ConfigError(f"tau must be in [0,1], got {self.tau}")
        else:
            if self.p is None or self.tau is not None:
                raise ConfigError(f"mode {self.neighbor_mode} needs p (and not tau)")
            if self.p < 1:
                raise ConfigError("p must be >= 1")
        if self.measure not in MEASURES:
            raise ConfigError(f"unknown measure {self.measure!r}")
        if self.measure == "scan" and self.scan_index is None:
            raise ConfigError("scan measure needs scan_index")
        if self.partitioner not in ("spectral", "kmeans"):
            raise ConfigError(f"unknown partitioner {self.partitioner!r}")
        if self.classifier not in ("knn", "svm"):
            raise ConfigError(f"unknown classifier {self.classifier!r}")
        if self.n_patches < 1:
            raise ConfigError("n_patches must be >= 1")
        if self.onset_lag < 0:
            raise ConfigError("onset_lag must be nonnegative")

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def atomic_write_bytes(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _partition(cfg: PipelineConfig, coords: np.ndarray) -> Patching:
    if cfg.partitioner == "spectral":
        return spectral_partition_coords(coords, cfg.n_patches, cfg.k_scale, cfg.seed)
    return kmeans_partition(coords, cfg.n_patches, cfg.seed)


def _window(cfg: PipelineConfig, d: Dataset) -> WindowSpec:
    if cfg.window_kind is None:
        return default_window(d)
    return WindowSpec(cfg.window_kind, cfg.window_length)


def build_mode_neighborhoods(cfg: PipelineConfig, train: Dataset, patching: Patching):
    """Neighbourhoods from training-phase connectivity for the config mode."""
    mode = MODE_ALIASES[cfg.neighbor_mode]
    if mode in ("positive", "negative"):
        fc = within_cluster_fc(train, patching, cfg.measure, cfg.scan_index)
        return build_neighborhoods(mode, fc=fc, p=cfg.p)
    if mode == "euclidean":
        return build_neighborhoods(mode, coords=train.coords, p=cfg.p)
    by_class = per_class_fc(train, patching, cfg.measure, cfg.scan_index)
    if mode == "threshold-std":
        disc = discriminative_std(by_class)
    else:
        disc = discriminative_entropy(by_class, cfg.entropy_bins)
    return build_neighborhoods(mode, disc=disc, tau=cfg.tau)


def run_pipeline(
    cfg: PipelineConfig,
    dataset: Dataset | None = None,
    write: bool = True,
) -> dict:
    """Execute the full pipeline; returns a result summary dict.

    `dataset` short-circuits the load stage (used by sweeps and tests).
    """
    cfg.validate()
    stage = "load"
    try:
        d = dataset if dataset is not None else load_dataset(
            cfg.dataset, cfg.format, cfg.allow_constant
        )
        stage = "shift"
        d = shift_onsets(d, cfg.onset_lag)
        stage = "detrend"
        if cfg.detrend:
            d = detrend_linear(d)
        stage = "split"
        spec = SplitSpec(cfg.split_mode, cfg.split_fraction, cfg.seed)
        train, test = split_train_test(d, spec)
        stage = "patching"
        patching = _partition(cfg, d.coords)
        stage = "connectivity"
        neighborhoods = build_mode_neighborhoods(cfg, train, patching)
        stage = "features"
        window = _window(cfg, train)
        f_train = extract_fc_lrf(train, neighborhoods, window, cfg.ridge)
        f_test = extract_fc_lrf(test, neighborhoods, _window(cfg, test), cfg.ridge)
        stage = "cross-validation"
        best, cv_scores = cross_validate(
            f_train, train.labels, cfg.classifier, cfg.cv_grid, cfg.cv_folds, cfg.seed
        )
        stage = "train"
        if cfg.classifier == "knn":
            model = train_knn(f_train, train.labels, best["k"], best["metric"])
        else:
            model = train_linear_svm(
                f_train, train.labels, best["c_reg"], seed=cfg.seed
            )
        stage = "evaluate"
        preds = predict(model, f_test)
        metrics = evaluate(preds, test.labels, n_classes=d.n_classes)
    except Exception as exc:
        raise type(exc)(f"[stage {stage}] {exc}") from exc

    result = {
        "config_hash": cfg.config_hash(),
        "n_train": train.n_scans,
        "n_test": test.n_scans,
        "n_classes": d.n_classes,
        "n_patches": patching.n_patches,
        "patch_sizes": patching.sizes.tolist(),
        "pair_evaluations": patching.pair_count(),
        "n_features": f_train.n_features,
        "discarded_voxels": len(f_train.discarded),
        "best_params": best,
        "cv_scores": cv_scores,
        "metrics": metrics.to_dict(),
        "column_fingerprint": column_fingerprint(f_train.column_map),
    }
    if write:
        _write_artifacts(cfg, result, patching, d, neighborhoods, f_train, f_test)
    return result


def _write_artifacts(cfg, result, patching, d, neighborhoods, f_train, f_test):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = ["voxel,patch"] + [
        f"{j},{patching.assignment[j]}" for j in range(len(patching.assignment))
    ]
    atomic_write_text(out / "patching.csv", "\n".join(rows) + "\n")
    atomic_write_text(
        out / "patching.json",
        json.dumps(
            {
                "n_patches": patching.n_patches,
                "sizes": patching.sizes.tolist(),
                "compactness": patching.compactness(d.coords),
            },
            indent=2,
        ),
    )
    save_neighborhoods_csv(neighborhoods, out / "neighborhoods.csv")
    # feature binaries are written via a temp file for atomicity
    for name, fm in (("features_train.bin", f_train), ("features_test.bin", f_test)):
        tmp = out / (name + ".tmp")
        save_features(fm, tmp)
        os.replace(tmp, out / name)
    atomic_write_text(out / "metrics.json", json.dumps(result["metrics"], indent=2, sort_keys=True))
    _write_metrics_csv(out / "metrics.csv", result)
    atomic_write_text(
        out / "manifest.json",
        json.dumps(
            {
                "config": asdict(cfg),
                "config_hash": result["config_hash"],
                "fcmesh_version": __version__,
                "numpy_version": np.__version__,
            },
            indent=2,
            sort_keys=True,
        ),
    )
    atomic_write_text(out / "result.json", json.dumps(result, indent=2, sort_keys=True))


def _write_metrics_csv(path: Path, result: dict) -> None:
    metrics = result["metrics"]
    lines = ["class,recall,precision"]
    for i, (r, p) in enumerate(zip(metrics["recall"], metrics["precision"]), start=1):
        lines.append(f"{i},{r:.2f},{p:.2f}")
    lines.append(
        f"macro,{metrics['macro_recall']:.2f},{metrics['macro_precision']:.2f}"
    )
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# sweeps

SWEEPABLE = {"tau", "n_patches", "p", "measure"}


def run_sweep(cfg: PipelineConfig, sweep: dict, dataset: Dataset | None = None) -> list[dict]:
    """One pipeline run per grid point, sharing the dataset load and
    caching patchings across points with identical upstream parameters."""
    if not sweep:
        raise ConfigError("empty sweep grid")
    unknown = set(sweep) - SWEEPABLE
    if unknown:
        raise ConfigError(f"cannot sweep over {sorted(unknown)}")
    keys = sorted(sweep)
    values = [sweep[k] if isinstance(sweep[k], list) else [sweep[k]] for k in keys]
    if any(len(v) == 0 for v in values):
        raise ConfigError("empty sweep grid")

    if dataset is None:
        dataset = load_dataset(cfg.dataset, cfg.format, cfg.allow_constant)

    points = [dict(zip(keys, combo)) for combo in product(*values)]

    # patchings shared across grid points are built once, up front
    patch_cache: dict = {}
    shifted = shift_onsets(dataset, cfg.onset_lag)
    for point in points:
        run_cfg = PipelineConfig(**{**asdict(cfg), **point})
        try:
            run_cfg.validate()
        except ConfigError:
            continue
        key = (run_cfg.partitioner, run_cfg.n_patches, run_cfg.k_scale, run_cfg.seed)
        if key not in patch_cache:
            patch_cache[key] = _partition(run_cfg, shifted.coords)

    def run_point(point: dict) -> dict:
        run_cfg = PipelineConfig(**{**asdict(cfg), **point})
        row = dict(point)
        try:
            run_cfg.validate()
            key = (run_cfg.partitioner, run_cfg.n_patches, run_cfg.k_scale, run_cfg.seed)
            res = _run_with_patching(run_cfg, shifted, patch_cache[key])
            row.update(
                macro_recall=res["metrics"]["macro_recall"],
                macro_precision=res["metrics"]["macro_precision"],
                accuracy=res["metrics"]["accuracy"],
                n_features=res["n_features"],
                error="",
            )
        except Exception as exc:  # per-point failures recorded, sweep continues
            row.update(
                macro_recall="", macro_precision="", accuracy="", n_features="",
                error=str(exc),
            )
        return row

    workers = max(1, int(os.environ.get("FCMESH_THREADS", "1")))
    if workers == 1:
        return [run_point(pt) for pt in points]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_point, points))


def _run_with_patching(cfg: PipelineConfig, d: Dataset, patching: Patching) -> dict:
    if cfg.detrend:
        d = detrend_linear(d)
    spec = SplitSpec(cfg.split_mode, cfg.split_fraction, cfg.seed)
    train, test = split_train_test(d, spec)
    neighborhoods = build_mode_neighborhoods(cfg, train, patching)
    f_train = extract_fc_lrf(train, neighborhoods, _window(cfg, train), cfg.ridge)
    f_test = extract_fc_lrf(test, neighborhoods, _window(cfg, test), cfg.ridge)
    best, _ = cross_validate(
        f_train, train.labels, cfg.classifier, cfg.cv_grid, cfg.cv_folds, cfg.seed
    )
    if cfg.classifier == "knn":
        model = train_knn(f_train, train.labels, best["k"], best["metric"])
    else:
        model = train_linear_svm(f_train, train.labels, best["c_reg"], seed=cfg.seed)
    metrics = evaluate(predict(model, f_test), test.labels, n_classes=d.n_classes)
    return {"metrics": metrics.to_dict(), "n_features": f_train.n_features}


def write_sweep_csv(results: list[dict], path: Path) -> None:
    if not results:
        raise ConfigError("no sweep results")
    param_keys = [k for k in results[0] if k not in
                  ("macro_recall", "macro_precision", "accuracy", "n_features", "error")]
    header = param_keys + ["macro_recall", "macro_precision", "accuracy", "n_features", "error"]
    lines = [",".join(header)]
    for row in results:
        lines.append(",".join(str(row[k]) for k in header))
    # across-point dispersion summary for the numeric score columns
    ok = [r for r in results if r["error"] == ""]
    if len(ok) >= 2:
        rec = np.array([r["macro_recall"] for r in ok], dtype=float)
        prec = np.array([r["macro_precision"] for r in ok], dtype=float)
        pad = ["std"] + [""] * (len(param_keys) - 1)
        lines.append(
            ",".join(pad + [f"{rec.std(ddof=1):.2f}", f"{prec.std(ddof=1):.2f}", "", "", ""])
        )
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
