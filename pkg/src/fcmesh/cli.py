"""Command-line entry point.

Subcommands: pipeline (full run), sweep (grid of runs), synth (generate a
synthetic dataset), inspect (dump one patch's FC / Std / Ent as CSV).
Configuration comes from a JSON file; most keys can be overridden by
flags. Exit codes: 0 success, 1 config error, 2 data error, 3 compute
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .connectivity import (
    discriminative_entropy,
    discriminative_std,
    per_class_fc,
    within_cluster_fc,
)
from .data import load_dataset, save_dataset, shift_onsets, detrend_linear, split_train_test, SplitSpec
from .errors import ComputeError, ConfigError, DataError
from .pipeline import (
    PipelineConfig,
    atomic_write_text,
    run_pipeline,
    run_sweep,
    write_sweep_csv,
    _partition,
)
from .synth import SynthSpec, generate_synthetic

_OVERRIDE_KEYS = {
    "dataset": str,
    "format": str,
    "onset_lag": int,
    "n_patches": int,
    "k_scale": int,
    "seed": int,
    "measure": str,
    "scan_index": int,
    "neighbor_mode": str,
    "p": int,
    "tau": float,
    "entropy_bins": int,
    "ridge": float,
    "classifier": str,
    "cv_folds": int,
    "output_dir": str,
    "partitioner": str,
}


def _load_config(args) -> PipelineConfig:
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    for key in _OVERRIDE_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    if getattr(args, "no_detrend", False):
        raw["detrend"] = False
    return PipelineConfig.from_dict(raw)


def _add_override_flags(sub) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--dataset")
    sub.add_argument("--format", choices=["csv", "binary"])
    sub.add_argument("--onset-lag", dest="onset_lag", type=int)
    sub.add_argument("--no-detrend", action="store_true")
    sub.add_argument("--partitioner", choices=["spectral", "kmeans"])
    sub.add_argument("--n-patches", dest="n_patches", type=int)
    sub.add_argument("--k-scale", dest="k_scale", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--measure", choices=["zero-order", "peak", "scan"])
    sub.add_argument("--scan-index", dest="scan_index", type=int)
    sub.add_argument("--neighbor-mode", dest="neighbor_mode",
                     choices=["P", "N", "S", "E", "euclidean"])
    sub.add_argument("-p", dest="p", type=int)
    sub.add_argument("--tau", type=float)
    sub.add_argument("--entropy-bins", dest="entropy_bins", type=int)
    sub.add_argument("--ridge", type=float)
    sub.add_argument("--classifier", choices=["knn", "svm"])
    sub.add_argument("--cv-folds", dest="cv_folds", type=int)
    sub.add_argument("--output-dir", dest="output_dir")


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    result = run_pipeline(cfg)
    print(json.dumps(result["metrics"], indent=2, sort_keys=True))
    print(f"artifacts written to {cfg.output_dir}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    try:
        sweep = json.loads(args.sweep)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep grid is not valid JSON: {exc}") from exc
    results = run_sweep(cfg, sweep)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(results, out / "sweep.csv")
    for row in results:
        print(row)
    print(f"sweep table written to {out / 'sweep.csv'}")
    return 0


def _cmd_synth(args) -> int:
    raw = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    if "coupling" not in raw:
        raise ConfigError("synth spec needs a coupling matrix")
    try:
        spec = SynthSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad synth spec: {exc}") from exc
    d, truth = generate_synthetic(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(d, out, args.format)
    truth_path = out.with_suffix(".truth.json")
    atomic_write_text(truth_path, json.dumps(truth.to_dict(), indent=2))
    print(f"dataset: {out} ({d.n_scans} scans x {d.n_voxels} voxels, "
          f"{d.n_classes} classes); ground truth: {truth_path}")
    return 0


def _cmd_inspect(args) -> int:
    cfg = _load_config(args)
    d = load_dataset(cfg.dataset, cfg.format, cfg.allow_constant)
    d = shift_onsets(d, cfg.onset_lag)
    if cfg.detrend:
        d = detrend_linear(d)
    train, _ = split_train_test(d, SplitSpec(cfg.split_mode, cfg.split_fraction, cfg.seed))
    patching = _partition(cfg, d.coords)
    m = args.patch
    if not (1 <= m <= patching.n_patches):
        raise ConfigError(f"patch must be in 1..{patching.n_patches}")
    if args.matrix == "fc":
        mat = within_cluster_fc(train, patching, cfg.measure, cfg.scan_index).matrices[m - 1]
    else:
        by_class = per_class_fc(train, patching, cfg.measure, cfg.scan_index)
        if args.matrix == "std":
            mat = discriminative_std(by_class).matrices[m - 1]
        else:
            mat = discriminative_entropy(by_class, cfg.entropy_bins).matrices[m - 1]
    voxels = patching.patches[m - 1]
    writer = sys.stdout
    writer.write("," + ",".join(f"v{v}" for v in voxels) + "\n")
    for i, v in enumerate(voxels):
        writer.write(f"v{v}," + ",".join(format(x, ".17g") for x in mat[i]) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcmesh",
        description="Functional-connectivity mesh features for brain-state decoding",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("pipeline", help="run the full decoding pipeline")
    _add_override_flags(sp)
    sp.set_defaults(func=_cmd_pipeline)

    sw = subs.add_parser("sweep", help="run a parameter grid")
    _add_override_flags(sw)
    sw.add_argument("--sweep", required=True,
                    help='JSON grid, e.g. \'{"tau": [0.5, 0.6], "n_patches": [32, 64]}\'')
    sw.set_defaults(func=_cmd_sweep)

    sy = subs.add_parser("synth", help="generate a synthetic dataset")
    sy.add_argument("--spec", help="JSON SynthSpec file")
    sy.add_argument("--seed", type=int)
    sy.add_argument("--format", choices=["csv", "binary"], default="csv")
    sy.add_argument("--out", required=True)
    sy.set_defaults(func=_cmd_synth)

    ins = subs.add_parser("inspect", help="dump one patch's matrix as CSV")
    _add_override_flags(ins)
    ins.add_argument("--patch", type=int, required=True)
    ins.add_argument("--matrix", choices=["fc", "std", "ent"], default="fc")
    ins.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ComputeError, np.linalg.LinAlgError) as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
