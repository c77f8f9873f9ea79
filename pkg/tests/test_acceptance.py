"""Acceptance suite: one test per release criterion.

Each test prints a single "criterion N: PASS/FAIL (...)" line so the
suite output doubles as a checklist. Tolerances are pinned here and are
not to be loosened to make a failing build green.
"""

import time

import numpy as np
import pytest

from fcmesh.classify import (
    cross_validate,
    evaluate,
    predict,
    train_knn,
    train_linear_svm,
)
from fcmesh.connectivity import (
    ConnectivitySet,
    DiscriminativeSet,
    discriminative_entropy,
    discriminative_std,
    per_class_fc,
    within_cluster_fc,
    zero_order_correlation,
)
from fcmesh.data import Dataset, SplitSpec, detrend_linear, split_train_test
from fcmesh.mesh import (
    build_neighborhoods,
    estimate_arc_weights,
    extract_fc_lrf,
    neighbors_by_threshold,
)
from fcmesh.patching import Patching, spectral_partition_coords
from fcmesh.pipeline import PipelineConfig, run_pipeline
from fcmesh.synth import SynthSpec, generate_synthetic, oracle_least_squares

from conftest import adjusted_rand_index, two_blob_coords


def _report(num, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"\ncriterion {num}: {status} ({detail})")


# ---------------------------------------------------------------------------
# criterion 1: arc-weight regression matches the pseudo-inverse oracle

def test_criterion_1_regression_oracle():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        p = int(rng.integers(1, 5))
        r = int(rng.integers(p, 17))  # r >= p keeps the instance full rank
        x = rng.normal(size=(p, r))
        y = rng.normal(size=r)
        w, _ = estimate_arc_weights(y, x, 0.0)
        w_o = oracle_least_squares(y, x)
        err = np.linalg.norm(w - w_o) / max(np.linalg.norm(w_o), 1e-300)
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 10.0
    _report(1, ok, f"max rel err {worst:.2e}, {elapsed:.2f}s over 1000 instances")
    assert worst <= 1e-8
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# criterion 2: correlation correctness and invariances

def _corr_oracle(x, y):
    n = len(x)
    mx, my = x.mean(), y.mean()
    num = np.sum((x - mx) * (y - my)) / n
    den = np.sqrt(np.sum((x - mx) ** 2) / n) * np.sqrt(np.sum((y - my) ** 2) / n)
    return num / den


def test_criterion_2_correlation_correctness():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 60))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        worst = max(worst, abs(zero_order_correlation(x, y) - _corr_oracle(x, y)))
    # symmetry exact, unit diagonal and affine invariance within 1e-12
    x = rng.normal(size=50)
    y = rng.normal(size=50)
    sym_exact = zero_order_correlation(x, y) == zero_order_correlation(y, x)
    diag_err = abs(zero_order_correlation(x, x) - 1.0)
    affine_err = 0.0
    for _ in range(100):
        a = rng.uniform(0.1, 10.0)
        b = rng.uniform(-10.0, 10.0)
        affine_err = max(
            affine_err,
            abs(zero_order_correlation(a * x + b, y) - zero_order_correlation(x, y)),
        )
    ok = worst <= 1e-12 and sym_exact and diag_err <= 1e-12 and affine_err <= 1e-12
    _report(2, ok, f"oracle err {worst:.1e}, diag err {diag_err:.1e}, "
                   f"affine err {affine_err:.1e}, symmetry exact: {sym_exact}")
    assert worst <= 1e-12
    assert sym_exact
    assert diag_err <= 1e-12
    assert affine_err <= 1e-12


# ---------------------------------------------------------------------------
# criterion 3: patch-restricted pair count

def test_criterion_3_patch_complexity():
    m, c = 2000, 256
    t0 = time.perf_counter()
    sizes = np.full(c, m // c)
    sizes[: m % c] += 1
    assignment = np.repeat(np.arange(1, c + 1), sizes)
    patching = Patching.from_assignment(assignment)
    rng = np.random.default_rng(3)
    d = Dataset(
        rng.normal(size=(20, m)),
        rng.normal(size=(m, 3)),
        np.ones(20, dtype=np.int64),
        np.zeros(20, dtype=np.uint8),
    )
    fc = within_cluster_fc(d, patching)
    elapsed = time.perf_counter() - t0
    expected = int(sum(s * (s - 1) // 2 for s in sizes))
    full = m * (m - 1) // 2
    ratio = fc.pair_evaluations / full
    ok = fc.pair_evaluations == expected and ratio <= 0.05 and elapsed < 30.0
    _report(3, ok, f"{fc.pair_evaluations} pairs = expected {expected}, "
                   f"{100 * ratio:.2f}% of full, {elapsed:.2f}s")
    assert fc.pair_evaluations == expected
    assert ratio <= 0.05
    assert elapsed < 30.0


# ---------------------------------------------------------------------------
# criterion 4: threshold-selection contract

def test_criterion_4_threshold_contract():
    rng = np.random.default_rng(4)
    violations = []
    for trial in range(100):
        n = int(rng.integers(3, 12))
        vals = rng.uniform(0.0, 1.0, (n, n))
        mat = np.triu(vals, 1)
        mat = mat + mat.T
        patching = Patching.from_assignment(np.ones(n, dtype=int))
        disc = DiscriminativeSet(patching, (mat,), "std", 4)
        for seed in range(n):
            taus = np.sort(rng.uniform(0.0, 1.0, 8))
            orders = [neighbors_by_threshold(disc, seed, t).order for t in taus]
            if any(a < b for a, b in zip(orders, orders[1:])):
                violations.append((trial, seed, "not weakly decreasing"))
            if neighbors_by_threshold(disc, seed, 0.0).order != n - 1:
                violations.append((trial, seed, "tau=0 misses a co-member"))
            above = float(mat[seed].max()) + 1e-9
            if neighbors_by_threshold(disc, seed, min(above, 1.0)).order != 0:
                if mat[seed].max() < 1.0:  # above-max tau only exists then
                    violations.append((trial, seed, "tau>max not empty"))
    ok = not violations
    _report(4, ok, f"{len(violations)} violations over 100 random sets")
    assert not violations


# ---------------------------------------------------------------------------
# criterion 5: Std / Ent spot values

def _two_voxel_sets(values, n_classes):
    patching = Patching.from_assignment(np.array([1, 1]))
    sets = []
    for v in values:
        mat = np.array([[1.0, v], [v, 1.0]])
        sets.append(ConnectivitySet(patching, (mat,), "zero-order", None))
    return tuple(sets)


def test_criterion_5_spot_values():
    std = discriminative_std(_two_voxel_sets([-1.0, 0.0, 1.0], 3))
    std_val = std.matrices[0][0, 1]

    ent_same = discriminative_entropy(_two_voxel_sets([0.3] * 4, 4), bins=4)
    ent_same_val = ent_same.matrices[0][0, 1]

    # four coefficients landing in four distinct bins of B=4 over [-1, 1]
    ent_distinct = discriminative_entropy(
        _two_voxel_sets([-0.9, -0.4, 0.1, 0.6], 4), bins=4
    )
    ent_distinct_val = ent_distinct.matrices[0][0, 1]

    errs = (abs(std_val - 1.0), abs(ent_same_val), abs(ent_distinct_val - 1.0))
    ok = all(e <= 1e-12 for e in errs)
    _report(5, ok, f"Std(-1,0,1)={std_val!r}, Ent(identical)={ent_same_val!r}, "
                   f"Ent(distinct)={ent_distinct_val!r}")
    assert errs[0] <= 1e-12
    assert errs[1] <= 1e-12
    assert errs[2] <= 1e-12


# ---------------------------------------------------------------------------
# criteria 6 and 7: desk-scale decoding on planted couplings

N_COMMUNITIES = 16
COUPLING_BASE = (0.0, 0.35, 0.65, 0.9)
TAU_GRID = (0.15, 0.2, 0.25)
KNN_GRID = {"k": [1, 3, 5, 7]}
SVM_GRID = {"c_reg": [0.01, 0.1]}


def _c67_dataset(seed):
    coupling = tuple(
        tuple(COUPLING_BASE[(g + w) % 4] for g in range(N_COMMUNITIES))
        for w in range(4)
    )
    spec = SynthSpec(
        n_voxels=400,
        n_communities=N_COMMUNITIES,
        n_classes=4,
        trials_per_class=10,
        scans_per_trial=12,
        coupling=coupling,
        noise_sigma=1.0,
        mean_shift_scale=0.05,
        seed=seed,
    )
    return generate_synthetic(spec)[0]


def _split(d):
    dd = detrend_linear(d)
    return split_train_test(dd, SplitSpec("by-phase"))


def _raw_knn_accuracy(train, test):
    best, _ = cross_validate(train.signals, train.labels, "knn", KNN_GRID, 3)
    model = train_knn(train.signals, train.labels, best["k"], best["metric"])
    return evaluate(predict(model, test.signals), test.labels, 4).accuracy


def _fc_lrf_accuracy(train, test, patching, kind):
    grid = KNN_GRID if kind == "knn" else SVM_GRID
    disc = discriminative_std(per_class_fc(train, patching))
    best_tau, best_cv, best_params = None, -1.0, None
    for tau in TAU_GRID:
        nbs = build_neighborhoods("threshold-std", disc=disc, tau=tau)
        try:
            f = extract_fc_lrf(train, nbs)
        except Exception:
            continue
        params, scores = cross_validate(f, train.labels, kind, grid, 3)
        mean_cv = float(np.mean([np.mean(v) for v in scores.values()]))
        if mean_cv > best_cv:
            best_tau, best_cv, best_params = tau, mean_cv, params
    nbs = build_neighborhoods("threshold-std", disc=disc, tau=best_tau)
    f_train = extract_fc_lrf(train, nbs)
    f_test = extract_fc_lrf(test, nbs)
    if kind == "knn":
        model = train_knn(f_train, train.labels, best_params["k"],
                          best_params["metric"])
    else:
        model = train_linear_svm(f_train, train.labels, best_params["c_reg"])
    return evaluate(predict(model, f_test), test.labels, 4).accuracy


def test_criterion_6_fc_lrf_beats_raw_baseline():
    t0 = time.perf_counter()
    raw_accs, knn_gaps, svm_gaps = [], [], []
    for seed in range(10):
        d = _c67_dataset(seed)
        train, test = _split(d)
        patching = spectral_partition_coords(d.coords, 64, seed=0)
        raw = _raw_knn_accuracy(train, test)
        mesh_knn = _fc_lrf_accuracy(train, test, patching, "knn")
        mesh_svm = _fc_lrf_accuracy(train, test, patching, "svm")
        raw_accs.append(raw)
        knn_gaps.append(mesh_knn - raw)
        svm_gaps.append(mesh_svm - raw)
    elapsed = time.perf_counter() - t0
    raw_med = float(np.median(raw_accs))
    knn_med = float(np.median(knn_gaps))
    svm_med = float(np.median(svm_gaps))
    ok = (35.0 <= raw_med <= 55.0 and knn_med >= 15.0 and svm_med >= 15.0
          and elapsed < 300.0)
    _report(6, ok, f"raw median {raw_med:.1f}%, median gain knn "
                   f"+{knn_med:.1f}, svm +{svm_med:.1f}, {elapsed:.0f}s")
    assert 35.0 <= raw_med <= 55.0, f"raw baseline {raw_med} outside 35-55"
    assert knn_med >= 15.0
    assert svm_med >= 15.0
    assert elapsed < 300.0


def test_criterion_7_cluster_count_robustness():
    # fixed tau with a firm ridge: small patch counts admit neighbourhoods
    # comparable to the window length, where unregularized weights are
    # unstable; the ridge keeps the feature map well conditioned at every C
    d = _c67_dataset(0)
    train, test = _split(d)
    recalls = []
    for c in (32, 64, 128, 256):
        patching = spectral_partition_coords(d.coords, c, seed=0)
        disc = discriminative_std(per_class_fc(train, patching))
        nbs = build_neighborhoods("threshold-std", disc=disc, tau=0.2)
        f_train = extract_fc_lrf(train, nbs, ridge=10.0)
        f_test = extract_fc_lrf(test, nbs, ridge=10.0)
        best, _ = cross_validate(f_train, train.labels, "knn", KNN_GRID, 3)
        model = train_knn(f_train, train.labels, best["k"], best["metric"])
        m = evaluate(predict(model, f_test), test.labels, 4)
        recalls.append(m.macro_recall)
    spread = float(np.std(recalls, ddof=1))
    ok = spread <= 5.0
    _report(7, ok, f"macro recall {['%.1f' % r for r in recalls]} "
                   f"across C=32/64/128/256, std {spread:.2f}")
    assert spread <= 5.0


# ---------------------------------------------------------------------------
# criterion 8: bit-identical artifacts

def test_criterion_8_determinism(tmp_path, monkeypatch):
    spec = SynthSpec(
        n_voxels=30,
        n_communities=4,
        n_classes=2,
        trials_per_class=6,
        scans_per_trial=8,
        coupling=((0.8, 0.8, 0.0, 0.0), (0.0, 0.0, 0.8, 0.8)),
        noise_sigma=0.5,
        seed=11,
    )
    d, _ = generate_synthetic(spec)
    mismatches = []
    outs = []
    for run, workers in (("a", "1"), ("b", "4")):
        monkeypatch.setenv("FCMESH_THREADS", workers)
        cfg = PipelineConfig(
            n_patches=4, neighbor_mode="S", tau=0.2,
            cv_grid={"k": [1, 3]}, output_dir=str(tmp_path / run),
        )
        run_pipeline(cfg, dataset=d)
        outs.append(tmp_path / run)
    for name in ("features_train.bin", "features_test.bin", "metrics.json"):
        if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
            mismatches.append(name)
    ok = not mismatches
    _report(8, ok, "bit-identical across runs and worker counts"
            if ok else f"mismatch in {mismatches}")
    assert not mismatches


# ---------------------------------------------------------------------------
# criterion 9: spectral patching on two blobs

def test_criterion_9_spectral_two_blobs():
    failures = []
    for seed in range(20):
        coords, truth = two_blob_coords(25, seed=seed)
        patching = spectral_partition_coords(coords, 2, seed=seed)
        ari = adjusted_rand_index(patching.assignment, truth)
        if ari != 1.0:
            failures.append((seed, ari))
    ok = not failures
    _report(9, ok, "ARI 1.0 on all 20 seeds" if ok else f"failures: {failures}")
    assert not failures
