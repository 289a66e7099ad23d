"""Acceptance suite: one test per criterion, one printed line per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS lines.
Numeric reproduction of published benchmark tables is explicitly not
claimed anywhere in this suite: those numbers depend on pretrained weights
and licensed image assets. What is checked instead is property-based:
exact oracle agreement for every metric and search component, and faithful
protocol behavior (k-shot validation objective, complexity constraint
mode, seed repetition) on self-contained synthetic data.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

import oracles
from evalgen import as_oracle_items, random_eval, uniform_regions_eval
from patchsearch.cli import build_parser, main
from patchsearch.datasets import SyntheticSpec, generate_synthetic, load_manifest, make_splits
from patchsearch.encoder import (
    ArchitectureConfig,
    ConfigSpace,
    MNV3L_PATCHCORE_GFLOPS,
    StageConfig,
    WRN50_PATCHCORE_GFLOPS,
    config_gflops,
    estimate_flops,
    random_config,
    validate,
)
from patchsearch.metrics import (
    EvalSet,
    aupro,
    auroc,
    average_precision,
    label_regions,
    region_weights,
    rwap,
)
from patchsearch.optimizer import (
    MotpeSampler,
    RandomSampler,
    Trial,
    default_startup,
    hypervolume_2d,
    pareto_front,
    read_trial_log,
    run_search,
)
from patchsearch.patch_engine import MemoryBank, PatchGrid, build_bank, nn_distances, segment


def report(name: str, detail: str = ""):
    suffix = f" ({detail})" if detail else ""
    print(f"[ACCEPTANCE] {name}: PASS{suffix}", flush=True)


# --------------------------------------------------------------------------
# 1. metric oracle suite


def test_metric_oracle_suite_200_evals():
    start = time.time()
    rng = np.random.default_rng(20250801)
    for i in range(200):
        # full 32x32 evals carry tied scores to bound the threshold count;
        # the untied ones stay small so the sweep remains exhaustive
        if i % 10 == 0:
            max_side, ties = 32, 40
        else:
            max_side, ties = 12, (25 if i % 4 == 0 else None)
        ev = random_eval(rng, max_side=max_side, max_images=8, max_types=3, tie_levels=ties)
        items = as_oracle_items(ev)
        assert abs(average_precision(ev) - oracles.brute_ap(items)) <= 1e-9
        assert abs(rwap(ev, region_weights(ev)) - oracles.brute_rwap(items)) <= 1e-9
        assert abs(auroc(ev, 1.0) - oracles.brute_auroc(items, 1.0)) <= 1e-9
        assert abs(auroc(ev, 0.3) - oracles.brute_auroc(items, 0.3)) <= 1e-9
        assert abs(aupro(ev, 0.3) - oracles.brute_aupro(items, 0.3)) <= 1e-9
    elapsed = time.time() - start
    assert elapsed < 30.0, f"metric oracle suite took {elapsed:.1f}s"
    report("metric-oracle-suite", f"200 evals, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# 2. rwAP collapses to AP under uniform regions


def test_rwap_reduction_uniform_regions():
    rng = np.random.default_rng(42)
    for _ in range(25):
        ev = uniform_regions_eval(
            rng,
            n_types=int(rng.integers(1, 4)),
            regions_per_type=int(rng.integers(1, 4)),
            area_side=int(rng.integers(1, 4)),
        )
        delta = abs(rwap(ev, region_weights(ev)) - average_precision(ev))
        assert delta <= 1e-12
    report("rwap-uniform-collapse", "25 evals, |rwAP - AP| <= 1e-12")


# --------------------------------------------------------------------------
# 3. frozen worked examples (oracle-confirmed)


def test_worked_examples_frozen():
    four = EvalSet(items=((
        np.array([[0.9, 0.8, 0.4, 0.2]]),
        label_regions(np.array([[1, 0, 1, 0]]), "t"),
    ),))
    items4 = as_oracle_items(four)
    assert abs(oracles.brute_ap(items4) - 5 / 6) <= 1e-12
    assert abs(oracles.brute_auroc(items4, 1.0) - 0.75) <= 1e-12
    assert average_precision(four) == pytest.approx(5 / 6, abs=1e-12)
    assert auroc(four, 1.0) == pytest.approx(0.75, abs=1e-12)

    six = EvalSet(items=(
        (np.array([[0.9, 0.1]]), label_regions(np.array([[1, 0]]), "t")),
        (np.array([[0.8, 0.3, 0.6, 0.5]]), label_regions(np.array([[1, 1, 1, 0]]), "t")),
    ))
    items6 = as_oracle_items(six)
    assert abs(oracles.brute_rwap(items6) - 29 / 30) <= 1e-12
    assert abs(oracles.brute_ap(items6) - 0.95) <= 1e-12
    assert rwap(six, region_weights(six)) == pytest.approx(29 / 30, abs=1e-12)
    assert average_precision(six) == pytest.approx(0.95, abs=1e-12)
    report("worked-examples", "AP=5/6, AUROC=0.75, rwAP=29/30, AP=0.95")


# --------------------------------------------------------------------------
# 4. nearest-neighbor exactness


def test_nn_blocked_equals_double_loop():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 501))
        d = int(rng.integers(1, 65))
        bank = MemoryBank(entries=rng.normal(size=(n, d)))
        query = PatchGrid(data=rng.normal(size=(d, 2, 2)))
        fast = nn_distances(query, bank, block=64)
        ref = oracles.brute_nn_distances(query.as_matrix(), bank.entries)
        assert np.array_equal(fast.ravel(), ref)
    # training-image self score
    grid = PatchGrid(data=rng.normal(size=(16, 6, 6)))
    bank = build_bank([grid])
    feats = [np.asarray(grid.data)]
    amap = segment(feats, [1], bank, 24, 24)
    assert float(np.max(amap.scores)) <= 1e-9
    report("nn-exactness", "100 instances bitwise equal, self-score <= 1e-9")


# --------------------------------------------------------------------------
# 5. FLOPS oracle and monotonicity


def test_flops_oracle_and_monotonicity():
    rng = np.random.default_rng(99)
    for _ in range(100):
        config = random_config(rng)
        report_obj = estimate_flops(validate(config), config, 224)
        assert abs(report_obj.total - oracles.brute_flops(config.to_json(), 224)) <= 1
    checked = 0
    while checked < 1000:
        config = random_config(rng)
        plan = validate(config)
        axis = ("kernel", "expansion", "width")[int(rng.integers(3))]
        if axis == "width":
            lo = ArchitectureConfig(width="base", stages=config.stages)
            hi = ArchitectureConfig(width="wide", stages=config.stages)
        else:
            computed = [s for s in range(5) if plan.depths[s] > 0]
            s = computed[int(rng.integers(len(computed)))]
            domain = (3, 5, 7) if axis == "kernel" else (3, 4, 6)
            values = sorted(rng.choice(domain, size=2, replace=False))
            def with_value(v):
                st = config.stages[s]
                new = StageConfig(
                    expansion=int(v) if axis == "expansion" else st.expansion,
                    kernel=int(v) if axis == "kernel" else st.kernel,
                    extract=st.extract,
                    patch=st.patch,
                )
                return ArchitectureConfig(
                    width=config.width,
                    stages=config.stages[:s] + (new,) + config.stages[s + 1:],
                )
            lo, hi = with_value(values[0]), with_value(values[1])
        flops_lo = estimate_flops(validate(lo), lo, 224).total
        flops_hi = estimate_flops(validate(hi), hi, 224).total
        assert flops_hi > flops_lo, f"{axis} perturbation not strictly monotone"
        checked += 1
    assert WRN50_PATCHCORE_GFLOPS == 18.41 and MNV3L_PATCHCORE_GFLOPS == 0.31
    report("flops-oracle", "100 configs equal, 1000 monotone pairs")


# --------------------------------------------------------------------------
# 6. Pareto filtering and hypervolume


def _dummy_config():
    stages = tuple(
        StageConfig(expansion=3, kernel=3, extract=1 if s == 0 else None, patch=1)
        for s in range(5)
    )
    return ArchitectureConfig(width="base", stages=stages)


def test_pareto_and_hypervolume():
    config = _dummy_config()
    rng = np.random.default_rng(123)
    for _ in range(100):
        n = int(rng.integers(1, 400))
        quant = int(rng.choice([8, 50, 10_000]))
        trials = [
            Trial(config=config,
                  performance=float(rng.integers(quant)) / quant,
                  complexity=float(rng.integers(quant)) / quant,
                  feasible=True, trial_index=i, seed=0)
            for i in range(n)
        ]
        points = [(t.performance, t.complexity) for t in trials]
        expected = sorted(points[i] for i in oracles.brute_pareto(points))
        got = sorted(pareto_front(trials).objectives())
        assert got == expected
    golden = [(0.8, 0.3), (0.6, 0.2)]
    assert hypervolume_2d(golden, 0.0, 1.0) == pytest.approx(0.62, abs=1e-12)
    assert oracles.union_area(golden, 0.0, 1.0) == pytest.approx(0.62, abs=1e-12)
    for seed in range(50):
        front_rng = np.random.default_rng(1000 + seed)
        pts = [
            (float(front_rng.uniform(0.05, 1.0)), float(front_rng.uniform(0.0, 0.95)))
            for _ in range(int(front_rng.integers(1, 10)))
        ]
        hv = hypervolume_2d(pts, 0.0, 1.0)
        est, sigma = oracles.monte_carlo_hypervolume(pts, 0.0, 1.0, n_samples=150_000, seed=seed)
        assert abs(hv - est) <= 3 * max(sigma, 1e-9)
    report("pareto-hypervolume", "100 sets, golden 0.62, 50 MC fronts")


# --------------------------------------------------------------------------
# 7. optimizer efficacy on the toy bi-objective problem


def test_motpe_beats_random_on_toy_problem():
    start = time.time()
    space = ConfigSpace()
    target = ArchitectureConfig(
        width="base",
        stages=tuple(
            StageConfig(expansion=3, kernel=7, extract=4 * s + 1, patch=4) for s in range(5)
        ),
    )
    x_star = space.to_indices(target) / (space.sizes - 1)
    norm = math.sqrt(len(space))

    def evaluator(config):
        x = space.to_indices(config.canonical()) / (space.sizes - 1)
        perf = 1.0 - float(np.linalg.norm(x - x_star)) / norm
        return perf, config_gflops(config)

    max_cfg = ArchitectureConfig(
        width="wide",
        stages=tuple(
            StageConfig(expansion=6, kernel=7, extract=4 * s + 4, patch=1) for s in range(5)
        ),
    )
    ref_c = config_gflops(max_cfg) + 0.1
    ref_p = -1e-6
    hv_motpe, hv_random = [], []
    for seed in range(11):
        sm = run_search(evaluator, budget=200, seed=seed,
                        sampler=MotpeSampler(space, n_startup=default_startup(200)))
        sr = run_search(evaluator, budget=200, seed=seed, sampler=RandomSampler(space))
        hv_motpe.append(hypervolume_2d(sm.front, ref_p, ref_c))
        hv_random.append(hypervolume_2d(sr.front, ref_p, ref_c))
    wins = sum(m > r for m, r in zip(hv_motpe, hv_random))
    losses = sum(m < r for m, r in zip(hv_motpe, hv_random))
    p_value = stats.binomtest(wins, wins + losses, alternative="greater").pvalue
    elapsed = time.time() - start
    assert np.median(hv_motpe) >= np.median(hv_random)
    assert p_value < 0.05, f"sign test p={p_value:.4f} with {wins} wins"
    assert elapsed < 300.0, f"toy benchmark took {elapsed:.1f}s"
    report(
        "optimizer-efficacy",
        f"median {np.median(hv_motpe):.4f} vs {np.median(hv_random):.4f}, "
        f"{wins}/11 wins, p={p_value:.2g}, {elapsed:.0f}s",
    )


# --------------------------------------------------------------------------
# 8. end-to-end desk-scale search


@pytest.fixture(scope="module")
def desk_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    spec = SyntheticSpec(
        categories=("plate",),
        n_train=8,
        n_test_normal=3,
        types_with_counts=(("blob", 5), ("scratch", 5), ("hole", 5)),
        image_size=64,
        seed=0,
    )
    (manifest,) = generate_synthetic(spec, out)
    return manifest


def _strip_wall(path):
    records = []
    for line in Path(path).read_text().splitlines():
        record = json.loads(line)
        record.pop("wall_ms")
        records.append(record)
    return records


def test_desk_scale_search_end_to_end(desk_dataset, tmp_path_factory):
    runs = tmp_path_factory.mktemp("runs")
    start = time.time()
    code = main([
        "search",
        "--manifest", str(desk_dataset),
        "--k", "1",
        "--seeds", "0,1,2",
        "--budget", "100",
        "--backend", "synthetic",
        "--out", str(runs),
    ])
    elapsed = time.time() - start
    assert code == 0
    assert elapsed < 600.0, f"desk-scale search took {elapsed:.1f}s"

    logs = {}
    for seed in (0, 1, 2):
        run_dir = runs / "plate" / "k1" / f"seed{seed}"
        trials = read_trial_log(run_dir / "trials.jsonl")
        assert len(trials) == 100
        assert json.loads((run_dir / "front.json").read_text())
        logs[seed] = trials

    # running-front hypervolume is non-decreasing within each study
    for seed, trials in logs.items():
        ok = [t for t in trials if t.status == "ok"]
        assert ok
        ref_p, ref_c = -1e-6, max(t.complexity for t in ok) + 1e-6
        prev = 0.0
        for i in range(1, len(trials) + 1):
            prefix = [t for t in trials[:i] if t.status == "ok" and t.feasible]
            if not prefix:
                continue
            hv = hypervolume_2d(pareto_front(prefix), ref_p, ref_c)
            assert hv >= prev - 1e-12
            prev = hv

    # constraint mode at the median sampled complexity
    median_cx = float(np.median([t.complexity for t in logs[0] if t.status == "ok"]))
    constrained = tmp_path_factory.mktemp("constrained")
    code = main([
        "search",
        "--manifest", str(desk_dataset),
        "--k", "1",
        "--seeds", "0",
        "--budget", "100",
        "--constraint-gflops", repr(median_cx),
        "--backend", "synthetic",
        "--out", str(constrained),
    ])
    assert code == 0
    front = json.loads((constrained / "plate" / "k1" / "seed0" / "front.json").read_text())
    assert front
    assert all(t["complexity_gflops"] <= median_cx for t in front)

    # identical seed -> identical trial log (modulo wall_ms)
    repeat = tmp_path_factory.mktemp("repeat")
    code = main([
        "search",
        "--manifest", str(desk_dataset),
        "--k", "1",
        "--seeds", "0",
        "--budget", "100",
        "--backend", "synthetic",
        "--out", str(repeat),
    ])
    assert code == 0
    first = _strip_wall(runs / "plate" / "k1" / "seed0" / "trials.jsonl")
    second = _strip_wall(repeat / "plate" / "k1" / "seed0" / "trials.jsonl")
    assert first == second
    report("desk-scale-e2e", f"3 seeds x 100 trials in {elapsed:.0f}s, constraint + determinism ok")


# --------------------------------------------------------------------------
# 9. split protocol


def test_split_protocol(tmp_path_factory):
    out = tmp_path_factory.mktemp("splits")
    spec = SyntheticSpec(
        categories=("widget",),
        n_train=10,
        n_test_normal=4,
        types_with_counts=(("blob", 7), ("scratch", 6), ("hole", 5)),
        image_size=32,
        seed=5,
    )
    (path,) = generate_synthetic(spec, out)
    manifest = load_manifest(path)
    serialized_tests = {
        k: json.dumps([i.image for i in make_splits(manifest, k).test]).encode()
        for k in (1, 2, 4)
    }
    assert serialized_tests[1] == serialized_tests[2] == serialized_tests[4]
    val_sets = {
        k: {i.image for i in make_splits(manifest, k).validation if i.is_anomalous}
        for k in (1, 2, 4)
    }
    assert val_sets[1] < val_sets[2] < val_sets[4]
    for k in (1, 2, 4):
        split = make_splits(manifest, k)
        groups = [
            {i.image for i in split.train},
            {i.image for i in split.validation},
            {i.image for i in split.test},
        ]
        assert not (groups[0] & groups[1] or groups[0] & groups[2] or groups[1] & groups[2])
    report("split-protocol", "byte-identical tests, nested validations, disjoint")


# --------------------------------------------------------------------------
# 10. protocol is reproduced, published numbers are not claimed


def test_protocol_reproduction_without_paper_numbers():
    # The reference GFLOPS magnitudes are documented constants, never
    # recomputed, and no assertion anywhere targets published rwAP tables.
    assert WRN50_PATCHCORE_GFLOPS == 18.41
    assert MNV3L_PATCHCORE_GFLOPS == 0.31
    parser = build_parser()
    args = parser.parse_args([
        "search", "--manifest", "m.json", "--k", "4", "--seeds", "0,1,2",
        "--budget", "2000", "--constraint-gflops", "0.31", "--out", "x",
    ])
    assert args.k == 4 and args.budget == 2000 and args.constraint_gflops == 0.31
    args = parser.parse_args([
        "evaluate", "--manifest", "m.json", "--config", "c.json",
        "--split", "test", "--metrics", "rwap,ap,auroc,auroc@0.3,aupro",
    ])
    assert args.split == "test"
    report("protocol-not-paper-numbers", "k-shot objective, 0.31 constraint mode, seed repetition")
