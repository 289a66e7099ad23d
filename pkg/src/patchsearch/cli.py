"""Command line: search, evaluate, pareto, flops, synth, regions.

Exit codes: 0 success, 2 configuration error, 3 backend error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import (
    DatasetManifest,
    ManifestError,
    SyntheticSpec,
    generate_synthetic,
    load_image,
    load_mask,
    load_manifest,
    make_splits,
)
from .encoder import (
    BackendError,
    BackendUnavailableError,
    CacheBackend,
    ConfigError,
    ExternalBackend,
    MNV3L_PATCHCORE_GFLOPS,
    SyntheticBackend,
    WRN50_PATCHCORE_GFLOPS,
    encode_batch,
    estimate_flops,
    load_config,
    validate,
)
from .metrics import (
    EvalSet,
    aupro,
    auroc,
    average_precision,
    label_regions,
    region_weights,
    rwap,
)
from .optimizer import (
    front_to_json,
    pareto_front,
    read_trial_log,
    run_search,
    trial_to_record,
)
from .patch_engine import build_bank, extract_patches, segment


@dataclass(frozen=True)
class RunConfig:
    manifest: str
    k: int
    seeds: tuple[int, ...]
    budget: int
    constraint_gflops: float | None
    backend: str
    backend_addr: str | None
    input_resolution: int
    out: str

    def to_json(self) -> dict:
        return {
            "manifest": self.manifest,
            "k": self.k,
            "seeds": list(self.seeds),
            "budget": self.budget,
            "constraint_gflops": self.constraint_gflops,
            "backend": self.backend,
            "backend_addr": self.backend_addr,
            "input_resolution": self.input_resolution,
            "out": self.out,
        }


def make_backend(run: RunConfig, manifest: DatasetManifest, cache_dir=None):
    paths = {item.image_id: manifest.resolve(item.image) for item in manifest.items}
    if run.backend == "synthetic":
        return SyntheticBackend(
            lambda image_id: load_image(paths[image_id], run.input_resolution),
            input_resolution=run.input_resolution,
        )
    if run.backend == "cache":
        root = Path(cache_dir) if cache_dir else (manifest.root / "features")
        if not root.is_dir():
            raise BackendUnavailableError(f"feature source unavailable: {root}")
        return CacheBackend(root, input_resolution=run.input_resolution)
    if run.backend == "external":
        if not run.backend_addr:
            raise ConfigError("--backend external requires --backend-addr")
        backend = ExternalBackend(run.backend_addr, input_resolution=run.input_resolution)
        backend.probe()
        return backend
    raise ConfigError(f"unknown backend {run.backend!r}")


def _region_masks(manifest, items, size):
    masks = []
    for item in items:
        if item.is_anomalous:
            arr = load_mask(manifest.resolve(item.mask), size)
            masks.append(label_regions(arr, item.anomaly_type))
        else:
            masks.append(label_regions(np.zeros((size, size), dtype=np.uint8)))
    return masks


def score_items(manifest, train_items, eval_items, config, backend, input_resolution) -> EvalSet:
    """Build the memory bank on the train items and score the eval items."""
    patch_sizes = config.patch_sizes()
    train_ids = [i.image_id for i in train_items]
    train_feats = encode_batch(train_ids, config, backend)
    bank = build_bank(
        [extract_patches(f, patch_sizes) for f in train_feats], image_ids=train_ids
    )
    eval_ids = [i.image_id for i in eval_items]
    eval_feats = encode_batch(eval_ids, config, backend)
    masks = _region_masks(manifest, eval_items, input_resolution)
    pairs = []
    for feats, mask in zip(eval_feats, masks):
        amap = segment(feats, patch_sizes, bank, input_resolution, input_resolution)
        pairs.append((amap.scores, mask))
    return EvalSet(items=tuple(pairs))


def build_trial_evaluator(manifest, split, backend, input_resolution):
    """Search objective: rwAP on the validation split plus encoder GFLOPS.

    The memory bank is rebuilt from scratch for every trial.
    """
    eval_masks = _region_masks(manifest, split.validation, input_resolution)
    train_ids = [i.image_id for i in split.train]
    val_ids = [i.image_id for i in split.validation]

    def evaluate(config):
        plan = validate(config)
        gflops = estimate_flops(plan, config, input_resolution).gflops
        patch_sizes = config.patch_sizes()
        train_feats = encode_batch(train_ids, config, backend)
        bank = build_bank(
            [extract_patches(f, patch_sizes) for f in train_feats], image_ids=train_ids
        )
        val_feats = encode_batch(val_ids, config, backend)
        pairs = []
        for feats, mask in zip(val_feats, eval_masks):
            amap = segment(feats, patch_sizes, bank, input_resolution, input_resolution)
            pairs.append((amap.scores, mask))
        ev = EvalSet(items=tuple(pairs))
        return rwap(ev, region_weights(ev)), gflops

    return evaluate


# --------------------------------------------------------------------------
# subcommands


def cmd_search(args) -> int:
    manifest = load_manifest(args.manifest)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    run = RunConfig(
        manifest=str(args.manifest),
        k=args.k,
        seeds=seeds,
        budget=args.budget,
        constraint_gflops=args.constraint_gflops,
        backend=args.backend,
        backend_addr=args.backend_addr,
        input_resolution=args.input_resolution or manifest.image_size,
        out=str(args.out),
    )
    split = make_splits(manifest, run.k)
    backend = make_backend(run, manifest, cache_dir=args.cache_dir)
    evaluator = build_trial_evaluator(manifest, split, backend, run.input_resolution)
    for seed in seeds:
        out_dir = Path(run.out) / manifest.category / f"k{run.k}" / f"seed{seed}"
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_config.json").write_text(json.dumps(run.to_json(), indent=1))
        log_path = out_dir / "trials.jsonl"
        with open(log_path, "w") as log:
            study = run_search(
                evaluator,
                budget=run.budget,
                constraint=run.constraint_gflops,
                seed=seed,
                sampler=None if args.sampler == "motpe" else _random_sampler(),
                on_trial=lambda t: (log.write(json.dumps(trial_to_record(t)) + "\n"), log.flush()),
                fatal=(BackendUnavailableError,),
            )
        (out_dir / "front.json").write_text(json.dumps(front_to_json(study.front), indent=1))
        best = max((t.performance for t in study.front.trials), default=float("nan"))
        print(
            f"seed {seed}: {len(study.trials)} trials, front size {len(study.front)}, "
            f"best rwAP {best:.4f} -> {out_dir}"
        )
    return 0


def _random_sampler():
    from .encoder import ConfigSpace
    from .optimizer import RandomSampler

    return RandomSampler(ConfigSpace())


def _parse_metric(name: str):
    base, _, limit = name.partition("@")
    if base == "ap" and not limit:
        return ("ap", None)
    if base == "rwap" and not limit:
        return ("rwap", None)
    if base in ("auroc", "aupro"):
        default = 1.0 if base == "auroc" else 0.3
        try:
            value = float(limit) if limit else default
        except ValueError:
            raise ConfigError(f"bad FPR limit in metric {name!r}") from None
        if not 0.0 < value <= 1.0:
            raise ConfigError(f"FPR limit out of range in metric {name!r}")
        return (base, value)
    raise ConfigError(f"unknown metric {name!r}")


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    config = load_config(args.config)
    requested = [m.strip() for m in args.metrics.split(",") if m.strip()]
    parsed = [(name, *_parse_metric(name)) for name in requested]
    run = RunConfig(
        manifest=str(args.manifest),
        k=args.k,
        seeds=(0,),
        budget=1,
        constraint_gflops=None,
        backend=args.backend,
        backend_addr=args.backend_addr,
        input_resolution=args.input_resolution or manifest.image_size,
        out="",
    )
    split = make_splits(manifest, run.k)
    backend = make_backend(run, manifest, cache_dir=args.cache_dir)
    eval_items = split.validation if args.split == "validation" else split.test
    ev = score_items(manifest, split.train, eval_items, config, backend, run.input_resolution)
    weights = region_weights(ev)
    results = []
    for name, base, limit in parsed:
        if base == "ap":
            value = average_precision(ev)
        elif base == "rwap":
            value = rwap(ev, weights)
        elif base == "auroc":
            value = auroc(ev, limit)
        else:
            value = aupro(ev, limit)
        entry = {"metric": name, "value": value}
        if limit is not None:
            entry["fpr_limit"] = limit
        results.append(entry)
    report = {
        "category": manifest.category,
        "split": args.split,
        "k": args.k,
        "config": str(args.config),
        "gflops": estimate_flops(validate(config), config, run.input_resolution).gflops,
        "metrics": results,
    }
    text = json.dumps(report, indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def _log_k(log_path: Path):
    sibling = log_path.parent / "run_config.json"
    if sibling.exists():
        try:
            return json.loads(sibling.read_text()).get("k")
        except json.JSONDecodeError:
            return None
    return None


def cmd_pareto(args) -> int:
    logs = [Path(p) for p in args.logs]
    if not logs:
        raise ConfigError("at least one trial log is required")
    groups = []
    for path in logs:
        trials = read_trial_log(path)
        if not trials:
            raise ConfigError(f"empty trial log {path}")
        groups.append((path, trials, _log_k(path)))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    if args.per_seed:
        blocks = []
        for path, trials, k in groups:
            front = pareto_front(trials)
            blocks.append(
                {"log": str(path), "seed": trials[0].seed, "k": k, "front": front_to_json(front)}
            )
            chosen = front.trials if args.front_only else trials
            rows.extend((t.complexity, t.performance, t.seed, k) for t in chosen if t.status == "ok")
        front_json = blocks
    else:
        merged = [t for _, trials, _ in groups for t in trials]
        front = pareto_front(merged)
        front_json = front_to_json(front)
        k_by_id = {id(t): k for _, trials, k in groups for t in trials}
        chosen = front.trials if args.front_only else merged
        rows.extend(
            (t.complexity, t.performance, t.seed, k_by_id.get(id(t))) for t in chosen if t.status == "ok"
        )
    (out_dir / "front.json").write_text(json.dumps(front_json, indent=1))
    with open(out_dir / "points.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gflops", "rwap", "seed", "k"])
        writer.writerows(rows)
    print(f"wrote {out_dir / 'front.json'} and {out_dir / 'points.csv'} ({len(rows)} points)")
    return 0


def cmd_flops(args) -> int:
    config = load_config(args.config)
    report = estimate_flops(validate(config), config, args.input_resolution)
    out = {
        "total_gflops": report.gflops,
        "stem_gflops": report.stem / 1e9,
        "blocks": [
            {"stage": b.stage, "block": b.block, "gflops": b.flops / 1e9} for b in report.blocks
        ],
        "reference": {
            "wrn50_patchcore_gflops": WRN50_PATCHCORE_GFLOPS,
            "mnv3l_patchcore_gflops": MNV3L_PATCHCORE_GFLOPS,
        },
    }
    print(json.dumps(out, indent=1))
    return 0


def cmd_synth(args) -> int:
    types = []
    for part in args.types.split(","):
        name, _, count = part.partition(":")
        if not count.isdigit():
            raise ConfigError(f"bad type spec {part!r}, expected name:count")
        types.append((name.strip(), int(count)))
    spec = SyntheticSpec(
        categories=tuple(c.strip() for c in args.categories.split(",")),
        n_train=args.n_train,
        n_test_normal=args.n_test_normal,
        types_with_counts=tuple(types),
        image_size=args.image_size,
        seed=args.seed,
    )
    for path in generate_synthetic(spec, args.out):
        print(path)
    return 0


def cmd_regions(args) -> int:
    mask = load_mask(args.mask)
    region_mask = label_regions(mask, args.type if mask.any() else None)
    regions = []
    for j, area in region_mask.region_areas().items():
        ys, xs = np.nonzero(region_mask.labels == j)
        regions.append(
            {
                "id": j,
                "area": area,
                "bbox": [int(ys.min()), int(xs.min()), int(ys.max()), int(xs.max())],
            }
        )
    out = {
        "mask": str(args.mask),
        "count": region_mask.num_regions,
        "anomaly_type": region_mask.anomaly_type,
        "regions": regions,
    }
    text = json.dumps(out, indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchsearch")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_backend_args(p):
        p.add_argument("--backend", choices=["synthetic", "cache", "external"], default="synthetic")
        p.add_argument("--backend-addr", default=None, help="host:port for the external backend")
        p.add_argument("--cache-dir", default=None, help="FMAP directory for the cache backend")
        p.add_argument("--input-resolution", type=int, default=None,
                       help="defaults to the manifest image size")

    p = sub.add_parser("search", help="run seeded bi-objective searches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=1, choices=[1, 2, 4])
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--constraint-gflops", type=float, default=None)
    p.add_argument("--sampler", choices=["motpe", "random"], default="motpe")
    p.add_argument("--out", required=True)
    add_backend_args(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="score one architecture on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--split", choices=["validation", "test"], default="test")
    p.add_argument("--metrics", default="rwap,ap,auroc,auroc@0.3,aupro")
    p.add_argument("--k", type=int, default=1, choices=[1, 2, 4])
    p.add_argument("--out", default=None)
    add_backend_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pareto", help="merge trial logs into fronts and plot data")
    p.add_argument("logs", nargs="+")
    p.add_argument("--per-seed", action="store_true")
    p.add_argument("--front-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("flops", help="complexity report for one architecture")
    p.add_argument("--config", required=True)
    p.add_argument("--input-resolution", type=int, default=224)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", default="plate")
    p.add_argument("--n-train", type=int, default=8)
    p.add_argument("--n-test-normal", type=int, default=3)
    p.add_argument("--types", default="blob:5,scratch:5,hole:5")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("regions", help="dump the labelled regions of a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--type", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_regions)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
