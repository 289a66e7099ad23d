#!/usr/bin/env python3
"""Generate the shared config-validation corpus (half valid, half invalid).

Every entry is checked against the package validator before it is written,
so the corpus is self-consistent by construction: `valid: true` entries
parse and validate, `valid: false` entries are rejected. Both the Python
engine and the exporter test suites consume the same file.

Note: numeric mutations avoid float values that JSON-round-trip to
integers (e.g. 3.0), since JSON offers no int/float distinction to a
JavaScript reader.
"""

import argparse
import json
import random
from pathlib import Path

import numpy as np

from patchsearch.encoder import ConfigError, config_from_json, random_config


def valid_entry(rng):
    return random_config(rng).to_json()


def mutations(rnd):
    def set_width(obj):
        obj["width"] = rnd.choice(["huge", "BASE", "", None, 1])

    def drop_key(obj):
        del obj[rnd.choice(["width", "stages"])]

    def extra_key(obj):
        obj["depth"] = 3

    def wrong_stage_count(obj):
        if rnd.random() < 0.5:
            obj["stages"] = obj["stages"][:4]
        else:
            obj["stages"].append(dict(obj["stages"][0]))

    def stages_not_list(obj):
        obj["stages"] = {"0": obj["stages"][0]}

    def stage_missing_key(obj):
        del obj["stages"][rnd.randrange(5)][rnd.choice(["expansion", "kernel", "extract", "patch"])]

    def stage_extra_key(obj):
        obj["stages"][rnd.randrange(5)]["stride"] = 2

    def bad_expansion(obj):
        obj["stages"][rnd.randrange(5)]["expansion"] = rnd.choice([2, 5, 8, "4", 4.5, True, None])

    def bad_kernel(obj):
        obj["stages"][rnd.randrange(5)]["kernel"] = rnd.choice([1, 2, 4, 9, "7", 5.5, False])

    def bad_patch(obj):
        obj["stages"][rnd.randrange(5)]["patch"] = rnd.choice([0, 17, -3, 100, "8", 2.5])

    def bad_extract(obj):
        s = rnd.randrange(5)
        wrong_stage = (s + rnd.randrange(1, 5)) % 5
        obj["stages"][s]["extract"] = rnd.choice(
            [0, 21, -1, 4 * wrong_stage + 1 if wrong_stage != s else 99, "3", 2.5]
        )

    def no_extraction(obj):
        for st in obj["stages"]:
            st["extract"] = None

    return [
        set_width, drop_key, extra_key, wrong_stage_count, stages_not_list,
        stage_missing_key, stage_extra_key, bad_expansion, bad_kernel,
        bad_patch, bad_extract, no_extraction,
    ]


def invalid_entry(rng, rnd, muts):
    while True:
        obj = valid_entry(rng)
        rnd.choice(muts)(obj)
        try:
            config_from_json(obj)
        except ConfigError:
            return obj
        # mutation happened to keep the config valid (e.g. extract landed
        # in range); draw again


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="exporter/testdata/config_corpus.json")
    parser.add_argument("--count", type=int, default=200)
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    rnd = random.Random(args.seed)
    muts = mutations(rnd)
    entries = []
    for i in range(args.count):
        if i % 2 == 0:
            obj, valid = valid_entry(rng), True
            config_from_json(obj)  # sanity
        else:
            obj, valid = invalid_entry(rng, rnd, muts), False
        entries.append({"id": i, "valid": valid, "config": obj})

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(entries, indent=1))
    n_valid = sum(e["valid"] for e in entries)
    print(f"wrote {len(entries)} entries ({n_valid} valid, {len(entries) - n_valid} invalid) to {out}")


if __name__ == "__main__":
    main()
