"""Run the bundled presets over several seeds and print per-pillar means.

    python3 scripts/run_experiments.py --seeds 5 --json results.json
"""

import argparse
import json
import time

import numpy as np

from fedtrust import experiment as ex
from fedtrust.metrics import TAXONOMY

EXTRA = ("participation_variation", "certified_robustness", "performance")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--presets", nargs="+", default=list(ex.PRESETS), choices=ex.PRESETS)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--json", help="also dump every per-seed score here")
    args = parser.parse_args()

    rows = {}
    for name in args.presets:
        preset = ex.load_preset(name)
        runs = []
        start = time.perf_counter()
        for seed in range(args.seeds):
            report = ex.simulate(preset.with_seed(seed))[2]
            entry = {"seed": seed, "global": report.global_score}
            entry.update({p.name: p.score for p in report.pillars})
            entry.update({m: report.metric(m).normalized for m in EXTRA})
            runs.append(entry)
        rows[name] = runs
        print(f"{name}: {args.seeds} seeds in {time.perf_counter() - start:.1f}s")

    cols = ["global", *TAXONOMY, *EXTRA]
    print()
    print(f"{'preset':<8}" + "".join(f"{c[:13]:>14}" for c in cols))
    for name, runs in rows.items():
        cells = []
        for c in cols:
            vals = np.array([r[c] for r in runs], dtype=float)
            cells.append(f"{vals.mean():>8.3f}±{vals.std():.2f}")
        print(f"{name:<8}" + "".join(f"{c:>14}" for c in cells))

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
