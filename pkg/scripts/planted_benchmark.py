"""Cross-validated accuracy of each ablation variant on the planted-signal corpus,
plus the structure-only probe and the pooled early-detection curve of the full model."""

import argparse

from gard.benchmark import EARLY_DEADLINES, bench_events, early_curve, probe, run_variant
from gard.losses import VARIANTS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", default="full,sup", help=f"comma list from {sorted(VARIANTS)}")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    events = bench_events()
    print(f"structure probe accuracy: {probe(events):.4f}")
    runs = {}
    for v in args.variants.split(","):
        runs[v] = run_variant(events, v, jobs=args.jobs)
        r = runs[v]
        print(f"{v:5s} accuracy={r.accuracy:.4f} folds={[round(a, 3) for a in r.cv.fold_accuracies]} "
              f"({r.seconds:.0f}s)", flush=True)
    if "full" in runs:
        for d, acc in early_curve(events, runs["full"], EARLY_DEADLINES).points:
            print(f"deadline {d:6.1f} min  accuracy {acc:.4f}")


if __name__ == "__main__":
    main()
