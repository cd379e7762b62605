"""Sweep the reconstruction weight on the planted-signal corpus and print accuracy per value."""

import argparse

from gard.benchmark import ALPHA1_GRID, alpha1_sweep, bench_events, interior_max


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    points = []
    events = bench_events()
    for a in ALPHA1_GRID:
        (pt,) = alpha1_sweep(events, grid=(a,), jobs=args.jobs)
        points.append(pt)
        print(f"alpha1={a:<5} accuracy={pt[1]:.4f}", flush=True)
    print("interior maximum:", interior_max(points))


if __name__ == "__main__":
    main()
