"""Single-fold comparison of variants across generator settings (quick exploration).

Example:
    python scripts/generator_grid.py --gen '{"root_scale": 0.5}' --gen '{"noise_sigma": 0.4}'
"""

import argparse
import json
import time

from gard.datagen import GenSpec, gen_events
from gard.training import TrainConfig, evaluate, kfold_split, train_fold


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--gen", action="append", default=[], help="JSON dict of GenSpec overrides")
    ap.add_argument("--variants", default="sup,full")
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--fold", type=int, default=0)
    args = ap.parse_args()
    for g in args.gen or ["{}"]:
        events = gen_events(GenSpec(**json.loads(g)))
        train_idx, test_idx = kfold_split([e.label for e in events], 5, True, 0)[args.fold]
        train = [events[i] for i in train_idx]
        test = [events[i] for i in test_idx]
        for v in args.variants.split(","):
            t0 = time.perf_counter()
            cfg = TrainConfig(variant=v, epochs=args.epochs, patience=0)
            res = train_fold(train, cfg, classes=2, seed=args.fold)
            acc = evaluate(res.params, test).accuracy
            print(f"{g} {v:5s} {acc:.4f} ({time.perf_counter() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
