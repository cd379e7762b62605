"""Planted-signal benchmark: variant comparison, structure probe, early curve, weight sweep."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

from .datagen import GenSpec, gen_events, structure_probe_accuracy
from .training import CVResult, TrainConfig, cross_validate, kfold_split, pooled_early_curve

# 60 epochs with the default width keeps full + sup + probe on one core near two minutes
BENCH_TRAIN = TrainConfig(epochs=60, patience=0)
BENCH_GEN = GenSpec()
EARLY_DEADLINES = (0.0, 10.0, 20.0, 30.0, 40.0, 60.0, 80.0, 100.0, 120.0)
ALPHA1_GRID = (0.0, 0.01, 0.05, 0.1, 0.3, 0.5, 0.8, 1.0)


@dataclass
class VariantRun:
    variant: str
    cv: CVResult
    seconds: float

    @property
    def accuracy(self) -> float:
        return self.cv.aggregate.accuracy


def bench_events(spec: GenSpec = BENCH_GEN):
    return gen_events(spec)


def run_variant(events, variant: str, config: TrainConfig = BENCH_TRAIN, jobs: int = 1) -> VariantRun:
    t0 = time.perf_counter()
    cv = cross_validate(events, replace(config, variant=variant), jobs=jobs)
    return VariantRun(variant, cv, time.perf_counter() - t0)


def probe(events, config: TrainConfig = BENCH_TRAIN) -> float:
    splits = kfold_split([e.label for e in events], config.folds, config.stratified, config.seed)
    return structure_probe_accuracy(events, splits)


def early_curve(events, full: VariantRun, deadlines=EARLY_DEADLINES):
    return pooled_early_curve(full.cv, events, deadlines)


def alpha1_sweep(events, grid=ALPHA1_GRID, config: TrainConfig = BENCH_TRAIN, jobs: int = 1):
    return [(a, cross_validate(events, replace(config, alpha1=a), jobs=jobs).aggregate.accuracy)
            for a in grid]


def interior_max(points) -> bool:
    """True when the best value is strictly above both endpoints."""
    accs = [a for _, a in points]
    best = max(accs)
    return accs[0] < best and accs[-1] < best
