"""Exit criteria for the package, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also collected in
the terminal summary) and then asserts the same condition.
"""

import math
import time
import warnings

import numpy as np
import pytest

from gard import numkernel as nk
from gard.benchmark import (
    ALPHA1_GRID,
    BENCH_GEN,
    EARLY_DEADLINES,
    alpha1_sweep,
    bench_events,
    early_curve,
    interior_max,
    probe,
    run_variant,
)
from gard.cli import main
from gard.datagen import GenSpec, gen_events
from gard.graphdata import EventGraph, MaskPlan, slice_event
from gard.losses import rec1_loss, rec2_loss, sup_loss, uniformity_loss
from gard.model import init_params, readout
from gard.selfcheck import FIXTURE_NODES, FIXTURE_SEEDS, fixture_batch, run_suite
from gard.training import kfold_split


@pytest.fixture(scope="module")
def bench():
    """Default corpus plus the full and supervised-only 5-fold runs, shared by 4 and 5."""
    events = bench_events()
    t0 = time.perf_counter()
    full = run_variant(events, "full")
    sup = run_variant(events, "sup")
    probe_acc = probe(events)
    return events, full, sup, probe_acc, time.perf_counter() - t0


def test_criterion_1_gradient_check(verdict):
    t0 = time.perf_counter()
    rows = run_suite(FIXTURE_SEEDS)
    elapsed = time.perf_counter() - t0
    sizes = {s: fixture_batch(s).sizes.tolist() for s in FIXTURE_SEEDS}
    names = {r.tensor for r in rows}
    params = init_params(4, 5, 2, seed=0)
    covered = names == {n for n, _ in params.items()} and {"mask_token", "head.W", "head.b"} <= names
    worst = max(r.rel_err for r in rows)
    ok = (len(FIXTURE_SEEDS) == 3 and all(n == FIXTURE_NODES == 6 for s in sizes.values() for n in s)
          and covered and worst <= 1e-4 and elapsed < 60)
    verdict(1, ok, f"max rel err {worst:.2e} over {len(rows)} tensor checks (<= 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_2_loss_identities(verdict):
    rng = np.random.default_rng(0)
    c = nk.constant
    devs = {}
    xp, xc = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    devs["rec1 perfect"] = abs(rec1_loss(xp, xc, c(xc), c(xp)).item())
    x = rng.standard_normal((6, 4))
    plan = MaskPlan((1, 4), 6)
    z = rng.standard_normal((6, 4))
    z[[1, 4]] = x[[1, 4]]
    devs["rec2 perfect"] = abs(rec2_loss(x, c(z), plan).item())
    labels = np.array([0, 2, 1, 3])
    logits = np.zeros((4, 4))
    logits[np.arange(4), labels] = 1e3
    devs["sup perfect"] = abs(sup_loss(c(logits), labels).item())
    devs["uni identical"] = abs(uniformity_loss(c(np.tile(rng.standard_normal((1, 5)), (7, 1))), t=2.0).item())
    for t, d2 in ((2.0, 1.0), (0.5, 3.7), (5.0, 0.2)):
        m = np.zeros((2, 3))
        m[1, 0] = math.sqrt(d2)
        devs[f"uni pair t={t}"] = abs(uniformity_loss(c(m), t=t).item() - (-t * d2))
    base = rec2_loss(x, c(z), plan).item()
    z2 = z.copy()
    z2[[0, 2, 3, 5]] = rng.standard_normal((4, 4)) * 100
    bit_exact = rec2_loss(x, c(z2), plan).item().hex() == base.hex()
    worst = max(devs.values())
    ok = worst <= 1e-12 and bit_exact
    verdict(2, ok, f"max deviation {worst:.1e} (<= 1e-12); masked-only bit-exact: {bit_exact}")
    assert ok


def test_criterion_3_structural_invariants(verdict):
    rng = np.random.default_rng(3)
    ev = gen_events(GenSpec(n_events=1, min_nodes=30, max_nodes=30, seed=3))[0]
    params = init_params(ev.feature_dim, 16, 2, seed=3)
    ref = readout(params, ev).m.data
    perm_err = 0.0
    for _ in range(100):
        perm = np.concatenate([[0], 1 + rng.permutation(ev.n - 1)])
        inv = np.argsort(perm)
        moved = EventGraph.from_arrays("p", ev.label, ev.times[perm], ev.features[perm],
                                       [(int(inv[a]), int(inv[b])) for a, b in ev.edges])
        perm_err = max(perm_err, float(np.abs(readout(params, moved).m.data - ref).max()))

    slice_ok = True
    events = gen_events(GenSpec(n_events=40, seed=4))
    for _ in range(300):
        e = events[rng.integers(len(events))]
        lo, hi = np.sort(rng.uniform(0, 1.2 * e.times.max(), size=2))
        small, big = slice_event(e, lo), slice_event(e, hi)
        kept_small = {(n.t_offset_min, n.feature) for n in small.nodes}
        kept_big = {(n.t_offset_min, n.feature) for n in big.nodes}
        slice_ok &= small.n <= big.n and kept_small <= kept_big and slice_event(big, lo) == small

    kfold_ok = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for _ in range(200):
            n = int(rng.integers(5, 120))
            folds = int(rng.integers(2, min(n, 10) + 1))
            labels = rng.integers(0, int(rng.integers(1, 5)), size=n)
            for stratified in (True, False):
                splits = kfold_split(labels, folds, stratified, int(rng.integers(1 << 30)))
                tests = [set(te.tolist()) for _, te in splits]
                kfold_ok &= sum(len(t) for t in tests) == n and set().union(*tests) == set(range(n))
                kfold_ok &= all(not (set(tr.tolist()) & set(te.tolist())) for tr, te in splits)
    ok = perm_err <= 1e-10 and slice_ok and kfold_ok
    verdict(3, ok, f"readout perm err {perm_err:.1e} (<= 1e-10) over 100 perms; "
                   f"slice monotone: {slice_ok}; kfold partitions on 200 corpora: {kfold_ok}")
    assert ok


def test_criterion_4_planted_benchmark(bench, verdict):
    events, full, sup, probe_acc, elapsed = bench
    assert len(events) == BENCH_GEN.n_events == 400 and BENCH_GEN.classes == 2 and BENCH_GEN.seed == 0
    checks = {
        "full >= 0.90": full.accuracy >= 0.90,
        "sup <= full - 0.05": sup.accuracy <= full.accuracy - 0.05,
        "probe <= 0.60": probe_acc <= 0.60,
        "runtime < 300s": elapsed < 300,
    }
    failed = [k for k, v in checks.items() if not v]
    ok = not failed
    verdict(4, ok, f"full {full.accuracy:.4f}, sup {sup.accuracy:.4f}, probe {probe_acc:.4f}, "
                   f"{elapsed:.0f}s" + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, checks


def test_criterion_5_early_detection(bench, verdict):
    events, full, *_ = bench
    curve = early_curve(events, full, EARLY_DEADLINES)
    acc = dict(curve.points)
    gain = acc[120.0] - acc[0.0]
    ok = len(curve.points) == len(EARLY_DEADLINES) and gain >= 0.15
    verdict(5, ok, f"acc@0 {acc[0.0]:.4f}, acc@120 {acc[120.0]:.4f}, gain {gain:.4f} (>= 0.15); "
                   f"{len(curve.points)}/{len(EARLY_DEADLINES)} points")
    assert ok


def test_criterion_6_alpha1_sweep(verdict):
    points = alpha1_sweep(bench_events(), ALPHA1_GRID)
    ok = len(points) == 8 and interior_max(points)
    shown = ", ".join(f"{a:g}:{acc:.4f}" for a, acc in points)
    verdict(6, ok, f"alpha1 sweep [{shown}]; best strictly inside: {interior_max(points)}")
    assert ok


def test_criterion_7_determinism(tmp_path, monkeypatch, verdict):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("GARD_SEED", raising=False)
    assert main(["gen", "--seed", "0", "--out", "corpus.jsonl"]) == 0
    blobs = []
    for out in ("first", "second"):
        args = ["--corpus", "corpus.jsonl", "--seed", "0", "--epochs", "3", "--out", out]
        assert main(["train", *args]) == 0
        assert main(["eval", *args]) == 0
        (metrics,) = (tmp_path / out).glob("run-*/metrics.json")
        blobs.append(metrics.read_bytes())
    ok = blobs[0] == blobs[1]
    verdict(7, ok, f"metrics.json byte-identical across two train+eval runs: {ok} ({len(blobs[0])} bytes)")
    assert ok
