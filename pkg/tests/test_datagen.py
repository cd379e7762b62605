import numpy as np
import pytest
from scipy import stats

from gard.datagen import (
    NON_RUMOR,
    OSCILLATING,
    RUMOR,
    STATIC,
    GenSpec,
    Tree,
    balanced_labels,
    drift_direction,
    event_rng,
    gen_corpus,
    gen_event,
    gen_events,
    gen_tree,
    plant_semantics,
)
from gard.errors import ConfigError
from gard.graphdata import read_corpus, validate_event


def chain(times):
    n = len(times)
    return Tree(edges=[(j - 1, j) for j in range(1, n)], times=list(times),
                parent=[-1] + list(range(n - 1)), depth=list(range(n)))


def test_single_node_tree():
    tree = gen_tree(GenSpec(min_nodes=1, max_nodes=1), np.random.default_rng(0))
    assert tree.n == 1 and tree.edges == []


def test_tree_sizes_and_timestamps_over_many_draws():
    spec = GenSpec(min_nodes=5, max_nodes=40)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        tree = gen_tree(spec, rng)
        assert 5 <= tree.n <= 40
        for p, c in tree.edges:
            assert tree.times[c] > tree.times[p]
            assert p < c


def test_noiseless_non_rumor_chain_is_exact():
    spec = GenSpec(noise_sigma=0.0, drift_scale=0.5, d=4)
    u = drift_direction(spec)
    x = plant_semantics(chain([0.0, 10.0, 20.0]), NON_RUMOR, spec, np.random.default_rng(0), u)
    np.testing.assert_allclose(x[1], x[0] + 0.5 * u, atol=1e-12)
    np.testing.assert_allclose(x[2], x[1] + 0.5 * u, atol=1e-12)


def test_noiseless_rumor_reverses_after_flip():
    spec = GenSpec(noise_sigma=0.0, drift_scale=0.5, flip_delay_min=30.0, d=4)
    u = drift_direction(spec)
    x = plant_semantics(chain([0.0, 10.0, 45.0]), RUMOR, spec, np.random.default_rng(0), u)
    np.testing.assert_allclose(x[1], x[0] + 0.5 * u, atol=1e-12)
    np.testing.assert_allclose(x[2], x[1] - 0.5 * u, atol=1e-12)


def test_four_class_patterns_noiseless():
    spec = GenSpec(noise_sigma=0.0, classes=4, d=3)
    u = drift_direction(spec)
    tree = chain([0.0, 1.0, 2.0, 3.0])
    osc = plant_semantics(tree, OSCILLATING, spec, np.random.default_rng(0), u)
    steps = [(osc[j] - osc[j - 1]) @ u for j in range(1, 4)]
    np.testing.assert_allclose(steps, [0.5, -0.5, 0.5], atol=1e-12)
    flat = plant_semantics(tree, STATIC, spec, np.random.default_rng(0), u)
    np.testing.assert_allclose(np.diff(flat, axis=0), 0.0, atol=1e-12)


def test_post_flip_drift_sign_differs_by_class():
    spec = GenSpec(n_events=500, seed=11)
    u = drift_direction(spec)
    by_class = {NON_RUMOR: [], RUMOR: []}
    for ev in gen_events(spec):
        x, t = ev.features, ev.times
        for p, c in ev.edges:
            if t[c] >= spec.flip_delay_min:
                by_class[ev.label].append((x[c] - x[p]) @ u)
    for label, sign in ((NON_RUMOR, 1), (RUMOR, -1)):
        vals = np.array(by_class[label])
        lo, hi = stats.t.interval(0.999, len(vals) - 1, loc=vals.mean(), scale=stats.sem(vals))
        assert sign * lo > 0 and sign * hi > 0


def test_structure_does_not_depend_on_label():
    spec = GenSpec(classes=4)
    u = drift_direction(spec)
    for i in range(20):
        shapes = {(gen_event(spec, i, y, u).edges, tuple(gen_event(spec, i, y, u).times)) for y in range(4)}
        assert len(shapes) == 1


def test_balanced_labels_and_validation():
    spec = GenSpec(n_events=10)
    evs = gen_events(spec)
    assert sorted(e.label for e in evs).count(0) == 5
    for n, c in ((11, 2), (13, 4)):
        counts = np.bincount(balanced_labels(n, c))
        assert counts.max() - counts.min() <= 1
    for ev in evs:
        validate_event(ev)


def test_per_event_streams_are_order_independent():
    spec = GenSpec(n_events=12, seed=5)
    u = drift_direction(spec)
    labels = balanced_labels(12, 2)
    backwards = [gen_event(spec, i, labels[i], u) for i in reversed(range(12))][::-1]
    assert backwards == gen_events(spec)
    assert event_rng(5, 3).random() == event_rng(5, 3).random()


def test_same_seed_gives_identical_file(tmp_path):
    spec = GenSpec(n_events=30, seed=7)
    gen_corpus(spec, tmp_path / "a.jsonl")
    gen_corpus(spec, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl.spec.json").read_text() == spec.to_json() + "\n"
    corpus = read_corpus(tmp_path / "a.jsonl")
    assert len(corpus) == 30 and corpus.d == spec.d and corpus.classes == 2


@pytest.mark.parametrize("bad", [dict(classes=3), dict(min_nodes=0), dict(min_nodes=5, max_nodes=4),
                                 dict(noise_sigma=-1), dict(mean_gap_min=0)])
def test_spec_validation(bad):
    with pytest.raises(ConfigError):
        GenSpec(**bad)
