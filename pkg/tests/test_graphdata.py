import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gard import numkernel as nk
from gard.errors import ConfigError
from gard.graphdata import (
    CorpusError,
    EventGraph,
    NoPairs,
    SchemaError,
    apply_mask,
    build_adjacency,
    extract_pairs,
    mask_count,
    normalize_adjacency,
    plan_mask,
    read_corpus,
    slice_event,
    sparse_normalized_adjacency,
    write_corpus,
)


def event(edges, n=None, times=None, d=2, label=0, eid="ev"):
    n = n if n is not None else 1 + max([c for _, c in edges], default=0)
    times = times if times is not None else [float(i) for i in range(n)]
    x = np.arange(n * d, dtype=float).reshape(n, d)
    return EventGraph.from_arrays(eid, label, times, x, edges)


@st.composite
def trees(draw, max_n=12, d=3):
    n = draw(st.integers(1, max_n))
    parents = [draw(st.integers(0, j - 1)) for j in range(1, n)]
    gaps = draw(st.lists(st.floats(0.1, 50.0), min_size=n - 1, max_size=n - 1))
    times = [0.0]
    for j, p in enumerate(parents, start=1):
        times.append(times[p] + gaps[j - 1])
    x = np.array(draw(st.lists(st.floats(-5, 5), min_size=n * d, max_size=n * d))).reshape(n, d)
    edges = [(p, j) for j, p in enumerate(parents, start=1)]
    return EventGraph.from_arrays("h", 0, times, x, edges)


# ---------------------------------------------------------------------------
# adjacency


def test_adjacency_transcribes_edges():
    a = build_adjacency(event([(0, 1), (0, 2)]))
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[0, 2] = 1.0
    np.testing.assert_array_equal(a, expected)
    assert build_adjacency(event([], n=1)).tolist() == [[0.0]]
    assert np.count_nonzero(build_adjacency(event([(0, 1), (1, 2)]))) == 2


def test_normalized_adjacency_hand_values():
    assert normalize_adjacency(np.zeros((1, 1))).tolist() == [[1.0]]
    np.testing.assert_allclose(normalize_adjacency(build_adjacency(event([(0, 1)]))), 0.5, atol=1e-15)
    star = normalize_adjacency(build_adjacency(event([(0, 1), (0, 2)])))
    assert star[0, 0] == pytest.approx(1 / 3, abs=1e-15)
    assert star[0, 1] == pytest.approx(1 / math.sqrt(6), abs=1e-15)
    assert star[0, 2] == pytest.approx(1 / math.sqrt(6), abs=1e-15)
    assert star[1, 1] == pytest.approx(0.5, abs=1e-15)
    assert star[2, 2] == pytest.approx(0.5, abs=1e-15)


@given(trees())
@settings(max_examples=60, deadline=None)
def test_sparse_and_dense_normalization_agree_and_are_symmetric(ev):
    dense = normalize_adjacency(build_adjacency(ev))
    np.testing.assert_allclose(sparse_normalized_adjacency(ev).toarray(), dense, atol=1e-15)
    np.testing.assert_allclose(dense, dense.T, atol=0)
    # spectrum of the renormalized operator lies in (-1, 1]
    eig = np.linalg.eigvalsh(dense)
    assert eig.max() <= 1 + 1e-12 and eig.min() > -1


# ---------------------------------------------------------------------------
# pairs and masking


def test_extract_pairs_rows_follow_edges():
    ev = event([(0, 1), (0, 2), (1, 3)])
    xp, xc = extract_pairs(ev)
    np.testing.assert_array_equal(xp, ev.features[[0, 0, 1]])
    np.testing.assert_array_equal(xc, ev.features[[1, 2, 3]])
    assert len(extract_pairs(event([(0, 1)]))[0]) == 1
    with pytest.raises(NoPairs):
        extract_pairs(event([], n=1))


def test_mask_counts():
    rng = np.random.default_rng(0)
    assert len(plan_mask(8, 0.25, rng).masked_indices) == 2
    assert mask_count(3, 0.25) == 1
    a = plan_mask(10, 0.25, np.random.default_rng(5))
    b = plan_mask(10, 0.25, np.random.default_rng(5))
    assert a == b
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ConfigError):
            plan_mask(4, bad, rng)


def test_apply_mask_leaves_unmasked_rows_byte_identical():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 4))
    plan = plan_mask(3, 0.25, rng)
    token = nk.tensor(rng.standard_normal((1, 4)))
    out = apply_mask(nk.constant(x), plan, token).data
    for i in range(3):
        if i in plan.masked_indices:
            np.testing.assert_array_equal(out[i], token.data[0])
        else:
            assert out[i].tobytes() == x[i].tobytes()


def test_mask_token_receives_gradient_from_masked_rows_only():
    x = nk.constant(np.ones((5, 2)))
    token = nk.tensor(np.zeros((1, 2)))
    plan = plan_mask(5, 0.4, np.random.default_rng(2))
    nk.sum_all(apply_mask(x, plan, token)).backward()
    np.testing.assert_array_equal(token.grad, [[2.0, 2.0]])


# ---------------------------------------------------------------------------
# slicing


def test_slice_examples():
    ev = event([(0, 1), (1, 2)], times=[0.0, 5.0, 30.0])
    cut = slice_event(ev, 10)
    assert cut.n == 2 and cut.edges == ((0, 1),)
    root_only = slice_event(ev, 0)
    assert root_only.n == 1 and root_only.edges == ()
    assert slice_event(ev, 1000) == ev


@given(trees(), st.floats(0, 400), st.floats(0, 400))
@settings(max_examples=80, deadline=None)
def test_slice_is_monotone_and_consistent(ev, a, b):
    lo, hi = sorted((a, b))
    small, big = slice_event(ev, lo), slice_event(ev, hi)
    assert small.n <= big.n
    assert {n.t_offset_min for n in small.nodes} <= {n.t_offset_min for n in big.nodes} | {0.0}
    # slicing a slice at a later deadline changes nothing
    assert slice_event(small, hi) == small
    assert slice_event(big, lo) == small


# ---------------------------------------------------------------------------
# validation and I/O


@pytest.mark.parametrize(
    "edges,times,match",
    [
        ([(0, 0)], [0.0], "self-loop"),
        ([(0, 1), (1, 0)], [0.0, 1.0], "source post"),
        ([(0, 5)], [0.0, 1.0], "range"),
        ([(0, 1)], [0.0, -1.0], ">= 0"),
        ([(0, 1)], [3.0, 4.0], "must be 0"),
    ],
)
def test_invalid_events_rejected(edges, times, match):
    with pytest.raises(SchemaError, match=match):
        EventGraph.from_arrays("bad", 0, times, np.zeros((len(times), 2)), edges)


def test_cycle_rejected():
    with pytest.raises(SchemaError):
        EventGraph.from_arrays("cyc", 0, [0.0, 1, 2, 3], np.zeros((4, 1)), [(0, 1), (1, 2), (2, 3), (3, 1)])


def test_roundtrip_and_empty_file(tmp_path):
    evs = [event([(0, 1), (0, 2)], eid="a"), event([(0, 1)], label=1, eid="b")]
    path = tmp_path / "c.jsonl"
    write_corpus(evs, path)
    corpus = read_corpus(path)
    assert corpus.events == evs
    assert corpus.d == 2 and corpus.classes == 2
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert len(read_corpus(empty)) == 0


def test_feature_length_mismatch_names_event(tmp_path):
    path = tmp_path / "c.jsonl"
    write_corpus([event([(0, 1)], eid="good")], path)
    rec = {"event_id": "short-one", "label": 0, "nodes": [{"t": 0.0, "x": [1.0]}], "edges": []}
    with path.open("a") as fh:
        fh.write(json.dumps(rec) + "\n")
    with pytest.raises(SchemaError, match="short-one"):
        read_corpus(path)


def test_headerless_dimension_drift_is_corpus_error(tmp_path):
    path = tmp_path / "c.jsonl"
    recs = [
        {"event_id": "a", "label": 0, "nodes": [{"t": 0.0, "x": [1.0, 2.0]}], "edges": []},
        {"event_id": "b", "label": 0, "nodes": [{"t": 0.0, "x": [1.0]}], "edges": []},
    ]
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    with pytest.raises(CorpusError):
        read_corpus(path)


def test_bad_json_reports_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"schema": "gard-corpus/1", "d": 1, "classes": 2}\n{not json\n')
    with pytest.raises(SchemaError, match="line 2"):
        read_corpus(path)
