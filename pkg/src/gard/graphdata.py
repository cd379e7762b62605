"""Propagation events, adjacency construction, masking, deadline slicing and corpus I/O.

Corpus files are JSON Lines.  The first record is a header
``{"schema": "gard-corpus/1", "d": <int>, "classes": <int>}``; every later
record is one event::

    {"event_id": "e0", "label": 1,
     "nodes": [{"t": 0.0, "x": [...]}, ...],
     "edges": [[0, 1], [0, 2]]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .numkernel import Tensor, add, constant, matmul, mul

SCHEMA = "gard-corpus/1"


class SchemaError(ValueError):
    """A record violates the event/corpus contract."""


class CorpusError(ValueError):
    """Events are individually valid but inconsistent with each other."""


class NoPairs(ValueError):
    """The event has no parent-child edges."""


@dataclass(frozen=True)
class PostNode:
    t_offset_min: float
    feature: tuple[float, ...]


@dataclass(frozen=True)
class EventGraph:
    event_id: str
    label: int
    nodes: tuple[PostNode, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def feature_dim(self) -> int:
        return len(self.nodes[0].feature) if self.nodes else 0

    @property
    def features(self) -> np.ndarray:
        return np.array([p.feature for p in self.nodes], dtype=np.float64).reshape(self.n, -1)

    @property
    def times(self) -> np.ndarray:
        return np.array([p.t_offset_min for p in self.nodes], dtype=np.float64)

    @classmethod
    def from_arrays(cls, event_id, label, times, features, edges) -> "EventGraph":
        features = np.asarray(features, dtype=np.float64)
        nodes = tuple(
            PostNode(float(t), tuple(float(v) for v in row)) for t, row in zip(times, features)
        )
        ev = cls(str(event_id), int(label), nodes, tuple((int(p), int(c)) for p, c in edges))
        validate_event(ev)
        return ev


def validate_event(ev: EventGraph) -> None:
    """Raise SchemaError naming the event and field when an invariant fails."""
    tag = f"event {ev.event_id!r}"
    if ev.n == 0:
        raise SchemaError(f"{tag}: nodes is empty")
    if ev.label < 0:
        raise SchemaError(f"{tag}: label must be a nonnegative class index")
    d = len(ev.nodes[0].feature)
    for i, node in enumerate(ev.nodes):
        if len(node.feature) != d:
            raise SchemaError(
                f"{tag}: nodes[{i}].x has length {len(node.feature)}, expected {d}"
            )
        if not all(math.isfinite(v) for v in node.feature):
            raise SchemaError(f"{tag}: nodes[{i}].x has non-finite entries")
        if not (math.isfinite(node.t_offset_min) and node.t_offset_min >= 0):
            raise SchemaError(f"{tag}: nodes[{i}].t must be finite and >= 0")
    if ev.nodes[0].t_offset_min != 0:
        raise SchemaError(f"{tag}: nodes[0].t (source post) must be 0")
    children: dict[int, list[int]] = {}
    for k, (p, c) in enumerate(ev.edges):
        if not (0 <= p < ev.n and 0 <= c < ev.n):
            raise SchemaError(f"{tag}: edges[{k}] = ({p}, {c}) out of range for {ev.n} nodes")
        if p == c:
            raise SchemaError(f"{tag}: edges[{k}] is a self-loop")
        if c == 0:
            raise SchemaError(f"{tag}: edges[{k}] points into the source post")
        if ev.nodes[c].t_offset_min < ev.nodes[p].t_offset_min:
            raise SchemaError(f"{tag}: edges[{k}] child is earlier than its parent")
        children.setdefault(p, []).append(c)
    _reject_cycles(ev, children)


def _reject_cycles(ev: EventGraph, children: dict[int, list[int]]) -> None:
    state = [0] * ev.n  # 0 new, 1 open, 2 done
    for start in range(ev.n):
        if state[start]:
            continue
        stack = [(start, iter(children.get(start, ())))]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state[nxt] == 1:
                raise SchemaError(f"event {ev.event_id!r}: edges contain a cycle through node {nxt}")
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(children.get(nxt, ()))))


# ---------------------------------------------------------------------------
# adjacency


def build_adjacency(ev: EventGraph) -> np.ndarray:
    a = np.zeros((ev.n, ev.n))
    for p, c in ev.edges:
        if not (0 <= p < ev.n and 0 <= c < ev.n):
            raise SchemaError(f"event {ev.event_id!r}: edge ({p}, {c}) out of range")
        a[p, c] = 1.0
    return a


def normalize_adjacency(a) -> np.ndarray:
    """D^-1/2 (A + A^T + I) D^-1/2 with D the row sums of A + A^T + I."""
    a = np.asarray(a, dtype=np.float64)
    s = np.minimum(a + a.T, 1.0) + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(s.sum(axis=1))
    return s * inv_sqrt[:, None] * inv_sqrt[None, :]


def sparse_normalized_adjacency(ev: EventGraph) -> sp.csr_matrix:
    """Sparse equivalent of ``normalize_adjacency(build_adjacency(ev))``."""
    n = ev.n
    if ev.edges:
        e = np.array(ev.edges)
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        s = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        s.data[:] = 1.0  # duplicate or reciprocal edges collapse to one link
        s = s + sp.identity(n, format="csr")
    else:
        s = sp.identity(n, format="csr")
    inv_sqrt = 1.0 / np.sqrt(np.asarray(s.sum(axis=1)).ravel())
    d = sp.diags(inv_sqrt)
    return (d @ s @ d).tocsr()


# ---------------------------------------------------------------------------
# local pairs, masking, slicing


def extract_pairs(ev: EventGraph) -> tuple[np.ndarray, np.ndarray]:
    """Parent and child feature rows, one row per edge, in edge order."""
    if not ev.edges:
        raise NoPairs(f"event {ev.event_id!r} has no parent-child pairs")
    x = ev.features
    e = np.array(ev.edges)
    return x[e[:, 0]], x[e[:, 1]]


@dataclass(frozen=True)
class MaskPlan:
    masked_indices: tuple[int, ...]
    n: int

    @property
    def indicator(self) -> np.ndarray:
        m = np.zeros((self.n, 1))
        m[list(self.masked_indices), 0] = 1.0
        return m


def mask_count(n: int, ratio: float) -> int:
    return max(1, int(math.floor(ratio * n)))


def plan_mask(n: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    if not 0 < ratio < 1:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}")
    if n < 1:
        raise ValueError("cannot mask an empty node set")
    picked = rng.choice(n, size=mask_count(n, ratio), replace=False)
    return MaskPlan(tuple(sorted(int(i) for i in picked)), n)


def apply_mask(x: Tensor, plan: MaskPlan, token: Tensor) -> Tensor:
    """Replace masked rows of ``x`` by ``token`` (1 x d); gradient reaches the token."""
    ind = plan.indicator
    keep = constant(np.broadcast_to(1.0 - ind, x.shape))
    return add(mul(x, keep), matmul(constant(ind), token))


def mask_features(x: Tensor, ratio: float, token: Tensor, rng: np.random.Generator):
    plan = plan_mask(x.rows, ratio, rng)
    return apply_mask(x, plan, token), plan


def slice_event(ev: EventGraph, deadline_min: float) -> EventGraph:
    """Keep posts published by ``deadline_min``; the source post always survives."""
    if deadline_min < 0:
        raise ValueError("deadline must be >= 0")
    keep = [i for i, node in enumerate(ev.nodes) if i == 0 or node.t_offset_min <= deadline_min]
    remap = {old: new for new, old in enumerate(keep)}
    edges = tuple(
        (remap[p], remap[c]) for p, c in ev.edges if p in remap and c in remap
    )
    return EventGraph(ev.event_id, ev.label, tuple(ev.nodes[i] for i in keep), edges)


# ---------------------------------------------------------------------------
# corpus I/O


@dataclass
class Corpus:
    events: list[EventGraph] = field(default_factory=list)
    d: int = 0
    classes: int = 0

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.events], dtype=int)


def _event_to_record(ev: EventGraph) -> dict:
    return {
        "event_id": ev.event_id,
        "label": ev.label,
        "nodes": [{"t": n.t_offset_min, "x": list(n.feature)} for n in ev.nodes],
        "edges": [list(e) for e in ev.edges],
    }


def _event_from_record(rec: dict, lineno: int) -> EventGraph:
    eid = rec.get("event_id", f"<line {lineno}>")
    for key in ("event_id", "label", "nodes", "edges"):
        if key not in rec:
            raise SchemaError(f"line {lineno}: event {eid!r} is missing field {key!r}")
    try:
        nodes = tuple(
            PostNode(float(n["t"]), tuple(float(v) for v in n["x"])) for n in rec["nodes"]
        )
        edges = tuple((int(p), int(c)) for p, c in rec["edges"])
        label = rec["label"]
        if isinstance(label, bool) or not isinstance(label, int):
            raise SchemaError(f"line {lineno}: event {eid!r} label must be an integer")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"line {lineno}: event {eid!r} malformed nodes/edges ({exc})") from exc
    ev = EventGraph(str(rec["event_id"]), label, nodes, edges)
    try:
        validate_event(ev)
    except SchemaError as exc:
        raise SchemaError(f"line {lineno}: {exc}") from exc
    return ev


def write_corpus(events: Iterable[EventGraph], path, classes: int | None = None) -> None:
    events = list(events)
    d = events[0].feature_dim if events else 0
    if classes is None:
        classes = max((e.label for e in events), default=-1) + 1
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": SCHEMA, "d": d, "classes": classes}) + "\n")
        for ev in events:
            if ev.feature_dim != d:
                raise CorpusError(f"event {ev.event_id!r} has d={ev.feature_dim}, corpus d={d}")
            fh.write(json.dumps(_event_to_record(ev)) + "\n")


def read_corpus(path) -> Corpus:
    corpus = Corpus()
    header = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise SchemaError(f"line {lineno}: record must be a JSON object")
            if header is None and "schema" in rec:
                if rec["schema"] != SCHEMA:
                    raise SchemaError(f"line {lineno}: unknown schema {rec['schema']!r}")
                header = rec
                corpus.d = int(rec["d"])
                corpus.classes = int(rec["classes"])
                continue
            ev = _event_from_record(rec, lineno)
            if corpus.d == 0 and not corpus.events:
                corpus.d = ev.feature_dim
            if ev.feature_dim != corpus.d:
                err = SchemaError if header is not None else CorpusError
                raise err(
                    f"line {lineno}: event {ev.event_id!r} feature length "
                    f"{ev.feature_dim} != corpus d={corpus.d}"
                )
            if corpus.classes and ev.label >= corpus.classes:
                raise SchemaError(
                    f"line {lineno}: event {ev.event_id!r} label {ev.label} "
                    f">= classes={corpus.classes}"
                )
            corpus.events.append(ev)
    if not corpus.classes and corpus.events:
        corpus.classes = int(corpus.labels.max()) + 1
    return corpus
