"""Synthetic propagation corpora with a planted semantic-evolvement signal.

Tree shape and timestamps are drawn before the label is consulted, from a
per-event stream seeded by ``(seed, event index)``, so structure carries no
class information.  The class lives only in how a child's feature moves
away from its parent's feature.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .graphdata import EventGraph, write_corpus

NON_RUMOR, RUMOR, OSCILLATING, STATIC = 0, 1, 2, 3


@dataclass(frozen=True)
class GenSpec:
    n_events: int = 400
    classes: int = 2
    d: int = 16
    min_nodes: int = 5
    max_nodes: int = 40
    branching_bias: float = 0.5
    mean_gap_min: float = 20.0
    gap_jitter: float = 0.5
    drift_scale: float = 0.5
    flip_delay_min: float = 30.0
    noise_sigma: float = 0.2
    root_scale: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.classes not in (2, 4):
            raise ConfigError(f"classes must be 2 or 4, got {self.classes}")
        if self.min_nodes < 1 or self.max_nodes < self.min_nodes:
            raise ConfigError(f"need 1 <= min_nodes <= max_nodes, got {self.min_nodes}..{self.max_nodes}")
        if self.noise_sigma < 0 or self.root_scale < 0 or self.gap_jitter < 0:
            raise ConfigError("noise_sigma, root_scale and gap_jitter must be >= 0")
        if self.mean_gap_min <= 0 or self.d < 1 or self.n_events < 0:
            raise ConfigError("mean_gap_min must be > 0, d >= 1 and n_events >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Tree:
    edges: list[tuple[int, int]] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    parent: list[int] = field(default_factory=list)  # -1 for the root
    depth: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.times)


def event_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def drift_direction(spec: GenSpec) -> np.ndarray:
    v = np.random.default_rng([spec.seed, 2**31 - 1]).standard_normal(spec.d)
    return v / np.linalg.norm(v)


def gen_tree(spec: GenSpec, rng: np.random.Generator) -> Tree:
    """Preferential random recursive tree with strictly increasing child timestamps."""
    n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
    tree = Tree(times=[0.0], parent=[-1], depth=[0])
    kids = [0]
    for j in range(1, n):
        w = 1.0 + spec.branching_bias * np.asarray(kids, dtype=np.float64)
        p = int(rng.choice(j, p=w / w.sum()))
        gap = spec.mean_gap_min * np.exp(spec.gap_jitter * rng.standard_normal() - spec.gap_jitter ** 2 / 2)
        tree.edges.append((p, j))
        tree.times.append(tree.times[p] + float(gap))
        tree.parent.append(p)
        tree.depth.append(tree.depth[p] + 1)
        kids[p] += 1
        kids.append(0)
    return tree


def drift_sign(label: int, tree: Tree, node: int, flip_delay: float) -> float:
    if label == NON_RUMOR:
        return 1.0
    if label == RUMOR:
        return 1.0 if tree.times[node] < flip_delay else -1.0
    if label == OSCILLATING:
        return 1.0 if tree.depth[node] % 2 else -1.0
    return 0.0


def plant_semantics(tree: Tree, label: int, spec: GenSpec, rng: np.random.Generator,
                    u: np.ndarray | None = None) -> np.ndarray:
    """Node features: root noise, then child = parent + sign * scale * u + noise."""
    if u is None:
        u = drift_direction(spec)
    x = np.empty((tree.n, spec.d))
    x[0] = spec.root_scale * rng.standard_normal(spec.d)
    for j in range(1, tree.n):
        sign = drift_sign(label, tree, j, spec.flip_delay_min)
        x[j] = x[tree.parent[j]] + sign * spec.drift_scale * u
        if spec.noise_sigma:
            x[j] += spec.noise_sigma * rng.standard_normal(spec.d)
    return x


def balanced_labels(n_events: int, classes: int) -> list[int]:
    return [i % classes for i in range(n_events)]


def gen_event(spec: GenSpec, index: int, label: int, u: np.ndarray) -> EventGraph:
    rng = event_rng(spec.seed, index)
    tree = gen_tree(spec, rng)
    x = plant_semantics(tree, label, spec, rng, u)
    return EventGraph.from_arrays(f"e{index:05d}", label, tree.times, x, tree.edges)


def gen_events(spec: GenSpec) -> list[EventGraph]:
    u = drift_direction(spec)
    labels = balanced_labels(spec.n_events, spec.classes)
    return [gen_event(spec, i, y, u) for i, y in enumerate(labels)]


def gen_corpus(spec: GenSpec, path) -> list[EventGraph]:
    """Write the corpus as JSONL and the spec next to it (``<path>.spec.json``)."""
    events = gen_events(spec)
    write_corpus(events, path, classes=spec.classes)
    Path(str(path) + ".spec.json").write_text(spec.to_json() + "\n")
    return events


# ---------------------------------------------------------------------------
# structure-only probe


def structure_stats(ev: EventGraph) -> np.ndarray:
    """Size, depth and branching statistics; no feature values."""
    n = ev.n
    parent = {c: p for p, c in ev.edges}
    depth = np.zeros(n)
    for j in range(1, n):
        k, steps = j, 0
        while k in parent and steps <= n:
            k = parent[k]
            steps += 1
        depth[j] = steps
    out_deg = np.bincount([p for p, _ in ev.edges], minlength=n).astype(float)
    internal = out_deg[out_deg > 0]
    return np.array([
        n,
        np.log(n),
        depth.max(),
        depth.mean(),
        out_deg.max(),
        internal.mean() if internal.size else 0.0,
        float((out_deg == 0).mean()),
        out_deg[0],
        ev.times.max(),
    ])


def structure_probe_accuracy(events, splits) -> float:
    """Pooled test accuracy of a logistic head on structure statistics only."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    feats = np.array([structure_stats(e) for e in events])
    labels = np.array([e.label for e in events])
    correct = 0
    total = 0
    for train, test in splits:
        clf = make_pipeline(StandardScaler(), LogisticRegression(max_iter=1000))
        clf.fit(feats[train], labels[train])
        correct += int((clf.predict(feats[test]) == labels[test]).sum())
        total += len(test)
    return correct / total
