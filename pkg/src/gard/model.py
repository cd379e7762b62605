"""GARD networks as forward functions over numkernel tensors.

Two MLP autoencoders work on parent/child feature pairs, a GCN autoencoder
reconstructs masked node features over the undirected propagation graph,
and a linear softmax head classifies the concatenated mean-pooled encodings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import numkernel as nk
from .graphdata import EventGraph, MaskPlan, apply_mask, plan_mask, sparse_normalized_adjacency
from .numkernel import Tensor

MLP_LAYERS = 2
GCN_ENCODER_LAYERS = 2
GCN_DECODER_LAYERS = 1
CHECKPOINT_FORMAT = "gard-params/1"

LOCAL_NETS = ("local1.enc", "local1.dec", "local2.enc", "local2.dec")


@dataclass(frozen=True)
class ModelConfig:
    d: int
    classes: int
    d_h: int = 64
    activation: str = "relu"
    head_hidden: int = 0  # extra hidden layer in the classifier; 0 = single affine map
    gcn_bias: bool = False

    def __post_init__(self):
        if min(self.d, self.d_h, self.classes) < 1:
            raise ValueError("d, d_h and classes must all be >= 1")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")


def _shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    d, h = cfg.d, cfg.d_h
    shapes: dict[str, tuple[int, int]] = {}
    for branch in ("local1", "local2"):
        shapes[f"{branch}.enc.W1"] = (d, h)
        shapes[f"{branch}.enc.b1"] = (1, h)
        shapes[f"{branch}.enc.W2"] = (h, h)
        shapes[f"{branch}.enc.b2"] = (1, h)
        shapes[f"{branch}.dec.W1"] = (h, h)
        shapes[f"{branch}.dec.b1"] = (1, h)
        shapes[f"{branch}.dec.W2"] = (h, d)
        shapes[f"{branch}.dec.b2"] = (1, d)
    shapes["global.enc.W1"] = (d, h)
    shapes["global.enc.W2"] = (h, h)
    shapes["global.dec.W1"] = (h, d)
    if cfg.gcn_bias:
        shapes["global.enc.b1"] = (1, h)
        shapes["global.enc.b2"] = (1, h)
        shapes["global.dec.b1"] = (1, d)
    shapes["mask_token"] = (1, d)
    top = 3 * h
    if cfg.head_hidden:
        shapes["head.W0"] = (cfg.head_hidden, top)
        shapes["head.b0"] = (1, cfg.head_hidden)
        top = cfg.head_hidden
    shapes["head.W"] = (cfg.classes, top)
    shapes["head.b"] = (1, cfg.classes)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    @property
    def theta1(self) -> list[str]:
        return [k for k in self.tensors if k.startswith(("local1.", "local2."))]

    @property
    def theta2(self) -> list[str]:
        return [k for k in self.tensors if k.startswith("global.") or k == "mask_token"]

    @property
    def head(self) -> list[str]:
        return [k for k in self.tensors if k.startswith("head.")]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def clone(self) -> ModelParams:
        return ModelParams(
            self.config,
            {k: nk.tensor(t.data.copy(), name=k) for k, t in self.tensors.items()},
        )

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
            "tensors": {
                k: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
                for k, t in self.tensors.items()
            },
        }

    @classmethod
    def from_dict(cls, blob: dict, expect: ModelConfig | None = None) -> ModelParams:
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint")
        cfg = ModelConfig(**blob["config"])
        if expect is not None and cfg != expect:
            raise ValueError(f"checkpoint config {cfg} does not match {expect}")
        shapes = _shapes(cfg)
        if set(shapes) != set(blob["tensors"]):
            raise ValueError("checkpoint tensor names do not match the model layout")
        tensors = {}
        for name, shape in shapes.items():
            rec = blob["tensors"][name]
            if tuple(rec["shape"]) != shape or len(rec["values"]) != shape[0] * shape[1]:
                raise ValueError(f"shape drift for {name}: stored {rec['shape']}, expected {list(shape)}")
            tensors[name] = nk.tensor(np.array(rec["values"], dtype=np.float64).reshape(shape), name=name)
        return cls(cfg, tensors)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path, expect: ModelConfig | None = None) -> ModelParams:
        return cls.from_dict(json.loads(Path(path).read_text()), expect)


def init_params(d: int, d_h: int, classes: int, seed: int, **options) -> ModelParams:
    """Glorot-uniform weights, zero biases, zero mask token; deterministic per seed."""
    cfg = ModelConfig(d=d, classes=classes, d_h=d_h, **options)
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, (r, c) in _shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("W"):
            bound = np.sqrt(6.0 / (r + c))
            data = rng.uniform(-bound, bound, size=(r, c))
        else:
            data = np.zeros((r, c))
        tensors[name] = nk.tensor(data, name=name)
    params = ModelParams(cfg, tensors)
    _check_layer_counts(params)
    return params


def _check_layer_counts(params: ModelParams) -> None:
    names = params.tensors
    for net in LOCAL_NETS:
        assert sum(k.startswith(net + ".W") for k in names) == MLP_LAYERS, net
    assert sum(k.startswith("global.enc.W") for k in names) == GCN_ENCODER_LAYERS
    assert sum(k.startswith("global.dec.W") for k in names) == GCN_DECODER_LAYERS


# ---------------------------------------------------------------------------
# building blocks


def _act(x: Tensor, kind: str) -> Tensor:
    return nk.relu(x) if kind == "relu" else nk.tanh(x)


def mlp(params: ModelParams, net: str, x: Tensor) -> Tensor:
    """Linear -> activation -> Linear, with biases; linear output."""
    act = params.config.activation
    h = _act(nk.add_bias(nk.matmul(x, params[f"{net}.W1"]), params[f"{net}.b1"]), act)
    return nk.add_bias(nk.matmul(h, params[f"{net}.W2"]), params[f"{net}.b2"])


def gcn_layer(a_hat, h_in: Tensor, w: Tensor, activate: bool, activation: str = "relu",
              bias: Tensor | None = None) -> Tensor:
    """act(Â · H · W); ``a_hat`` may be a dense Tensor, ndarray or sparse matrix."""
    if h_in.cols != w.rows:
        raise nk.DimensionError(f"gcn_layer: features {h_in.shape} do not fit weight {w.shape}")
    hw = nk.matmul(h_in, w)
    out = nk.matmul(a_hat, hw) if isinstance(a_hat, Tensor) else nk.spmm(a_hat, hw)
    if bias is not None:
        out = nk.add_bias(out, bias)
    return _act(out, activation) if activate else out


def _gcn(params: ModelParams, a_hat, h: Tensor, name: str, activate: bool) -> Tensor:
    bias = params.tensors.get(name.replace(".W", ".b"))
    return gcn_layer(a_hat, h, params[name], activate, params.config.activation, bias)


def encode_global(params: ModelParams, a_hat, x: Tensor) -> Tensor:
    h = _gcn(params, a_hat, x, "global.enc.W1", activate=True)
    return _gcn(params, a_hat, h, "global.enc.W2", activate=False)


def local_forward(params: ModelParams, x_p: Tensor, x_c: Tensor):
    """Top-down and bottom-up reconstructions: returns (Z_p, Z_c, H_p, H_c).

    Z_p is decoded from parents and is compared against child features;
    Z_c is decoded from children and is compared against parent features.
    """
    for x in (x_p, x_c):
        if x.cols != params.config.d:
            raise nk.DimensionError(f"local_forward: features {x.shape} but d={params.config.d}")
    h_p = mlp(params, "local1.enc", x_p)
    h_c = mlp(params, "local2.enc", x_c)
    return mlp(params, "local1.dec", h_p), mlp(params, "local2.dec", h_c), h_p, h_c


def global_forward(params: ModelParams, a_hat, x_tilde: Tensor):
    """Returns (Z, H): 2-layer GCN encoding and 1-layer linear GCN reconstruction."""
    if x_tilde.cols != params.config.d:
        raise nk.DimensionError(f"global_forward: features {x_tilde.shape} but d={params.config.d}")
    h = encode_global(params, a_hat, x_tilde)
    z = _gcn(params, a_hat, h, "global.dec.W1", activate=False)
    return z, h


@dataclass
class EventRepresentation:
    m: Tensor
    h_k1: Tensor
    h_k2: Tensor
    h_j: Tensor


def readout(params: ModelParams, event: EventGraph, a_hat=None) -> EventRepresentation:
    """Mean-pooled encodings of the full, unmasked event, concatenated."""
    x = nk.constant(event.features)
    if a_hat is None:
        a_hat = sparse_normalized_adjacency(event)
    h_k1 = nk.mean_rows(mlp(params, "local1.enc", x))
    h_k2 = nk.mean_rows(mlp(params, "local2.enc", x))
    h_j = nk.mean_rows(encode_global(params, a_hat, x))
    return EventRepresentation(nk.concat_cols([h_k1, h_k2, h_j]), h_k1, h_k2, h_j)


def head_logits(params: ModelParams, m: Tensor) -> Tensor:
    if m.cols != 3 * params.config.d_h:
        raise nk.DimensionError(f"classify: representation {m.shape} but 3*d_h={3 * params.config.d_h}")
    if params.config.head_hidden:
        m = nk.relu(nk.add_bias(nk.matmul(m, nk.transpose(params["head.W0"])), params["head.b0"]))
    return nk.add_bias(nk.matmul(m, nk.transpose(params["head.W"])), params["head.b"])


def classify(params: ModelParams, m: Tensor) -> tuple[Tensor, Tensor]:
    """Class probabilities and the logits they came from (one row per event)."""
    logits = head_logits(params, m)
    return nk.row_softmax(logits), logits


# ---------------------------------------------------------------------------
# batching


@dataclass
class PreparedEvent:
    """Per-event arrays cached once per training run."""

    event: EventGraph
    x: np.ndarray
    a_hat: sp.csr_matrix
    edges: np.ndarray  # (N_p, 2)

    @classmethod
    def from_event(cls, ev: EventGraph) -> PreparedEvent:
        edges = np.array(ev.edges, dtype=int).reshape(-1, 2)
        return cls(ev, ev.features, sparse_normalized_adjacency(ev), edges)

    @property
    def n(self) -> int:
        return self.x.shape[0]


def prepare(events: Sequence[EventGraph]) -> list[PreparedEvent]:
    return [PreparedEvent.from_event(e) for e in events]


@dataclass
class GraphBatch:
    """Events stacked into one block-diagonal graph.

    ``pool`` averages node rows per event; ``parent_sel``/``child_sel`` pick
    edge endpoints; ``pair_owner``/``node_owner`` map rows back to events.
    """

    x: np.ndarray
    a_hat: sp.csr_matrix
    pool: sp.csr_matrix
    parent_sel: sp.csr_matrix
    child_sel: sp.csr_matrix
    pair_owner: np.ndarray
    node_owner: np.ndarray
    labels: np.ndarray
    sizes: np.ndarray
    pair_counts: np.ndarray
    mask: MaskPlan | None = None

    @property
    def size(self) -> int:
        return len(self.sizes)

    @classmethod
    def build(cls, prepared: Sequence[PreparedEvent], mask_ratio: float | None = None,
              rng: np.random.Generator | None = None) -> GraphBatch:
        sizes = np.array([p.n for p in prepared])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        n_total = int(sizes.sum())
        x = np.vstack([p.x for p in prepared])
        a_hat = sp.block_diag([p.a_hat for p in prepared], format="csr")
        node_owner = np.repeat(np.arange(len(prepared)), sizes)
        pool = sp.csr_matrix(
            (1.0 / sizes[node_owner], (node_owner, np.arange(n_total))),
            shape=(len(prepared), n_total),
        )
        pair_counts = np.array([len(p.edges) for p in prepared])
        edges = [p.edges + off for p, off in zip(prepared, offsets) if len(p.edges)]
        edges = np.vstack(edges) if edges else np.zeros((0, 2), dtype=int)
        n_pairs = len(edges)
        sel = lambda col: sp.csr_matrix(
            (np.ones(n_pairs), (np.arange(n_pairs), edges[:, col])), shape=(n_pairs, n_total)
        )
        pair_owner = np.repeat(np.arange(len(prepared)), pair_counts)
        mask = None
        if mask_ratio is not None:
            if rng is None:
                raise ValueError("masking needs a seeded generator")
            picked = []
            for p, off in zip(prepared, offsets):
                picked.extend(off + i for i in plan_mask(p.n, mask_ratio, rng).masked_indices)
            mask = MaskPlan(tuple(int(i) for i in picked), n_total)
        labels = np.array([p.event.label for p in prepared], dtype=int)
        return cls(x, a_hat, pool, sel(0), sel(1), pair_owner, node_owner, labels, sizes,
                   pair_counts, mask)


@dataclass
class BatchOutputs:
    m: Tensor
    logits: Tensor
    z_p: Tensor | None = None  # reconstructs child rows
    z_c: Tensor | None = None  # reconstructs parent rows
    x_p: np.ndarray | None = None
    x_c: np.ndarray | None = None
    z: Tensor | None = None  # global reconstruction of all nodes


def forward_batch(params: ModelParams, batch: GraphBatch, local: bool = True,
                  global_: bool = True) -> BatchOutputs:
    """Readout + classifier for every event, plus the requested reconstruction branches.

    Node-wise MLP encoders are shared between the readout and the local
    branch, so pair encodings are row selections of the full-node encodings.
    With the global branch on, one GCN pass over the masked features feeds
    both the reconstruction and the readout; otherwise the readout encodes
    the complete graph.
    """
    x = nk.constant(batch.x)
    h1 = mlp(params, "local1.enc", x)
    h2 = mlp(params, "local2.enc", x)
    z = None
    if global_:
        if batch.mask is None:
            raise ValueError("global reconstruction needs a masked batch")
        x_tilde = apply_mask(x, batch.mask, params["mask_token"])
        z, hj = global_forward(params, batch.a_hat, x_tilde)
    else:
        hj = encode_global(params, batch.a_hat, x)
    m = nk.concat_cols([nk.spmm(batch.pool, h) for h in (h1, h2, hj)])
    out = BatchOutputs(m=m, logits=head_logits(params, m), z=z)
    if local and batch.parent_sel.shape[0] > 0:
        out.z_p = mlp(params, "local1.dec", nk.spmm(batch.parent_sel, h1))
        out.z_c = mlp(params, "local2.dec", nk.spmm(batch.child_sel, h2))
        out.x_p = np.asarray(batch.parent_sel @ batch.x)
        out.x_c = np.asarray(batch.child_sel @ batch.x)
    return out


def predict_proba(params: ModelParams, prepared: Sequence[PreparedEvent], chunk: int = 256) -> np.ndarray:
    rows = []
    for start in range(0, len(prepared), chunk):
        batch = GraphBatch.build(prepared[start:start + chunk])
        out = forward_batch(params, batch, local=False, global_=False)
        rows.append(nk.row_softmax(out.logits).data)
    return np.vstack(rows) if rows else np.zeros((0, params.config.classes))
