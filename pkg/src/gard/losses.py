"""Reconstruction, supervised and uniformity losses and their weighted sum."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import numkernel as nk
from .errors import ConfigError, DataError
from .graphdata import MaskPlan, NoPairs
from .numkernel import Tensor

# which optional terms each ablation variant keeps: (local rec, global rec, uniformity)
VARIANTS = {
    "full": (True, True, True),
    "sup": (False, False, False),
    "ngs": (True, False, True),
    "nls": (False, True, True),
    "nu": (True, True, False),
}


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else nk.constant(x)


def weighted_sse(pred: Tensor, target, row_weights: np.ndarray) -> Tensor:
    """sum_i w_i * ||pred_i - target_i||^2 with one weight per row."""
    target = _as_tensor(target)
    diff = nk.sub(pred, target)
    w = nk.constant(np.broadcast_to(np.asarray(row_weights, dtype=np.float64)[:, None], pred.shape))
    return nk.sum_all(nk.mul(nk.mul(diff, diff), w))


def rec1_loss(x_p, x_c, z_p: Tensor, z_c: Tensor) -> Tensor:
    """Cross-paired MSE: z_p against child rows, z_c against parent rows."""
    x_p, x_c = _as_tensor(x_p), _as_tensor(x_c)
    n_p, d = x_p.shape
    if n_p == 0:
        raise NoPairs("rec1_loss needs at least one parent-child pair")
    for t in (x_c, z_p, z_c):
        if t.shape != (n_p, d):
            raise nk.DimensionError(f"rec1_loss: expected {(n_p, d)}, got {t.shape}")
    w = np.full(n_p, 1.0 / (n_p * d))
    return nk.add(weighted_sse(z_p, x_c, w), weighted_sse(z_c, x_p, w))


def _row_selector(indices, n: int) -> sp.csr_matrix:
    idx = np.asarray(indices, dtype=int)
    return sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n))


def rec2_loss(x, z: Tensor, plan: MaskPlan) -> Tensor:
    """MSE over masked rows only; unmasked rows of ``z`` never enter the graph."""
    n_m = len(plan.masked_indices)
    if n_m == 0:
        raise ValueError("rec2_loss needs at least one masked node")
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    sel = _row_selector(plan.masked_indices, z.rows)
    d = z.cols
    return weighted_sse(nk.spmm(sel, z), x[list(plan.masked_indices)], np.full(n_m, 1.0 / (n_m * d)))


def _check_labels(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int).ravel()
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"labels must lie in 0..{classes - 1}, got range {labels.min()}..{labels.max()}")
    return labels


def sup_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy from logits, via log-softmax."""
    labels = _check_labels(labels, logits.cols)
    if len(labels) != logits.rows:
        raise nk.DimensionError(f"sup_loss: {logits.rows} rows but {len(labels)} labels")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = -1.0 / len(labels)
    return nk.sum_all(nk.mul(nk.log_softmax(logits), nk.constant(onehot)))


def sup_loss_from_probs(probs: np.ndarray, labels) -> float:
    """Cross-entropy on probability rows (evaluation only; not differentiable)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_labels(labels, probs.shape[1])
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(probs[np.arange(len(labels)), labels])))


def _pair_difference(n: int) -> sp.csr_matrix:
    i, j = np.triu_indices(n, k=1)
    p = len(i)
    rows = np.concatenate([np.arange(p), np.arange(p)])
    cols = np.concatenate([i, j])
    vals = np.concatenate([np.ones(p), -np.ones(p)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(p, n))


def l2_normalize_rows(m: Tensor) -> Tensor:
    sq = nk.matmul(nk.mul(m, m), nk.constant(np.ones((m.cols, 1))))
    inv = nk.power(sq, -0.5)
    return nk.mul(m, nk.matmul(inv, nk.constant(np.ones((1, m.cols)))))


def uniformity_loss(m: Tensor, t: float = 2.0, normalize: bool = False) -> Tensor | None:
    """log of the mean Gaussian potential exp(-t ||m_i - m_j||^2) over pairs i < j.

    Returns None (with a warning) when fewer than two representations are given.
    """
    if not (t > 0 and math.isfinite(t)):
        raise ConfigError(f"uniformity temperature must be positive and finite, got {t}")
    if m.rows < 2:
        warnings.warn("uniformity loss needs at least two representations; term skipped",
                      RuntimeWarning, stacklevel=2)
        return None
    if normalize:
        m = l2_normalize_rows(m)
    diff = nk.spmm(_pair_difference(m.rows), m)
    d2 = nk.matmul(nk.mul(diff, diff), nk.constant(np.ones((m.cols, 1))))
    v = nk.scale(d2, -t)
    # shift by the max potential exponent so exp never underflows to zero
    c = float(v.data.max())
    shifted = nk.sub(v, nk.constant(np.full(v.shape, c)))
    return nk.add(nk.log(nk.mean_rows(nk.exp(shifted))), nk.constant([[c]]))


def alignment_metric(a, b) -> float:
    """Mean dot product between matched rows (diagnostic only)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.mean(np.sum(a * b, axis=1)))


@dataclass(frozen=True)
class LossBreakdown:
    l_sup: float
    l_rec1: float | None
    l_rec2: float | None
    l_uni: float | None
    total: float
    alpha1: float
    alpha2: float

    def row(self) -> dict[str, float]:
        """Present terms only, for the per-epoch log."""
        out = {"l_sup": self.l_sup}
        for key in ("l_rec1", "l_rec2", "l_uni"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        out["total"] = self.total
        return out


def total_loss(l_sup: Tensor, l_rec1: Tensor | None = None, l_rec2: Tensor | None = None,
               l_uni: Tensor | None = None, alpha1: float = 0.05,
               alpha2: float = 0.5) -> tuple[Tensor, LossBreakdown]:
    """L_sup + alpha1 (L_rec1 + L_rec2) + alpha2 L_uni over the terms that are present.

    Absent terms (None) are not part of the graph at all, so ablated branches
    contribute neither value nor gradient.
    """
    if alpha1 < 0 or alpha2 < 0:
        raise ConfigError(f"loss weights must be >= 0, got alpha1={alpha1}, alpha2={alpha2}")
    total = l_sup
    recs = [r for r in (l_rec1, l_rec2) if r is not None]
    if recs:
        rec = recs[0] if len(recs) == 1 else nk.add(recs[0], recs[1])
        total = nk.add(total, nk.scale(rec, alpha1))
    if l_uni is not None:
        total = nk.add(total, nk.scale(l_uni, alpha2))
    val = lambda x: None if x is None else x.item()
    return total, LossBreakdown(l_sup.item(), val(l_rec1), val(l_rec2), val(l_uni), total.item(),
                                alpha1, alpha2)


def batch_losses(params, batch, out, *, variant: str = "full", alpha1: float = 0.05,
                 alpha2: float = 0.5, t: float = 2.0, normalize_uniformity: bool = True):
    """Combined loss for a forward pass over a GraphBatch.

    Reconstruction terms are averaged within each event first, then over the
    events of the batch (events without edges contribute 0 to the local term).
    """
    use_local, use_global, use_uni = VARIANTS[variant]
    b = batch.size
    d = params.config.d
    l_sup = sup_loss(out.logits, batch.labels)
    l_rec1 = l_rec2 = l_uni = None
    if use_local:
        if out.z_p is not None:
            w = 1.0 / (batch.pair_counts[batch.pair_owner] * d * b)
            l_rec1 = nk.add(weighted_sse(out.z_p, out.x_c, w), weighted_sse(out.z_c, out.x_p, w))
        else:
            l_rec1 = nk.constant([[0.0]])
    if use_global:
        idx = np.array(batch.mask.masked_indices, dtype=int)
        owner = batch.node_owner[idx]
        n_m = np.bincount(owner, minlength=b)
        sel = _row_selector(idx, out.z.rows)
        l_rec2 = weighted_sse(nk.spmm(sel, out.z), batch.x[idx], 1.0 / (n_m[owner] * d * b))
    if use_uni:
        l_uni = uniformity_loss(out.m, t, normalize_uniformity)
    return total_loss(l_sup, l_rec1, l_rec2, l_uni, alpha1, alpha2)
