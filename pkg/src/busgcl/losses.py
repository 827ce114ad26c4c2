"""Objective terms: bilateral layer-wise InfoNCE, dispersing loss, BPR,
L2 regularization, the KL alternative, and their weighted combination.

All terms are plain sums (no batch averaging) and operate on autodiff
Tensors so exact gradients flow back through every branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Count of zero-norm rows encountered by cosine computations since the last
# reset; degenerate rows are scored as similarity 0 with every partner.
DIAGNOSTICS = {"zero_norm_rows": 0}


def reset_diagnostics():
    DIAGNOSTICS["zero_norm_rows"] = 0


def _flag_zero_rows(t: Tensor):
    zeros = int(np.sum(np.linalg.norm(t.data, axis=1) == 0))
    if zeros:
        DIAGNOSTICS["zero_norm_rows"] += zeros


@dataclass
class LossWeights:
    lambda_c: float = 0.1
    lambda_d: float = 1.0
    lambda_r: float = 0.01
    tau_c: float = 0.1
    tau_d: float = 1.0

    def __post_init__(self):
        if self.tau_c <= 0 or self.tau_d <= 0:
            raise ValueError("temperatures must be strictly positive")
        if min(self.lambda_c, self.lambda_d, self.lambda_r) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    rec: float
    cl_user: float
    cl_item: float
    disp: float
    reg: float
    total: float


def infonce_bilateral(anchor_stack, other_stack, side, node_set, tau_c) -> Tensor:
    """Layer-summed InfoNCE between two view stacks on one side.

    For every layer and every node in `node_set`, the positive pair is the
    node's own (anchor, other) outputs and the denominator runs over the
    other view's outputs for the whole node set (self included).
    """
    if anchor_stack.num_layers != other_stack.num_layers:
        raise ValueError("view stacks must have the same layer count")
    node_set = np.asarray(node_set, dtype=np.intp)
    if node_set.size == 0:
        raise ValueError("node_set must be non-empty")
    if side == "user":
        anchors, others = anchor_stack.layer_user, other_stack.layer_user
    elif side == "item":
        anchors, others = anchor_stack.layer_item, other_stack.layer_item
    else:
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")
    inv_tau = 1.0 / tau_c
    loss = None
    for a_layer, o_layer in zip(anchors, others):
        a = ad.normalize_rows(ad.gather(a_layer, node_set))
        o = ad.normalize_rows(ad.gather(o_layer, node_set))
        _flag_zero_rows(a)
        _flag_zero_rows(o)
        pos = (a * o).sum(axis=1) * inv_tau
        logits = (a @ o.t()) * inv_tau
        term = (ad.logsumexp(logits, axis=1) - pos).sum()
        loss = term if loss is None else loss + term
    return loss


def dispersing_loss(readout, tau_d) -> Tensor:
    """Self-contrast uniformity pressure over readout rows.

    Each row's positive is itself, so every term reduces to
    logsumexp of scaled cosine similarities minus the self-similarity;
    coincident rows maximize it, orthogonal rows shrink it.
    """
    readout = ad.as_tensor(readout)
    r = ad.normalize_rows(readout)
    _flag_zero_rows(r)
    inv_tau = 1.0 / tau_d
    logits = (r @ r.t()) * inv_tau
    self_sim = (r * r).sum(axis=1) * inv_tau
    return (ad.logsumexp(logits, axis=1) - self_sim).sum()


def bpr_loss(pos_scores, neg_scores) -> Tensor:
    """Sum of -log sigmoid(pos - neg), computed as softplus(neg - pos)."""
    pos_scores = ad.as_tensor(pos_scores)
    neg_scores = ad.as_tensor(neg_scores)
    if pos_scores.shape != neg_scores.shape:
        raise ValueError("positive and negative score lists must align")
    return ad.softplus(neg_scores - pos_scores).sum()


def l2_regularization(params) -> Tensor:
    """Squared Frobenius norm over all trainable tensors."""
    total = None
    for _, t in params.tensors():
        sq = (t * t).sum()
        total = sq if total is None else total + sq
    return total


def kl_uniform_loss(readout) -> Tensor:
    """Per-dimension softmax across nodes scored against uniform.

    Each column becomes a distribution over the N rows; the divergence
    sum(p * log(p * N)) is averaged over dimensions.  Zero exactly when
    every column is constant.
    """
    readout = ad.as_tensor(readout)
    n, d = readout.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    lse = ad.logsumexp(readout, axis=0, keepdims=True)
    logp = readout - lse
    p = logp.exp()
    kl = (p * (logp + float(np.log(n)))).sum()
    return kl * (1.0 / d)


def combine(rec, cl_user, cl_item, disp, reg, weights: LossWeights):
    """Weighted total; works on floats and Tensors alike."""
    return (
        rec
        + weights.lambda_c * (cl_user + cl_item)
        + weights.lambda_d * disp
        + weights.lambda_r * reg
    )


def total_loss(rec, cl_user, cl_item, disp, reg, weights: LossWeights) -> LossBreakdown:
    def val(x):
        return float(x.data) if isinstance(x, Tensor) else float(x)

    parts = [val(x) for x in (rec, cl_user, cl_item, disp, reg)]
    return LossBreakdown(*parts, total=float(combine(*parts, weights)))
