"""Mask-based contrastive view generators: node drop, edge drop, random walk.

Each variant produces sparse matrices whose retained entries keep their
source weights (no renormalization), wrapped so the resulting stack plugs
in wherever a contrastive view is consumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .errors import GraphError
from .model import BranchStack, ModelParams, _check_dims

VARIANTS = ("node_drop", "edge_drop", "random_walk")


class _LayerAdj:
    """CSR matrix plus cached transpose, the interface spmm expects."""

    def __init__(self, mat):
        self.mat = mat.tocsr()
        self.mat_t = self.mat.T.tocsr()

    @property
    def num_users(self):
        return self.mat.shape[0]

    @property
    def num_items(self):
        return self.mat.shape[1]


@dataclass
class AugmentedGraph:
    variant: str
    drop_ratio: float
    layers: list
    user_keep: np.ndarray = None
    item_keep: np.ndarray = None

    @property
    def shared_mask(self):
        return self.variant != "random_walk"

    def layer(self, l) -> _LayerAdj:
        return self.layers[0] if self.shared_mask else self.layers[l]

    @property
    def num_users(self):
        return self.layers[0].num_users

    @property
    def num_items(self):
        return self.layers[0].num_items


def _edge_drop(mat, rho, rng):
    coo = mat.tocoo()
    keep = rng.random(coo.nnz) >= rho
    return sp.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=mat.shape
    )


def _node_drop(mat, keep_u, keep_v):
    coo = mat.tocoo()
    keep = keep_u[coo.row] & keep_v[coo.col]
    return sp.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=mat.shape
    )


def augment_graph(graph, variant, rho, layers, rng) -> AugmentedGraph:
    """Build masked propagation matrices for one variant.

    node_drop and edge_drop share a single mask across layers; random_walk
    draws an independent edge mask per layer.
    """
    if not 0 <= rho < 1:
        raise ValueError("drop ratio must be in [0, 1)")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    src = graph.mat
    user_keep = item_keep = None
    if variant == "node_drop":
        user_keep = rng.random(src.shape[0]) >= rho
        item_keep = rng.random(src.shape[1]) >= rho
        mats = [_node_drop(src, user_keep, item_keep)]
    elif variant == "edge_drop":
        mats = [_edge_drop(src, rho, rng)]
    else:
        mats = [_edge_drop(src, rho, rng) for _ in range(layers)]
    return AugmentedGraph(variant, rho, [_LayerAdj(m) for m in mats],
                          user_keep=user_keep, item_keep=item_keep)


def forward_augmented(params: ModelParams, aug: AugmentedGraph, layers) -> BranchStack:
    """GCN recurrence over the variant's (per-layer) masked matrices."""
    if not aug.shared_mask and len(aug.layers) < layers:
        raise GraphError(
            f"augmented graph holds {len(aug.layers)} layer masks, need {layers}"
        )
    _check_dims(params, aug)
    stack = BranchStack(aug.variant, params.e_user, params.e_item)
    ru, ri = params.e_user, params.e_item
    for l in range(layers):
        adj = aug.layer(l)
        au = ad.spmm(adj, ri)
        ai = ad.spmm(adj, ru, transpose=True)
        ru = ru + au
        ri = ri + ai
        stack.layer_user.append(au)
        stack.layer_item.append(ai)
        stack.readout_user.append(ru)
        stack.readout_item.append(ri)
    return stack
