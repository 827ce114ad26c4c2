"""Forward propagation branches over the normalized bipartite graph.

Three branches share one set of trainable tensors: a plain linear GCN with
residual readout, the same propagation with per-layer spherical noise, and
a hypergraph pass that routes the GCN readouts through learned low-rank
hyperedges.  Every branch returns a BranchStack holding per-layer outputs
and cumulative readouts so the contrastive losses can slice them by side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import GraphError

DEFAULT_LEAKY_SLOPE = 0.5


@dataclass
class ModelParams:
    """Trainable tensors: base embeddings and hyperedge projections."""

    e_user: Tensor
    e_item: Tensor
    w_user: Tensor
    w_item: Tensor

    FIELDS = ("e_user", "e_item", "w_user", "w_item")

    @property
    def dim(self):
        return self.e_user.shape[1]

    @property
    def num_hyperedges(self):
        return self.w_user.shape[1]

    def tensors(self):
        return [(name, getattr(self, name)) for name in self.FIELDS]

    def zero_grad(self):
        for _, t in self.tensors():
            t.zero_grad()

    def copy_arrays(self):
        return {name: t.data.copy() for name, t in self.tensors()}

    @classmethod
    def from_arrays(cls, arrays):
        return cls(**{name: ad.parameter(arrays[name]) for name in cls.FIELDS})


def init_params(num_users, num_items, dim, hyperedges, rng) -> ModelParams:
    """Uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""

    def xavier(rows, cols):
        a = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-a, a, size=(rows, cols))

    return ModelParams(
        e_user=ad.parameter(xavier(num_users, dim)),
        e_item=ad.parameter(xavier(num_items, dim)),
        w_user=ad.parameter(xavier(dim, hyperedges)),
        w_item=ad.parameter(xavier(dim, hyperedges)),
    )


@dataclass
class BranchStack:
    """Per-layer outputs plus cumulative readouts of one branch.

    readout[l] = readout[l-1] + layer[l], with the base embeddings acting
    as readout level zero.
    """

    branch_tag: str
    base_user: Tensor
    base_item: Tensor
    layer_user: list = field(default_factory=list)
    layer_item: list = field(default_factory=list)
    readout_user: list = field(default_factory=list)
    readout_item: list = field(default_factory=list)
    noise: list = field(default_factory=list)

    @property
    def num_layers(self):
        return len(self.layer_user)

    def final_user(self) -> Tensor:
        return self.readout_user[-1] if self.readout_user else self.base_user

    def final_item(self) -> Tensor:
        return self.readout_item[-1] if self.readout_item else self.base_item

    def user_readout_before(self, l) -> Tensor:
        """User readout entering layer l (1-based); level 0 is the base."""
        return self.base_user if l == 1 else self.readout_user[l - 2]

    def item_readout_before(self, l) -> Tensor:
        return self.base_item if l == 1 else self.readout_item[l - 2]


def _check_dims(params: ModelParams, graph):
    if params.e_user.shape[0] != graph.num_users or params.e_item.shape[0] != graph.num_items:
        raise GraphError(
            f"embedding rows ({params.e_user.shape[0]}, {params.e_item.shape[0]}) "
            f"do not match graph ({graph.num_users}, {graph.num_items})"
        )


def forward_gcn(params: ModelParams, graph, layers) -> BranchStack:
    """Linear propagation with residual readout and no nonlinearity."""
    _check_dims(params, graph)
    stack = BranchStack("gcn", params.e_user, params.e_item)
    ru, ri = params.e_user, params.e_item
    for _ in range(layers):
        au = ad.spmm(graph, ri)
        ai = ad.spmm(graph, ru, transpose=True)
        ru = ru + au
        ri = ri + ai
        stack.layer_user.append(au)
        stack.layer_item.append(ai)
        stack.readout_user.append(ru)
        stack.readout_item.append(ri)
    return stack


def spherical_noise(values, radius, rng):
    """Per-row noise: uniform draw, sign-matched to `values`, rescaled to
    L2 norm exactly `radius`.  Rows whose sign mask is entirely zero stay
    at zero noise."""
    draw = rng.random(values.shape)
    masked = draw * np.sign(values)
    norms = np.linalg.norm(masked, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return radius * masked / safe


def forward_perturbed(params: ModelParams, graph, layers, radius, rng=None, noise=None) -> BranchStack:
    """GCN propagation with additive per-layer spherical noise.

    Noise is drawn fresh per call unless `noise` (a list of per-layer
    (user, item) array pairs) replays a previous draw; draws are treated
    as constants by differentiation either way.
    """
    if radius < 0:
        raise ValueError("noise radius must be >= 0")
    _check_dims(params, graph)
    if noise is None and radius > 0 and rng is None and layers > 0:
        raise ValueError("forward_perturbed needs an rng when drawing fresh noise")
    stack = BranchStack("perturbed", params.e_user, params.e_item)
    ru, ri = params.e_user, params.e_item
    for l in range(layers):
        au = ad.spmm(graph, ri)
        ai = ad.spmm(graph, ru, transpose=True)
        if radius > 0:
            if noise is not None:
                du, di = noise[l]
            else:
                du = spherical_noise(au.data, radius, rng)
                di = spherical_noise(ai.data, radius, rng)
            stack.noise.append((du, di))
            au = au + ad.constant(du)
            ai = ai + ad.constant(di)
        ru = ru + au
        ri = ri + ai
        stack.layer_user.append(au)
        stack.layer_item.append(ai)
        stack.readout_user.append(ru)
        stack.readout_item.append(ri)
    return stack


def forward_hypergraph(params: ModelParams, gcn_stack: BranchStack, layers,
                       slope=DEFAULT_LEAKY_SLOPE) -> BranchStack:
    """Hyperedge aggregation driven by the GCN branch's readouts.

    Layer l projects the level l-1 readout through the hyperedge matrix
    (n x H), applies the association in two H-width products (the n x n
    matrix is never materialized), and runs LeakyReLU.
    """
    if gcn_stack.branch_tag != "gcn":
        raise GraphError("hypergraph branch must consume the gcn stack")
    if gcn_stack.num_layers < layers:
        raise GraphError(
            f"gcn stack has {gcn_stack.num_layers} layers, need {layers}"
        )
    stack = BranchStack("hypergraph", gcn_stack.base_user, gcn_stack.base_item)
    hu, hi = gcn_stack.base_user, gcn_stack.base_item
    for l in range(1, layers + 1):
        eu = gcn_stack.user_readout_before(l)
        ei = gcn_stack.item_readout_before(l)
        hyper_u = eu @ params.w_user
        hyper_i = ei @ params.w_item
        gu = ad.leaky_relu(hyper_u @ (hyper_u.t() @ eu), slope)
        gi = ad.leaky_relu(hyper_i @ (hyper_i.t() @ ei), slope)
        hu = hu + gu
        hi = hi + gi
        stack.layer_user.append(gu)
        stack.layer_item.append(gi)
        stack.readout_user.append(hu)
        stack.readout_item.append(hi)
    return stack


def predict_scores(stack: BranchStack, user, candidate_items):
    """Dot products between the final user readout row and candidate item
    readout rows."""
    if stack.branch_tag != "gcn":
        raise GraphError("predictions use the gcn branch readouts")
    ru = stack.final_user().data
    ri = stack.final_item().data
    if not 0 <= user < ru.shape[0]:
        raise IndexError(f"user index {user} out of range [0, {ru.shape[0]})")
    candidate_items = np.asarray(candidate_items, dtype=np.intp)
    if candidate_items.size and (
        candidate_items.min() < 0 or candidate_items.max() >= ri.shape[0]
    ):
        raise IndexError("item index out of range")
    return ri[candidate_items] @ ru[user]
