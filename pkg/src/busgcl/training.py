"""Training: loss assembly across branches, exact gradients, Adam updates
with exponential decay, the epoch loop with best-validation checkpointing,
a finite-difference gradient checker, and checkpoint serialization.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .augment import VARIANTS as AUG_VARIANTS
from .augment import augment_graph, forward_augmented
from .config import Hyperparams
from .data import SplitDataset, TripletBatch, build_normalized_adjacency, sample_bpr_batch
from .errors import CheckpointError, TrainingError
from .losses import (
    LossBreakdown,
    bpr_loss,
    combine,
    dispersing_loss,
    infonce_bilateral,
    kl_uniform_loss,
    l2_regularization,
)
from .model import ModelParams, forward_gcn, forward_hypergraph, forward_perturbed, init_params
from .seeding import stream

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"BGCL"
CHECKPOINT_VERSION = 1

HISTORY_COLUMNS = (
    "epoch", "lr", "rec", "cl_user", "cl_item", "disp", "reg", "total",
    "val_recall@20", "val_ndcg@20",
)


@dataclass
class GradientSet:
    e_user: np.ndarray
    e_item: np.ndarray
    w_user: np.ndarray
    w_item: np.ndarray

    def tensors(self):
        return [(name, getattr(self, name)) for name in ModelParams.FIELDS]


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int
    lr: float

    @classmethod
    def fresh(cls, params: ModelParams, lr):
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.tensors()},
            v={name: np.zeros_like(t.data) for name, t in params.tensors()},
            step=0,
            lr=lr,
        )


def build_aug_graphs(graph, hp: Hyperparams, rng):
    """Construct the augmented views the resolved view selection needs.

    Masks are drawn once per training run; every forward pass reuses them.
    """
    needed = set(hp.views) & set(AUG_VARIANTS)
    return {
        v: augment_graph(graph, v, hp.drop_ratio, hp.layers, rng) for v in sorted(needed)
    }


def run_branches(params, graph, hp: Hyperparams, noise_rng=None, noise=None,
                 aug_graphs=None) -> dict:
    """Forward the gcn branch plus whichever view branches hp selects.

    View branches only feed the contrastive terms, so they are skipped
    entirely when those terms are inactive.
    """
    stacks = {"gcn": forward_gcn(params, graph, hp.layers)}
    needed = set(hp.views) if (hp.lambda_c > 0 and hp.layers > 0) else set()
    if "hypergraph" in needed:
        stacks["hypergraph"] = forward_hypergraph(
            params, stacks["gcn"], hp.layers, hp.leaky_slope
        )
    if "perturb" in needed:
        stacks["perturb"] = forward_perturbed(
            params, graph, hp.layers, hp.noise_radius, rng=noise_rng, noise=noise
        )
    for variant in sorted(needed & set(AUG_VARIANTS)):
        if aug_graphs is None or variant not in aug_graphs:
            raise TrainingError(f"view {variant!r} selected but no augmented graph built")
        stacks[variant] = forward_augmented(params, aug_graphs[variant], hp.layers)
    return stacks


def _rec_term(batch, stacks):
    gcn = stacks["gcn"]
    if len(batch) == 0:
        return ad.constant(0.0)
    u_rows = ad.gather(gcn.final_user(), batch.users)
    p_rows = ad.gather(gcn.final_item(), batch.pos_items)
    n_rows = ad.gather(gcn.final_item(), batch.neg_items)
    return bpr_loss((u_rows * p_rows).sum(axis=1), (u_rows * n_rows).sum(axis=1))


def _cl_term(batch, hp, stacks, side):
    gcn = stacks["gcn"]
    user_view, item_view = hp.views
    if side == "user":
        nodes = (np.arange(gcn.final_user().shape[0]) if hp.full_denominator
                 else batch.user_set)
        return infonce_bilateral(gcn, stacks[user_view], "user", nodes, hp.tau_c)
    nodes = (np.arange(gcn.final_item().shape[0]) if hp.full_denominator
             else batch.item_set)
    return infonce_bilateral(gcn, stacks[item_view], "item", nodes, hp.tau_c)


def _batch_readout(batch, stacks):
    gcn = stacks["gcn"]
    return ad.concat_rows([
        ad.gather(gcn.final_user(), batch.user_set),
        ad.gather(gcn.final_item(), batch.item_set),
    ])


def assemble_loss(params, batch: TripletBatch, hp: Hyperparams, stacks):
    """Compute every active objective term on one batch.

    Returns (LossBreakdown, total Tensor).  Terms whose weight is zero (or
    that are structurally empty, e.g. contrastive sums with no layers) are
    reported as 0 and skipped, so a disabled feature costs nothing.
    """
    zero = ad.constant(0.0)
    rec = _rec_term(batch, stacks)
    if hp.lambda_c > 0 and hp.layers > 0:
        cl_user = _cl_term(batch, hp, stacks, "user")
        cl_item = _cl_term(batch, hp, stacks, "item")
    else:
        cl_user = zero
        cl_item = zero
    if hp.lambda_d > 0 and hp.disp_mode != "none":
        stacked = _batch_readout(batch, stacks)
        disp = kl_uniform_loss(stacked) if hp.disp_mode == "kl" else dispersing_loss(stacked, hp.tau_d)
    else:
        disp = zero
    reg = l2_regularization(params) if hp.lambda_r > 0 else zero

    total = combine(rec, cl_user, cl_item, disp, reg, hp.weights)
    breakdown = LossBreakdown(
        rec=float(rec.data),
        cl_user=float(cl_user.data),
        cl_item=float(cl_item.data),
        disp=float(disp.data),
        reg=float(reg.data),
        total=float(total.data),
    )
    return breakdown, total


def compute_gradients(params, graph, batch, hp: Hyperparams, noise_rng=None,
                      noise=None, aug_graphs=None):
    """Exact reverse-mode gradients of the total loss.

    Per-step noise draws are constants for differentiation; pass `noise`
    to replay a previous draw.  The forward values in the breakdown are
    bitwise identical to a gradient-free pass (recording the graph does
    not change the arithmetic).
    """
    params.zero_grad()
    stacks = run_branches(params, graph, hp, noise_rng=noise_rng, noise=noise,
                          aug_graphs=aug_graphs)
    breakdown, total = assemble_loss(params, batch, hp, stacks)
    if not np.isfinite(breakdown.total):
        raise TrainingError(f"non-finite total loss: {breakdown}")
    total.backward()
    grads = {}
    for name, t in params.tensors():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter tensor {name!r}")
        grads[name] = g
    return breakdown, GradientSet(**grads)


def adam_step(params: ModelParams, grads: GradientSet, state: OptimizerState,
              hp: Hyperparams) -> OptimizerState:
    """Bias-corrected Adam update in place; returns the mutated state."""
    state.step += 1
    t = state.step
    for name, tensor in params.tensors():
        g = getattr(grads, name)
        if g.shape != tensor.data.shape:
            raise TrainingError(f"gradient shape mismatch on {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * (g * g)
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        tensor.data -= state.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state


def decay_learning_rate(state: OptimizerState, hp: Hyperparams) -> OptimizerState:
    state.lr *= hp.decay_ratio
    return state


@dataclass
class TrainResult:
    params: ModelParams
    history: list
    best_epoch: int
    best_val_recall: float
    graph: object = None


def _samplable_pairs(split: SplitDataset):
    """Training pairs whose user still has at least one non-owned item."""
    full = np.asarray(
        [len(s) >= split.num_items for s in split.train_sets], dtype=bool
    )
    pairs = split.train_pairs
    return pairs[~full[pairs[:, 0]]]


def train(split: SplitDataset, hp: Hyperparams, out_dir=None, graph=None) -> TrainResult:
    """Run the full optimization loop.

    Per epoch: resample triplets, forward the selected branches, take Adam
    steps, decay the learning rate, and every `eval_every` epochs score
    the validation split, retaining the parameters with the best
    Recall@20.  Writes history.csv and checkpoint.bin into `out_dir` when
    given.  Users who interact with every item cannot yield a valid
    negative and are excluded from triplet sampling; if no user is
    samplable the run still optimizes the contrastive and regularization
    terms.
    """
    from .metrics import evaluate  # local import to avoid a cycle

    if graph is None:
        graph = build_normalized_adjacency(split)
    init_rng = stream(hp.seed, "init")
    neg_rng = stream(hp.seed, "negatives")
    noise_rng = stream(hp.seed, "noise")
    mask_rng = stream(hp.seed, "masks")

    params = init_params(split.num_users, split.num_items, hp.dim, hp.hyperedges, init_rng)
    aug_graphs = build_aug_graphs(graph, hp, mask_rng)
    state = OptimizerState.fresh(params, hp.learning_rate)

    sampling_pairs = _samplable_pairs(split)
    degenerate = len(sampling_pairs) == 0
    if degenerate:
        empty = np.empty(0, dtype=np.int64)
        fallback_batch = TripletBatch(
            empty, empty, empty,
            np.arange(split.num_users), np.arange(split.num_items),
        )
        batches_per_epoch = 1
        sampling_split = None
    else:
        sampling_split = replace(split, _train_pairs=sampling_pairs, _train_sets=None)
        batches_per_epoch = max(1, len(sampling_pairs) // hp.batch_size)

    history = []
    best = None
    has_validation = any(len(v) > 0 for v in split.validation)

    for epoch in range(1, hp.epochs + 1):
        sums = np.zeros(6)
        lr_epoch = state.lr
        for b in range(batches_per_epoch):
            batch = (fallback_batch if degenerate
                     else sample_bpr_batch(sampling_split, hp.batch_size, neg_rng))
            try:
                breakdown, grads = compute_gradients(
                    params, graph, batch, hp, noise_rng=noise_rng, aug_graphs=aug_graphs
                )
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            adam_step(params, grads, state, hp)
            sums += [breakdown.rec, breakdown.cl_user, breakdown.cl_item,
                     breakdown.disp, breakdown.reg, breakdown.total]
        decay_learning_rate(state, hp)

        row = dict(zip(
            ("rec", "cl_user", "cl_item", "disp", "reg", "total"),
            (sums / batches_per_epoch).tolist(),
        ))
        row["epoch"] = epoch
        row["lr"] = lr_epoch
        row["val_recall@20"] = ""
        row["val_ndcg@20"] = ""

        if hp.eval_every > 0 and has_validation and epoch % hp.eval_every == 0:
            report = evaluate(params, graph, split, (20,), layers=hp.layers, on="valid")
            r20 = report.recall[20]
            row["val_recall@20"] = r20
            row["val_ndcg@20"] = report.ndcg[20]
            if best is None or r20 > best["recall"]:
                best = {"epoch": epoch, "recall": r20, "arrays": params.copy_arrays()}
        history.append(row)

    if best is None:
        best = {"epoch": hp.epochs, "recall": float("nan"),
                "arrays": params.copy_arrays()}
    best_params = ModelParams.from_arrays(best["arrays"])

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_history(out_dir / "history.csv", history)
        save_checkpoint(
            out_dir / "checkpoint.bin", best_params, hp,
            meta={"best_epoch": best["epoch"], "best_val_recall": best["recall"],
                  "num_users": split.num_users, "num_items": split.num_items},
        )
    return TrainResult(
        params=best_params,
        history=history,
        best_epoch=best["epoch"],
        best_val_recall=best["recall"],
        graph=graph,
    )


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k, "") for k in HISTORY_COLUMNS})


def read_history(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- checkpoint serialization --------------------------------------------


def save_checkpoint(path, params: ModelParams, hp: Hyperparams, meta=None):
    """Binary layout: 4-byte magic, version byte, u32 header length, JSON
    header (hyperparams, shapes, meta), then row-major little-endian
    float64 tensors in field order."""
    header = {
        "hyperparams": {f: getattr(hp, f) for f in Hyperparams.__dataclass_fields__},
        "shapes": {name: list(t.data.shape) for name, t in params.tensors()},
        "meta": meta or {},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in params.tensors():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (ModelParams, Hyperparams, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        version = fh.read(1)
        if not version or version[0] != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for name in ModelParams.FIELDS:
            shape = header["shapes"][name]
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    hp = Hyperparams(**header["hyperparams"])
    return ModelParams.from_arrays(arrays), hp, header.get("meta", {})


# -- gradient checking ----------------------------------------------------


@dataclass
class GradCheckReport:
    per_term: dict
    tolerance: float
    trials: int

    @property
    def max_error(self):
        return max(self.per_term.values())

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def lines(self):
        out = []
        for term, err in self.per_term.items():
            status = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{term:>8s}  max rel err {err:.3e}  [{status}]")
        return out


def _term_tensor(term, params, batch, hp, stacks):
    """One isolated objective term (or the weighted total) as a Tensor."""
    if term == "rec":
        return _rec_term(batch, stacks)
    if term == "cl_user":
        return _cl_term(batch, hp, stacks, "user")
    if term == "cl_item":
        return _cl_term(batch, hp, stacks, "item")
    if term == "disp":
        return dispersing_loss(_batch_readout(batch, stacks), hp.tau_d)
    if term == "kl":
        return kl_uniform_loss(_batch_readout(batch, stacks))
    if term == "reg":
        return l2_regularization(params)
    if term == "total":
        return assemble_loss(params, batch, hp, stacks)[1]
    raise ValueError(f"unknown term {term!r}")


GRAD_CHECK_TERMS = ("rec", "cl_user", "cl_item", "disp", "kl", "reg", "total")


def _synthetic_instance(num_users, num_items, rng, extra_edges=8):
    """Random bipartite split where every node has a degree and every user
    leaves at least one item uninteracted."""
    pairs = set()
    for u in range(num_users):
        pairs.add((u, int(rng.integers(0, num_items))))
    for v in range(num_items):
        pairs.add((int(rng.integers(0, num_users)), v))
    for _ in range(extra_edges):
        pairs.add((int(rng.integers(0, num_users)), int(rng.integers(0, num_items))))
    per_user = [[] for _ in range(num_users)]
    for u, v in sorted(pairs):
        per_user[u].append(v)
    for u in range(num_users):
        if len(per_user[u]) >= num_items:
            per_user[u] = per_user[u][: num_items - 1]
    return SplitDataset(
        num_users=num_users,
        num_items=num_items,
        train=per_user,
        validation=[[] for _ in range(num_users)],
        test=[[] for _ in range(num_users)],
        seed=0,
    )


def grad_check(trials=10, tolerance=1e-4, seed=0, num_users=5, num_items=7,
               dim=4, layers=2, hyperedges=3, step=1e-4, terms=None,
               batch_size=6) -> GradCheckReport:
    """Compare analytic gradients against central finite differences on
    random synthetic instances, term by term.

    The perturbation noise captured during the analytic pass is replayed
    in every finite-difference evaluation (noise draws are constants of
    the objective).  Parameter draws that land a hypergraph pre-activation
    too close to the LeakyReLU kink are redrawn.  Relative error uses a
    floor of 1% of the largest gradient entry so exact zeros do not
    divide away the comparison.
    """
    base_hp = Hyperparams(
        dim=dim, layers=layers, hyperedges=hyperedges, noise_radius=0.05,
        lambda_c=0.5, lambda_d=0.5, lambda_r=0.1, tau_c=1.0, tau_d=1.0,
        epochs=0, batch_size=batch_size, eval_every=0,
    )
    term_names = list(terms) if terms else list(GRAD_CHECK_TERMS)
    worst = {t: 0.0 for t in term_names}

    for trial in range(trials):
        rng = stream(seed, "gradcheck", trial)
        split = _synthetic_instance(num_users, num_items, rng)
        graph = build_normalized_adjacency(split)
        batch = sample_bpr_batch(split, batch_size, rng)

        params = None
        for _ in range(40):
            params = init_params(num_users, num_items, dim, hyperedges, rng)
            if _kink_margin(params, graph, base_hp) > 50 * step:
                break

        noise_rng = stream(seed, "noise", trial)
        stacks = run_branches(params, graph, base_hp, noise_rng=noise_rng)
        noise = stacks["perturb"].noise if "perturb" in stacks else None

        for term in term_names:
            params.zero_grad()
            value = _term_tensor(term, params, batch, base_hp, stacks)
            value.backward()
            analytic = {
                name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.tensors()
            }
            gmax = max(np.max(np.abs(g)) for g in analytic.values())
            floor = max(0.01 * gmax, 1e-8)

            arrays = params.copy_arrays()

            def term_value():
                with ad.no_grad():
                    p = ModelParams.from_arrays(arrays)
                    s = run_branches(p, graph, base_hp, noise=noise)
                    return float(_term_tensor(term, p, batch, base_hp, s).data)

            for name in ModelParams.FIELDS:
                a = arrays[name]
                ga = analytic[name]
                it = np.nditer(a, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = a[idx]
                    a[idx] = orig + step
                    f_plus = term_value()
                    a[idx] = orig - step
                    f_minus = term_value()
                    a[idx] = orig
                    fd = (f_plus - f_minus) / (2 * step)
                    rel = abs(ga[idx] - fd) / max(abs(ga[idx]), abs(fd), floor)
                    if rel > worst[term]:
                        worst[term] = rel
    return GradCheckReport(per_term=worst, tolerance=tolerance, trials=trials)


def _kink_margin(params, graph, hp):
    """Smallest |pre-activation| over the hypergraph layers."""
    if hp.layers == 0:
        return np.inf
    with ad.no_grad():
        gcn = forward_gcn(params, graph, hp.layers)
        margin = np.inf
        for l in range(1, hp.layers + 1):
            for readout, w in ((gcn.user_readout_before(l), params.w_user),
                               (gcn.item_readout_before(l), params.w_item)):
                h = readout.data @ w.data
                pre = h @ (h.T @ readout.data)
                margin = min(margin, np.min(np.abs(pre)))
    return margin
