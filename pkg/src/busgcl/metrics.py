"""All-ranking Recall@N / NDCG@N evaluation and the 2-D embedding export."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelParams, forward_gcn

USER_BLOCK = 512


@dataclass
class MetricsReport:
    recall: dict
    ndcg: dict
    users_evaluated: int
    users_skipped: int = 0
    seed: int | None = None
    config_hash: str = ""

    def to_json(self) -> str:
        doc = {
            "recall": {str(n): self.recall[n] for n in sorted(self.recall)},
            "ndcg": {str(n): self.ndcg[n] for n in sorted(self.ndcg)},
            "users": self.users_evaluated,
            "seed": self.seed,
        }
        if self.config_hash:
            doc["config_hash"] = self.config_hash
        return json.dumps(doc, sort_keys=True)

    def table(self) -> str:
        ns = sorted(self.recall)
        lines = ["      N   Recall     NDCG"]
        for n in ns:
            lines.append(f"{n:7d}  {self.recall[n]:.5f}  {self.ndcg[n]:.5f}")
        lines.append(f"users evaluated: {self.users_evaluated}"
                     f" (skipped {self.users_skipped} without ground truth)")
        return "\n".join(lines)


def final_readouts(params: ModelParams, graph, layers):
    """Final-layer user and item readout arrays, no graph recording."""
    with ad.no_grad():
        stack = forward_gcn(params, graph, layers)
        return stack.final_user().data, stack.final_item().data


_DCG = None


def _dcg_table(n):
    global _DCG
    if _DCG is None or len(_DCG) < n:
        _DCG = 1.0 / np.log2(np.arange(2, max(n, 64) + 2))
    return _DCG


def evaluate(params: ModelParams, graph, split, n_values=(20, 40), layers=3,
             on="test", seed=None, config_hash="") -> MetricsReport:
    """Score every held-out user against the full item catalog.

    Training items are masked to -inf, ties break by ascending item index,
    and per-user recall/NDCG are averaged over users with at least one
    ground-truth item (the rest are counted as skipped).
    """
    if on not in ("test", "valid"):
        raise ValueError("on must be 'test' or 'valid'")
    truth = split.test if on == "test" else split.validation
    n_values = tuple(int(n) for n in n_values)
    if not n_values or min(n_values) < 1:
        raise ValueError("n_values must be positive")
    max_n = max(n_values)
    ru, ri = final_readouts(params, graph, layers)

    eval_users = [u for u in range(split.num_users) if len(truth[u]) > 0]
    skipped = split.num_users - len(eval_users)
    recall_sums = {n: 0.0 for n in n_values}
    ndcg_sums = {n: 0.0 for n in n_values}
    dcg = _dcg_table(max_n)

    for start in range(0, len(eval_users), USER_BLOCK):
        block = eval_users[start:start + USER_BLOCK]
        scores = ru[block] @ ri.T
        for row, u in enumerate(block):
            scores[row, split.train[u]] = -np.inf
        # stable argsort on negated scores: ties keep ascending item index
        top = np.argsort(-scores, axis=1, kind="stable")[:, :max_n]
        width = top.shape[1]
        for row, u in enumerate(block):
            wanted = set(truth[u])
            hits = np.fromiter((v in wanted for v in top[row]), dtype=bool,
                               count=width)
            for n in n_values:
                k = min(n, width)
                h = hits[:k]
                recall_sums[n] += h.sum() / len(wanted)
                ideal = dcg[: min(n, len(wanted))].sum()
                ndcg_sums[n] += (dcg[:k][h].sum() / ideal) if ideal > 0 else 0.0

    count = max(len(eval_users), 1)
    return MetricsReport(
        recall={n: recall_sums[n] / count for n in n_values},
        ndcg={n: ndcg_sums[n] / count for n in n_values},
        users_evaluated=len(eval_users),
        users_skipped=skipped,
        seed=seed,
        config_hash=config_hash,
    )


def pca_project(embeddings, out_dim=2, max_iter=500, tol=1e-12):
    """Mean-centered projection onto the top principal directions.

    Directions come from seeded power iteration with deflation on the
    covariance; columns are ordered by explained variance and signed so
    the largest-magnitude loading is positive.  Returns (coords,
    explained_variances).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need an N x d matrix with N >= 2, d >= 2")
    n, d = x.shape
    xc = x - x.mean(axis=0, keepdims=True)
    cov = (xc.T @ xc) / n
    if not np.any(np.abs(cov) > 0):
        warnings.warn("input has no variance; projection is all zeros")
        return np.zeros((n, out_dim)), np.zeros(out_dim)

    rng = np.random.default_rng(12345)
    comps = []
    variances = []
    work = cov.copy()
    for _ in range(out_dim):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            nxt = work @ v
            norm = np.linalg.norm(nxt)
            if norm < 1e-300:
                nxt = np.zeros(d)
                break
            nxt /= norm
            if np.linalg.norm(nxt - v) < tol or np.linalg.norm(nxt + v) < tol:
                v = nxt
                break
            v = nxt
        lam = float(v @ work @ v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        variances.append(max(lam, 0.0))
        work = work - lam * np.outer(v, v)
    basis = np.stack(comps, axis=1)
    return xc @ basis, np.asarray(variances)


def write_projection(path, coords, num_users):
    """TSV export: node_type, index, x, y."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node_type\tindex\tx\ty\n")
        for k, (x, y) in enumerate(coords):
            if k < num_users:
                fh.write(f"user\t{k}\t{x:.10g}\t{y:.10g}\n")
            else:
                fh.write(f"item\t{k - num_users}\t{x:.10g}\t{y:.10g}\n")


def write_embeddings(path, user_rows, item_rows):
    """TSV export of embedding rows: node_type, index, then d columns."""
    d = user_rows.shape[1]
    header = "node_type\tindex\t" + "\t".join(f"e{j}" for j in range(d))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for k, row in enumerate(user_rows):
            fh.write("user\t" + str(k) + "\t" + "\t".join(f"{v:.10g}" for v in row) + "\n")
        for k, row in enumerate(item_rows):
            fh.write("item\t" + str(k) + "\t" + "\t".join(f"{v:.10g}" for v in row) + "\n")
