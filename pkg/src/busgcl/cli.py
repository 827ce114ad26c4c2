"""Command-line surface: train, evaluate, ablate, export-embeddings,
grad-check.

Flags override config-file values which override documented defaults; the
fully resolved configuration is persisted into every run directory.  Exit
codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    DISP_MODES,
    SUBVIEW_MODES,
    VIEWS,
    Hyperparams,
    RunConfig,
    build_run_config,
    parse_config_file,
)
from .data import (
    build_normalized_adjacency,
    load_interactions,
    read_split,
    split_dataset,
    write_id_maps,
    write_split,
)
from .errors import BusgclError, CheckpointError, UsageError
from .metrics import evaluate, final_readouts, pca_project, write_embeddings, write_projection
from .training import grad_check, load_checkpoint, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_RC_KEYS = ("data", "out", "header", "train_frac", "valid_frac", "eval_at", "figures")


def _add_run_flags(p, need_data=True):
    if need_data:
        p.add_argument("--data", help="interaction TSV (user<TAB>item per line)")
        p.add_argument("--out", help="run directory to create")
        p.add_argument("--header", action="store_true", default=argparse.SUPPRESS,
                       help="skip the first line")
        p.add_argument("--train-frac", dest="train_frac", metavar="F")
        p.add_argument("--valid-frac", dest="valid_frac", metavar="F")
    p.add_argument("--at", dest="eval_at", metavar="N[,N...]",
                   help="cutoffs for Recall/NDCG (default 20,40)")
    p.add_argument("--no-figures", dest="figures", action="store_false",
                   default=argparse.SUPPRESS, help="skip matplotlib rendering")


def _add_hyper_flags(p):
    hp = [
        ("--dim", "dim"), ("--layers", "layers"), ("--hyperedges", "hyperedges"),
        ("--noise-radius", "noise_radius"), ("--lambda-c", "lambda_c"),
        ("--lambda-d", "lambda_d"), ("--lambda-r", "lambda_r"),
        ("--tau-c", "tau_c"), ("--tau-d", "tau_d"), ("--lr", "learning_rate"),
        ("--decay", "decay_ratio"), ("--batch-size", "batch_size"),
        ("--epochs", "epochs"), ("--eval-every", "eval_every"), ("--seed", "seed"),
        ("--leaky-slope", "leaky_slope"), ("--drop-ratio", "drop_ratio"),
    ]
    for flag, dest in hp:
        p.add_argument(flag, dest=dest)
    p.add_argument("--subview", dest="subview_mode", choices=SUBVIEW_MODES)
    p.add_argument("--disp-mode", dest="disp_mode", choices=DISP_MODES)
    p.add_argument("--user-view", dest="user_view", choices=VIEWS)
    p.add_argument("--item-view", dest="item_view", choices=VIEWS)
    p.add_argument("--full-denominator", dest="full_denominator",
                   action="store_true", default=argparse.SUPPRESS)


def build_parser():
    parser = _Parser(prog="busgcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="split, build graph, optimize, report")
    p_train.add_argument("--config", help="key = value file; flags override it")
    _add_run_flags(p_train)
    _add_hyper_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a stored checkpoint")
    p_eval.add_argument("--run", required=True, help="run directory from `train`")
    p_eval.add_argument("--split", help="override the stored split file")
    p_eval.add_argument("--at", dest="eval_at", metavar="N[,N...]")
    p_eval.set_defaults(func=cmd_evaluate)

    p_abl = sub.add_parser("ablate", help="run a variant grid on one shared split")
    p_abl.add_argument("--grid", required=True,
                       help="one of: table3, table4, table5, layers")
    p_abl.add_argument("--config", help="key = value file; flags override it")
    _add_run_flags(p_abl)
    _add_hyper_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_exp = sub.add_parser("export-embeddings", help="dump embeddings + 2-D projection")
    p_exp.add_argument("--run", required=True)
    p_exp.add_argument("--raw", action="store_true",
                       help="export base embeddings instead of readouts")
    p_exp.add_argument("--no-figures", dest="figures", action="store_false", default=True)
    p_exp.set_defaults(func=cmd_export_embeddings)

    p_gc = sub.add_parser("grad-check", help="analytic vs finite-difference gradients")
    p_gc.add_argument("--trials", type=int, default=10)
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--users", type=int, default=5)
    p_gc.add_argument("--items", type=int, default=7)
    p_gc.add_argument("--dim", type=int, default=4)
    p_gc.add_argument("--layers", type=int, default=2)
    p_gc.add_argument("--hyperedges", type=int, default=3)
    p_gc.set_defaults(func=cmd_grad_check)

    return parser


def _resolve_config(args) -> RunConfig:
    """defaults < config file < explicit flags; unknown keys rejected."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("command", "func", "config", "grid"):
            continue
        if value is None:
            continue
        merged[key] = value
    rc = build_run_config(merged)
    return rc


def _require_trainable(rc: RunConfig):
    if not rc.data:
        raise UsageError("--data is required")
    if not rc.out:
        raise UsageError("--out is required")
    if rc.hp.layers < 1:
        raise UsageError("layers must be >= 1 for training")


def _load_and_split(rc: RunConfig):
    ds = load_interactions(rc.data, skip_header=rc.header)
    split = split_dataset(ds, rc.train_frac, rc.valid_frac, rc.hp.seed)
    return ds, split


def cmd_train(args) -> int:
    rc = _resolve_config(args)
    _require_trainable(rc)
    ds, split = _load_and_split(rc)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(rc.resolved_text(), encoding="utf-8")
    write_id_maps(ds, out / "user_ids.tsv", out / "item_ids.tsv")
    write_split(split, out / "split.tsv")

    result = train(split, rc.hp, out_dir=out)
    report = evaluate(
        result.params, result.graph, split, rc.eval_at, layers=rc.hp.layers,
        on="test", seed=rc.hp.seed, config_hash=rc.config_hash(),
    )
    (out / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.table())
    print(report.to_json())
    if rc.figures:
        from .report import save_history_figure

        save_history_figure(result.history, out / "history.png")
    return 0


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    rc = build_run_config(parse_config_file(run / "config.txt"))
    if args.eval_at:
        rc = replace(rc, eval_at=tuple(int(t) for t in args.eval_at.split(",")))
    split = read_split(args.split if args.split else run / "split.tsv")
    params, hp_ck, _meta = load_checkpoint(run / "checkpoint.bin")
    if (params.e_user.shape[0] != split.num_users
            or params.e_item.shape[0] != split.num_items):
        raise CheckpointError(
            f"checkpoint is for {params.e_user.shape[0]} users x "
            f"{params.e_item.shape[0]} items but the split has "
            f"{split.num_users} x {split.num_items}"
        )
    graph = build_normalized_adjacency(split)
    report = evaluate(
        params, graph, split, rc.eval_at, layers=hp_ck.layers,
        on="test", seed=hp_ck.seed, config_hash=rc.config_hash(),
    )
    print(report.table())
    print(report.to_json())
    return 0


GRIDS = ("table3", "table4", "table5", "layers")


def _grid_variants(grid, hp: Hyperparams):
    if grid == "table3":
        out = []
        for mode, label in (("per_both", "per"), ("hyp_both", "hyp"),
                            ("reversed", "rev"), ("busgcl", "busgcl")):
            for disp, tag in (("none", "no-disp"), ("dispersing", "disp")):
                out.append((f"{label}/{tag}",
                            replace(hp, subview_mode=mode, user_view="",
                                    item_view="", disp_mode=disp)))
        return out
    if grid == "table4":
        combos = [
            ("hypergraph", "perturb"), ("hypergraph", "node_drop"),
            ("hypergraph", "edge_drop"), ("hypergraph", "random_walk"),
            ("node_drop", "perturb"), ("edge_drop", "perturb"),
            ("random_walk", "perturb"),
        ]
        return [(f"{u}+{v}", replace(hp, user_view=u, item_view=v)) for u, v in combos]
    if grid == "table5":
        return [(mode, replace(hp, subview_mode="busgcl", user_view="",
                               item_view="", disp_mode=mode))
                for mode in ("dispersing", "kl", "none")]
    if grid == "layers":
        return [(f"L={l}", replace(hp, layers=l)) for l in range(1, 6)]
    raise UsageError(f"unknown grid {grid!r}; valid grids: {', '.join(GRIDS)}")


def cmd_ablate(args) -> int:
    rc = _resolve_config(args)
    variants = _grid_variants(args.grid, rc.hp)
    _require_trainable(rc)
    ds, split = _load_and_split(rc)
    graph = build_normalized_adjacency(split)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(rc.resolved_text(), encoding="utf-8")

    rows = []
    for label, hp_v in variants:
        sub = out / label.replace("/", "_").replace("=", "")
        result = train(split, hp_v, out_dir=sub, graph=graph)
        report = evaluate(result.params, graph, split, rc.eval_at,
                          layers=hp_v.layers, on="test", seed=hp_v.seed,
                          config_hash=rc.config_hash())
        row = {
            "variant": label,
            "user_view": hp_v.views[0],
            "item_view": hp_v.views[1],
            "disp_mode": hp_v.disp_mode,
            "layers": hp_v.layers,
            "best_epoch": result.best_epoch,
        }
        for n in rc.eval_at:
            row[f"recall@{n}"] = report.recall[n]
            row[f"ndcg@{n}"] = report.ndcg[n]
        rows.append(row)
        print(f"{label:>24s}  " + "  ".join(
            f"R@{n}={report.recall[n]:.4f} N@{n}={report.ndcg[n]:.4f}"
            for n in rc.eval_at
        ))

    csv_path = out / f"{args.grid}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    if rc.figures:
        from .report import save_ablation_figure, save_layer_sweep_figure

        at = min(rc.eval_at)
        if args.grid == "layers":
            save_layer_sweep_figure(rows, out / "layers.png", at=at)
        else:
            save_ablation_figure(rows, out / f"{args.grid}.png", at=at)
    return 0


def cmd_export_embeddings(args) -> int:
    run = Path(args.run)
    params, hp_ck, _meta = load_checkpoint(run / "checkpoint.bin")
    split = read_split(run / "split.tsv")
    if args.raw:
        ue, ie = params.e_user.data, params.e_item.data
    else:
        graph = build_normalized_adjacency(split)
        ue, ie = final_readouts(params, graph, hp_ck.layers)
    write_embeddings(run / "embeddings.tsv", ue, ie)
    coords, _variances = pca_project(np.vstack([ue, ie]))
    write_projection(run / "projection.tsv", coords, ue.shape[0])
    if args.figures:
        from .report import save_projection_figure

        save_projection_figure(coords, ue.shape[0], run / "projection.png")
    print(f"wrote {len(ue) + len(ie)} embedding rows and the 2-D projection to {run}")
    return 0


def cmd_grad_check(args) -> int:
    report = grad_check(
        trials=args.trials, tolerance=args.tolerance, seed=args.seed,
        num_users=args.users, num_items=args.items, dim=args.dim,
        layers=args.layers, hyperedges=args.hyperedges,
    )
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"gradient check passed ({report.trials} trials, "
              f"tolerance {report.tolerance:g})")
        return 0
    print(f"gradient check FAILED (tolerance {report.tolerance:g})")
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (BusgclError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
