"""Command-line pipeline: generate synthetic data, train, evaluate, predict.

Exit codes: 0 success, 2 usage or data error, 3 training divergence,
4 checkpoint/graph mismatch.  Every run is reproducible under a fixed seed;
with --deterministic the primary outputs (dataset files, checkpoint, report,
split files, metrics) are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint as ckpt
from . import datagen, evaluation, training
from .baseline import EdgeProbabilities, ICSBScorer, fit_static_bernoulli
from .errors import (CheckpointError, ConfigError, DataError, DivergenceError,
                     TopoLstmError)
from .graph import (Cascade, build_topologies, load_cascades_file,
                    load_graph_file, save_cascades_file, save_labels)
from .model import ModelConfig, predict_next
from .version import TOOL_VERSION

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_MISMATCH = 4


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("TOPOLSTM_WORKERS", "1")))
    except ValueError:
        return 1


def _parse_prob(text: str):
    if "," in text:
        lo, hi = text.split(",", 1)
        return (float(lo), float(hi))
    return float(text)


def _parse_ks(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topolstm",
        description="Diffusion next-activation prediction on cascades.")
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic graph + cascades")
    gen.add_argument("--preset", choices=sorted(datagen.PRESETS),
                     help="named dataset recipe (overridable via other flags)")
    gen.add_argument("--nodes", type=int)
    gen.add_argument("--graph-model", choices=datagen.GRAPH_MODELS)
    gen.add_argument("--edge-param", type=float,
                     help="edge count (>=1) or density (<1); attachment count for "
                          "preferential-attachment")
    gen.add_argument("--activation-prob", type=_parse_prob,
                     help="edge probability p, or 'lo,hi' for per-edge uniform")
    gen.add_argument("--cascades", type=int, help="number of cascades to simulate")
    gen.add_argument("--max-len", type=int, help="cascade length cap")
    gen.add_argument("--seed", type=int, help="RNG seed")
    gen.add_argument("--deterministic", action="store_true",
                     help="accepted for uniformity; generation is always "
                          "seed-deterministic")
    gen.add_argument("--out", required=True, help="output directory")

    tr = sub.add_parser("train", help="split cascades, fit the model, save the best checkpoint")
    tr.add_argument("--graph", required=True)
    tr.add_argument("--cascades", required=True)
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--undirected", action="store_true",
                    help="expand each graph edge to both directions")
    tr.add_argument("--hidden-dim", type=int, default=32)
    tr.add_argument("--score-mode", choices=("all-active", "precedent-only"),
                    default="all-active")
    tr.add_argument("--lr", type=float, default=1e-2)
    tr.add_argument("--lambda", dest="lam", type=float, default=1e-6,
                    help="L2 regularization trade-off")
    tr.add_argument("--batch-size", type=int, default=32)
    tr.add_argument("--epochs", type=int, default=100)
    tr.add_argument("--patience", type=int, default=10)
    tr.add_argument("--clip-norm", type=float, default=0.0,
                    help="global gradient-norm cap (0 = off)")
    tr.add_argument("--train-frac", type=float, default=0.75)
    tr.add_argument("--val-frac", type=float, default=0.10)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--workers", type=int, default=_default_workers())
    tr.add_argument("--deterministic", action="store_true",
                    help="byte-identical primary outputs (timings nulled in report)")

    ev = sub.add_parser("evaluate", help="rank test-set activations and report MAP@k / Hits@k")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--graph", required=True)
    ev.add_argument("--test-cascades", required=True)
    ev.add_argument("--undirected", action="store_true")
    ev.add_argument("--ks", type=_parse_ks, default=evaluation.DEFAULT_KS)
    ev.add_argument("--baseline", choices=("icsb",),
                    help="also score the IC-SB baseline on the same instances")
    ev.add_argument("--train-cascades",
                    help="training cascades for fitting the baseline")
    ev.add_argument("--edge-probs",
                    help="pre-fitted baseline probabilities (u v p file)")
    ev.add_argument("--length-csv", action="store_true",
                    help="also write per-prefix-length metric buckets")
    ev.add_argument("--workers", type=int, default=_default_workers())
    ev.add_argument("--deterministic", action="store_true",
                    help="accepted for uniformity; evaluation is always "
                         "deterministic")
    ev.add_argument("--out", required=True, help="output directory")

    pr = sub.add_parser("predict", help="rank the next activation after a prefix")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--graph", required=True)
    pr.add_argument("--undirected", action="store_true")
    pr.add_argument("--prefix", nargs="+", required=True,
                    help="observed activations in order (node labels)")
    pr.add_argument("--top-n", type=int, default=10)
    return parser


def _load_checkpoint_with_graph(args):
    model, labels, header = ckpt.load_model(args.checkpoint)
    graph = load_graph_file(args.graph, undirected=args.undirected)
    if graph.labels != labels:
        raise CheckpointError(
            f"graph {args.graph} does not match the checkpoint's node mapping "
            f"({graph.node_count} vs {len(labels)} nodes or different labels)")
    return model, graph, header


def cmd_generate(args) -> int:
    if args.preset:
        base = datagen.PRESETS[args.preset]
        config = datagen.SynthConfig(
            node_count=args.nodes if args.nodes is not None else base.node_count,
            graph_model=args.graph_model or base.graph_model,
            edge_param=(args.edge_param if args.edge_param is not None
                        else base.edge_param),
            activation_prob=(args.activation_prob
                             if args.activation_prob is not None
                             else base.activation_prob),
            cascade_count=(args.cascades if args.cascades is not None
                           else base.cascade_count),
            max_cascade_length=(args.max_len if args.max_len is not None
                                else base.max_cascade_length),
            seed=args.seed if args.seed is not None else base.seed)
    else:
        missing = [flag for flag, val in (("--nodes", args.nodes),
                                          ("--graph-model", args.graph_model),
                                          ("--activation-prob", args.activation_prob),
                                          ("--cascades", args.cascades),
                                          ("--max-len", args.max_len))
                   if val is None]
        if missing:
            raise DataError("generate needs --preset or all of: " + ", ".join(missing))
        config = datagen.SynthConfig(
            node_count=args.nodes, graph_model=args.graph_model,
            edge_param=args.edge_param if args.edge_param is not None else 0.0,
            activation_prob=args.activation_prob,
            cascade_count=args.cascades, max_cascade_length=args.max_len,
            seed=args.seed if args.seed is not None else 0)

    graph, cascades, _ = datagen.generate_dataset(config, out_dir=args.out)
    print(f"wrote {graph.node_count} nodes, {graph.edge_count} edges, "
          f"{len(cascades)} cascades to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph = load_graph_file(args.graph, undirected=args.undirected)
    cascades = load_cascades_file(args.cascades, graph)

    train_config = training.TrainConfig(
        learning_rate=args.lr, lam=args.lam, batch_size=args.batch_size,
        max_epochs=args.epochs, patience=args.patience, seed=args.seed,
        train_frac=args.train_frac, val_frac=args.val_frac,
        clip_norm=args.clip_norm, workers=args.workers,
        deterministic=args.deterministic)
    model_config = ModelConfig(hidden_dim=args.hidden_dim,
                               node_count=graph.node_count,
                               score_mode=args.score_mode)
    config_echo = {
        "command": "train",
        "tool_version": TOOL_VERSION,
        "graph": args.graph,
        "cascades": args.cascades,
        "undirected": args.undirected,
        "model": {"hidden_dim": model_config.hidden_dim,
                  "node_count": model_config.node_count,
                  "score_mode": model_config.score_mode},
        "training": {
            "learning_rate": train_config.learning_rate, "lambda": train_config.lam,
            "batch_size": train_config.batch_size, "max_epochs": train_config.max_epochs,
            "patience": train_config.patience, "seed": train_config.seed,
            "train_frac": train_config.train_frac, "val_frac": train_config.val_frac,
            "clip_norm": train_config.clip_norm, "workers": train_config.workers,
            "deterministic": train_config.deterministic},
    }

    train_set, val_set, test_set = training.split_dataset(
        cascades, train_frac=args.train_frac, val_frac=args.val_frac,
        seed=args.seed)
    for name, subset in (("train", train_set), ("validation", val_set),
                         ("test", test_set)):
        save_cascades_file(out / f"split_{name}.txt", subset, graph,
                           header=f"{name} cascades, seed {args.seed}")
    save_labels(out / "labels.txt", graph, header="label id")

    ckpt_path = out / "checkpoint.bin"
    log_path = out / "train.log"

    with open(log_path, "w", encoding="utf-8") as log_fh:
        log_fh.write(f"# topolstm {TOOL_VERSION} training log\n")
        log_fh.write(f"# config: {json.dumps(config_echo, sort_keys=True)}\n")
        log_fh.write("# epoch train_loss[=nll+reg] val_loss seconds\n")

        def on_epoch(stats, current_model, improved):
            val = "nan" if stats.val_loss is None else f"{stats.val_loss:.6f}"
            if stats.train_reg is None:
                decomposition = f"{stats.train_loss:.6f}"
            else:
                nll = stats.train_loss - stats.train_reg
                decomposition = (f"{stats.train_loss:.6f}"
                                 f"[={nll:.6f}+{stats.train_reg:.6f}]")
            log_fh.write(f"{stats.epoch} {decomposition} {val} "
                         f"{stats.seconds:.3f}\n")
            log_fh.flush()
            if improved:
                ckpt.save_model(ckpt_path, current_model, graph.labels,
                                extra=config_echo)

        try:
            model, report = training.train(graph, train_set, val_set,
                                           train_config, model_config,
                                           epoch_callback=on_epoch)
        except DivergenceError as exc:
            _write_report(out / "report.json", exc.report, config_echo,
                          diverged=True,
                          include_timing=not args.deterministic)
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DIVERGED

    ckpt.save_model(ckpt_path, model, graph.labels, extra=config_echo)
    _write_report(out / "report.json", report, config_echo, diverged=False,
                  include_timing=not args.deterministic)
    final = report.epochs[-1].train_loss if report.epochs else float("nan")
    print(f"trained {len(report.epochs)} epoch(s); best epoch {report.best_epoch}; "
          f"final train loss {final:.6f}; checkpoint at {ckpt_path}")
    return EXIT_OK


def _write_report(path, report, config_echo, diverged, include_timing=True):
    doc = {
        "tool_version": TOOL_VERSION,
        "config": config_echo,
        "diverged": diverged,
        "report": report.to_json_dict(include_timing=include_timing) if report else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, graph, header = _load_checkpoint_with_graph(args)
    test_cascades = load_cascades_file(args.test_cascades, graph)
    if not test_cascades:
        raise DataError(f"no cascades in {args.test_cascades}")

    config_echo = {
        "command": "evaluate",
        "tool_version": TOOL_VERSION,
        "checkpoint": args.checkpoint,
        "graph": args.graph,
        "test_cascades": args.test_cascades,
        "ks": list(args.ks),
        "baseline": args.baseline,
        "score_mode": model.config.score_mode,
        "hidden_dim": model.config.hidden_dim,
    }

    tables = [evaluation.evaluate(evaluation.ModelScorer(model, graph),
                                  test_cascades, ks=args.ks,
                                  workers=args.workers)]
    if args.baseline == "icsb":
        if args.edge_probs:
            probs = EdgeProbabilities.load(args.edge_probs, graph)
        elif args.train_cascades:
            train_set = load_cascades_file(args.train_cascades, graph)
            probs = fit_static_bernoulli(graph, train_set)
            probs.save(out / "icsb_edge_probs.txt", graph,
                       header="fitted diffusion probabilities: u v p")
        else:
            raise DataError("--baseline icsb needs --train-cascades or --edge-probs")
        tables.append(evaluation.evaluate(ICSBScorer(graph, probs),
                                          test_cascades, ks=args.ks,
                                          workers=args.workers))

    evaluation.write_metrics_json(out / "metrics.json", tables, config_echo)
    evaluation.write_metrics_text(out / "metrics.txt", tables, config_echo)
    if args.length_csv:
        evaluation.write_length_buckets_csv(out / "length_buckets.csv", tables[0])
    with open(out / "metrics.txt", "r", encoding="utf-8") as fh:
        print(fh.read(), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, graph, _ = _load_checkpoint_with_graph(args)
    ids = []
    for label in args.prefix:
        ids.append(graph.id_of(label))  # raises DataError naming the label
    if len(set(ids)) != len(ids):
        raise DataError("prefix repeats a node")
    prefix = Cascade(tuple(ids))
    if args.top_n < 1:
        raise DataError("--top-n must be >= 1")
    cand, probs = predict_next(model, graph, prefix,
                               topologies=build_topologies(graph, prefix))
    order = sorted(range(cand.size), key=lambda j: (-probs[j], cand[j]))
    for j in order[: args.top_n]:
        print(f"{graph.labels[cand[j]]} {float(probs[j])!r}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"generate": cmd_generate, "train": cmd_train,
                "evaluate": cmd_evaluate, "predict": cmd_predict}
    try:
        return handlers[args.command](args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (DataError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TopoLstmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
