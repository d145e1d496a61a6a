"""Command-line entry point.

    mrate train      --config cfg.json [--epochs N] [--workers N] ...
    mrate evaluate   --config cfg.json [--checkpoint PATH] [--frozen]
    mrate mine       --config cfg.json --node ID [--kind user|item] --at TIME [--trace]
    mrate batch-plan --config cfg.json
    mrate sweep-t    --config cfg.json --values 1,2,3,4,5,6,7

Flags override config keys; ``--set hyper.mu=0.4`` reaches any key. The
effective configuration is written to ``config.json`` in the run directory.
Log verbosity comes from ``MRATE_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ABLATIONS, DAY, ConfigError, RunConfig
from .evaluator import EmptySplitError, evaluate_online, write_metrics
from .ingest import EmptyNetworkError, ParseError, TemporalInteractionNetwork, load_interactions, temporal_split
from .relations import HistoryIndex, build_local_graph
from .seq_embed import SequenceEmbeddingModel, SeqEmbedConfig, build_corpus
from .aggregator import neighbor_forward
from .trainer import build_engine, process_batch, scheduler_neighbors, schedule_stats, tn_batch, train

log = logging.getLogger("mrate")

LOG_ENV = "MRATE_LOG_LEVEL"
CHECKPOINT_NAME = "checkpoint.npz"
RUN_LOG_NAME = "runs.csv"


class CliError(RuntimeError):
    pass


# -- configuration ------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def effective_config(args) -> RunConfig:
    data: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        data = RunConfig.load(path).to_dict()
    data.setdefault("hyper", {})
    data.setdefault("split", {})
    if args.dataset is not None:
        data["dataset"] = args.dataset
    if args.output_dir is not None:
        data["output_dir"] = args.output_dir
    if args.workers is not None:
        data["workers"] = args.workers
    if args.seed is not None:
        data["hyper"]["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        data["hyper"]["epochs"] = args.epochs
    if args.ablation is not None:
        data["hyper"].update(ABLATIONS[args.ablation])
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        section, _, name = key.partition(".")
        if name:
            if section not in ("hyper", "split"):
                raise CliError(f"unknown config section {section!r}")
            data[section][name] = _parse_value(value)
        else:
            data[key] = _parse_value(value)
    data["mode"] = args.command
    try:
        cfg = RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    cfg.hyper.validate()
    if not cfg.dataset:
        raise CliError("no dataset given (config 'dataset' or --dataset)")
    return cfg


def run_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return out


def load_dataset(cfg: RunConfig) -> TemporalInteractionNetwork:
    path = Path(cfg.dataset)
    if not path.exists():
        raise CliError(f"dataset not found: {path}")
    return load_interactions(path)


# -- commands ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    net = load_dataset(cfg)
    out = run_dir(cfg)
    tr, _, _ = temporal_split(net, cfg.split)
    engine = build_engine(tr, cfg.hyper)
    engine.workers = cfg.workers
    with open(out / "loss_log.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])

        def on_epoch(ep, loss):
            writer.writerow([ep, repr(loss)])
            fh.flush()

        report = train(engine, tr, on_epoch)
    save_checkpoint(engine, out / CHECKPOINT_NAME)
    print(json.dumps({"epochs": len(report.epoch_losses), "batches": report.batch_count,
                      "final_loss": report.epoch_losses[-1] if report.epoch_losses else None,
                      "checkpoint": str(out / CHECKPOINT_NAME)}))
    return 0


def cmd_evaluate(cfg: RunConfig, checkpoint: str | None, frozen: bool) -> int:
    net = load_dataset(cfg)
    out = run_dir(cfg)
    tr, va, te = temporal_split(net, cfg.split)
    engine = load_checkpoint(checkpoint or out / CHECKPOINT_NAME, tr.interactions)
    engine.workers = cfg.workers
    results = {}
    # states keep evolving from valid into test
    for name, split in (("valid", va), ("test", te)):
        metrics = evaluate_online(engine, split, update=not frozen)
        write_metrics(metrics, out / f"metrics_{name}.json", out / RUN_LOG_NAME,
                      split=name, seed=cfg.hyper.seed, dataset=cfg.dataset)
        results[name] = metrics.to_json()
    print(json.dumps(results))
    return 0


def _resolve_node(net: TemporalInteractionNetwork, node: str, kind: str | None) -> int:
    in_users = node in net.user_index
    in_items = node in net.item_index
    if kind == "user" or (kind is None and in_users and not in_items):
        if not in_users:
            raise CliError(f"unknown user {node!r}")
        return net.user_index[node]
    if kind == "item" or (kind is None and in_items and not in_users):
        if not in_items:
            raise CliError(f"unknown item {node!r}")
        return net.n_users + net.item_index[node]
    if in_users and in_items:
        raise CliError(f"{node!r} is both a user and an item id; pass --kind")
    raise CliError(f"unknown node {node!r}")


def cmd_mine(cfg: RunConfig, node: str, kind: str | None, at_time: float, trace: bool = False,
             checkpoint: str | None = None) -> int:
    """Local graph of ``node`` as seen by an interaction arriving at ``at_time``.

    With ``trace`` the earlier interactions are replayed with frozen
    parameters (fresh or from ``checkpoint``) and the attention trace of the
    node's neighbor aggregation is printed as well.
    """
    net = load_dataset(cfg)
    run_dir(cfg)
    center = _resolve_node(net, node, kind)
    prefix = [s for s in net.interactions if s.timestamp < at_time]
    seq = SequenceEmbeddingModel(net.n_nodes, net.n_users, SeqEmbedConfig.from_hyper(cfg.hyper),
                                 seed=cfg.hyper.seed + 1)
    if prefix and cfg.hyper.use_seq:
        seq.fit(build_corpus(prefix, net.n_users))
    if not trace:
        index = HistoryIndex(net.n_users)
        for s in prefix:
            index.record(s.user, net.n_users + s.item, s.timestamp)
        graph = build_local_graph(index, seq, center, at_time, cfg.hyper)
        print(json.dumps(graph.to_json(net.node_name), indent=2))
        return 0
    tr, _, _ = temporal_split(net, cfg.split)
    engine = build_engine(tr, cfg.hyper)
    if checkpoint is not None:
        engine.params = load_checkpoint(checkpoint, tr.interactions).params
    engine.seq = seq
    engine.freeze_seq = True
    for s in prefix:
        process_batch(engine, [s], "eval")
    graph = engine.local_graph(center, at_time)
    groups = engine.neighbor_groups(center, at_time)
    _, _, attn = neighbor_forward(engine.states.previous(center, engine.params), groups, engine.params,
                                  engine.hyper, want_trace=True)
    doc = {"graph": graph.to_json(net.node_name), "trace": attn.to_json()}
    for name, group in doc["trace"]["groups"].items():
        group["neighbors"] = [net.node_name(n) for n in group["neighbors"]]
    print(json.dumps(doc, indent=2))
    return 0


def cmd_batch_plan(cfg: RunConfig) -> int:
    net = load_dataset(cfg)
    out = run_dir(cfg)
    tr, _, _ = temporal_split(net, cfg.split)
    engine = build_engine(tr, cfg.hyper)
    batches = tn_batch(tr.interactions, scheduler_neighbors(engine, tr.interactions), tr.n_users)
    stats = schedule_stats(batches)
    (out / "batch_plan.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(stats))
    return 0


def parse_values(text: str) -> list[float]:
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise CliError("sweep-t needs at least one T value")
    for v in values:
        if not (math.isfinite(v) and v > 0):
            raise CliError(f"T values must be positive durations in days, got {v}")
    return values


def cmd_sweep_t(cfg: RunConfig, values: list[float]) -> int:
    net = load_dataset(cfg)
    out = run_dir(cfg)
    tr, va, _ = temporal_split(net, cfg.split)
    rows = []
    for days in values:
        hyper = cfg.hyper.replace(T=days * DAY)
        engine = build_engine(tr, hyper)
        engine.workers = cfg.workers
        train(engine, tr)
        metrics = evaluate_online(engine, va)
        log.info("T=%g days: valid MRR %.4f", days, metrics.mrr)
        rows.append({"T_days": days, "T_seconds": days * DAY, "valid_mrr": metrics.mrr,
                     "valid_recall_at_10": metrics.recall_at_10})
    with open(out / "sweep_t.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps(rows))
    return 0


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--dataset", help="interaction CSV (user_id,item_id,timestamp)")
    common.add_argument("--output-dir", help="run directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="cap on parallel workers inside a batch")
    common.add_argument("--ablation", choices=sorted(ABLATIONS))
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. hyper.mu=0.4")

    parser = argparse.ArgumentParser(prog="mrate", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p.add_argument("--epochs", type=int)
    p = sub.add_parser("evaluate", parents=[common], help="online evaluation on valid and test")
    p.add_argument("--checkpoint")
    p.add_argument("--frozen", action="store_true", help="debug: no parameter updates during evaluation")
    p = sub.add_parser("mine", parents=[common], help="print a node's local relation graph")
    p.add_argument("--node", required=True)
    p.add_argument("--kind", choices=["user", "item"])
    p.add_argument("--at", type=float, required=True, dest="at_time", help="query timestamp")
    p.add_argument("--trace", action="store_true", help="also print the attention trace")
    p.add_argument("--checkpoint", help="parameters for --trace (default: fresh initialisation)")
    sub.add_parser("batch-plan", parents=[common], help="t-n-Batch schedule statistics")
    p = sub.add_parser("sweep-t", parents=[common], help="validation MRR against the time slot T")
    p.add_argument("--values", required=True, help="comma-separated T values in days")
    p.add_argument("--epochs", type=int)
    return parser


def configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint, args.frozen)
        if args.command == "mine":
            return cmd_mine(cfg, args.node, args.kind, args.at_time, args.trace, args.checkpoint)
        if args.command == "batch-plan":
            return cmd_batch_plan(cfg)
        return cmd_sweep_t(cfg, parse_values(args.values))
    except (CliError, ConfigError, CheckpointError, ParseError, EmptyNetworkError, EmptySplitError,
            OSError) as exc:
        print(f"mrate: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
