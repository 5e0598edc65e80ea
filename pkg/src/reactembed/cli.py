"""Command-line entry point: ``reactembed <subcommand> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error
(missing or malformed input files, untrainable graphs).
"""

from __future__ import annotations

import argparse
import os
import sys

from ._io import atomic_write_text
from .errors import DataError, TrainingError
from .evaluation import load_labeled
from .pipeline import (
    CONFIG_KEYS,
    RunConfig,
    config_from_mapping,
    graph_for,
    load_tables,
    metrics_csv,
    read_config_file,
    run_ablation,
    run_task_suite,
    run_zero_shot,
    screen,
)
from .projection_net import Checkpoint
from .trainer import train
from .unified_space import embed_tables, load_unified

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


_BOOL_KEYS = ("drop_intra_domain", "normalize")
_HELP = {
    "reactions": "reaction TSV (reaction_id, entity_id, P|M)",
    "proteins": "protein embedding TSV",
    "molecules": "molecule embedding TSV",
    "outdir": "output directory (created if absent)",
    "checkpoint": "checkpoint path (default OUTDIR/checkpoint.bin)",
    "unified": "unified embedding TSV (default OUTDIR/unified.tsv)",
    "alt_reactions": "alternative reaction TSV for the ablation matrix",
    "probe_tasks": "comma-separated labeled TSV files for linear probing",
    "zero_shot_train": "labeled entities of one domain used to fit the KNN",
    "zero_shot_eval": "labeled entities of the other domain to classify and rank",
    "keep_fraction": "fraction of reactions kept before graph construction",
    "drop_intra_domain": "remove protein-protein and molecule-molecule edges",
    "noise_flip_prob": "probability of swapping positive and negative in a triplet",
}


def _add_config_flags(p):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    for key in CONFIG_KEYS:
        flag = "--" + key.replace("_", "-")
        if key in _BOOL_KEYS:
            p.add_argument(flag, dest=key, action="store_const", const="true", default=None,
                           help=_HELP.get(key))
        else:
            p.add_argument(flag, dest=key, default=None, metavar=key.upper(), help=_HELP.get(key))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="reactembed", description="Reaction-graph alignment of protein and molecule embeddings.")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, text in [
        ("build-graph", "build the co-occurrence graph and write a snapshot and summary"),
        ("train", "train the two projection networks and write a checkpoint and log"),
        ("embed", "project every raw embedding into the unified space"),
        ("probe", "fit linear probes on labeled TSV files and write metrics"),
        ("zero-shot", "fit KNN on one domain's labels and rank the other domain"),
        ("ablate", "run the ablation matrix and write a condition-by-task table"),
    ]:
        _add_config_flags(sub.add_parser(name, help=text, description=text))
    return ap


def resolve_config(args) -> RunConfig:
    try:
        values = dict(read_config_file(args.config)) if args.config else {}
    except DataError as exc:
        raise UsageError(f"invalid config file: {exc}") from None
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        return config_from_mapping(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _out(cfg, name):
    return os.path.join(cfg.outdir, name)


def _kv_text(pairs) -> str:
    return "".join(f"{k}\t{v}\n" for k, v in pairs)


def cmd_build_graph(cfg: RunConfig, out=None):
    out = out or sys.stdout
    build = graph_for(cfg)
    atomic_write_text(_out(cfg, "graph.tsv"), build.graph.to_snapshot())
    summary = _kv_text(build.summary().items())
    atomic_write_text(_out(cfg, "graph_summary.tsv"), summary)
    out.write(summary)
    return build


def cmd_train(cfg: RunConfig, out=None):
    out = out or sys.stdout
    build = graph_for(cfg)
    pt, mt = load_tables(cfg)
    res = train(build.graph, pt, mt, cfg.train)
    res.checkpoint.save(cfg.checkpoint_path)
    atomic_write_text(_out(cfg, "train_log.csv"), res.log_csv())
    alpha = cfg.train.alpha
    lines = [("final_val_loss", repr(res.final_val_loss)), ("best_epoch", res.best_epoch),
             ("intra_weight", repr(alpha)), ("cross_weight", repr(1.0 - alpha))]
    if alpha == 1.0:
        lines.append(("note", "cross-domain term weight 0 (alpha = 1)"))
    text = _kv_text(lines)
    atomic_write_text(_out(cfg, "train_summary.tsv"), text)
    out.write(text)
    return res


def _checkpoint(cfg):
    path = cfg.checkpoint_path
    if not os.path.isfile(path):
        raise DataError(f"checkpoint not found: {path} (run 'reactembed train' first)")
    return Checkpoint.load(path)


def _unified(cfg):
    path = cfg.unified_path
    if not os.path.isfile(path):
        raise DataError(f"unified embeddings not found: {path} (run 'reactembed embed' first)")
    return load_unified(path)


def cmd_embed(cfg: RunConfig, out=None):
    out = out or sys.stdout
    ck = _checkpoint(cfg)
    pt, mt = load_tables(cfg)
    table = embed_tables(pt, mt, ck)
    atomic_write_text(cfg.unified_path, table.to_tsv())
    out.write(f"wrote {len(table)} unified vectors to {cfg.unified_path}\n")
    return table


def cmd_probe(cfg: RunConfig, out=None):
    out = out or sys.stdout
    if not cfg.probe_tasks:
        raise UsageError("probe needs --probe-tasks")
    unified = _unified(cfg)
    results = run_task_suite(cfg.replace(zero_shot_train=None), unified)
    text = metrics_csv(results)
    atomic_write_text(_out(cfg, "metrics.csv"), text)
    for r in results:
        if r.n_missing:
            print(f"{r.task}: {r.n_missing} item(s) lack unified vectors and were skipped", file=sys.stderr)
    out.write(text)
    return results


def cmd_zero_shot(cfg: RunConfig, out=None):
    out = out or sys.stdout
    if not cfg.zero_shot_train:
        raise UsageError("zero-shot needs --zero-shot-train")
    unified = _unified(cfg)
    train_items = load_labeled(cfg.zero_shot_train)
    eval_items = load_labeled(cfg.zero_shot_eval) if cfg.zero_shot_eval else None
    z = run_zero_shot(cfg, unified, train_items, eval_items)
    report = screen(cfg, unified, z)
    atomic_write_text(_out(cfg, "zero_shot_ranking.csv"), report.to_csv())
    atomic_write_text(_out(cfg, "zero_shot_histogram.csv"), report.histogram_csv())
    lines = [("train_domain", z.train_domain.value), ("candidates", len(z.candidates))]
    if z.accuracy is not None:
        lines.append(("accuracy", repr(z.accuracy)))
    text = _kv_text(lines)
    atomic_write_text(_out(cfg, "zero_shot_metrics.tsv"), text)
    out.write(text)
    return z, report


def cmd_ablate(cfg: RunConfig, out=None):
    out = out or sys.stdout
    table = run_ablation(cfg, progress=lambda name: print(f"condition {name} done", file=sys.stderr))
    text = table.to_csv()
    atomic_write_text(_out(cfg, "ablation.csv"), text)
    atomic_write_text(_out(cfg, "ablation_errors.tsv"), table.errors_tsv())
    for (task, cond), msg in table.errors.items():
        print(f"{cond}/{task}: {msg}", file=sys.stderr)
    out.write(text)
    return table


COMMANDS = {
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "embed": cmd_embed,
    "probe": cmd_probe,
    "zero-shot": cmd_zero_shot,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        os.makedirs(cfg.outdir, exist_ok=True)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TrainingError, OSError) as exc:
        print(f"reactembed: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
