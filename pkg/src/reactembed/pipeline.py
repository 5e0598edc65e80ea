"""Run configuration and the end-to-end steps shared by the CLI and the ablation harness."""

from __future__ import annotations

import dataclasses
import io
import math
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from ._io import data_lines, read_text, source_name
from .embedding_store import EmbeddingTable, load_embeddings
from .errors import DataError, ParseError
from .evaluation import (
    KNNClassifier,
    Weighting,
    accuracy,
    build_dataset,
    evaluate_probe,
    load_labeled,
    run_zero_shot_screen,
    train_probe,
)
from .reaction_graph import (
    Domain,
    ReactionGraph,
    ReactionRecord,
    build_graph,
    parse_reactions,
    remove_intra_domain_edges,
    subsample_reactions,
)
from .trainer import TrainConfig, TrainResult, train
from .unified_space import UnifiedTable, embed_tables


def _parse_bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(",", " ").split())


def _parse_paths(text):
    if isinstance(text, (tuple, list)):
        return tuple(str(v) for v in text)
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _opt(conv):
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none"):
            return None
        return conv(text)
    return parse


@dataclass
class RunConfig:
    reactions: str | None = None
    proteins: str | None = None
    molecules: str | None = None
    outdir: str = "out"
    checkpoint: str | None = None
    unified: str | None = None
    alt_reactions: str | None = None
    probe_tasks: tuple = ()
    zero_shot_train: str | None = None
    zero_shot_eval: str | None = None
    screen_label: float = 1.0
    screen_baseline: float | None = None
    keep_fraction: float = 1.0
    drop_intra_domain: bool = False
    probe_lr: float = 1e-3
    probe_batch_size: int = 256
    probe_patience: int = 10
    probe_max_epochs: int = 2000
    probe_weight_decay: float = 0.01
    knn_k: int = 20
    knn_weighting: Weighting = Weighting.INVERSE_DISTANCE
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.knn_weighting = Weighting(self.knn_weighting)
        self.probe_tasks = _parse_paths(self.probe_tasks)
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def checkpoint_path(self) -> str:
        return self.checkpoint or os.path.join(self.outdir, "checkpoint.bin")

    @property
    def unified_path(self) -> str:
        return self.unified or os.path.join(self.outdir, "unified.tsv")

    def replace(self, **changes) -> "RunConfig":
        """Copy with changes; TrainConfig fields may be given at top level."""
        train_fields = set(TrainConfig.field_names())
        tkw = {k: changes.pop(k) for k in list(changes) if k in train_fields}
        out = dataclasses.replace(self, **changes)
        if tkw:
            out.train = dataclasses.replace(self.train, **tkw)
        return out


_RUN_PARSERS = {
    "reactions": _opt(str), "proteins": _opt(str), "molecules": _opt(str), "outdir": str,
    "checkpoint": _opt(str), "unified": _opt(str), "alt_reactions": _opt(str),
    "probe_tasks": _parse_paths, "zero_shot_train": _opt(str), "zero_shot_eval": _opt(str),
    "screen_label": float, "screen_baseline": _opt(float),
    "keep_fraction": float, "drop_intra_domain": _parse_bool,
    "probe_lr": float, "probe_batch_size": int, "probe_patience": int, "probe_max_epochs": int,
    "probe_weight_decay": float, "knn_k": int, "knn_weighting": str,
}
_TRAIN_PARSERS = {
    "margin": float, "alpha": float, "triplets_per_epoch": int, "batch_size": int,
    "max_epochs": int, "patience": int, "validation_fraction": float, "seed": int,
    "noise_flip_prob": float, "distance": str, "hidden_dims": _parse_ints, "unified_dim": int,
    "lr": float, "weight_decay": float, "normalize": _parse_bool,
}
CONFIG_KEYS = tuple(_RUN_PARSERS) + tuple(_TRAIN_PARSERS)


def read_config_file(source) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment line."""
    name = source_name(source)
    out = {}
    for lineno, line in data_lines(read_text(source)):
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ParseError("expected 'key = value'", line=lineno, source=name)
        if key not in CONFIG_KEYS:
            raise ParseError(f"unknown config key {key!r}", line=lineno, source=name)
        out[key] = value.strip()
    return out


def config_from_mapping(values: dict) -> RunConfig:
    """Build a RunConfig from string (or already typed) values keyed by field name."""
    run_kw, train_kw = {}, {}
    for key, raw in values.items():
        if key in _RUN_PARSERS:
            run_kw[key] = _RUN_PARSERS[key](raw) if isinstance(raw, str) or key == "probe_tasks" else raw
        elif key in _TRAIN_PARSERS:
            train_kw[key] = _TRAIN_PARSERS[key](raw) if isinstance(raw, str) else raw
        else:
            raise ValueError(f"unknown config key {key!r}")
    return RunConfig(train=TrainConfig(**train_kw), **run_kw)


# -- inputs -------------------------------------------------------------------

def _require(path, what):
    if path is None:
        raise DataError(f"no {what} given")
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")
    return path


def load_reactions(path) -> list[ReactionRecord]:
    return parse_reactions(_require(path, "reaction file"))


def load_tables(cfg: RunConfig) -> tuple[EmbeddingTable, EmbeddingTable]:
    return (load_embeddings(_require(cfg.proteins, "protein embedding file"), Domain.PROTEIN),
            load_embeddings(_require(cfg.molecules, "molecule embedding file"), Domain.MOLECULE))


def perturbation_rng(seed, stream: str) -> np.random.Generator:
    """Generator for data perturbations, keyed by base seed and stream name."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(stream.encode())]))


@dataclass
class GraphBuild:
    graph: ReactionGraph
    n_reactions: int
    n_kept: int

    def summary(self) -> dict:
        out = {"reactions": self.n_reactions, "reactions_kept": self.n_kept}
        out.update(self.graph.summary())
        return out


def prepare_graph(reactions, keep_fraction=1.0, drop_intra_domain=False, seed=0) -> GraphBuild:
    """Optional subsampling, graph construction, optional intra-domain edge removal."""
    kept = subsample_reactions(reactions, keep_fraction, perturbation_rng(seed, "subsample"))
    graph = build_graph(kept)
    if drop_intra_domain:
        graph = remove_intra_domain_edges(graph)
    return GraphBuild(graph, len(reactions), len(kept))


def graph_for(cfg: RunConfig, reactions=None) -> GraphBuild:
    if reactions is None:
        reactions = load_reactions(cfg.reactions)
    return prepare_graph(reactions, cfg.keep_fraction, cfg.drop_intra_domain, cfg.seed)


# -- tasks --------------------------------------------------------------------

@dataclass
class TaskResult:
    task: str
    metrics: dict  # metric name -> value
    n_missing: int = 0


def task_name(path) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def run_probe_task(cfg: RunConfig, unified: UnifiedTable, items, name) -> TaskResult:
    ds = build_dataset(items, unified)
    model = train_probe(ds, lr=cfg.probe_lr, batch_size=cfg.probe_batch_size,
                        patience=cfg.probe_patience, max_epochs=cfg.probe_max_epochs,
                        weight_decay=cfg.probe_weight_decay, seed=cfg.seed)
    return TaskResult(name, evaluate_probe(model, ds), len(ds.missing))


def _single_entity(items, what):
    for it in items:
        if len(it.entities) != 1:
            raise DataError(f"{what} must list single entities, not pairs")
    doms = {it.entities[0].domain for it in items}
    if len(doms) != 1:
        raise DataError(f"{what} must come from a single domain")
    return doms.pop()


@dataclass
class ZeroShotOutcome:
    knn: KNNClassifier
    train_domain: Domain
    candidates: list  # EntityRefs in the other domain with unified vectors
    predicted: np.ndarray
    truth: np.ndarray | None
    accuracy: float | None


def run_zero_shot(cfg: RunConfig, unified: UnifiedTable, train_items, eval_items=None) -> ZeroShotOutcome:
    """Fit KNN on one domain's labeled vectors and predict the other domain.

    Without ``eval_items`` every unified entity of the other domain is a
    candidate and no accuracy is reported.
    """
    dom = _single_entity(train_items, "zero-shot training labels")
    train_kept = [it for it in train_items if it.entities[0] in unified]
    if not train_kept:
        raise DataError("no zero-shot training entity has a unified vector")
    x = unified.vectors([it.entities[0] for it in train_kept])
    y = np.array([it.label for it in train_kept])
    knn = KNNClassifier(min(cfg.knn_k, len(train_kept)), cfg.knn_weighting).fit(x, y)
    if eval_items:
        if _single_entity(eval_items, "zero-shot evaluation labels") is dom:
            raise DataError("zero-shot evaluation entities must come from the other domain")
        kept = [it for it in eval_items if it.entities[0] in unified]
        cands = [it.entities[0] for it in kept]
        truth = np.array([it.label for it in kept])
    else:
        cands = [e for e in unified.entities if e.domain is dom.other]
        truth = None
    if not cands:
        raise DataError("no zero-shot candidate has a unified vector")
    pred = knn.predict(unified.vectors(cands))
    acc = accuracy(pred, truth) if truth is not None else None
    return ZeroShotOutcome(knn, dom, cands, pred, truth, acc)


def screen(cfg: RunConfig, unified: UnifiedTable, outcome: ZeroShotOutcome):
    ids = [e.id for e in outcome.candidates]
    return run_zero_shot_screen(ids, unified.vectors(outcome.candidates), outcome.knn,
                                baseline=cfg.screen_baseline, label=cfg.screen_label)


def primary_metric(result: TaskResult) -> tuple[str, float]:
    for key in ("test_auc", "test_rmse", "accuracy"):
        if key in result.metrics:
            return key, result.metrics[key]
    raise DataError(f"task {result.task} produced no test metric")


def run_task_suite(cfg: RunConfig, unified: UnifiedTable) -> list[TaskResult]:
    """All configured probe tasks followed by the zero-shot task, if any."""
    out = []
    for path in cfg.probe_tasks:
        out.append(run_probe_task(cfg, unified, load_labeled(_require(path, "probe task file")), task_name(path)))
    if cfg.zero_shot_train:
        train_items = load_labeled(_require(cfg.zero_shot_train, "zero-shot training labels"))
        eval_items = load_labeled(_require(cfg.zero_shot_eval, "zero-shot evaluation labels"))
        z = run_zero_shot(cfg, unified, train_items, eval_items)
        out.append(TaskResult("zero_shot", {"accuracy": z.accuracy}, len(eval_items) - len(z.candidates)))
    return out


def metrics_csv(results) -> str:
    buf = io.StringIO()
    buf.write("task,metric,value\n")
    for r in results:
        for k in sorted(r.metrics):
            buf.write(f"{r.task},{k},{float(r.metrics[k])!r}\n")
    return buf.getvalue()


# -- ablation -----------------------------------------------------------------

CONDITIONS = ("full", "data-10%", "data-50%", "intra-removed", "noise-10%", "noise-50%", "alt-reactions")


def condition_config(cfg: RunConfig, name: str) -> RunConfig:
    """The base config with switches reset, then the one perturbation of ``name``."""
    base = cfg.replace(keep_fraction=1.0, drop_intra_domain=False, noise_flip_prob=0.0)
    changes = {
        "full": {},
        "data-10%": {"keep_fraction": 0.9},
        "data-50%": {"keep_fraction": 0.5},
        "intra-removed": {"drop_intra_domain": True},
        "noise-10%": {"noise_flip_prob": 0.1},
        "noise-50%": {"noise_flip_prob": 0.5},
        "alt-reactions": {},
    }[name]
    return base.replace(**changes)


@dataclass
class ConditionRun:
    name: str
    train_result: TrainResult
    unified: UnifiedTable


def run_condition(cfg: RunConfig, name: str, tables, reactions=None) -> ConditionRun:
    ccfg = condition_config(cfg, name)
    if name == "alt-reactions":
        if not cfg.alt_reactions:
            raise DataError("no alternative reaction file configured")
        reactions = load_reactions(cfg.alt_reactions)
    build = graph_for(ccfg, reactions)
    res = train(build.graph, tables[0], tables[1], ccfg.train)
    return ConditionRun(name, res, embed_tables(tables[0], tables[1], res.checkpoint))


def delta_pct(value, full) -> float:
    """``100 * (value - full) / full``; RMSE increases and AUC gains both come out positive."""
    if full == 0:
        return 0.0 if value == 0 else math.copysign(math.inf, value)
    return 100.0 * (value - full) / full


@dataclass
class AblationTable:
    conditions: tuple
    rows: list  # (task, metric)
    values: dict  # (task, metric, condition) -> float
    errors: dict  # (task or "*", condition) -> message

    def cell(self, task, metric, cond):
        return self.values.get((task, metric, cond))

    def to_csv(self) -> str:
        buf = io.StringIO()
        head = ["task", "metric"] + list(self.conditions) + [f"delta_pct:{c}" for c in self.conditions]
        buf.write(",".join(head) + "\n")
        for task, metric in self.rows:
            full = self.cell(task, metric, "full")
            vals, deltas = [], []
            for c in self.conditions:
                v = self.cell(task, metric, c)
                vals.append("failed" if v is None else repr(float(v)))
                deltas.append("" if v is None or full is None else repr(delta_pct(v, full)))
            buf.write(",".join([task, metric] + vals + deltas) + "\n")
        return buf.getvalue()

    def errors_tsv(self) -> str:
        lines = ["#condition\ttask\terror"]
        for (task, cond), msg in sorted(self.errors.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            lines.append(f"{cond}\t{task}\t{msg}")
        return "\n".join(lines) + "\n"


def run_ablation(cfg: RunConfig, conditions=CONDITIONS, progress=None) -> AblationTable:
    """Train and evaluate every condition; a failure only blanks its own cells."""
    tables = load_tables(cfg)
    reactions = load_reactions(cfg.reactions)
    rows, values, errors = [], {}, {}
    for name in conditions:
        try:
            run = run_condition(cfg, name, tables, reactions)
        except (DataError, ArithmeticError, RuntimeError, ValueError) as exc:
            errors[("*", name)] = str(exc)
            continue
        ccfg = condition_config(cfg, name)
        for path in cfg.probe_tasks:
            tname = task_name(path)
            try:
                metric, v = primary_metric(run_probe_task(ccfg, run.unified, load_labeled(path), tname))
            except (DataError, ValueError) as exc:
                errors[(tname, name)] = str(exc)
                continue
            if (tname, metric) not in rows:
                rows.append((tname, metric))
            values[(tname, metric, name)] = v
        if cfg.zero_shot_train:
            try:
                z = run_zero_shot(ccfg, run.unified, load_labeled(cfg.zero_shot_train),
                                  load_labeled(cfg.zero_shot_eval))
            except (DataError, ValueError) as exc:
                errors[("zero_shot", name)] = str(exc)
            else:
                if ("zero_shot", "accuracy") not in rows:
                    rows.append(("zero_shot", "accuracy"))
                values[("zero_shot", "accuracy", name)] = z.accuracy
        if progress is not None:
            progress(name)
    # tasks that failed everywhere still get a row
    for (task, cond) in errors:
        if task != "*" and not any(r[0] == task for r in rows):
            rows.append((task, "test_metric"))
    return AblationTable(tuple(conditions), rows, values, errors)
