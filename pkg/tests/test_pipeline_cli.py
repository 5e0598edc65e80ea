import os

import numpy as np
import pytest

from reactembed.cli import main
from reactembed.evaluation import LabeledItem, Split, Weighting, format_labeled, knn_zero_shot, load_labeled
from reactembed.pipeline import (
    CONDITIONS,
    RunConfig,
    condition_config,
    config_from_mapping,
    delta_pct,
    read_config_file,
    run_ablation,
)
from reactembed.planted import make_planted, write_planted
from reactembed.reaction_graph import Domain, ReactionGraph, format_reactions, molecule, protein
from reactembed.unified_space import UnifiedTable, load_unified

SMALL_FLAGS = ["--hidden-dims", "32", "--unified-dim", "16", "--max-epochs", "8",
               "--triplets-per-epoch", "512", "--batch-size", "128"]


@pytest.fixture(scope="module")
def planted_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("planted")
    data = make_planted(seed=1, n_proteins=120, n_molecules=120, n_cross_reactions=400, n_intra_reactions=200)
    write_planted(data, d)
    return d


def inputs(d):
    return ["--reactions", str(d / "reactions.tsv"), "--proteins", str(d / "proteins.tsv"),
            "--molecules", str(d / "molecules.tsv")]


def read_kv(path):
    return dict(line.rstrip("\n").split("\t") for line in open(path))


class TestBuildGraph:
    def test_toy_file_three_edges(self, tmp_path):
        rx = tmp_path / "r.tsv"
        rx.write_text("R1\tP1\tP\nR1\tM1\tM\nR2\tP1\tP\nR2\tM1\tM\nR2\tM2\tM\n")
        assert main(["build-graph", "--reactions", str(rx), "--outdir", str(tmp_path / "o")]) == 0
        g = ReactionGraph.from_snapshot(tmp_path / "o" / "graph.tsv")
        assert len(g.edges) == 3
        assert g.weight(protein("P1"), molecule("M1")) == 2
        summary = read_kv(tmp_path / "o" / "graph_summary.tsv")
        assert summary["edges"] == "3" and summary["total_weight"] == "4"

    def test_keep_fraction_halves(self, tmp_path):
        rx = tmp_path / "r.tsv"
        rx.write_text("".join(f"R{i}\tP{i}\tP\nR{i}\tM{i}\tM\n" for i in range(10)))
        assert main(["build-graph", "--reactions", str(rx), "--keep-fraction", "0.5", "--outdir", str(tmp_path)]) == 0
        summary = read_kv(tmp_path / "graph_summary.tsv")
        assert (summary["reactions"], summary["reactions_kept"], summary["edges"]) == ("10", "5", "5")

    def test_drop_intra_domain(self, planted_dir, tmp_path):
        assert main(["build-graph", "--reactions", str(planted_dir / "reactions.tsv"), "--drop-intra-domain",
                     "--outdir", str(tmp_path)]) == 0
        summary = read_kv(tmp_path / "graph_summary.tsv")
        assert summary["edges_PP"] == "0" and summary["edges_MM"] == "0" and int(summary["edges_PM"]) > 0

    def test_parse_error_reports_line(self, tmp_path, capsys):
        rx = tmp_path / "r.tsv"
        rx.write_text("R1\tP1\tP\nR1\tM1\n")
        assert main(["build-graph", "--reactions", str(rx), "--outdir", str(tmp_path)]) == 2
        assert "line 2" in capsys.readouterr().err


class TestExitCodes:
    def test_usage_errors(self, tmp_path):
        assert main([]) == 1
        assert main(["nonsense"]) == 1
        assert main(["train", "--no-such-flag"]) == 1
        assert main(["train", "--alpha", "1.5", "--outdir", str(tmp_path)]) == 1
        assert main(["train", "--max-epochs", "many", "--outdir", str(tmp_path)]) == 1

    def test_data_errors(self, tmp_path):
        assert main(["build-graph", "--reactions", str(tmp_path / "missing.tsv"), "--outdir", str(tmp_path)]) == 2
        assert main(["embed", "--outdir", str(tmp_path)]) == 2

    def test_bad_config_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("alpah = 0.3\n")
        assert main(["train", "--config", str(cfg), "--outdir", str(tmp_path)]) == 1


class TestConfig:
    def test_file_then_flag_override(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\nalpha = 0.25\nmargin = 2\nhidden_dims = 64, 32\ndrop_intra_domain = yes\n")
        values = read_config_file(cfg)
        run = config_from_mapping({**values, "alpha": "0.75"})
        assert run.train.alpha == 0.75 and run.train.margin == 2.0
        assert run.train.hidden_dims == (64, 32) and run.drop_intra_domain

    def test_defaults(self):
        run = RunConfig()
        assert run.knn_k == 20 and run.knn_weighting is Weighting.INVERSE_DISTANCE
        assert run.probe_lr == 1e-3 and run.probe_batch_size == 256 and run.probe_patience == 10
        assert run.seed == 0 and run.keep_fraction == 1.0

    def test_condition_configs_differ_by_one_switch(self):
        base = RunConfig().replace(noise_flip_prob=0.3, keep_fraction=0.7)
        full = condition_config(base, "full")
        assert full.train.noise_flip_prob == 0.0 and full.keep_fraction == 1.0
        assert condition_config(base, "data-10%").keep_fraction == 0.9
        assert condition_config(base, "data-50%").keep_fraction == 0.5
        assert condition_config(base, "intra-removed").drop_intra_domain
        assert condition_config(base, "noise-50%").train.noise_flip_prob == 0.5
        assert all(condition_config(base, c).seed == base.seed for c in CONDITIONS)


@pytest.fixture(scope="module")
def runs(planted_dir, tmp_path_factory):
    out = []
    for tag in ("a", "b"):
        o = tmp_path_factory.mktemp(tag)
        common = inputs(planted_dir) + SMALL_FLAGS + ["--outdir", str(o)]
        assert main(["train"] + common) == 0
        assert main(["embed"] + common) == 0
        assert main(["probe", "--probe-tasks", str(planted_dir / "protein_probe.tsv"), "--outdir", str(o)]) == 0
        out.append(o)
    return out


class TestTrainEmbedProbe:
    def test_outputs_exist(self, runs):
        for name in ("checkpoint.bin", "train_log.csv", "train_summary.tsv", "unified.tsv", "metrics.csv"):
            assert (runs[0] / name).is_file()
        assert not [f for f in os.listdir(runs[0]) if f.startswith(".tmp")]

    def test_byte_identical_reruns(self, runs):
        for name in ("checkpoint.bin", "unified.tsv", "metrics.csv", "train_summary.tsv"):
            assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name

    def test_unified_rows_cover_both_tables(self, runs):
        table = load_unified(runs[0] / "unified.tsv")
        assert len(table) == 240
        assert len(table.of_domain(Domain.PROTEIN)) == 120

    def test_log_header(self, runs):
        assert (runs[0] / "train_log.csv").read_text().splitlines()[0] == "epoch,train_loss,val_loss,elapsed_ms"

    def test_zero_shot_matches_library(self, runs, planted_dir):
        o = runs[0]
        assert main(["zero-shot", "--zero-shot-train", str(planted_dir / "molecule_classes.tsv"),
                     "--zero-shot-eval", str(planted_dir / "protein_classes.tsv"),
                     "--screen-label", "2", "--outdir", str(o)]) == 0
        table = load_unified(o / "unified.tsv")
        mol = table.of_domain(Domain.MOLECULE)
        prot = table.of_domain(Domain.PROTEIN)
        mlab = {it.entities[0]: it.label for it in load_labeled(planted_dir / "molecule_classes.tsv")}
        classes, proba = knn_zero_shot(mol.matrix, np.array([mlab[e] for e in mol.entities]), prot.matrix,
                                       k=20, weighting="inverse_distance")
        p2 = proba[:, list(classes).index(2.0)]
        expect = {e.id: p for e, p in zip(prot.entities, p2)}
        rows = [r.split(",") for r in (o / "zero_shot_ranking.csv").read_text().splitlines()[1:]]
        assert len(rows) == 120
        for rank, eid, p in rows:
            assert float(p) == expect[eid]
        hist = (o / "zero_shot_histogram.csv").read_text().splitlines()[1:]
        assert sum(int(h.split(",")[2]) for h in hist) == 120

    def test_alpha_one_notes_cross_weight(self, planted_dir, tmp_path, capsys):
        common = inputs(planted_dir) + SMALL_FLAGS + ["--max-epochs", "1", "--outdir", str(tmp_path)]
        assert main(["train", "--alpha", "1.0"] + common) == 0
        out = capsys.readouterr().out
        assert "cross_weight\t0.0" in out and "cross-domain term weight 0" in out


def test_probe_cli_separable_auc_one(tmp_path):
    rng = np.random.default_rng(0)
    n = 300
    sign = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    x = np.column_stack([sign * (1.0 + rng.random(n)), rng.normal(scale=0.1, size=(n, 3))])
    ents = [protein(f"P{i}") for i in range(n)]
    (tmp_path / "unified.tsv").write_text(UnifiedTable(ents, x).to_tsv())
    splits = [Split.TRAIN, Split.TRAIN, Split.TRAIN, Split.VALID, Split.TEST]
    items = [LabeledItem((e,), splits[i % 5], float(sign[i] > 0)) for i, e in enumerate(ents)]
    (tmp_path / "sep.tsv").write_text(format_labeled(items))
    assert main(["probe", "--probe-tasks", str(tmp_path / "sep.tsv"), "--outdir", str(tmp_path)]) == 0
    assert "sep,test_auc,1.0" in (tmp_path / "metrics.csv").read_text().splitlines()


@pytest.fixture(scope="module")
def table(planted_dir):
    cfg = config_from_mapping({
        "reactions": str(planted_dir / "reactions.tsv"), "proteins": str(planted_dir / "proteins.tsv"),
        "molecules": str(planted_dir / "molecules.tsv"),
        "probe_tasks": str(planted_dir / "protein_probe.tsv"),
        "zero_shot_train": str(planted_dir / "molecule_classes.tsv"),
        "zero_shot_eval": str(planted_dir / "protein_classes.tsv"),
        "hidden_dims": "32", "unified_dim": "16", "max_epochs": "8", "triplets_per_epoch": "512",
        "batch_size": "128",
    })
    return cfg, run_ablation(cfg)


class TestAblation:
    def test_shape(self, table):
        _, t = table
        lines = t.to_csv().splitlines()
        head = lines[0].split(",")
        assert head[2:9] == list(CONDITIONS)
        assert len(lines) == 1 + 2 and all(len(l.split(",")) == len(head) for l in lines)

    def test_full_delta_zero(self, table):
        _, t = table
        for line in t.to_csv().splitlines()[1:]:
            assert line.split(",")[9] == "0.0"
        assert delta_pct(0.8, 0.8) == 0.0

    def test_missing_alt_file_fails_only_its_cells(self, table):
        _, t = table
        assert ("*", "alt-reactions") in t.errors
        for task, metric in t.rows:
            assert t.cell(task, metric, "alt-reactions") is None
            assert all(t.cell(task, metric, c) is not None for c in CONDITIONS[:-1])

    def test_full_column_equals_standalone_run(self, table, planted_dir, tmp_path):
        cfg, t = table
        common = inputs(planted_dir) + SMALL_FLAGS + ["--outdir", str(tmp_path)]
        assert main(["train"] + common) == 0 and main(["embed"] + common) == 0
        assert main(["probe", "--probe-tasks", str(planted_dir / "protein_probe.tsv"), "--outdir", str(tmp_path)]) == 0
        metrics = {tuple(l.split(",")[:2]): float(l.split(",")[2])
                   for l in (tmp_path / "metrics.csv").read_text().splitlines()[1:]}
        assert t.cell("protein_probe", "test_auc", "full") == metrics[("protein_probe", "test_auc")]

    def test_alt_reactions_condition(self, planted_dir, tmp_path):
        alt = make_planted(seed=7, n_proteins=120, n_molecules=120, n_cross_reactions=300, n_intra_reactions=0)
        alt_path = tmp_path / "alt.tsv"
        alt_path.write_text(format_reactions(alt.reactions))
        cfg = config_from_mapping({
            "reactions": str(planted_dir / "reactions.tsv"), "proteins": str(planted_dir / "proteins.tsv"),
            "molecules": str(planted_dir / "molecules.tsv"), "alt_reactions": str(alt_path),
            "zero_shot_train": str(planted_dir / "molecule_classes.tsv"),
            "zero_shot_eval": str(planted_dir / "protein_classes.tsv"),
            "hidden_dims": "16", "unified_dim": "8", "max_epochs": "2", "triplets_per_epoch": "256",
            "batch_size": "128",
        })
        t = run_ablation(cfg, conditions=("full", "alt-reactions"))
        assert not t.errors
        assert t.cell("zero_shot", "accuracy", "alt-reactions") is not None
