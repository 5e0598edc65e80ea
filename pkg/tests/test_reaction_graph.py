import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from reactembed.errors import DataError, ParseError
from reactembed.reaction_graph import (
    AliasTable,
    Domain,
    EdgeType,
    EntityRef,
    ReactionGraph,
    ReactionRecord,
    build_graph,
    format_reactions,
    molecule,
    parse_reactions,
    protein,
    remove_intra_domain_edges,
    sample_edge,
    subsample_reactions,
)

from conftest import brute_force_pair_counts, random_reactions

P1, P2, M1, M2 = protein("P1"), protein("P2"), molecule("M1"), molecule("M2")


def tsv(*rows):
    return io.BytesIO("".join("\t".join(r) + "\n" for r in rows).encode())


class TestParseReactions:
    def test_two_lines_one_reaction(self):
        recs = parse_reactions(tsv(("R1", "P1", "P"), ("R1", "M1", "M")))
        assert recs == [ReactionRecord("R1", (P1, M1))]

    def test_duplicate_collapsed(self):
        recs = parse_reactions(tsv(("R1", "P1", "P"), ("R1", "P1", "P")))
        assert recs == [ReactionRecord("R1", (P1,))]

    def test_unknown_domain_names_line(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_reactions(tsv(("R1", "P1", "X")))

    def test_wrong_column_count(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_reactions(tsv(("R1", "P1", "P"), ("R1", "P2")))

    def test_empty_stream(self):
        assert parse_reactions(io.BytesIO(b"")) == []

    def test_comments_and_order_of_first_appearance(self):
        text = b"# header\nR2\tM1\tM\nR1\tP1\tP\nR2\tP1\tP\n"
        recs = parse_reactions(io.BytesIO(text))
        assert [r.reaction_id for r in recs] == ["R2", "R1"]
        assert recs[0].entities == (M1, P1)

    def test_same_id_different_domain_are_distinct(self):
        recs = parse_reactions(tsv(("R1", "X", "P"), ("R1", "X", "M")))
        assert len(recs[0].entities) == 2

    def test_format_round_trip(self, rng):
        recs = random_reactions(rng, 20, 10)
        assert parse_reactions(io.StringIO(format_reactions(recs))) == recs


class TestReactionRecord:
    def test_rejects_duplicates_and_empty(self):
        with pytest.raises(ValueError):
            ReactionRecord("R", (P1, P1))
        with pytest.raises(ValueError):
            ReactionRecord("R", ())
        with pytest.raises(ValueError):
            EntityRef("", Domain.PROTEIN)


class TestBuildGraph:
    def test_single_pair(self):
        g = build_graph([ReactionRecord("R1", (P1, M1))])
        assert g.edges == {(M1, P1): 1}
        assert g.edge_type(P1, M1) is EdgeType.PM

    def test_three_set(self):
        g = build_graph([ReactionRecord("R1", (P1, M1, M2))])
        assert g.weight(P1, M1) == g.weight(P1, M2) == g.weight(M1, M2) == 1
        assert g.num_edges == 3
        assert g.edge_type(M1, M2) is EdgeType.MM

    def test_weights_sum_over_reactions(self):
        g = build_graph([ReactionRecord("R1", (P1, M1)), ReactionRecord("R2", (P1, M1))])
        assert g.weight(M1, P1) == 2

    def test_single_entity_reaction_gives_node_no_edge(self):
        g = build_graph([ReactionRecord("R1", (P1,))])
        assert g.nodes == (P1,) and g.num_edges == 0

    def test_empty(self):
        g = build_graph([])
        assert g.num_nodes == 0 and g.num_edges == 0

    def test_matches_oracle_on_random_instance(self, rng):
        recs = random_reactions(rng, 50, 20)
        nodes, weights = brute_force_pair_counts(recs)
        g = build_graph(recs)
        assert set(g.nodes) == nodes
        assert g.edges == weights

    def test_total_weight_mass(self, rng):
        recs = random_reactions(rng, 40, 15)
        assert build_graph(recs).total_weight == sum(math.comb(len(r.entities), 2) for r in recs)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        recs = random_reactions(rng, 15, 10)
        shuffled = [ReactionRecord(r.reaction_id, tuple(r.entities[i] for i in rng.permutation(len(r.entities))))
                    for r in recs]
        shuffled = [shuffled[i] for i in rng.permutation(len(shuffled))]
        assert build_graph(recs) == build_graph(shuffled)
        assert list(build_graph(recs).edges) == list(build_graph(shuffled).edges)

    def test_graph_invariants_enforced(self):
        with pytest.raises(ValueError):
            ReactionGraph([P1], {(P1, P1): 1})
        with pytest.raises(ValueError):
            ReactionGraph([P1, M1], {(P1, M1): 0})
        with pytest.raises(ValueError):
            ReactionGraph([P1], {(P1, M1): 1})
        with pytest.raises(ValueError):
            ReactionGraph([P1, M1], {(P1, M1): 1, (M1, P1): 2})

    def test_snapshot_round_trip_and_order(self, rng):
        recs = random_reactions(rng, 30, 12) + [ReactionRecord("solo", (protein("LONE"),))]
        g = build_graph(recs)
        text = g.to_snapshot()
        for line in text.splitlines():
            cols = line.split("\t")
            if len(cols) == 5:
                assert (cols[0], cols[1]) < (cols[2], cols[3])
        assert ReactionGraph.from_snapshot(io.StringIO(text)) == g

    def test_snapshot_parse_error(self):
        with pytest.raises(ParseError, match="line 1"):
            ReactionGraph.from_snapshot(io.StringIO("P1\tP\tM1\tM\tzero\n"))


class TestSampling:
    def test_proportional_probability(self):
        g = ReactionGraph([P1, P2, M1], {(P1, M1): 1, (P2, M1): 3})
        rng = np.random.default_rng(0)
        n = 40_000
        hits = sum(1 for _ in range(n) if P2 in sample_edge(g, rng))
        assert abs(hits / n - 0.75) < 0.01

    def test_single_edge_always_returned_both_orders(self):
        g = ReactionGraph([P1, M1], {(P1, M1): 5})
        rng = np.random.default_rng(1)
        draws = [sample_edge(g, rng) for _ in range(200)]
        assert all(set(d) == {P1, M1} for d in draws)
        assert {d[0] for d in draws} == {P1, M1}

    def test_no_edges(self):
        with pytest.raises(DataError, match="no edges"):
            sample_edge(ReactionGraph([P1], {}), np.random.default_rng(0))

    def test_deterministic_given_seed(self, rng):
        g = build_graph(random_reactions(rng, 30, 12))
        a = [sample_edge(g, np.random.default_rng(7)) for _ in range(3)]
        b = [sample_edge(g, np.random.default_rng(7)) for _ in range(3)]
        assert a == b

    def test_chi_square_weights_1_to_10(self):
        weights = np.arange(1, 11)
        table = AliasTable(weights)
        draws = table.sample(np.random.default_rng(2024), 100_000)
        observed = np.bincount(draws, minlength=10)
        expected = weights / weights.sum() * 100_000
        assert chisquare(observed, expected).pvalue > 0.001

    def test_alias_exact_distribution(self):
        # the alias table's implied distribution equals the normalized weights
        w = np.array([3.0, 1.0, 0.5, 7.0, 2.5])
        t = AliasTable(w)
        implied = t.prob / len(t)
        for i, a in enumerate(t.alias):
            implied[a] += (1.0 - t.prob[i]) / len(t)
        np.testing.assert_allclose(implied, w / w.sum(), atol=1e-12)

    def test_alias_rejects_bad_weights(self):
        for bad in ([], [0, 0], [-1, 2], [np.inf]):
            with pytest.raises(ValueError):
                AliasTable(bad)


class TestAblationTransforms:
    def test_remove_intra(self):
        g = ReactionGraph([P1, P2, M1], {(P1, P2): 2, (P1, M1): 1})
        assert remove_intra_domain_edges(g) == ReactionGraph([P1, M1], {(P1, M1): 1})

    def test_all_pm_identity(self):
        g = ReactionGraph([P1, M1, M2], {(P1, M1): 1, (P1, M2): 4})
        assert remove_intra_domain_edges(g) == g

    def test_all_pp_empty(self):
        g = ReactionGraph([P1, P2], {(P1, P2): 1})
        out = remove_intra_domain_edges(g)
        assert out.num_edges == 0 and out.num_nodes == 0

    def test_idempotent(self, rng):
        g = build_graph(random_reactions(rng, 40, 14))
        once = remove_intra_domain_edges(g)
        assert remove_intra_domain_edges(once) == once
        assert all(t is EdgeType.PM for t in [once.edge_type(*k) for k in once.edges])

    def test_subsample_identity(self, rng):
        recs = random_reactions(rng, 10, 6)
        assert subsample_reactions(recs, 1.0, 0) == recs

    def test_subsample_half(self, rng):
        recs = random_reactions(rng, 100, 20)
        out = subsample_reactions(recs, 0.5, 3)
        assert len(out) == 50
        assert len({r.reaction_id for r in out}) == 50
        assert all(r in recs for r in out)

    def test_subsample_seeds_differ(self, rng):
        recs = random_reactions(rng, 100, 20)
        a = subsample_reactions(recs, 0.1, 1)
        b = subsample_reactions(recs, 0.1, 2)
        assert len(a) == len(b) == 10
        assert set(r.reaction_id for r in a) <= {r.reaction_id for r in recs}
        assert [r.reaction_id for r in a] != [r.reaction_id for r in b]
        assert subsample_reactions(recs, 0.1, 1) == a

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.01])
    def test_subsample_range(self, bad):
        with pytest.raises(ValueError):
            subsample_reactions([], bad, 0)
