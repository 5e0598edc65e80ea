"""Reaction records and the weighted co-occurrence graph built from them.

Every pair of distinct entities that appear together in a reaction gets an
undirected edge whose weight counts the reactions they share.  Graphs are
stored in a canonical order (nodes and edges sorted), so two graphs built
from the same reactions in any order compare and iterate identically.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from ._io import data_lines, read_text, source_name
from .errors import DataError, ParseError


class Domain(str, enum.Enum):
    PROTEIN = "P"
    MOLECULE = "M"

    @property
    def other(self) -> "Domain":
        return Domain.MOLECULE if self is Domain.PROTEIN else Domain.PROTEIN

    @classmethod
    def parse(cls, tag: str) -> "Domain":
        try:
            return cls(tag)
        except ValueError:
            raise ValueError(f"unknown domain tag {tag!r} (expected P or M)") from None


class EdgeType(str, enum.Enum):
    PP = "PP"
    PM = "PM"
    MM = "MM"


@dataclass(frozen=True, order=True)
class EntityRef:
    id: str
    domain: Domain

    def __post_init__(self):
        if not self.id:
            raise ValueError("entity id must be non-empty")
        if not isinstance(self.domain, Domain):
            object.__setattr__(self, "domain", Domain.parse(self.domain))

    def __str__(self):
        return f"{self.id}/{self.domain.value}"


def protein(entity_id: str) -> EntityRef:
    return EntityRef(entity_id, Domain.PROTEIN)


def molecule(entity_id: str) -> EntityRef:
    return EntityRef(entity_id, Domain.MOLECULE)


@dataclass(frozen=True)
class ReactionRecord:
    reaction_id: str
    entities: tuple[EntityRef, ...]

    def __post_init__(self):
        entities = tuple(self.entities)
        if not entities:
            raise ValueError(f"reaction {self.reaction_id!r} has no entities")
        if len(set(entities)) != len(entities):
            raise ValueError(f"reaction {self.reaction_id!r} lists an entity twice")
        object.__setattr__(self, "entities", entities)

    @classmethod
    def of(cls, reaction_id: str, entities: Iterable[EntityRef]) -> "ReactionRecord":
        """Build a record, collapsing duplicate entities (first appearance wins)."""
        return cls(reaction_id, tuple(dict.fromkeys(entities)))


def edge_type(a: EntityRef, b: EntityRef) -> EdgeType:
    if a.domain is not b.domain:
        return EdgeType.PM
    return EdgeType.PP if a.domain is Domain.PROTEIN else EdgeType.MM


def _key(a: EntityRef, b: EntityRef) -> tuple[EntityRef, EntityRef]:
    return (a, b) if a < b else (b, a)


class AliasTable:
    """Walker/Vose alias table for O(1) draws from a fixed discrete distribution."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("alias table needs a non-empty 1-d weight vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise ValueError("weights must be finite, non-negative and not all zero")
        n = w.size
        scaled = w * (n / w.sum())
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        self.prob = prob
        self.alias = alias

    def __len__(self):
        return self.prob.size

    def sample(self, rng, size=None):
        rng = np.random.default_rng(rng)
        n = self.prob.size
        if size is None:
            i = int(rng.integers(n))
            return i if rng.random() < self.prob[i] else int(self.alias[i])
        idx = rng.integers(n, size=size)
        u = rng.random(size=size)
        return np.where(u < self.prob[idx], idx, self.alias[idx])


class ReactionGraph:
    """Weighted, undirected, typed co-occurrence graph.

    ``edges`` maps each unordered pair, stored as ``(a, b)`` with ``a < b``,
    to a positive integer weight.  Instances are treated as immutable.
    """

    def __init__(self, nodes: Iterable[EntityRef], edges: dict):
        canon: dict[tuple[EntityRef, EntityRef], int] = {}
        for (a, b), w in edges.items():
            if a == b:
                raise ValueError(f"self-loop on {a}")
            w = int(w)
            if w < 1:
                raise ValueError(f"edge {a}-{b} has non-positive weight {w}")
            key = _key(a, b)
            if key in canon:
                raise ValueError(f"edge {a}-{b} listed twice")
            canon[key] = w
        node_set = set(nodes)
        for a, b in canon:
            if a not in node_set or b not in node_set:
                raise ValueError(f"edge {a}-{b} has an endpoint outside the node set")
        self.nodes: tuple[EntityRef, ...] = tuple(sorted(node_set))
        self.edges: dict[tuple[EntityRef, EntityRef], int] = dict(sorted(canon.items()))

    def __eq__(self, other):
        if not isinstance(other, ReactionGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    def __repr__(self):
        return f"ReactionGraph({len(self.nodes)} nodes, {len(self.edges)} edges)"

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def total_weight(self):
        return sum(self.edges.values())

    def weight(self, a: EntityRef, b: EntityRef) -> int:
        return self.edges.get(_key(a, b), 0)

    def has_edge(self, a: EntityRef, b: EntityRef) -> bool:
        return _key(a, b) in self.edges

    def edge_type(self, a: EntityRef, b: EntityRef) -> EdgeType:
        return edge_type(a, b)

    def nodes_of(self, domain: Domain) -> list[EntityRef]:
        return [n for n in self.nodes if n.domain is domain]

    @cached_property
    def node_index(self) -> dict[EntityRef, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    @cached_property
    def adjacency(self) -> dict[EntityRef, frozenset]:
        adj: dict[EntityRef, set] = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return {n: frozenset(s) for n, s in adj.items()}

    def neighbors(self, node: EntityRef) -> frozenset:
        return self.adjacency.get(node, frozenset())

    def type_counts(self) -> dict[EdgeType, int]:
        counts = {t: 0 for t in EdgeType}
        for a, b in self.edges:
            counts[edge_type(a, b)] += 1
        return counts

    def summary(self) -> dict[str, int]:
        counts = self.type_counts()
        return {
            "proteins": len(self.nodes_of(Domain.PROTEIN)),
            "molecules": len(self.nodes_of(Domain.MOLECULE)),
            "edges": self.num_edges,
            "edges_PP": counts[EdgeType.PP],
            "edges_PM": counts[EdgeType.PM],
            "edges_MM": counts[EdgeType.MM],
            "total_weight": self.total_weight,
        }

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Endpoint node indices and weights, aligned with ``edges`` order."""
        idx = self.node_index
        m = len(self.edges)
        u = np.empty(m, dtype=np.int64)
        v = np.empty(m, dtype=np.int64)
        w = np.empty(m, dtype=np.int64)
        for k, ((a, b), weight) in enumerate(self.edges.items()):
            u[k], v[k], w[k] = idx[a], idx[b], weight
        return u, v, w

    @cached_property
    def sampler(self) -> AliasTable:
        if not self.edges:
            raise DataError("no edges")
        return AliasTable(self.edge_arrays[2])

    def to_snapshot(self) -> str:
        lines = []
        for (a, b), w in self.edges.items():
            lines.append(f"{a.id}\t{a.domain.value}\t{b.id}\t{b.domain.value}\t{w}")
        connected = {n for pair in self.edges for n in pair}
        for n in self.nodes:
            if n not in connected:
                lines.append(f"{n.id}\t{n.domain.value}")
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_snapshot(cls, source) -> "ReactionGraph":
        name = source_name(source)
        nodes: set[EntityRef] = set()
        edges: dict = {}
        for lineno, line in data_lines(read_text(source)):
            cols = line.split("\t")
            try:
                if len(cols) == 2:
                    nodes.add(EntityRef(cols[0], Domain.parse(cols[1])))
                    continue
                if len(cols) != 5:
                    raise ValueError(f"expected 5 columns, got {len(cols)}")
                a = EntityRef(cols[0], Domain.parse(cols[1]))
                b = EntityRef(cols[2], Domain.parse(cols[3]))
                w = int(cols[4])
                if a == b or w < 1 or _key(a, b) in edges:
                    raise ValueError("self-loop, non-positive weight or duplicate edge")
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, source=name) from None
            edges[_key(a, b)] = w
            nodes.update((a, b))
        return cls(nodes, edges)


def parse_reactions(source) -> list[ReactionRecord]:
    """Read reaction membership TSV (``reaction_id, entity_id, P|M``)."""
    name = source_name(source)
    members: dict[str, dict[EntityRef, None]] = {}
    for lineno, line in data_lines(read_text(source)):
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"expected 3 tab-separated columns, got {len(cols)}",
                             line=lineno, source=name)
        rid, eid, tag = cols
        if not rid or not eid:
            raise ParseError("empty reaction or entity id", line=lineno, source=name)
        try:
            entity = EntityRef(eid, Domain.parse(tag))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, source=name) from None
        members.setdefault(rid, {})[entity] = None
    return [ReactionRecord(rid, tuple(ents)) for rid, ents in members.items()]


def format_reactions(reactions: Iterable[ReactionRecord]) -> str:
    out = []
    for r in reactions:
        for e in r.entities:
            out.append(f"{r.reaction_id}\t{e.id}\t{e.domain.value}\n")
    return "".join(out)


def build_graph(reactions: Iterable[ReactionRecord]) -> ReactionGraph:
    counts: Counter = Counter()
    nodes: set[EntityRef] = set()
    for r in reactions:
        ents = sorted(set(r.entities))
        nodes.update(ents)
        counts.update(itertools.combinations(ents, 2))
    return ReactionGraph(nodes, counts)


def sample_edge(graph: ReactionGraph, rng) -> tuple[EntityRef, EntityRef]:
    """Draw one edge with probability proportional to its weight.

    The endpoints come back in random order so either can act as anchor.
    """
    rng = np.random.default_rng(rng)
    k = graph.sampler.sample(rng)
    u, v, _ = graph.edge_arrays
    a, b = graph.nodes[u[k]], graph.nodes[v[k]]
    if rng.random() < 0.5:
        return b, a
    return a, b


def remove_intra_domain_edges(graph: ReactionGraph) -> ReactionGraph:
    kept = {k: w for k, w in graph.edges.items() if edge_type(*k) is EdgeType.PM}
    nodes = {n for pair in kept for n in pair}
    return ReactionGraph(nodes, kept)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def subsample_reactions(reactions, keep_fraction: float, rng) -> list[ReactionRecord]:
    """Uniform subset without replacement of size round(keep_fraction * n).

    The survivors keep their input order.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    reactions = list(reactions)
    if keep_fraction == 1.0:
        return reactions
    rng = np.random.default_rng(rng)
    k = round_half_up(keep_fraction * len(reactions))
    chosen = np.sort(rng.choice(len(reactions), size=k, replace=False))
    return [reactions[i] for i in chosen]
