"""Frozen pre-trained embedding tables, one per domain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._io import data_lines, read_text, source_name
from .errors import ParseError
from .reaction_graph import Domain, EntityRef, ReactionGraph


class EmbeddingTable:
    """Immutable id -> float64 vector map for a single domain.

    Rows live in one ``(n, dim)`` matrix; ``row(id)`` gives the index.
    Missing ids are reported as ``None`` by :meth:`get`, never a default.
    """

    def __init__(self, domain: Domain, ids, matrix):
        matrix = np.array(matrix, dtype=np.float64, copy=True)
        ids = list(ids)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValueError("matrix must be (len(ids), dim)")
        if matrix.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        if not np.all(np.isfinite(matrix)):
            bad = ids[int(np.argwhere(~np.isfinite(matrix))[0, 0])]
            raise ValueError(f"non-finite value in embedding for {bad!r}")
        index = {}
        for i, eid in enumerate(ids):
            if eid in index:
                raise ValueError(f"duplicate embedding id {eid!r}")
            index[eid] = i
        matrix.setflags(write=False)
        self.domain = Domain(domain)
        self.ids = tuple(ids)
        self.matrix = matrix
        self._index = index

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, entity_id):
        if isinstance(entity_id, EntityRef):
            return entity_id.domain is self.domain and entity_id.id in self._index
        return entity_id in self._index

    def row(self, entity_id: str) -> int | None:
        return self._index.get(entity_id)

    def get(self, entity_id: str) -> np.ndarray | None:
        i = self._index.get(entity_id)
        return None if i is None else self.matrix[i]

    def __getitem__(self, entity_id: str) -> np.ndarray:
        i = self._index.get(entity_id)
        if i is None:
            raise KeyError(entity_id)
        return self.matrix[i]

    def entities(self) -> list[EntityRef]:
        return [EntityRef(i, self.domain) for i in self.ids]

    def to_tsv(self) -> str:
        return "".join(
            eid + "\t" + "\t".join(repr(float(x)) for x in vec) + "\n"
            for eid, vec in zip(self.ids, self.matrix)
        )


def load_embeddings(source, domain: Domain) -> EmbeddingTable:
    """Parse an embedding TSV: ``entity_id<TAB>v1<TAB>...<TAB>vD``."""
    name = source_name(source)
    ids: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    dim = None
    for lineno, line in data_lines(read_text(source)):
        cols = line.split("\t")
        eid = cols[0]
        if not eid:
            raise ParseError("empty entity id", line=lineno, source=name)
        if eid in seen:
            raise ParseError(f"duplicate id {eid!r}", line=lineno, source=name)
        try:
            vec = [float(x) for x in cols[1:]]
        except ValueError as exc:
            raise ParseError(f"bad number for {eid!r}: {exc}", line=lineno, source=name) from None
        if dim is None:
            if not vec:
                raise ParseError(f"no vector components for {eid!r}", line=lineno, source=name)
            dim = len(vec)
        elif len(vec) != dim:
            raise ParseError(f"{eid!r} has {len(vec)} components, expected {dim}",
                             line=lineno, source=name)
        if not all(np.isfinite(vec)):
            raise ParseError(f"non-finite component in {eid!r}", line=lineno, source=name)
        seen.add(eid)
        ids.append(eid)
        rows.append(vec)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim or 1)
    return EmbeddingTable(domain, ids, matrix)


@dataclass
class CoverageReport:
    domain: Domain
    covered: int
    missing: int
    missing_ids: list[str] = field(default_factory=list)

    @property
    def total(self):
        return self.covered + self.missing


def coverage(table: EmbeddingTable, graph: ReactionGraph) -> CoverageReport:
    covered = 0
    missing = []
    for node in graph.nodes_of(table.domain):
        if node.id in table:
            covered += 1
        else:
            missing.append(node.id)
    return CoverageReport(table.domain, covered, len(missing), missing)
