"""Projection of raw per-domain embeddings into the unified space.

Nothing here touches the reaction graph: any protein or molecule with a raw
vector can be embedded, whether or not it ever appeared in a reaction.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text, data_lines, read_text, source_name
from .embedding_store import EmbeddingTable
from .errors import ParseError
from .projection_net import Checkpoint, l2_normalize
from .reaction_graph import Domain, EntityRef


@dataclass(frozen=True)
class UnifiedEmbedding:
    entity: EntityRef
    vector: np.ndarray


def _net_for(checkpoint: Checkpoint, domain: Domain):
    return checkpoint.p2u if domain is Domain.PROTEIN else checkpoint.m2u


def project(checkpoint: Checkpoint, domain: Domain, raw) -> np.ndarray:
    """Apply the domain's net (and optional normalisation) to raw rows."""
    net = _net_for(checkpoint, Domain(domain))
    raw = np.asarray(raw, dtype=np.float64)
    width = raw.shape[-1] if raw.ndim else 0
    if width != net.in_dim:
        raise ValueError(f"{Domain(domain).name.lower()} vector has {width} components, "
                         f"net expects {net.in_dim}")
    out = net.forward(raw)
    if checkpoint.normalize:
        out, _ = l2_normalize(out)
    return out


def embed_entity(entity: EntityRef, raw_vector, checkpoint: Checkpoint) -> UnifiedEmbedding:
    vec = project(checkpoint, entity.domain, np.asarray(raw_vector, dtype=np.float64).reshape(-1))
    return UnifiedEmbedding(entity, vec)


@dataclass
class UnifiedTable:
    """Unified vectors for a list of entities, with rows aligned to ``entities``."""

    entities: list[EntityRef]
    matrix: np.ndarray
    missing: list[EntityRef] = field(default_factory=list)

    def __post_init__(self):
        self._index = {e: i for i, e in enumerate(self.entities)}

    def __len__(self):
        return len(self.entities)

    def __contains__(self, entity):
        return entity in self._index

    def get(self, entity: EntityRef):
        i = self._index.get(entity)
        return None if i is None else self.matrix[i]

    def vectors(self, entities):
        return np.stack([self.matrix[self._index[e]] for e in entities]) if entities else \
            np.empty((0, self.matrix.shape[1]))

    def of_domain(self, domain: Domain) -> "UnifiedTable":
        keep = [i for i, e in enumerate(self.entities) if e.domain is domain]
        return UnifiedTable([self.entities[i] for i in keep], self.matrix[keep])

    def to_tsv(self) -> str:
        buf = io.StringIO()
        buf.write("#entity_id\tdomain\tvector\n")
        for e, vec in zip(self.entities, self.matrix):
            buf.write(e.id + "\t" + e.domain.value + "\t" + "\t".join(repr(float(x)) for x in vec) + "\n")
        return buf.getvalue()


def embed_all(entities, protein_table: EmbeddingTable, molecule_table: EmbeddingTable,
              checkpoint: Checkpoint) -> UnifiedTable:
    """Embed every entity that has a raw vector; the rest go to ``missing``."""
    tables = {Domain.PROTEIN: protein_table, Domain.MOLECULE: molecule_table}
    entities = list(entities)
    present, missing = [], []
    for e in entities:
        table = tables[e.domain]
        (present if table is not None and e.id in table else missing).append(e)
    out = np.empty((len(present), checkpoint.unified_dim))
    for domain in Domain:
        pos = [i for i, e in enumerate(present) if e.domain is domain]
        if pos:
            table = tables[domain]
            raw = table.matrix[[table.row(present[i].id) for i in pos]]
            out[pos] = project(checkpoint, domain, raw)
    return UnifiedTable(present, out, missing)


def embed_tables(protein_table, molecule_table, checkpoint) -> UnifiedTable:
    ents = []
    for table in (protein_table, molecule_table):
        if table is not None:
            ents.extend(table.entities())
    return embed_all(ents, protein_table, molecule_table, checkpoint)


def export_unified(entities, protein_table, molecule_table, checkpoint, sink=None):
    """Write the unified-embedding TSV; return the list of entities lacking raw vectors."""
    table = embed_all(entities, protein_table, molecule_table, checkpoint)
    text = table.to_tsv()
    if sink is not None:
        if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
            atomic_write_text(sink, text)
        else:
            sink.write(text)
    return table.missing


def load_unified(source) -> UnifiedTable:
    """Read ``entity_id<TAB>domain<TAB>v1...`` rows back into a table."""
    name = source_name(source)
    ents, rows = [], []
    dim = None
    seen = set()
    for lineno, line in data_lines(read_text(source)):
        cols = line.split("\t")
        try:
            if len(cols) < 3:
                raise ValueError(f"expected id, domain and vector columns, got {len(cols)} columns")
            e = EntityRef(cols[0], Domain.parse(cols[1]))
            vec = [float(x) for x in cols[2:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, source=name) from None
        if dim is None:
            dim = len(vec)
        if not vec or len(vec) != dim:
            raise ParseError(f"{e} has {len(vec)} components, expected {dim}", line=lineno, source=name)
        if not np.all(np.isfinite(vec)):
            raise ParseError(f"non-finite component in {e}", line=lineno, source=name)
        if e in seen:
            raise ParseError(f"duplicate entity {e}", line=lineno, source=name)
        seen.add(e)
        ents.append(e)
        rows.append(vec)
    return UnifiedTable(ents, np.array(rows, dtype=np.float64).reshape(len(rows), dim or 0))
