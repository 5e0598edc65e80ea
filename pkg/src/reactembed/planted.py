"""Synthetic two-domain data with planted classes.

Each class has a latent prototype.  Every protein (molecule) vector is its
class prototype pushed through a fixed random protein (molecule) linear map,
plus isotropic Gaussian noise, so raw vectors of the two domains live in
unrelated coordinate systems.  Reactions only ever join entities of the same
class: cross-domain pairs, plus protein-protein and molecule-molecule pairs.
"""

from __future__ import annotations

import argparse
import os
from dataclasses import dataclass

import numpy as np

from .embedding_store import EmbeddingTable
from .evaluation import LabeledItem, Split, format_labeled
from .reaction_graph import Domain, EntityRef, ReactionRecord, format_reactions


@dataclass
class PlantedData:
    reactions: list[ReactionRecord]
    protein_table: EmbeddingTable
    molecule_table: EmbeddingTable
    protein_class: dict[str, int]
    molecule_class: dict[str, int]

    def labels(self, domain: Domain) -> tuple[list[EntityRef], np.ndarray]:
        table = self.protein_table if domain is Domain.PROTEIN else self.molecule_table
        cls = self.protein_class if domain is Domain.PROTEIN else self.molecule_class
        return table.entities(), np.array([cls[i] for i in table.ids])


def make_planted(seed=0, n_classes=4, n_proteins=400, n_molecules=400, protein_dim=32,
                 molecule_dim=48, latent_dim=8, prototype_scale=0.07, noise=0.1,
                 n_cross_reactions=2000, n_intra_reactions=1000, cross_popularity=2.0) -> PlantedData:
    """Generate planted reactions and embedding tables.

    ``n_intra_reactions`` is split evenly between protein-protein and
    molecule-molecule pairs.  ``cross_popularity`` skews which entities take
    part in cross-domain reactions: member ``r`` of a class (in a random
    order) is chosen with weight ``(r + 1) ** -cross_popularity``, so larger
    values leave more entities reachable only through intra-domain reactions.
    """
    rng = np.random.default_rng(seed)
    protos = rng.normal(scale=prototype_scale, size=(n_classes, latent_dim))
    maps = {
        Domain.PROTEIN: rng.normal(scale=1.0 / np.sqrt(latent_dim), size=(protein_dim, latent_dim)),
        Domain.MOLECULE: rng.normal(scale=1.0 / np.sqrt(latent_dim), size=(molecule_dim, latent_dim)),
    }
    counts = {Domain.PROTEIN: n_proteins, Domain.MOLECULE: n_molecules}
    prefix = {Domain.PROTEIN: "P", Domain.MOLECULE: "M"}
    tables, classes, members = {}, {}, {}
    for dom in Domain:
        n = counts[dom]
        cls = np.arange(n) % n_classes
        rng.shuffle(cls)
        x = protos[cls] @ maps[dom].T + rng.normal(scale=noise, size=(n, maps[dom].shape[0]))
        ids = [f"{prefix[dom]}{i:04d}" for i in range(n)]
        tables[dom] = EmbeddingTable(dom, ids, x)
        classes[dom] = {eid: int(c) for eid, c in zip(ids, cls)}
        members[dom] = [rng.permutation(np.flatnonzero(cls == c)) for c in range(n_classes)]

    def pick(dom, c, size, skew):
        pool = members[dom][c]
        w = (np.arange(pool.size) + 1.0) ** -skew
        return pool[rng.choice(pool.size, size=size, replace=False, p=w / w.sum())]

    reactions = []
    for k in range(n_cross_reactions):
        c = int(rng.integers(n_classes))
        p = pick(Domain.PROTEIN, c, 1, cross_popularity)[0]
        m = pick(Domain.MOLECULE, c, 1, cross_popularity)[0]
        reactions.append(ReactionRecord(f"RX{k:05d}", (EntityRef(tables[Domain.PROTEIN].ids[p], Domain.PROTEIN),
                                                       EntityRef(tables[Domain.MOLECULE].ids[m], Domain.MOLECULE))))
    for k in range(n_intra_reactions):
        dom = Domain.PROTEIN if k % 2 == 0 else Domain.MOLECULE
        c = int(rng.integers(n_classes))
        a, b = pick(dom, c, 2, 0.0)
        ids = tables[dom].ids
        reactions.append(ReactionRecord(f"RI{k:05d}", (EntityRef(ids[a], dom), EntityRef(ids[b], dom))))
    return PlantedData(reactions, tables[Domain.PROTEIN], tables[Domain.MOLECULE],
                       classes[Domain.PROTEIN], classes[Domain.MOLECULE])


def planted_probe_items(data: PlantedData, domain: Domain, positive_class=0, seed=0,
                        fractions=(0.6, 0.2, 0.2)) -> list[LabeledItem]:
    """Binary "is class ``positive_class``" task over one domain's entities."""
    rng = np.random.default_rng(seed)
    ents, cls = data.labels(domain)
    order = rng.permutation(len(ents))
    n_train = int(fractions[0] * len(ents))
    n_valid = int(fractions[1] * len(ents))
    items = []
    for rank, i in enumerate(order):
        split = Split.TRAIN if rank < n_train else Split.VALID if rank < n_train + n_valid else Split.TEST
        items.append(LabeledItem((ents[i],), split, float(cls[i] == positive_class)))
    return items


def class_items(data: PlantedData, domain: Domain, split=Split.TRAIN) -> list[LabeledItem]:
    """Every entity of ``domain`` labeled with its planted class index."""
    ents, cls = data.labels(domain)
    return [LabeledItem((e,), split, float(c)) for e, c in zip(ents, cls)]


def write_planted(data: PlantedData, outdir):
    """Dump reactions, both embedding tables and label files as TSV."""
    os.makedirs(outdir, exist_ok=True)
    files = {
        "reactions.tsv": format_reactions(data.reactions),
        "proteins.tsv": data.protein_table.to_tsv(),
        "molecules.tsv": data.molecule_table.to_tsv(),
        "molecule_classes.tsv": format_labeled(class_items(data, Domain.MOLECULE)),
        "protein_classes.tsv": format_labeled(class_items(data, Domain.PROTEIN, Split.TEST)),
        "protein_probe.tsv": format_labeled(planted_probe_items(data, Domain.PROTEIN)),
        "molecule_probe.tsv": format_labeled(planted_probe_items(data, Domain.MOLECULE)),
    }
    for name, text in files.items():
        with open(os.path.join(outdir, name), "w", encoding="utf-8") as fh:
            fh.write(text)
    return sorted(files)


def main(argv=None):
    ap = argparse.ArgumentParser(description="Write a planted two-domain dataset as TSV files.")
    ap.add_argument("outdir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    for name in write_planted(make_planted(seed=args.seed), args.outdir):
        print(os.path.join(args.outdir, name))


if __name__ == "__main__":
    main()
