"""Contrastive alignment of the two projection nets on the reaction graph.

Each draw takes one weighted edge, orients it at random into
(anchor, positive), and pairs it with two negatives: one from the anchor's
own domain and one from the other domain.  The per-draw loss blends the two
triplet hinge terms with weight ``alpha`` on the intra-domain one.
"""

from __future__ import annotations

import enum
import io
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .embedding_store import EmbeddingTable
from .errors import DataError, SamplingError, TrainingError
from .projection_net import (
    AdamW,
    Checkpoint,
    ProjectionNet,
    init_net,
    l2_normalize,
    l2_normalize_backward,
)
from .reaction_graph import AliasTable, Domain, EntityRef, ReactionGraph, round_half_up

MAX_REJECTIONS = 100


class Distance(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "squared_euclidean"


class NegativeKind(str, enum.Enum):
    INTRA_DOMAIN = "intra"
    CROSS_DOMAIN = "cross"


@dataclass(frozen=True)
class Triplet:
    anchor: EntityRef
    positive: EntityRef
    negative: EntityRef
    negative_kind: NegativeKind


# -- loss primitives ------------------------------------------------------------

def triplet_distance(u, v, metric=Distance.EUCLIDEAN) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"vector shapes differ: {u.shape} vs {v.shape}")
    sq = float(np.sum((u - v) ** 2))
    return sq if Distance(metric) is Distance.SQUARED_EUCLIDEAN else math.sqrt(sq)


def hinge(margin, d_ap, d_an) -> float:
    return max(0.0, margin + d_ap - d_an)


def triplet_loss(anchor, positive, negative, margin=1.0, metric=Distance.EUCLIDEAN) -> float:
    """``max(0, margin + d(a, p) - d(a, n))``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    return hinge(margin, triplet_distance(anchor, positive, metric),
                 triplet_distance(anchor, negative, metric))


def combined_loss(l_intra, l_cross, alpha) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * l_intra + (1.0 - alpha) * l_cross


def _distance_rows(x, y, metric):
    """Row-wise distance and its gradient with respect to ``x``."""
    diff = x - y
    sq = np.sum(diff * diff, axis=1)
    if metric is Distance.SQUARED_EUCLIDEAN:
        return sq, 2.0 * diff
    d = np.sqrt(sq)
    safe = np.where(d > 0.0, d, 1.0)
    grad = np.where((d > 0.0)[:, None], diff / safe[:, None], 0.0)
    return d, grad


def _hinge_rows(a, p, n, margin, metric):
    d_ap, g_ap = _distance_rows(a, p, metric)
    d_an, g_an = _distance_rows(a, n, metric)
    h = margin + d_ap - d_an
    active = (h > 0.0)[:, None]
    loss = np.maximum(h, 0.0)
    ga = np.where(active, g_ap - g_an, 0.0)
    gp = np.where(active, -g_ap, 0.0)
    gn = np.where(active, g_an, 0.0)
    return loss, ga, gp, gn


ROLES = ("anchor", "intra_pos", "intra_neg", "cross_pos", "cross_neg")


@dataclass
class Objective:
    loss: float
    p2u_grads: list
    m2u_grads: list
    role_grads: np.ndarray  # (5, n, d_u): dLoss/d(unified vector) per role


def triplet_objective(p2u: ProjectionNet, m2u: ProjectionNet, protein_inputs, molecule_inputs,
                      is_molecule, margin=1.0, alpha=0.5, metric=Distance.EUCLIDEAN,
                      normalize=False) -> Objective:
    """Mean dual-triplet loss of a batch and its gradients for both nets.

    ``is_molecule`` has shape ``(5, n)`` in :data:`ROLES` order.  Rows with
    ``False`` are fed, in row-major order, from ``protein_inputs``; the rest
    from ``molecule_inputs``.
    """
    metric = Distance(metric)
    is_mol = np.asarray(is_molecule, dtype=bool)
    if is_mol.ndim != 2 or is_mol.shape[0] != 5:
        raise ValueError("is_molecule must have shape (5, n)")
    n = is_mol.shape[1]
    flat = is_mol.ravel()
    du = p2u.out_dim
    out = np.empty((flat.size, du))
    caches = {}
    for net, mask, x, key in ((p2u, ~flat, protein_inputs, "p"), (m2u, flat, molecule_inputs, "m")):
        if not mask.any():
            continue
        h, cache = net.forward_cached(np.asarray(x, dtype=np.float64).reshape(-1, net.in_dim))
        if h.shape[0] != mask.sum():
            raise ValueError("input row count does not match is_molecule")
        norm_state = None
        if normalize:
            h, norms = l2_normalize(h)
            norm_state = (h, norms)
        out[mask] = h
        caches[key] = (cache, norm_state)
    u = out.reshape(5, n, du)
    li, ga_i, gp_i, gn_i = _hinge_rows(u[0], u[1], u[2], margin, metric)
    lc, ga_c, gp_c, gn_c = _hinge_rows(u[0], u[3], u[4], margin, metric)
    loss = float(np.mean(alpha * li + (1.0 - alpha) * lc))
    scale = 1.0 / n
    role_grads = np.stack([
        alpha * ga_i + (1.0 - alpha) * ga_c,
        alpha * gp_i,
        alpha * gn_i,
        (1.0 - alpha) * gp_c,
        (1.0 - alpha) * gn_c,
    ]) * scale
    flat_grads = role_grads.reshape(-1, du)
    grads = {}
    for net, mask, key in ((p2u, ~flat, "p"), (m2u, flat, "m")):
        if key not in caches:
            grads[key] = [np.zeros_like(p) for p in net.parameters()]
            continue
        cache, norm_state = caches[key]
        g = flat_grads[mask]
        if norm_state is not None:
            g = l2_normalize_backward(norm_state[0], norm_state[1], g)
        grads[key], _ = net.backward(cache, g)
    return Objective(loss, grads["p"], grads["m"], role_grads)


# -- sampling -----------------------------------------------------------------

_DOMAIN_CODE = {Domain.PROTEIN: 0, Domain.MOLECULE: 1}


@dataclass
class TripletBatch:
    """Node indices (into ``graph.nodes``) for ``n`` draws, one row per role."""

    anchor: np.ndarray
    intra_pos: np.ndarray
    intra_neg: np.ndarray
    cross_pos: np.ndarray
    cross_neg: np.ndarray
    flipped: np.ndarray  # (n, 2) bool: noise flip applied to intra / cross triplet

    def stacked(self):
        return np.stack([self.anchor, self.intra_pos, self.intra_neg, self.cross_pos, self.cross_neg])

    def __len__(self):
        return self.anchor.size

    def subset(self, sl):
        return TripletBatch(*(getattr(self, r)[sl] for r in ROLES), self.flipped[sl])


class TripletSampler:
    """Dual-negative triplet sampler over one graph and two embedding tables.

    Only edges whose endpoints both have embeddings are drawn.  Negatives come
    uniformly from the embedded graph nodes of the required domain and are
    redrawn while they coincide with the anchor or positive or share an edge
    with the anchor anywhere in ``graph``.
    """

    def __init__(self, graph: ReactionGraph, protein_table: EmbeddingTable,
                 molecule_table: EmbeddingTable, edge_ids=None):
        self.graph = graph
        tables = {Domain.PROTEIN: protein_table, Domain.MOLECULE: molecule_table}
        nodes = graph.nodes
        self.node_domain = np.array([_DOMAIN_CODE[n.domain] for n in nodes], dtype=np.int64)
        rows = [tables[n.domain].row(n.id) for n in nodes]
        self.embedded = np.array([r is not None for r in rows], dtype=bool)
        self.node_row = np.array([-1 if r is None else r for r in rows], dtype=np.int64)
        u, v, w = graph.edge_arrays
        self._u, self._v = u, v
        eligible = np.flatnonzero(self.embedded[u] & self.embedded[v]) if u.size else np.empty(0, np.int64)
        if edge_ids is not None:
            eligible = np.intersect1d(eligible, np.asarray(edge_ids, dtype=np.int64))
        if eligible.size == 0:
            raise SamplingError("no eligible edge: no edge has embeddings for both endpoints")
        self.edge_ids = eligible
        self._alias = AliasTable(w[eligible])
        self.pools = [np.flatnonzero(self.embedded & (self.node_domain == d)) for d in (0, 1)]
        for d, pool in zip(Domain, self.pools):
            if pool.size < 2:
                raise SamplingError(f"need at least 2 embedded {d.name.lower()} nodes, have {pool.size}")
        n_nodes = len(nodes)
        self._n_nodes = n_nodes
        self._adj_keys = np.sort(np.concatenate([u * n_nodes + v, v * n_nodes + u]))

    def adjacent(self, a, b):
        keys = np.asarray(a) * self._n_nodes + np.asarray(b)
        if self._adj_keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._adj_keys, keys)
        pos = np.minimum(pos, self._adj_keys.size - 1)
        return self._adj_keys[pos] == keys

    def _draw_from(self, rng, domains):
        out = np.empty(domains.size, dtype=np.int64)
        for d in (0, 1):
            mask = domains == d
            cnt = int(mask.sum())
            if cnt:
                pool = self.pools[d]
                out[mask] = pool[rng.integers(pool.size, size=cnt)]
        return out

    def _negatives(self, rng, anchor, positive, domains):
        cand = self._draw_from(rng, domains)
        bad = (cand == anchor) | (cand == positive) | self.adjacent(anchor, cand)
        tries = 0
        while bad.any():
            if tries >= MAX_REJECTIONS:
                who = self.graph.nodes[int(anchor[np.flatnonzero(bad)[0]])]
                raise SamplingError(
                    f"could not find a negative for anchor {who} after {MAX_REJECTIONS} rejections")
            idx = np.flatnonzero(bad)
            cand[idx] = self._draw_from(rng, domains[idx])
            bad[idx] = (cand[idx] == anchor[idx]) | (cand[idx] == positive[idx]) | \
                self.adjacent(anchor[idx], cand[idx])
            tries += 1
        return cand

    def sample(self, rng, n, noise_flip_prob=0.0) -> TripletBatch:
        if not 0.0 <= noise_flip_prob <= 1.0:
            raise ValueError("noise_flip_prob must lie in [0, 1]")
        k = self.edge_ids[self._alias.sample(rng, n)]
        swap = rng.random(n) < 0.5
        u, v = self._u[k], self._v[k]
        anchor = np.where(swap, v, u)
        positive = np.where(swap, u, v)
        dom_a = self.node_domain[anchor]
        neg_intra = self._negatives(rng, anchor, positive, dom_a)
        neg_cross = self._negatives(rng, anchor, positive, 1 - dom_a)
        # drawn unconditionally so the stream does not depend on the flip rate
        flips = rng.random((n, 2)) < noise_flip_prob
        return TripletBatch(
            anchor,
            np.where(flips[:, 0], neg_intra, positive),
            np.where(flips[:, 0], positive, neg_intra),
            np.where(flips[:, 1], neg_cross, positive),
            np.where(flips[:, 1], positive, neg_cross),
            flips,
        )

    def triplets(self, batch: TripletBatch) -> list[tuple[Triplet, Triplet]]:
        nodes = self.graph.nodes
        out = []
        for i in range(len(batch)):
            a = nodes[batch.anchor[i]]
            out.append((
                Triplet(a, nodes[batch.intra_pos[i]], nodes[batch.intra_neg[i]], NegativeKind.INTRA_DOMAIN),
                Triplet(a, nodes[batch.cross_pos[i]], nodes[batch.cross_neg[i]], NegativeKind.CROSS_DOMAIN),
            ))
        return out


def sample_triplet_pair(sampler: TripletSampler, rng, noise_flip_prob=0.0) -> tuple[Triplet, Triplet]:
    """One weighted edge draw turned into an intra- and a cross-domain triplet."""
    rng = np.random.default_rng(rng)
    return sampler.triplets(sampler.sample(rng, 1, noise_flip_prob))[0]


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    margin: float = 1.0
    alpha: float = 0.5
    triplets_per_epoch: int = 2048
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    noise_flip_prob: float = 0.0
    distance: Distance = Distance.EUCLIDEAN
    hidden_dims: tuple = (512,)
    unified_dim: int = 256
    lr: float = 1e-3
    weight_decay: float = 0.01
    normalize: bool = False

    def __post_init__(self):
        self.distance = Distance(self.distance)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.noise_flip_prob <= 1.0:
            raise ValueError("noise_flip_prob must lie in [0, 1]")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        for name in ("triplets_per_epoch", "batch_size", "max_epochs", "unified_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    elapsed_ms: float
    cross_neg_grad: float = 0.0  # summed |dLoss/d h_cross| over the epoch


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def initial_val_loss(self):
        return self.log[0].val_loss

    @property
    def final_val_loss(self):
        return min(r.val_loss for r in self.log)

    def log_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,val_loss,elapsed_ms\n")
        for r in self.log:
            train = "" if math.isnan(r.train_loss) else repr(r.train_loss)
            buf.write(f"{r.epoch},{train},{r.val_loss!r},{r.elapsed_ms:.3f}\n")
        return buf.getvalue()


class _BatchEvaluator:
    def __init__(self, sampler, protein_table, molecule_table, cfg):
        self.sampler = sampler
        self.pt, self.mt = protein_table, molecule_table
        self.cfg = cfg

    def objective(self, p2u, m2u, batch: TripletBatch) -> Objective:
        idx = batch.stacked()
        flat = idx.ravel()
        is_mol = self.sampler.node_domain[flat] == 1
        rows = self.sampler.node_row[flat]
        return triplet_objective(
            p2u, m2u,
            self.pt.matrix[rows[~is_mol]],
            self.mt.matrix[rows[is_mol]],
            is_mol.reshape(idx.shape),
            margin=self.cfg.margin, alpha=self.cfg.alpha,
            metric=self.cfg.distance, normalize=self.cfg.normalize,
        )


def split_edges(sampler_edges, validation_fraction, rng):
    """Shuffle eligible edge ids and carve off a validation share."""
    perm = rng.permutation(sampler_edges)
    n_val = round_half_up(validation_fraction * perm.size)
    if validation_fraction > 0 and perm.size >= 2:
        n_val = min(max(n_val, 1), perm.size - 1)
    else:
        n_val = 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(graph: ReactionGraph, protein_table: EmbeddingTable, molecule_table: EmbeddingTable,
          config: TrainConfig | None = None, progress=None) -> TrainResult:
    """Train P2U and M2U until validation loss stops improving.

    The parameters returned are those of the epoch with the lowest
    validation loss.  ``progress`` is called with each :class:`EpochRecord`.
    """
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    if protein_table.domain is not Domain.PROTEIN or molecule_table.domain is not Domain.MOLECULE:
        raise DataError("tables must be (protein, molecule) in that order")
    p2u = init_net(protein_table.dim, cfg.hidden_dims, cfg.unified_dim, rng)
    m2u = init_net(molecule_table.dim, cfg.hidden_dims, cfg.unified_dim, rng)

    full = TripletSampler(graph, protein_table, molecule_table)
    train_ids, val_ids = split_edges(full.edge_ids, cfg.validation_fraction, rng)
    train_sampler = TripletSampler(graph, protein_table, molecule_table, edge_ids=train_ids)
    val_sampler = TripletSampler(graph, protein_table, molecule_table,
                                 edge_ids=val_ids if val_ids.size else train_ids)
    n_val = max(cfg.batch_size, round_half_up(cfg.triplets_per_epoch * cfg.validation_fraction))
    val_batch = val_sampler.sample(rng, n_val, 0.0)

    ev = _BatchEvaluator(full, protein_table, molecule_table, cfg)
    params = p2u.parameters() + m2u.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    def val_loss():
        return ev.objective(p2u, m2u, val_batch).loss

    start = time.perf_counter()
    best = val_loss()
    result = TrainResult(Checkpoint(p2u.copy(), m2u.copy(), cfg.normalize), best_epoch=0)
    result.log.append(EpochRecord(0, float("nan"), best, 0.0))
    if progress:
        progress(result.log[-1])
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        draws = train_sampler.sample(rng, cfg.triplets_per_epoch, cfg.noise_flip_prob)
        total, cross_grad = 0.0, 0.0
        for lo in range(0, cfg.triplets_per_epoch, cfg.batch_size):
            batch = draws.subset(slice(lo, lo + cfg.batch_size))
            obj = ev.objective(p2u, m2u, batch)
            if not math.isfinite(obj.loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch offset {lo}")
            total += obj.loss * len(batch)
            cross_grad += float(np.abs(obj.role_grads[4]).sum())
            opt.step(params, obj.p2u_grads + obj.m2u_grads)
        v = val_loss()
        if not math.isfinite(v):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        rec = EpochRecord(epoch, total / cfg.triplets_per_epoch, v,
                          (time.perf_counter() - start) * 1e3, cross_grad)
        result.log.append(rec)
        if progress:
            progress(rec)
        if v < best:
            best, stale = v, 0
            result.checkpoint = Checkpoint(p2u.copy(), m2u.copy(), cfg.normalize)
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return result
