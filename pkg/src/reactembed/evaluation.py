"""Frozen-embedding evaluation: linear probes, metrics and zero-shot KNN."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._io import data_lines, read_text, source_name
from .errors import DataError, ParseError
from .projection_net import AdamW
from .reaction_graph import Domain, EntityRef
from .unified_space import UnifiedTable

KNN_EPS = 1e-12


class TaskKind(str, enum.Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class Split(str, enum.Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


# -- metrics ------------------------------------------------------------------

def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic; ties count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and the same length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary 0/1")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and targets must be non-empty and the same shape")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def accuracy(predicted, truth) -> float:
    p, t = np.asarray(predicted), np.asarray(truth)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("need equal, non-empty label arrays")
    return float(np.mean(p == t))


# -- datasets -----------------------------------------------------------------

@dataclass(frozen=True)
class LabeledItem:
    entities: tuple[EntityRef, ...]  # one entity, or an (a, b) pair
    split: Split
    label: float


def load_labeled(source) -> list[LabeledItem]:
    """Parse single-entity (4 columns) or pair (6 columns) labeled TSV."""
    name = source_name(source)
    items = []
    width = None
    for lineno, line in data_lines(read_text(source)):
        cols = line.split("\t")
        if width is None:
            width = len(cols)
        if len(cols) not in (4, 6) or len(cols) != width:
            raise ParseError(f"expected 4 (single) or 6 (pair) columns consistently, got {len(cols)}",
                             line=lineno, source=name)
        try:
            if len(cols) == 4:
                ents = (EntityRef(cols[0], Domain.parse(cols[1])),)
            else:
                ents = (EntityRef(cols[0], Domain.parse(cols[1])), EntityRef(cols[2], Domain.parse(cols[3])))
            split = Split(cols[-2])
            label = float(cols[-1])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, source=name) from None
        if not math.isfinite(label):
            raise ParseError("non-finite label", line=lineno, source=name)
        items.append(LabeledItem(ents, split, label))
    return items


def format_labeled(items) -> str:
    out = []
    for it in items:
        cols = []
        for e in it.entities:
            cols += [e.id, e.domain.value]
        lab = int(it.label) if float(it.label).is_integer() else repr(it.label)
        cols += [it.split.value, str(lab)]
        out.append("\t".join(cols) + "\n")
    return "".join(out)


@dataclass
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    split: np.ndarray  # array of Split values
    task_kind: TaskKind
    items: list = field(default_factory=list)
    missing: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.split = np.array([Split(v) for v in self.split], dtype=object)
        self.task_kind = TaskKind(self.task_kind)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.size or self.split.size != self.y.size:
            raise ValueError("x, y and split must describe the same number of items")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")
        if self.task_kind is TaskKind.CLASSIFICATION and not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("classification labels must be 0/1")

    @property
    def width(self):
        return self.x.shape[1]

    def part(self, split: Split):
        want = Split(split)
        mask = np.fromiter((v is want for v in self.split), dtype=bool, count=self.split.size)
        return self.x[mask], self.y[mask]


def infer_task_kind(labels) -> TaskKind:
    y = np.asarray(labels, dtype=np.float64)
    return TaskKind.CLASSIFICATION if np.all((y == 0) | (y == 1)) else TaskKind.REGRESSION


def build_dataset(items, unified: UnifiedTable, task_kind=None) -> LabeledDataset:
    """Vectorise labeled items; pairs become the concatenation ``[u_a, u_b]``.

    Items with an entity lacking a unified vector are left out and listed in
    ``missing``.
    """
    kept, missing = [], []
    for it in items:
        (kept if all(e in unified for e in it.entities) else missing).append(it)
    if not kept:
        raise DataError("no labeled item has unified vectors for all its entities")
    x = np.stack([np.concatenate([unified.get(e) for e in it.entities]) for it in kept])
    y = np.array([it.label for it in kept])
    kind = TaskKind(task_kind) if task_kind is not None else infer_task_kind(y)
    return LabeledDataset(x, y, [it.split for it in kept], kind, kept, missing)


# -- linear probe -------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ProbeModel:
    weight: np.ndarray
    bias: float
    task_kind: TaskKind
    epochs: int = 0

    def decision(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weight.size:
            raise ValueError(f"probe expects width {self.weight.size}, got {x.shape[-1]}")
        return x @ self.weight + self.bias

    def predict(self, x):
        z = self.decision(x)
        return _sigmoid(z) if self.task_kind is TaskKind.CLASSIFICATION else z


def _probe_metric(model, x, y):
    if model.task_kind is TaskKind.CLASSIFICATION:
        return auc(model.decision(x), y)
    return rmse(model.predict(x), y)


def train_probe(dataset: LabeledDataset, lr=1e-3, batch_size=256, patience=10, max_epochs=2000,
                weight_decay=0.01, seed=0) -> ProbeModel:
    """Fit one linear layer with AdamW, early-stopped on the validation metric.

    Classification minimises logistic cross-entropy and watches validation
    AUC; regression minimises squared error and watches validation RMSE.  The
    best validation epoch's parameters are returned.
    """
    xt, yt = dataset.part(Split.TRAIN)
    xv, yv = dataset.part(Split.VALID)
    if yt.size == 0 or yv.size == 0:
        raise DataError("probe needs non-empty train and valid splits")
    cls = dataset.task_kind is TaskKind.CLASSIFICATION
    if cls and np.unique(yt).size < 2:
        raise DataError("classification train split contains a single class")
    if cls and np.unique(yv).size < 2:
        raise DataError("classification valid split contains a single class")
    rng = np.random.default_rng(seed)
    w = np.zeros(dataset.width)
    b = np.zeros(1)
    opt = AdamW([w, b], lr=lr, weight_decay=weight_decay)
    model = ProbeModel(w, 0.0, dataset.task_kind)

    def score():
        model.bias = float(b[0])
        m = _probe_metric(model, xv, yv)
        return m if cls else -m

    best = score()
    best_params = (w.copy(), float(b[0]), 0)
    stale = 0
    n = yt.size
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            xb, yb = xt[idx], yt[idx]
            z = xb @ w + b[0]
            if cls:
                dz = (_sigmoid(z) - yb) / idx.size
            else:
                dz = 2.0 * (z - yb) / idx.size
            opt.step([w, b], [xb.T @ dz, np.array([dz.sum()])])
        s = score()
        if s > best:
            best, stale = s, 0
            best_params = (w.copy(), float(b[0]), epoch)
        else:
            stale += 1
            if stale >= patience:
                break
    return ProbeModel(best_params[0], best_params[1], dataset.task_kind, best_params[2])


def evaluate_probe(model: ProbeModel, dataset: LabeledDataset) -> dict[str, float]:
    out = {}
    name = "auc" if model.task_kind is TaskKind.CLASSIFICATION else "rmse"
    for split in (Split.VALID, Split.TEST):
        x, y = dataset.part(split)
        if y.size == 0:
            continue
        if model.task_kind is TaskKind.CLASSIFICATION and np.unique(y).size < 2:
            continue
        out[f"{split.value}_{name}"] = _probe_metric(model, x, y)
    return out


def train_one_vs_rest(dataset_x, labels, split, **probe_kw) -> dict:
    """One binary probe per class value, for multi-class tasks."""
    labels = np.asarray(labels)
    models = {}
    for c in np.unique(labels):
        ds = LabeledDataset(dataset_x, (labels == c).astype(float), split, TaskKind.CLASSIFICATION)
        models[c.item() if hasattr(c, "item") else c] = train_probe(ds, **probe_kw)
    return models


# -- zero-shot KNN --------------------------------------------------------------

class Weighting(str, enum.Enum):
    UNIFORM = "uniform"
    INVERSE_DISTANCE = "inverse_distance"


class KNNClassifier:
    """Brute-force k-nearest-neighbour vote in the unified space.

    Inverse-distance weights are ``1 / (d + 1e-12)``.  Neighbour ties at equal
    distance are broken by training-row order.
    """

    def __init__(self, k=20, weighting=Weighting.INVERSE_DISTANCE):
        if int(k) < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)
        self.weighting = Weighting(weighting)

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("empty training set")
        if y.shape != (x.shape[0],):
            raise ValueError("one label per training row required")
        if self.k > x.shape[0]:
            raise ValueError(f"k={self.k} exceeds training size {x.shape[0]}")
        self.x = x
        self.classes, self.y_index = np.unique(y, return_inverse=True)
        return self

    def neighbors(self, queries):
        q = np.asarray(queries, dtype=np.float64)
        if q.ndim == 1:
            q = q[None, :]
        if q.shape[1] != self.x.shape[1]:
            raise ValueError(f"query width {q.shape[1]} != training width {self.x.shape[1]}")
        # direct differences keep exact duplicates at distance 0
        n, dim = self.x.shape
        step = max(1, 4_000_000 // max(1, n * dim))
        d = np.empty((q.shape[0], n))
        for lo in range(0, q.shape[0], step):
            diff = q[lo:lo + step, None, :] - self.x[None, :, :]
            d[lo:lo + step] = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
        idx = np.argsort(d, axis=1, kind="stable")[:, :self.k]
        return idx, np.take_along_axis(d, idx, axis=1)

    def predict_proba(self, queries):
        idx, d = self.neighbors(queries)
        if self.weighting is Weighting.UNIFORM:
            w = np.ones_like(d)
        else:
            w = 1.0 / (d + KNN_EPS)
        votes = np.zeros((idx.shape[0], self.classes.size))
        rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
        np.add.at(votes, (rows, self.y_index[idx].ravel()), w.ravel())
        return votes / votes.sum(axis=1, keepdims=True)

    def predict(self, queries):
        return self.classes[np.argmax(self.predict_proba(queries), axis=1)]

    def proba_of(self, queries, label=1):
        hits = np.flatnonzero(self.classes == label)
        proba = self.predict_proba(queries)
        if hits.size == 0:
            return np.zeros(proba.shape[0])
        return proba[:, hits[0]]


def knn_zero_shot(train_x, train_y, query_x, k=20, weighting=Weighting.INVERSE_DISTANCE):
    """Fit on one domain's labeled vectors, return (classes, probabilities) for the queries."""
    knn = KNNClassifier(k, weighting).fit(train_x, train_y)
    return knn.classes, knn.predict_proba(query_x)


@dataclass
class ScreenReport:
    ids: list[str]
    probabilities: np.ndarray  # sorted descending, aligned with ids
    baseline: float | None
    bin_edges: np.ndarray
    bin_counts: np.ndarray

    def to_csv(self) -> str:
        """``rank,entity_id,probability``; the baseline shows up as an unranked row."""
        buf = io.StringIO()
        buf.write("rank,entity_id,probability\n")
        placed = self.baseline is None
        for r, (eid, p) in enumerate(zip(self.ids, self.probabilities), start=1):
            if not placed and self.baseline > p:
                buf.write(f",BASELINE,{self.baseline!r}\n")
                placed = True
            buf.write(f"{r},{eid},{float(p)!r}\n")
        if not placed:
            buf.write(f",BASELINE,{self.baseline!r}\n")
        return buf.getvalue()

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        buf.write("bin_low,bin_high,count\n")
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.bin_counts):
            buf.write(f"{lo!r},{hi!r},{int(c)}\n")
        return buf.getvalue()


def run_zero_shot_screen(ids, vectors, knn: KNNClassifier, baseline=None, label=1, bins=10) -> ScreenReport:
    """Score candidates from the other domain and rank them by P(label)."""
    ids = list(ids)
    if not ids:
        raise ValueError("no candidates to screen")
    p = knn.proba_of(vectors, label)
    order = np.argsort(-p, kind="stable")
    counts, edges = np.histogram(p, bins=bins, range=(0.0, 1.0))
    return ScreenReport([ids[i] for i in order], p[order],
                        None if baseline is None else float(baseline), edges, counts)
