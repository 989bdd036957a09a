"""Frozen-encoder evaluation: embeddings, readout, linear probes, k-fold CV."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .errors import ValidationError
from .graph import Graph, GraphSet, NodeSplit
from .layers import GraphContext, Model, encode
from .training import AdamState, OptimConfig, adam_step

POOLINGS = ("mean", "max", "sum")


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 0.01
    epochs: int = 300
    weight_decay: float = 1e-4
    repeats: int = 20
    standardize: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.epochs <= 0 or self.repeats <= 0 or self.weight_decay < 0:
            raise ValidationError(f"probe settings must be positive: {self}")


@dataclass
class EvalReport:
    task: str
    values: list
    config: dict = field(default_factory=dict)
    classifier: str = "linear_probe"
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "classifier": self.classifier,
            "mean": self.mean,
            "std": self.std,
            "values": [float(v) for v in self.values],
            "config": self.config,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        missing = {"task", "classifier", "mean", "std", "values", "config"} - set(doc)
        if missing:
            raise ValidationError(f"report is missing keys {sorted(missing)}")
        report = cls(doc["task"], list(doc["values"]), doc["config"], doc["classifier"], doc.get("extra", {}))
        if abs(report.mean - doc["mean"]) > 1e-12 or abs(report.std - doc["std"]) > 1e-12:
            raise ValidationError("report mean/std disagree with its values")
        return report


def embed(encoder: Model, g) -> np.ndarray:
    """Encoder output on the uncorrupted graph, computed without recording."""
    ctx = GraphContext.of(g)
    with ad.no_grad():
        return encode(encoder, ctx, Tensor(ctx.graph.features)).data.copy()


def readout(h, pooling: str = "mean") -> np.ndarray:
    """Column-wise pooling of node embeddings into one graph vector."""
    h = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    if pooling not in POOLINGS:
        raise ValidationError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValidationError("readout of an empty graph is undefined")
    if pooling == "mean":
        return h.mean(axis=0)
    if pooling == "max":
        return h.max(axis=0)
    return h.sum(axis=0)


def graph_embeddings(encoder: Model, gs: GraphSet, pooling: str) -> np.ndarray:
    return np.stack([readout(embed(encoder, g), pooling) for g in gs.graphs])


def _standardize(train, *others):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return [(a - mu) / sd for a in (train, *others)]


def train_logistic(x, y, num_classes, cfg: ProbeConfig, seed=0):
    """Multinomial logistic regression fitted with full-batch Adam.

    Returns (weight, bias) as arrays.
    """
    rng = np.random.default_rng(seed)
    d = x.shape[1]
    bound = math.sqrt(6.0 / (d + num_classes))
    w = Parameter(rng.uniform(-bound, bound, (d, num_classes)), "probe.weight")
    b = Parameter(np.zeros((1, num_classes)), "probe.bias")
    params = [w, b]
    onehot = np.eye(num_classes)[y]
    xt = Tensor(x)
    state = AdamState()
    opt = OptimConfig(lr=cfg.lr, weight_decay=cfg.weight_decay, max_epoch=cfg.epochs)
    for _ in range(cfg.epochs):
        for p in params:
            p.zero_grad()
        with Tape() as tape:
            logits = xt @ w + b
            shift = logits.data.max(axis=1, keepdims=True)
            shifted = ad.add(logits, Tensor(np.broadcast_to(-shift, logits.shape)))
            lse = ad.log(ad.sum(ad.exp(shifted), axis=1))
            picked = ad.sum(ad.mul(shifted, Tensor(onehot)), axis=1)
            loss = ad.mean(ad.add(lse, ad.scale(picked, -1.0)))
        ad.backward(tape, loss)
        adam_step(params, state, cfg.lr, opt)
    return w.data.copy(), b.data.copy()


def _accuracy(x, y, w, b) -> float:
    return float(np.mean(np.argmax(x @ w + b, axis=1) == y)) if len(y) else float("nan")


def linear_probe(h, labels, split: NodeSplit, cfg: ProbeConfig = ProbeConfig(), seed=0) -> EvalReport:
    """Fit a fresh linear classifier ``cfg.repeats`` times; report test accuracy."""
    h = h.data if isinstance(h, Tensor) else np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    tr, te = split.train_idx, split.test_idx
    if len(tr) == 0 or len(te) == 0:
        raise ValidationError("linear probe needs nonempty train and test sets")
    if len(np.unique(labels[tr])) < 2:
        raise ValidationError("train split contains a single class; nothing to discriminate")
    x_tr, x_te = h[tr], h[te]
    if cfg.standardize:
        x_tr, x_te = _standardize(x_tr, x_te)
    num_classes = int(labels.max()) + 1
    test_acc, train_acc = [], []
    for r in range(cfg.repeats):
        w, b = train_logistic(x_tr, labels[tr], num_classes, cfg, seed=[int(seed), r])
        test_acc.append(_accuracy(x_te, labels[te], w, b))
        train_acc.append(_accuracy(x_tr, labels[tr], w, b))
    return EvalReport(
        "node_classification",
        test_acc,
        {**asdict(cfg), "seed": int(seed)},
        extra={"train_accuracy": train_acc},
    )


def stratified_folds(labels, k, seed=0) -> np.ndarray:
    """Fold id per item; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2 or k > len(labels):
        raise ValidationError(f"need 2 <= k <= {len(labels)}, got k={k}")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    start = 0
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        if len(members) < k and k < len(labels):
            raise ValidationError(f"class {c} has {len(members)} members, fewer than k={k} folds")
        folds[members] = (start + np.arange(len(members))) % k
        start = (start + len(members)) % k
    return folds


def kfold_probe(x, labels, k=10, repeats=5, cfg: ProbeConfig = ProbeConfig(repeats=1), seed=0) -> EvalReport:
    """Stratified k-fold accuracy of a linear probe on fixed vectors."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = int(labels.max()) + 1
    values, assignments = [], []
    for r in range(repeats):
        folds = stratified_folds(labels, k, seed=[int(seed), r])
        assignments.append(folds.tolist())
        for f in range(k):
            te = folds == f
            tr = ~te
            x_tr, x_te = x[tr], x[te]
            if cfg.standardize:
                x_tr, x_te = _standardize(x_tr, x_te)
            if len(np.unique(labels[tr])) < 2:
                raise ValidationError("a training fold contains a single class")
            w, b = train_logistic(x_tr, labels[tr], num_classes, cfg, seed=[int(seed), r, f])
            values.append(_accuracy(x_te, labels[te], w, b))
    return EvalReport(
        "graph_classification",
        values,
        {**asdict(cfg), "k": k, "repeats": repeats, "seed": int(seed)},
        extra={"folds": assignments},
    )


def kfold_graph_eval(gs: GraphSet, encoder: Model, pooling="mean", k=10, repeats=5,
                     cfg: ProbeConfig = ProbeConfig(repeats=1), seed=0) -> EvalReport:
    """Pool frozen embeddings per graph, then stratified k-fold linear probing."""
    if k > len(gs):
        raise ValidationError(f"k={k} exceeds the number of graphs ({len(gs)})")
    report = kfold_probe(graph_embeddings(encoder, gs, pooling), gs.labels, k, repeats, cfg, seed)
    report.config["pooling"] = pooling
    return report
