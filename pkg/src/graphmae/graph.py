"""Graph containers, file IO, preprocessing and synthetic generators.

Adjacency is stored in canonical CSR form: rows ascending, column indices
strictly increasing within a row, no duplicate arcs. Everything here returns
new objects; arrays held by a ``Graph`` are marked read-only.
"""

from __future__ import annotations

import math
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ParseError, ValidationError

FEATURE_MAGIC = b"GMAEF1"


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CsrAdjacency:
    row_offsets: np.ndarray
    col_indices: np.ndarray
    edge_values: np.ndarray

    def __post_init__(self):
        offsets = _frozen(self.row_offsets, np.int64)
        cols = _frozen(self.col_indices, np.int64)
        vals = _frozen(self.edge_values, np.float64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "edge_values", vals)
        if offsets.ndim != 1 or len(offsets) < 1 or offsets[0] != 0:
            raise ValidationError("row_offsets must start at 0")
        if offsets[-1] != len(cols) or len(vals) != len(cols):
            raise ValidationError("row_offsets[n] must equal the number of arcs")
        if np.any(np.diff(offsets) < 0):
            raise ValidationError("row_offsets must be nondecreasing")
        n = len(offsets) - 1
        if len(cols) and (cols.min() < 0 or cols.max() >= n):
            raise ValidationError(f"column index out of range [0, {n})")
        if len(cols) > 1:
            rows = np.repeat(np.arange(n), np.diff(offsets))
            same_row = rows[1:] == rows[:-1]
            if np.any(same_row & (cols[1:] <= cols[:-1])):
                raise ValidationError("column indices must be strictly increasing within a row")

    @property
    def n(self) -> int:
        return len(self.row_offsets) - 1

    @property
    def num_arcs(self) -> int:
        return len(self.col_indices)

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def arc_rows(self) -> np.ndarray:
        """Row (destination) index of every arc, aligned with col_indices."""
        return np.repeat(np.arange(self.n, dtype=np.int64), self.degrees())

    def arcs(self) -> set[tuple[int, int]]:
        return set(zip(self.arc_rows().tolist(), self.col_indices.tolist()))

    def with_values(self, values) -> "CsrAdjacency":
        return CsrAdjacency(self.row_offsets, self.col_indices, values)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.arc_rows(), self.col_indices] = self.edge_values
        return out

    def is_symmetric(self) -> bool:
        d = self.to_dense()
        return bool(np.array_equal(d, d.T))

    @classmethod
    def from_arcs(cls, n, src, dst, values=None, symmetrize=False) -> "CsrAdjacency":
        """Build canonical CSR from arc lists. Duplicate arcs keep the first value."""
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if values is None:
            values = np.ones(len(src))
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (len(src) == len(dst) == len(values)):
            raise ValidationError("src, dst and values must have equal length")
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise ValidationError(f"arc endpoint out of range [0, {n})")
        if symmetrize:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
            values = np.concatenate([values, values])
        key = src * max(n, 1) + dst
        _, first = np.unique(key, return_index=True)
        src, dst, values = src[first], dst[first], values[first]
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
        return cls(offsets, dst, values)

    @classmethod
    def empty(cls, n) -> "CsrAdjacency":
        return cls(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))


@dataclass(frozen=True)
class Graph:
    adjacency: CsrAdjacency
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    graph_label: Optional[int] = None
    name: str = "graph"

    def __post_init__(self):
        feats = _frozen(self.features, np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
            feats.setflags(write=False)
        if feats.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        object.__setattr__(self, "features", feats)
        if feats.shape[0] != self.adjacency.n:
            raise ValidationError(
                f"feature rows ({feats.shape[0]}) != node count ({self.adjacency.n})"
            )
        if self.labels is not None:
            labels = _frozen(self.labels, np.int64)
            if labels.shape != (self.n,):
                raise ValidationError("labels must be a vector with one entry per node")
            if len(labels) and labels.min() < 0:
                raise ValidationError("labels must be nonnegative class ids")
            object.__setattr__(self, "labels", labels)
        if self.graph_label is not None:
            if int(self.graph_label) < 0:
                raise ValidationError("graph label must be a nonnegative class id")
            object.__setattr__(self, "graph_label", int(self.graph_label))

    @property
    def n(self) -> int:
        return self.adjacency.n

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        if self.labels is None or len(self.labels) == 0:
            return 0
        return int(self.labels.max()) + 1

    def replace(self, **changes) -> "Graph":
        fields = dict(
            adjacency=self.adjacency,
            features=self.features,
            labels=self.labels,
            graph_label=self.graph_label,
            name=self.name,
        )
        fields.update(changes)
        return Graph(**fields)

    def permute(self, perm) -> "Graph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        adj = self.adjacency
        adj = CsrAdjacency.from_arcs(
            self.n, inv[adj.arc_rows()], inv[adj.col_indices], adj.edge_values
        )
        labels = None if self.labels is None else self.labels[perm]
        return self.replace(adjacency=adj, features=self.features[perm], labels=labels)


@dataclass(frozen=True)
class NodeSplit:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        for name in ("train_idx", "val_idx", "test_idx"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        parts = [self.train_idx, self.val_idx, self.test_idx]
        total = np.concatenate(parts)
        if len(np.unique(total)) != len(total):
            raise ValidationError("split index sets must be pairwise disjoint")


@dataclass(frozen=True)
class GraphSet:
    graphs: tuple
    num_classes: int = field(default=0)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        object.__setattr__(self, "graphs", graphs)
        if graphs:
            dims = {g.num_features for g in graphs}
            if len(dims) != 1:
                raise ValidationError(f"graphs disagree on feature dimension: {sorted(dims)}")
            if any(g.graph_label is None for g in graphs):
                raise ValidationError("every graph in a GraphSet needs a graph label")
        if not self.num_classes and graphs:
            object.__setattr__(self, "num_classes", max(g.graph_label for g in graphs) + 1)

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.graph_label for g in self.graphs], dtype=np.int64)

    @property
    def num_features(self) -> int:
        return self.graphs[0].num_features


# --------------------------------------------------------------------- IO


def read_edges(path) -> tuple[np.ndarray, np.ndarray]:
    src, dst = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected 'src dst', got {raw.strip()!r}", lineno, path)
            try:
                s, d = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer node id in {raw.strip()!r}", lineno, path) from None
            if s < 0 or d < 0:
                raise ValidationError(f"{path}:{lineno}: negative node id")
            src.append(s)
            dst.append(d)
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(len(FEATURE_MAGIC))
        if head == FEATURE_MAGIC:
            dims = fh.read(16)
            if len(dims) != 16:
                raise FormatError(f"{path}: truncated feature header")
            n, d = struct.unpack("<QQ", dims)
            body = fh.read()
            if len(body) != 8 * n * d:
                raise FormatError(f"{path}: expected {n}x{d} f64 values, got {len(body)} bytes")
            return np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.replace(",", " ").split()]
            except ValueError:
                raise ParseError(f"non-numeric feature value in {raw.strip()!r}", lineno, path) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"expected {width} values, got {len(row)}", lineno, path)
            rows.append(row)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def write_features(path, features, binary=True):
    features = np.asarray(features, dtype=np.float64)
    if binary:
        n, d = features.shape
        payload = FEATURE_MAGIC + struct.pack("<QQ", n, d) + features.astype("<f8").tobytes()
        Path(path).write_bytes(payload)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            for row in features:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_labels(path) -> np.ndarray:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise ParseError(f"expected one integer label, got {raw.strip()!r}", lineno, path) from None
    return np.array(out, dtype=np.int64)


def load_graph(edge_path, feature_path, label_path=None, name=None) -> Graph:
    """Read a graph from an edge list, a feature matrix and optional labels.

    Edges are symmetrized and deduplicated; the node count is the number of
    feature rows.
    """
    feats = read_features(feature_path)
    n = feats.shape[0]
    src, dst = read_edges(edge_path)
    if len(src) and max(src.max(), dst.max()) >= n:
        bad = int(max(src.max(), dst.max()))
        raise ValidationError(f"{edge_path}: node id {bad} out of range for {n} feature rows")
    adj = CsrAdjacency.from_arcs(n, src, dst, symmetrize=True)
    labels = None
    if label_path is not None:
        labels = read_labels(label_path)
        if len(labels) != n:
            raise ValidationError(f"{label_path}: {len(labels)} labels for {n} nodes")
    return Graph(adj, feats, labels, name=name or Path(edge_path).stem)


def save_graph(g: Graph, edge_path, feature_path, label_path=None, binary=True):
    """Write ``g`` so that ``load_graph`` reproduces it (unweighted graphs)."""
    rows = g.adjacency.arc_rows()
    cols = g.adjacency.col_indices
    keep = rows <= cols
    with open(edge_path, "w", encoding="utf-8") as fh:
        for s, d in zip(rows[keep].tolist(), cols[keep].tolist()):
            fh.write(f"{s} {d}\n")
    write_features(feature_path, g.features, binary=binary)
    if label_path is not None and g.labels is not None:
        Path(label_path).write_text("".join(f"{int(v)}\n" for v in g.labels), encoding="utf-8")


def _feature_file(d: Path) -> Path:
    for cand in ("features.bin", "features.csv"):
        if (d / cand).exists():
            return d / cand
    raise ValidationError(f"{d}: no features.bin or features.csv")


def load_graphset(directory) -> GraphSet:
    """Load ``labels.txt`` (``graph_name label`` per line) plus one subdir per graph."""
    directory = Path(directory)
    manifest = directory / "labels.txt"
    if not manifest.exists():
        raise ValidationError(f"{directory}: missing labels.txt manifest")
    graphs = []
    with open(manifest, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected 'graph_name label', got {raw.strip()!r}", lineno, manifest)
            gname, lab = parts
            try:
                label = int(lab)
            except ValueError:
                raise ParseError(f"non-integer label {lab!r}", lineno, manifest) from None
            sub = directory / gname
            g = load_graph(sub / "edges.txt", _feature_file(sub), name=gname)
            graphs.append(g.replace(graph_label=label))
    return GraphSet(graphs)


def save_graphset(gs: GraphSet, directory, binary=True):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for g in gs.graphs:
        sub = directory / g.name
        sub.mkdir(exist_ok=True)
        save_graph(g, sub / "edges.txt", sub / ("features.bin" if binary else "features.csv"), binary=binary)
        lines.append(f"{g.name} {g.graph_label}\n")
    (directory / "labels.txt").write_text("".join(lines), encoding="utf-8")


# ----------------------------------------------------------- preprocessing


def add_self_loops(g: Graph, value: float = 1.0) -> Graph:
    adj = g.adjacency
    n = g.n
    loops = np.arange(n, dtype=np.int64)
    # existing arcs first so an existing (i, i) keeps its value
    src = np.concatenate([adj.arc_rows(), loops])
    dst = np.concatenate([adj.col_indices, loops])
    vals = np.concatenate([adj.edge_values, np.full(n, value)])
    return g.replace(adjacency=CsrAdjacency.from_arcs(n, src, dst, vals))


def remove_self_loops(g: Graph) -> Graph:
    adj = g.adjacency
    rows = adj.arc_rows()
    keep = rows != adj.col_indices
    return g.replace(
        adjacency=CsrAdjacency.from_arcs(g.n, rows[keep], adj.col_indices[keep], adj.edge_values[keep])
    )


def row_normalize_features(g: Graph) -> Graph:
    x = g.features
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    return g.replace(features=x / safe)


def gcn_normalize(adj: CsrAdjacency) -> CsrAdjacency:
    """Symmetric normalization D^-1/2 A D^-1/2 with degrees counted from ``adj``.

    ``adj`` is expected to already contain self-loops.
    """
    deg = adj.degrees().astype(np.float64)
    if np.any(deg == 0):
        raise ValidationError(f"node {int(np.argmax(deg == 0))} has degree 0; add self-loops first")
    vals = 1.0 / np.sqrt(deg[adj.arc_rows()] * deg[adj.col_indices])
    return adj.with_values(vals)


def merge_graphs(graphs: Sequence[Graph]) -> tuple[Graph, np.ndarray]:
    """Block-diagonal union. Returns the merged graph and each node's graph index."""
    offsets = [0]
    row_parts, col_parts, val_parts = [], [], []
    for g in graphs:
        base = offsets[-1]
        row_parts.append(g.adjacency.arc_rows() + base)
        col_parts.append(g.adjacency.col_indices + base)
        val_parts.append(g.adjacency.edge_values)
        offsets.append(base + g.n)
    n = offsets[-1]
    adj = CsrAdjacency.from_arcs(
        n,
        np.concatenate(row_parts) if row_parts else [],
        np.concatenate(col_parts) if col_parts else [],
        np.concatenate(val_parts) if val_parts else [],
    )
    feats = np.concatenate([g.features for g in graphs], axis=0)
    owner = np.repeat(np.arange(len(graphs)), [g.n for g in graphs])
    return Graph(adj, feats, name="batch"), owner


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class FeatureSpec:
    """Planted block means: mean ~ N(0, mean_scale^2 I), row = mean + N(0, noise^2 I)."""

    dim: int = 16
    mean_scale: float = 1.0
    noise: float = 0.1


def generate_sbm(blocks, p_in, p_out, feature_spec: FeatureSpec = FeatureSpec(), seed=0, name="sbm") -> Graph:
    blocks = [int(b) for b in blocks]
    if any(b <= 0 for b in blocks):
        raise ValidationError("block sizes must be positive")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"probability {p} outside [0, 1]")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(blocks)), blocks)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    hit = rng.random(len(iu)) < prob
    adj = CsrAdjacency.from_arcs(n, iu[hit], ju[hit], symmetrize=True)
    means = rng.normal(0.0, feature_spec.mean_scale, size=(len(blocks), feature_spec.dim))
    feats = means[labels] + rng.normal(0.0, feature_spec.noise, size=(n, feature_spec.dim))
    return Graph(adj, feats, labels, name=name)


def generate_sbm_graphset(num_graphs, nodes, p_in, p_out, feature_spec: FeatureSpec = FeatureSpec(),
                          seed=0, num_classes=2) -> GraphSet:
    """Labelled small graphs; class c has c + 1 equal communities and its own feature mean."""
    if num_graphs < num_classes or nodes < num_classes:
        raise ValidationError("need at least one graph per class and one node per community")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, feature_spec.mean_scale, size=(num_classes, feature_spec.dim))
    graphs = []
    for i in range(num_graphs):
        c = i % num_classes
        blocks = [nodes // (c + 1)] * (c + 1)
        g = generate_sbm(blocks, p_in, p_out, FeatureSpec(feature_spec.dim, 0.0, feature_spec.noise),
                         seed=[int(x) for x in np.atleast_1d(seed)] + [i], name=f"g{i}")
        graphs.append(Graph(g.adjacency, g.features + means[c], graph_label=c, name=g.name))
    return GraphSet(graphs, num_classes)


def split_nodes(g: Graph, fractions=(0.5, 0.2, 0.3), seed=0, train_per_class=None) -> NodeSplit:
    """Seeded split, stratified by label when the graph has labels.

    Per-class counts are ``floor(fraction * class_size)``; when the fractions
    sum to one the test set absorbs the remainder. ``train_per_class`` fixes
    the train count per class instead; val then takes ``floor(val_fraction *
    class_size)`` and test gets everything left.
    """
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or sum(fr) > 1 + 1e-9:
        raise ValidationError(f"fractions must be 3 nonnegative values summing to <= 1, got {fractions}")
    rng = np.random.default_rng(seed)
    groups = [np.arange(g.n)] if g.labels is None else [
        np.flatnonzero(g.labels == c) for c in range(g.num_classes)
    ]
    full = abs(sum(fr) - 1.0) < 1e-9
    train, val, test = [], [], []
    for c, members in enumerate(groups):
        if len(members) == 0:
            continue
        members = rng.permutation(members)
        m = len(members)
        if train_per_class is not None:
            n_tr = int(train_per_class)
            if n_tr > m:
                raise ValidationError(f"class {c} has {m} members, fewer than {n_tr} requested for train")
            n_va = min(math.floor(fr[1] * m + 1e-9), m - n_tr)
            n_te = m - n_tr - n_va
        else:
            n_tr = math.floor(fr[0] * m + 1e-9)
            n_va = math.floor(fr[1] * m + 1e-9)
            n_te = m - n_tr - n_va if full else math.floor(fr[2] * m + 1e-9)
            if fr[0] > 0 and n_tr == 0:
                raise ValidationError(f"class {c} has {m} members, too few for train fraction {fr[0]}")
        train.append(members[:n_tr])
        val.append(members[n_tr:n_tr + n_va])
        test.append(members[n_tr + n_va:n_tr + n_va + n_te])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    return NodeSplit(cat(train), cat(val), cat(test))


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
