"""Graph storage, dataset I/O, synthetic generators, splits, and metrics.

Graphs are undirected and stored in CSR form (offsets + targets, both
directions present, no self-loops, no duplicates). Features are a dense
float64 matrix, labels are integers with -1 marking unlabeled nodes.

Dataset directory format (all indices 0-based):
    meta.json     {"num_nodes": N, "num_features": d, "num_classes": C}
    edges.tsv     one "u<TAB>v" line per edge
    features.csv  N lines of d comma-separated floats
    labels.tsv    N lines, integer in [-1, C)
    splits.json   {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ContractError, DataError, SplitError


@dataclass
class Graph:
    num_nodes: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        for arr in (self.csr_offsets, self.csr_targets, self.features, self.labels):
            arr.flags.writeable = False

    def neighbors(self, v: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[v]:self.csr_offsets[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    @property
    def num_edges(self) -> int:
        """Undirected edge count (each edge stored twice)."""
        return self.csr_targets.size // 2

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.csr_targets.size)
        return sp.csr_matrix((data, self.csr_targets, self.csr_offsets),
                             shape=(self.num_nodes, self.num_nodes))


@dataclass
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for arr in (self.train, self.val, self.test):
            arr.flags.writeable = False


@dataclass
class NormalizedAdjacency:
    """D^-1/2 (A + I) D^-1/2 in CSR form."""

    matrix: sp.csr_matrix

    @property
    def csr_offsets(self):
        return self.matrix.indptr

    @property
    def csr_targets(self):
        return self.matrix.indices

    @property
    def values(self):
        return self.matrix.data


@dataclass
class Metrics:
    accuracy: float
    weighted_f1: float
    macro_f1: float
    per_class_f1: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "per_class_f1": [float(v) for v in self.per_class_f1],
        }


# ---------------------------------------------------------------------------
# construction helpers


def _csr_from_edges(num_nodes: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric-closed, deduplicated CSR arrays from an edge list."""
    if edges.size == 0:
        return np.zeros(num_nodes + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    both = np.concatenate([edges, edges[:, ::-1]])
    both = both[both[:, 0] != both[:, 1]]  # drop self-loops
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    keep = np.ones(len(both), dtype=bool)
    keep[1:] = np.any(both[1:] != both[:-1], axis=1)
    both = both[keep]
    counts = np.bincount(both[:, 0], minlength=num_nodes)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, both[:, 1].astype(np.int64)


def build_graph(num_nodes: int, edges, features, labels, num_classes: int) -> Graph:
    """Validate raw arrays and assemble an immutable Graph."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != num_nodes:
        raise DataError(f"feature rows {features.shape[0]} != num_nodes {num_nodes}")
    if labels.shape != (num_nodes,):
        raise DataError(f"labels length {labels.shape} != num_nodes {num_nodes}")
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise DataError("edge endpoint out of range")
    if np.any(labels < -1) or np.any(labels >= num_classes):
        raise DataError(f"label outside [-1, {num_classes})")
    offsets, targets = _csr_from_edges(num_nodes, edges)
    return Graph(num_nodes, offsets, targets, features, labels, num_classes)


# ---------------------------------------------------------------------------
# dataset directory I/O


def _require(path: str) -> str:
    if not os.path.isfile(path):
        raise DataError(f"missing dataset file: {path}")
    return path


def load_graph(directory: str) -> tuple[Graph, SplitMasks]:
    """Load a dataset directory in the documented format."""
    meta_path = _require(os.path.join(directory, "meta.json"))
    with open(meta_path) as fh:
        meta = json.load(fh)
    try:
        n = int(meta["num_nodes"])
        d = int(meta["num_features"])
        c = int(meta["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed meta.json: {exc}") from exc

    edges_path = _require(os.path.join(directory, "edges.tsv"))
    raw = np.loadtxt(edges_path, dtype=np.int64, delimiter="\t", ndmin=2)
    edges = raw.reshape(-1, 2) if raw.size else np.zeros((0, 2), dtype=np.int64)

    feat_path = _require(os.path.join(directory, "features.csv"))
    features = np.loadtxt(feat_path, dtype=np.float64, delimiter=",", ndmin=2)
    if features.shape != (n, d):
        raise DataError(f"features.csv shape {features.shape} != ({n}, {d})")

    labels_path = _require(os.path.join(directory, "labels.tsv"))
    labels = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
    if labels.shape != (n,):
        raise DataError(f"labels.tsv row count {labels.shape[0]} != {n}")

    graph = build_graph(n, edges, features, labels, c)

    splits_path = _require(os.path.join(directory, "splits.json"))
    with open(splits_path) as fh:
        splits = json.load(fh)
    masks = {}
    for part in ("train", "val", "test"):
        if part not in splits:
            raise DataError(f"splits.json missing '{part}'")
        idx = np.asarray(splits[part], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DataError(f"splits.json '{part}' index out of range")
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
        if np.any(labels[mask] < 0):
            raise DataError(f"splits.json '{part}' selects unlabeled nodes")
        masks[part] = mask
    if np.any(masks["train"] & masks["val"]) or np.any(masks["train"] & masks["test"]) \
            or np.any(masks["val"] & masks["test"]):
        raise DataError("splits.json masks overlap")
    return graph, SplitMasks(masks["train"], masks["val"], masks["test"])


def save_dataset(directory: str, g: Graph, masks: SplitMasks):
    """Write a Graph (+ splits) in the documented directory format."""
    os.makedirs(directory, exist_ok=True)
    meta = {"num_nodes": g.num_nodes, "num_features": g.features.shape[1],
            "num_classes": g.num_classes}
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "edges.tsv"), "w") as fh:
        for u in range(g.num_nodes):
            for v in g.neighbors(u):
                if u < v:  # one line per undirected edge
                    fh.write(f"{u}\t{v}\n")
    with open(os.path.join(directory, "features.csv"), "w") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row))
            fh.write("\n")
    with open(os.path.join(directory, "labels.tsv"), "w") as fh:
        for lab in g.labels:
            fh.write(f"{lab}\n")
    splits = {part: np.flatnonzero(getattr(masks, part)).tolist()
              for part in ("train", "val", "test")}
    with open(os.path.join(directory, "splits.json"), "w") as fh:
        json.dump(splits, fh, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# normalization


def normalize_adjacency(g: Graph) -> NormalizedAdjacency:
    """Symmetric GCN normalization with self-loops: D^-1/2 (A+I) D^-1/2."""
    a = g.adjacency() + sp.identity(g.num_nodes, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d_half = sp.diags(inv_sqrt)
    return NormalizedAdjacency((d_half @ a @ d_half).tocsr())


# ---------------------------------------------------------------------------
# synthetic generators


def generate_synthetic(kind: str, params: dict, seed: int) -> tuple[Graph, SplitMasks]:
    """Deterministic synthetic benchmark graphs: tree, sbm, or clique_ring."""
    rng = np.random.default_rng(seed)
    if kind == "tree":
        g = _gen_tree(params, rng)
    elif kind == "sbm":
        g = _gen_sbm(params, rng)
    elif kind == "clique_ring":
        g = _gen_clique_ring(params, rng)
    else:
        raise ConfigError(f"unknown synthetic kind '{kind}'")
    masks = split_nodes(g, (0.6, 0.2, 0.2), seed)
    return g, masks


def _param(params: dict, key: str, default=None):
    if key in params:
        return params[key]
    if default is None:
        raise ConfigError(f"missing parameter '{key}'")
    return default


def _gen_tree(params: dict, rng) -> Graph:
    b = int(_param(params, "branching"))
    h = int(_param(params, "depth"))
    noise = float(_param(params, "noise", 0.1))
    if b < 2 or h < 1:
        raise ConfigError(f"tree needs branching >= 2 and depth >= 1, got b={b} h={h}")
    n = (b ** (h + 1) - 1) // (b - 1)
    depth = np.zeros(n, dtype=np.int64)
    edges = []
    for v in range(1, n):
        parent = (v - 1) // b
        depth[v] = depth[parent] + 1
        edges.append((parent, v))
    feats = np.zeros((n, h + 1))
    feats[np.arange(n), depth] = 1.0
    feats += noise * rng.standard_normal(feats.shape)
    return build_graph(n, np.array(edges), feats, depth, h + 1)


def _gen_sbm(params: dict, rng) -> Graph:
    sizes = [int(s) for s in _param(params, "block_sizes")]
    p_in = float(_param(params, "p_in"))
    p_out = float(_param(params, "p_out"))
    dim = int(_param(params, "feature_dim", 8))
    sep = float(_param(params, "separation", 1.0))
    if min(sizes) < 1 or not (0 <= p_out <= p_in <= 1):
        raise ConfigError("sbm needs positive blocks and 0 <= p_out <= p_in <= 1")
    n = sum(sizes)
    block = np.repeat(np.arange(len(sizes)), sizes)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(block[iu] == block[ju], p_in, p_out)
    mask = rng.random(len(iu)) < prob
    edges = np.stack([iu[mask], ju[mask]], axis=1)
    means = sep * rng.standard_normal((len(sizes), dim))
    feats = means[block] + rng.standard_normal((n, dim))
    return build_graph(n, edges, feats, block, len(sizes))


def _gen_clique_ring(params: dict, rng) -> Graph:
    c = int(_param(params, "clique_size"))
    m = int(_param(params, "count"))
    dim = int(_param(params, "feature_dim", 8))
    sep = float(_param(params, "separation", 1.0))
    if c < 3 or m < 3:
        raise ConfigError(f"clique_ring needs clique_size >= 3 and count >= 3, got {c}, {m}")
    n = c * m
    labels = np.repeat(np.arange(m), c)
    edges = []
    for q in range(m):
        base = q * c
        for i in range(c):
            for j in range(i + 1, c):
                edges.append((base + i, base + j))
        edges.append((base, ((q + 1) % m) * c))
    means = sep * rng.standard_normal((m, dim))
    feats = means[labels] + rng.standard_normal((n, dim))
    return build_graph(n, np.array(edges), feats, labels, m)


# ---------------------------------------------------------------------------
# splits and metrics


def split_nodes(g: Graph, fractions, seed: int) -> SplitMasks:
    """Stratified train/val/test masks over labeled nodes."""
    f_train, f_val, f_test = (float(f) for f in fractions)
    if min(f_train, f_val, f_test) <= 0 or f_train + f_val + f_test > 1 + 1e-9:
        raise ConfigError(f"bad split fractions {fractions}")
    rng = np.random.default_rng(seed)
    train = np.zeros(g.num_nodes, dtype=bool)
    val = np.zeros(g.num_nodes, dtype=bool)
    test = np.zeros(g.num_nodes, dtype=bool)
    for cls in np.unique(g.labels[g.labels >= 0]):
        idx = np.flatnonzero(g.labels == cls)
        if idx.size < 3:
            raise SplitError(f"class {cls} has only {idx.size} labeled nodes")
        idx = rng.permutation(idx)
        n_tr = max(1, int(round(f_train * idx.size)))
        n_va = max(1, int(round(f_val * idx.size)))
        n_tr = min(n_tr, idx.size - 2)
        n_va = min(n_va, idx.size - n_tr - 1)
        train[idx[:n_tr]] = True
        val[idx[n_tr:n_tr + n_va]] = True
        n_te = int(round(f_test * idx.size))
        n_te = min(max(1, n_te), idx.size - n_tr - n_va)
        test[idx[n_tr + n_va:n_tr + n_va + n_te]] = True
    return SplitMasks(train, val, test)


def compute_metrics(pred, labels, mask) -> Metrics:
    """Accuracy plus weighted and macro F1 over the masked nodes.

    Macro-F1 averages only classes present in the masked ground truth, so
    splits missing a class do not dilute the score.
    """
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("compute_metrics: empty mask")
    y_true = labels[mask]
    y_pred = pred[mask]
    num_classes = int(max(labels.max(), pred.max())) + 1
    accuracy = float((y_true == y_pred).mean())
    per_class = np.zeros(num_classes)
    present = np.unique(y_true)
    support = np.zeros(num_classes)
    for cls in present:
        tp = np.sum((y_pred == cls) & (y_true == cls))
        fp = np.sum((y_pred == cls) & (y_true != cls))
        fn = np.sum((y_pred != cls) & (y_true == cls))
        denom = 2 * tp + fp + fn
        per_class[cls] = 2 * tp / denom if denom > 0 else 0.0
        support[cls] = np.sum(y_true == cls)
    macro = float(per_class[present].mean())
    weighted = float((per_class * support).sum() / support.sum())
    return Metrics(accuracy, weighted, macro, per_class)


# ---------------------------------------------------------------------------
# subgraphs


def induced_subgraph(g: Graph, nodes: np.ndarray) -> tuple[Graph, np.ndarray]:
    """Subgraph on `nodes` with relabeled indices; returns (graph, nodes)."""
    nodes = np.asarray(sorted(set(int(v) for v in nodes)), dtype=np.int64)
    remap = -np.ones(g.num_nodes, dtype=np.int64)
    remap[nodes] = np.arange(nodes.size)
    edges = []
    for new_u, u in enumerate(nodes):
        for v in g.neighbors(u):
            if remap[v] >= 0 and u < v:
                edges.append((new_u, remap[v]))
    edges = np.array(edges, dtype=np.int64) if edges else np.zeros((0, 2), dtype=np.int64)
    sub = build_graph(nodes.size, edges, g.features[nodes].copy(),
                      g.labels[nodes].copy(), g.num_classes)
    return sub, nodes
