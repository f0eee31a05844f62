"""Curvature-tagged mixture-of-experts node embeddings.

Each expert encodes the graph into its own constant-curvature space; a
topology-aware gate routes nodes softly across experts. Pairwise distances
between nodes are measured per expert and blended with aligned weights so
they stay comparable across heterogeneous charts. The auxiliary losses
(gating entropy, expert regularizer, link reconstruction) keep routing
sharp, weights bounded, and geometry faithful to the graph.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import manifolds, numerics as nm
from .errors import ContractError, DimensionError
from .graphdata import Graph, NormalizedAdjacency, induced_subgraph
from .numerics import Tensor

DESCRIPTOR_DIM = 4
FERMI_DIRAC_RADIUS = 2.0
FERMI_DIRAC_TEMPERATURE = 1.0


@dataclass
class ExpertConfig:
    """One Riemannian expert: encoder weights plus a manifold bias point."""

    expert_id: int
    kappa: float
    w: Tensor  # (d, d_e) encoder weights
    b: Tensor  # (1, d_e) bias point in the expert's chart


@dataclass
class ExpertEmbedding:
    expert_id: int
    kappa: float
    points: Tensor  # (N, d_e), rows in the expert's chart


# ---------------------------------------------------------------------------
# topology descriptors and local subgraphs


def topology_descriptor(g: Graph, v: int) -> np.ndarray:
    """Four local-shape features of node v.

    [log(1+degree), clustering coefficient, log(1+mean neighbor degree),
     two-hop expansion |N2| / (1 + |N1|)]. Trees expand and stay
    triangle-free; cliques saturate and close triangles, so these four
    separate the regimes the curvature experts specialize in.
    """
    if not 0 <= v < g.num_nodes:
        raise ContractError(f"node {v} out of range")
    nbrs = g.neighbors(v)
    deg = nbrs.size
    if deg == 0:
        return np.zeros(DESCRIPTOR_DIM)
    nbr_set = set(int(u) for u in nbrs)
    tri = 0
    for u in nbrs:
        tri += sum(1 for w in g.neighbors(u) if int(w) in nbr_set)
    tri //= 2
    clustering = 2.0 * tri / (deg * (deg - 1)) if deg >= 2 else 0.0
    mean_nbr_deg = float(np.mean([g.neighbors(u).size for u in nbrs]))
    two_hop = set()
    for u in nbrs:
        two_hop.update(int(w) for w in g.neighbors(u))
    two_hop -= nbr_set
    two_hop.discard(v)
    expansion = len(two_hop) / (1.0 + deg)
    return np.array([np.log1p(deg), clustering, np.log1p(mean_nbr_deg), expansion])


def sample_local_subgraph(g: Graph, v: int, hops: int, cap: int, seed: int) -> np.ndarray:
    """BFS ball around v, capped to `cap` nodes by seeded uniform sampling.

    Deterministic per (seed, v) regardless of call order; v is always kept.
    """
    if hops < 0 or cap < 1:
        raise ContractError(f"need hops >= 0 and cap >= 1, got {hops}, {cap}")
    seen = {v}
    frontier = deque([(v, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == hops:
            continue
        for u in g.neighbors(node):
            u = int(u)
            if u not in seen:
                seen.add(u)
                frontier.append((u, depth + 1))
    ball = np.array(sorted(seen), dtype=np.int64)
    if ball.size > cap:
        others = ball[ball != v]
        rng = np.random.default_rng([seed, v])
        keep = rng.choice(others, size=cap - 1, replace=False)
        ball = np.array(sorted(np.append(keep, v)), dtype=np.int64)
    return ball


def descriptor_matrix(g: Graph, hops: int = 2, cap: int = 64, seed: int = 0) -> np.ndarray:
    """Per-node descriptors computed on each node's sampled local subgraph."""
    out = np.zeros((g.num_nodes, DESCRIPTOR_DIM))
    for v in range(g.num_nodes):
        ball = sample_local_subgraph(g, v, hops, cap, seed)
        sub, nodes = induced_subgraph(g, ball)
        local = int(np.searchsorted(nodes, v))
        out[v] = topology_descriptor(sub, local)
    return out


# ---------------------------------------------------------------------------
# gating and expert embeddings


def gating_forward(descriptors, theta_g) -> Tensor:
    """Row-softmax routing weights W = softmax(D theta_g), shape (N, K)."""
    d = descriptors if isinstance(descriptors, Tensor) else Tensor(descriptors)
    return nm.softmax_rows(nm.matmul(d, theta_g))


def expert_embed(expert: ExpertConfig, adj: NormalizedAdjacency, x) -> ExpertEmbedding:
    """One-layer graph convolution mapped into the expert's chart.

    h = tanh(A_hat X W_e), rows clipped to the curvature's tangent cap,
    then z = b (+)_kappa exp0(kappa, h). Clipping keeps every point inside
    the domain, so no domain errors can escape.
    """
    if sp.issparse(x):
        hw = nm.spmm(x, expert.w)
    else:
        hw = nm.matmul(x if isinstance(x, Tensor) else Tensor(x), expert.w)
    h = nm.tanh(nm.spmm(adj.matrix, hw))
    tangent = manifolds.clip_tangent_rows(expert.kappa, h)
    z = manifolds.mobius_add(expert.kappa, expert.b, manifolds.exp0(expert.kappa, tangent))
    return ExpertEmbedding(expert.expert_id, expert.kappa, z)


def fuse_tangent(gate_weights, embeddings) -> Tensor:
    """Gated combination of expert outputs in the shared origin tangent space.

    Accumulation runs in expert_id order, so permuting the experts together
    with the gate columns reproduces the output bit for bit.
    """
    w = gate_weights if isinstance(gate_weights, Tensor) else Tensor(gate_weights)
    if w.data.shape[1] != len(embeddings):
        raise DimensionError(
            f"{len(embeddings)} embeddings for {w.data.shape[1]} gate columns")
    order = sorted(range(len(embeddings)), key=lambda i: embeddings[i].expert_id)
    total = None
    for i in order:
        emb = embeddings[i]
        term = nm.mul(nm.slice_cols(w, i, i + 1), manifolds.log0(emb.kappa, emb.points))
        total = term if total is None else nm.add(total, term)
    return total


# ---------------------------------------------------------------------------
# aligned pairwise distances


def aligned_pair_weights_batch(gate_weights, us, vs) -> Tensor:
    """Normalized geometric mean of the two endpoints' gate rows, (P, K)."""
    w = gate_weights if isinstance(gate_weights, Tensor) else Tensor(gate_weights)
    wu = nm.gather_rows(w, us)
    wv = nm.gather_rows(w, vs)
    geo = nm.sqrt(nm.mul(wu, wv))
    return nm.div(geo, nm.sum_rows(geo))


def aligned_pair_weights(gate_weights, u: int, v: int) -> np.ndarray:
    """Aligned expert weights for one node pair, as a length-K vector."""
    out = aligned_pair_weights_batch(gate_weights, np.array([u]), np.array([v]))
    return out.data[0].copy()


def pair_distance_sq_batch(us, vs, gate_weights, embeddings) -> Tensor:
    """Aligned squared distances for paired nodes, shape (P, 1).

    d2(u,v) = sum_e w_(u,v),e * dist_kappa_e(z_u^e, z_v^e)^2
    """
    us = np.asarray(us, dtype=np.int64)
    vs = np.asarray(vs, dtype=np.int64)
    aligned = aligned_pair_weights_batch(gate_weights, us, vs)
    cols = []
    for emb in embeddings:
        zu = nm.gather_rows(emb.points, us)
        zv = nm.gather_rows(emb.points, vs)
        cols.append(nm.square(manifolds.dist(emb.kappa, zu, zv)))
    return nm.sum_rows(nm.mul(aligned, nm.hstack(cols)))


def pair_distance_sq(u: int, v: int, gate_weights, embeddings) -> float:
    out = pair_distance_sq_batch(np.array([u]), np.array([v]), gate_weights, embeddings)
    return float(out.data[0, 0])


# ---------------------------------------------------------------------------
# mixture losses


def gating_entropy(gate_weights) -> Tensor:
    """Mean per-node entropy of the routing weights (scalar tensor)."""
    w = gate_weights if isinstance(gate_weights, Tensor) else Tensor(gate_weights)
    n = w.data.shape[0]
    ent = nm.neg(nm.sum_all(nm.mul(w, nm.log(nm.add(w, 1e-12)))))
    return nm.mul(ent, 1.0 / n)


def expert_regularizer(experts) -> Tensor:
    """Sum of encoder Frobenius norms and bias tangent norms (scalar)."""
    total = None
    for e in experts:
        term = nm.add(nm.frobenius_sq(e.w),
                      nm.sum_all(nm.square(manifolds.log0(e.kappa, e.b))))
        total = term if total is None else nm.add(total, term)
    if total is None:
        raise ContractError("expert_regularizer needs at least one expert")
    return total


def sample_negative_pairs(g: Graph, neg_ratio: int, seed: int) -> np.ndarray:
    """Seeded non-edge pairs, neg_ratio per stored edge, shape (M, 2)."""
    if neg_ratio < 1:
        raise ContractError(f"neg_ratio must be >= 1, got {neg_ratio}")
    n = g.num_nodes
    edge_keys = set()
    for u in range(n):
        for v in g.neighbors(u):
            edge_keys.add(u * n + int(v))
    needed = g.num_edges * neg_ratio
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < needed:
        cand = rng.integers(0, n, size=(max(64, 2 * (needed - len(out))), 2))
        for u, v in cand:
            if u == v or int(u) * n + int(v) in edge_keys:
                continue
            out.append((int(u), int(v)))
            if len(out) == needed:
                break
    return np.array(out, dtype=np.int64)


def link_reconstruction_loss(g: Graph, gate_weights, embeddings,
                             neg_ratio: int = 5, seed: int = 0) -> Tensor:
    """Fermi-Dirac edge decoder BCE over edges plus sampled non-edges.

    p(edge) = 1 / (1 + exp((d2(u,v) - r) / t)) with r = 2, t = 1. Positives
    are all stored edges (each once); negatives are seeded uniform non-edge
    pairs, neg_ratio per edge.
    """
    pos = np.array([(u, int(v)) for u in range(g.num_nodes)
                    for v in g.neighbors(u) if u < v], dtype=np.int64)
    if pos.size == 0:
        raise ContractError("graph has no edges to reconstruct")
    neg = sample_negative_pairs(g, neg_ratio, seed)
    d2_pos = pair_distance_sq_batch(pos[:, 0], pos[:, 1], gate_weights, embeddings)
    d2_neg = pair_distance_sq_batch(neg[:, 0], neg[:, 1], gate_weights, embeddings)
    # logit of p(edge); BCE via softplus keeps extremes finite
    z_pos = nm.mul(nm.sub(d2_pos, FERMI_DIRAC_RADIUS), -1.0 / FERMI_DIRAC_TEMPERATURE)
    z_neg = nm.mul(nm.sub(d2_neg, FERMI_DIRAC_RADIUS), -1.0 / FERMI_DIRAC_TEMPERATURE)
    loss_pos = nm.sum_all(nm.softplus(nm.neg(z_pos)))
    loss_neg = nm.sum_all(nm.softplus(z_neg))
    count = float(len(pos) + len(neg))
    return nm.mul(nm.add(loss_pos, loss_neg), 1.0 / count)
