"""Compute blocks of the hybrid backbone.

A lightweight GCN branch captures local structure, a single-layer linear
attention module captures global structure, and the two streams are fused
by a weighted sum. The query/key matrices can optionally be projected onto
orthonormal frames (QR) or onto their column span (thin SVD) before the
attention kernel is applied.
"""

from __future__ import annotations

import numpy as np

from . import manifolds, numerics as nm
from .errors import BatchSizeError, ContractError, DimensionError
from .graphdata import NormalizedAdjacency
from .numerics import Tensor

VARIANTS = ("base", "stiefel", "grassmann", "rmoe")


def gcn_forward(adj: NormalizedAdjacency, h, weights) -> Tensor:
    """Stacked graph convolutions; ReLU between layers, last layer linear."""
    if not weights:
        raise DimensionError("gcn_forward needs at least one weight matrix")
    out = h if isinstance(h, Tensor) else Tensor(h)
    for i, w in enumerate(weights):
        out = nm.spmm(adj.matrix, nm.matmul(out, w))
        if i < len(weights) - 1:
            out = nm.relu(out)
    return out


def qk_transform(variant: str, q, k, exact_grad: bool = False) -> tuple[Tensor, Tensor]:
    """Optionally orthogonalize the query/key activations.

    base and rmoe pass through unchanged; stiefel keeps the QR Q factors;
    grassmann keeps the thin-SVD U factors. Projections need at least as
    many rows (nodes in the batch) as columns.
    """
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant '{variant}'")
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    if variant in ("base", "rmoe"):
        return q, k
    n, d = q.data.shape
    if n < d:
        raise BatchSizeError(
            f"projection needs batch size >= width, got {n} rows for {d} columns")
    if variant == "stiefel":
        return (manifolds.qr_q_tape(q, exact_grad),
                manifolds.qr_q_tape(k, exact_grad))
    return (manifolds.svd_u_tape(q, exact_grad),
            manifolds.svd_u_tape(k, exact_grad))


def linear_attention(q, k, v, beta: float) -> Tensor:
    """All-pair attention with the (1 + cosine) kernel, in factored form.

    Rows of q and k are L2-normalized; the output mixes each node's own
    value with the kernel-weighted average of all values:

        attn_i = (sum_j v_j + qh_i (Kh^T V)) / (N + qh_i sum_j kh_j)
        out_i  = beta * v_i + (1 - beta) * attn_i

    The factored evaluation is O(N d^2) yet equals the quadratic-cost
    definition sum_j (1 + qh_i.kh_j) v_j / sum_j (1 + qh_i.kh_j) exactly.
    """
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must be in [0,1], got {beta}")
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if q.data.shape != k.data.shape or q.data.shape[0] != v.data.shape[0]:
        raise DimensionError(
            f"attention shapes disagree: {q.data.shape}, {k.data.shape}, {v.data.shape}")
    n = q.data.shape[0]
    qh = nm.normalize_rows(q)
    kh = nm.normalize_rows(k)
    vsum = nm.sum_cols(v)                                   # (1, d)
    ksum = nm.sum_cols(kh)                                  # (1, dh)
    ktv = nm.matmul(nm.transpose(kh), v)                    # (dh, d)
    numer = nm.add(nm.matmul(qh, ktv), vsum)                # (n, d)
    denom = nm.add(nm.matmul(qh, nm.transpose(ksum)), float(n))  # (n, 1)
    attn = nm.div(numer, denom)
    return nm.add(nm.mul(v, beta), nm.mul(attn, 1.0 - beta))


def quadratic_attention_oracle(q, k, v, beta: float) -> np.ndarray:
    """O(N^2) reference implementation used to validate the factored form."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qh = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    kh = k / np.maximum(np.linalg.norm(k, axis=1, keepdims=True), 1e-12)
    kernel = 1.0 + qh @ kh.T
    attn = (kernel @ v) / kernel.sum(axis=1, keepdims=True)
    return beta * v + (1.0 - beta) * attn


def ensemble_combine(z_gnn, z_attn, alpha: float) -> Tensor:
    """Weighted sum of the GCN and attention streams: alpha Z + (1-alpha) Z0."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must be in [0,1], got {alpha}")
    z_gnn = z_gnn if isinstance(z_gnn, Tensor) else Tensor(z_gnn)
    z_attn = z_attn if isinstance(z_attn, Tensor) else Tensor(z_attn)
    if z_gnn.data.shape != z_attn.data.shape:
        raise DimensionError(
            f"ensemble shapes differ: {z_gnn.data.shape} vs {z_attn.data.shape}")
    return nm.add(nm.mul(z_gnn, alpha), nm.mul(z_attn, 1.0 - alpha))
