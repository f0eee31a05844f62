"""Constant-curvature geometry and orthogonal-frame projections.

A single stereographic chart family covers hyperbolic (kappa < 0), flat
(kappa = 0), and spherical (kappa > 0) spaces: points are coordinate rows,
Mobius addition is the group operation, and exp/log maps anchored at the
origin move between the chart and its tangent space. All curvature maps are
built from tape primitives, so they are differentiable end to end.

The frame half of the module projects matrices onto orthonormal columns
(QR) or onto the subspace they span (thin SVD), with deterministic sign
conventions, and supplies the soft orthogonality penalty applied to final
representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import numerics as nm
from .errors import DimensionError, DomainError, RankError, SingularityError
from .numerics import Tensor

DOMAIN_MARGIN = 1e-5
# fraction of pi/2 allowed for spherical tangent norms before exp0
SPHERICAL_TANGENT_CAP = 0.45
# fraction of the ball radius allowed for hyperbolic tangent norms
BALL_TANGENT_CAP = 0.85


def ball_radius(kappa: float) -> float:
    """Radius of the open ball for kappa < 0; inf otherwise."""
    return 1.0 / np.sqrt(-kappa) if kappa < 0 else np.inf


def tangent_cap(kappa: float) -> float:
    """Largest tangent-row norm the encoders feed into exp0."""
    if kappa < 0:
        return BALL_TANGENT_CAP * ball_radius(kappa)
    if kappa > 0:
        return SPHERICAL_TANGENT_CAP * np.pi / np.sqrt(kappa)
    return np.inf


@dataclass(frozen=True)
class ManifoldPoint:
    """A coordinate row tied to the curvature of its chart."""

    kappa: float
    coords: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=np.float64).reshape(1, -1)
        object.__setattr__(self, "coords", arr)
        check_domain(self.kappa, arr)


def check_domain(kappa: float, x: np.ndarray):
    """Raise DomainError unless every row of x lies in the kappa chart."""
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite coordinates")
    if kappa < 0:
        norms = np.linalg.norm(x, axis=-1)
        if np.any(norms >= ball_radius(kappa)):
            raise DomainError(
                f"point norm {norms.max():.6g} outside open ball of radius "
                f"{ball_radius(kappa):.6g} (kappa={kappa})")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# curvature maps (rows = points / tangent rows)


def exp0(kappa: float, v) -> Tensor:
    """Exponential map at the origin: tangent rows -> chart points."""
    v = _as_tensor(v)
    if kappa == 0.0:
        return v
    sk = np.sqrt(abs(kappa))
    u = nm.mul(nm.norm_rows(v), sk)
    if kappa > 0 and np.any(u.data >= np.pi / 2):
        raise DomainError(
            f"spherical tangent norm {u.data.max():.6g} >= pi/2 (kappa={kappa})")
    ratio = nm.tanh_ratio(u) if kappa < 0 else nm.tan_ratio(u)
    return nm.mul(v, ratio)


def log0(kappa: float, x) -> Tensor:
    """Logarithmic map at the origin: chart points -> tangent rows."""
    x = _as_tensor(x)
    if kappa == 0.0:
        return x
    sk = np.sqrt(abs(kappa))
    u = nm.mul(nm.norm_rows(x), sk)
    if kappa < 0 and np.any(u.data >= 1.0):
        raise DomainError(
            f"point norm {u.data.max() / sk:.6g} outside ball (kappa={kappa})")
    ratio = nm.arctanh_ratio(u) if kappa < 0 else nm.arctan_ratio(u)
    return nm.mul(x, ratio)


def mobius_add(kappa: float, x, y) -> Tensor:
    """Curvature addition x (+)_kappa y; plain addition when kappa = 0."""
    x, y = _as_tensor(x), _as_tensor(y)
    if kappa == 0.0:
        return nm.add(x, y)
    x2 = nm.sum_rows(nm.square(x))
    y2 = nm.sum_rows(nm.square(y))
    xy = nm.sum_rows(nm.mul(x, y))
    cx = nm.add(nm.mul(xy, -2.0 * kappa), nm.mul(y2, -kappa))
    num = nm.add(nm.mul(x, nm.add(cx, 1.0)), nm.mul(y, nm.add(nm.mul(x2, kappa), 1.0)))
    den = nm.add(nm.add(nm.mul(xy, -2.0 * kappa), nm.mul(nm.mul(x2, y2), kappa * kappa)), 1.0)
    if np.any(np.abs(den.data) < 1e-15):
        raise SingularityError("Mobius denominator vanished (antipodal points)")
    return nm.div(num, den)


def dist(kappa: float, x, y) -> Tensor:
    """Geodesic distance between paired rows of x and y, shape (n, 1).

    The flat case uses 2*||x - y||, the kappa -> 0 limit of the curved
    formula, so distances vary continuously across the curvature sweep.
    """
    x, y = _as_tensor(x), _as_tensor(y)
    if kappa == 0.0:
        return nm.mul(nm.norm_rows(nm.sub(x, y)), 2.0)
    sk = np.sqrt(abs(kappa))
    m = mobius_add(kappa, nm.neg(x), y)
    u = nm.mul(nm.norm_rows(m), sk)
    if kappa < 0:
        # chart invariant keeps u < 1; clamp guards roundoff at the boundary
        inner = nm.arctanh(nm.minimum(u, 1.0 - 1e-15))
    else:
        inner = nm.arctan(u)
    return nm.mul(inner, 2.0 / sk)


def conformal_factor(kappa: float, x: np.ndarray) -> np.ndarray:
    """lambda_x = 2 / (1 + kappa ||x||^2) for each row, shape (n, 1)."""
    x = np.asarray(x, dtype=np.float64)
    sq = (x * x).sum(axis=-1, keepdims=True)
    return 2.0 / (1.0 + kappa * sq)


def project_to_domain(kappa: float, x: np.ndarray, margin: float = DOMAIN_MARGIN) -> np.ndarray:
    """Pull rows of x back inside the kappa < 0 ball; identity otherwise."""
    if not 0.0 < margin < 1.0:
        raise DomainError(f"margin must be in (0,1), got {margin}")
    x = np.asarray(x, dtype=np.float64)
    if kappa >= 0:
        return x.copy()
    limit = (1.0 - margin) * ball_radius(kappa)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norms >= limit, limit / np.maximum(norms, 1e-300), 1.0)
    return x * scale


def clip_tangent_rows(kappa: float, v) -> Tensor:
    """Rescale tangent rows whose norm exceeds the per-curvature cap."""
    v = _as_tensor(v)
    cap = tangent_cap(kappa)
    if not np.isfinite(cap):
        return v
    n = nm.maximum(nm.norm_rows(v), 1e-30)
    scale = nm.minimum(nm.div(Tensor(np.array([[cap]])), n), 1.0)
    return nm.mul(v, scale)


# ---------------------------------------------------------------------------
# orthogonal frames


@dataclass(frozen=True)
class StiefelMatrix:
    """An n x k matrix with orthonormal columns."""

    mat: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < m.shape[1]:
            raise DimensionError(f"Stiefel matrix needs rows >= cols, got {m.shape}")
        gram_err = np.linalg.norm(m.T @ m - np.eye(m.shape[1]))
        if gram_err >= 1e-8:
            raise DomainError(f"columns not orthonormal, ||Q^T Q - I|| = {gram_err:.3g}")
        object.__setattr__(self, "mat", m)

    @property
    def n(self):
        return self.mat.shape[0]

    @property
    def k(self):
        return self.mat.shape[1]


@dataclass(frozen=True)
class GrassmannRep:
    """A subspace represented by an orthonormal basis; identity is U U^T."""

    basis: StiefelMatrix

    def projector(self) -> np.ndarray:
        u = self.basis.mat
        return u @ u.T


def _qr_orthonormal(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with diag(R) > 0; raises RankError on deficient columns."""
    q, r = np.linalg.qr(m)
    d = np.diag(r)
    if np.any(np.abs(d) < 1e-12):
        raise RankError(f"rank-deficient input, min |R_ii| = {np.abs(d).min():.3g}")
    s = np.sign(d)
    return q * s, r * s[:, None]


def _svd_basis(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD with each right singular vector's first nonzero entry > 0."""
    u, sv, vt = np.linalg.svd(m, full_matrices=False)
    if sv[-1] < 1e-12:
        raise RankError(f"rank-deficient input, sigma_min = {sv[-1]:.3g}")
    flips = np.ones(vt.shape[0])
    for i, row in enumerate(vt):
        nz = row[np.abs(row) > 1e-12]
        if nz.size and nz[0] < 0:
            flips[i] = -1.0
    return u * flips, sv, vt * flips[:, None]


def stiefel_project(m: np.ndarray) -> StiefelMatrix:
    """Orthonormalize columns via QR, keeping the span and column order."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] < m.shape[1]:
        raise DimensionError(f"need rows >= cols, got {m.shape}")
    q, _ = _qr_orthonormal(m)
    return StiefelMatrix(q)


def grassmann_project(m: np.ndarray) -> GrassmannRep:
    """Represent span(m) by the left singular basis of its thin SVD."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] < m.shape[1]:
        raise DimensionError(f"need rows >= cols, got {m.shape}")
    u, _, _ = _svd_basis(m)
    return GrassmannRep(StiefelMatrix(u))


def orth_penalty(y, lam: float) -> Tensor:
    """lam * ||Y^T Y - I||_F^2, differentiable through the tape."""
    if lam < 0:
        raise DomainError(f"penalty coefficient must be >= 0, got {lam}")
    y = _as_tensor(y)
    k = y.data.shape[1]
    gram = nm.matmul(nm.transpose(y), y)
    return nm.mul(nm.frobenius_sq(nm.sub(gram, np.eye(k))), lam)


def orth_residual(y: np.ndarray) -> float:
    """||Y^T Y - I||_F as a plain float (training diagnostics)."""
    y = np.asarray(y, dtype=np.float64)
    return float(np.linalg.norm(y.T @ y - np.eye(y.shape[1])))


def stiefel_retract(x: StiefelMatrix, g: np.ndarray, step: float) -> StiefelMatrix:
    """Move along the tangent projection of -g and re-orthonormalize."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != x.mat.shape:
        raise DimensionError(f"gradient shape {g.shape} != point shape {x.mat.shape}")
    a = x.mat.T @ g
    tangent = g - x.mat @ ((a + a.T) / 2.0)
    return stiefel_project(x.mat - step * tangent)


# ---------------------------------------------------------------------------
# differentiable projections for the attention branch


def qr_q_tape(a: Tensor, exact_grad: bool) -> Tensor:
    """Tape node for the QR orthonormal factor of `a`.

    With exact_grad the backward pass uses the analytic QR adjoint
    (R-bar = 0 since only Q is consumed); otherwise the projection is
    treated as the identity (straight-through), the default for training
    where the soft penalty carries the orthogonality pressure.
    """
    q, r = _qr_orthonormal(a.data)
    if not exact_grad:
        return nm.straight_through(a, q)

    def vjp(gq):
        m = -gq.T @ q
        sym = np.tril(m) + np.tril(m, -1).T  # copy lower triangle to upper
        return (solve_triangular(r, (gq + q @ sym).T, lower=False).T,)

    return Tensor(q, (a,), vjp)


def svd_u_tape(a: Tensor, exact_grad: bool) -> Tensor:
    """Tape node for the thin-SVD left factor of `a` (see qr_q_tape)."""
    u, sv, vt = _svd_basis(a.data)
    if not exact_grad:
        return nm.straight_through(a, u)

    def vjp(gu):
        s2 = sv * sv
        diff = s2[None, :] - s2[:, None]
        with np.errstate(divide="ignore"):
            f = np.where(np.eye(len(sv), dtype=bool), 0.0, 1.0 / diff)
        utgu = u.T @ gu
        term1 = u @ ((f * (utgu - utgu.T)) * sv[None, :]) @ vt
        term2 = (gu - u @ utgu) / sv[None, :] @ vt
        return (term1 + term2,)

    return Tensor(u, (a,), vjp)
