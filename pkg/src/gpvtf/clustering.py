"""Clustering mathematics: k-means, Student-t soft assignment, target sharpening,
latent fusion and the fused KL self-training loss with its gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClusterError, DimensionError, ParameterError
from .numeric import as_matrix
from .rng import make_rng


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    history: list[float]

    def __iter__(self):
        # allows ``centers, labels = kmeans(...)``
        return iter((self.centers, self.labels))


def sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = ((points - centers[0]) ** 2).sum(1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers[c] = points[idx]
        closest = np.minimum(closest, ((points - centers[c]) ** 2).sum(1))
    return centers


def _lloyd(points, centers, max_iter):
    history = []
    d2 = sq_distances(points, centers)
    labels = d2.argmin(1)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    history.append(inertia)
    for _ in range(max_iter):
        new = centers.copy()
        min_d = d2[np.arange(len(points)), labels]
        taken = np.zeros(len(points), bool)
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                new[j] = points[members].mean(0)
            else:
                # re-seed an empty cluster at the point currently worst served
                far = np.where(taken, -1.0, min_d).argmax()
                taken[far] = True
                new[j] = points[far]
        d2 = sq_distances(points, new)
        new_labels = d2.argmin(1)
        inertia = float(d2[np.arange(len(points)), new_labels].sum())
        history.append(inertia)
        converged = np.array_equal(new_labels, labels) and np.allclose(new, centers)
        centers, labels = new, new_labels
        if converged:
            break
    return centers, labels, inertia, history


def kmeans(points, k: int, max_iter: int = 300, seed: int = 0, n_init: int = 1) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` restarts by inertia."""
    points = as_matrix(points)
    n = points.shape[0]
    if k < 1 or n < k:
        raise ParameterError(f"need 1 <= k <= n, got k={k}, n={n}")
    best = None
    for restart in range(max(1, n_init)):
        rng = make_rng(seed, "kmeans", restart)
        result = KMeansResult(*_lloyd(points, _kmeans_pp(points, k, rng), max_iter))
        if best is None or result.inertia < best.inertia:
            best = result
    return best


# ---------------------------------------------------------------------------
# soft assignment and target distribution


def _kernel(d2, gamma):
    return (1.0 + d2 / gamma) ** (-(gamma + 1.0) / 2.0)


def soft_assign(z, centers, gamma: float = 1.0) -> np.ndarray:
    """Student-t similarity of each row of ``z`` to each center, normalized per row."""
    z, centers = as_matrix(z), as_matrix(centers)
    if z.shape[1] != centers.shape[1]:
        raise DimensionError(f"latents {z.shape} and centers {centers.shape} differ in dimension")
    if gamma <= 0:
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    d2 = sq_distances(z, centers)
    # a common factor per row cancels in the normalization; dividing by the
    # row maximum keeps far-away rows from underflowing to 0/0
    log_u = -(gamma + 1.0) / 2.0 * np.log1p(d2 / gamma)
    u = np.exp(log_u - log_u.max(1, keepdims=True))
    return u / u.sum(1, keepdims=True)


def soft_assign_backward(z, centers, q, gamma: float, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Chain dL/dQ back to the latents and the centers."""
    z, centers = as_matrix(z), as_matrix(centers)
    g = upstream * q                                   # dL/dlog q
    g_log_u = g - q * g.sum(1, keepdims=True)          # through the row normalization
    diff = z[:, None, :] - centers[None, :, :]
    d2 = np.einsum("nkd,nkd->nk", diff, diff)
    g_d2 = g_log_u * (-(gamma + 1.0) / 2.0) / (gamma + d2)
    coef = 2.0 * g_d2[:, :, None] * diff
    return coef.sum(1), -coef.sum(0)


def target_distribution(q) -> np.ndarray:
    """Sharpen Q: square, divide by cluster frequency, renormalize each row."""
    q = as_matrix(q)
    freq = q.sum(0)
    if np.any(freq <= 0):
        raise DegenerateClusterError(f"clusters {np.flatnonzero(freq <= 0).tolist()} have zero total assignment")
    w = q**2 / freq
    return w / w.sum(1, keepdims=True)


def reestimate_centers(z, q, hard: bool = False, previous=None) -> np.ndarray:
    """Weighted mean of the latents for each cluster.

    Weights are the soft assignments ``q`` or, with ``hard``, their row-wise
    argmax indicators. A hard cluster with no members keeps its ``previous``
    center.
    """
    z, q = as_matrix(z), as_matrix(q)
    if hard:
        w = np.zeros_like(q)
        w[np.arange(q.shape[0]), q.argmax(1)] = 1.0
    else:
        w = q
    mass = w.sum(0)
    if hard and previous is not None:
        out = np.array(previous, dtype=np.float64, copy=True)
        filled = mass > 0
        out[filled] = (w[:, filled].T @ z) / mass[filled, None]
        return out
    if np.any(mass <= 0):
        raise DegenerateClusterError("a cluster has zero total assignment")
    return (w.T @ z) / mass[:, None]


# ---------------------------------------------------------------------------
# fusion


@dataclass(frozen=True)
class FusionWeights:
    alpha: float = 0.2
    phi1: float = 0.01
    phi2: float = 0.01
    beta: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("phi1", "phi2", "beta"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")


def fuse(z1, z2, fakes=None, weights: FusionWeights = FusionWeights()) -> np.ndarray:
    """(1 - alpha) z1 + alpha z2, plus phi-weighted generated latents when given."""
    z1, z2 = as_matrix(z1), as_matrix(z2)
    if z1.shape != z2.shape:
        raise DimensionError(f"cannot fuse latents of shapes {z1.shape} and {z2.shape}")
    out = (1.0 - weights.alpha) * z1 + weights.alpha * z2
    if fakes is not None:
        f1, f2 = (as_matrix(f) for f in fakes)
        if f1.shape != z1.shape or f2.shape != z1.shape:
            raise DimensionError(f"generated latents {f1.shape}, {f2.shape} do not match {z1.shape}")
        out = out + weights.phi1 * f1 + weights.phi2 * f2
    return out


# ---------------------------------------------------------------------------
# KL self-training loss


def kl_divergence(p, q) -> tuple[float, np.ndarray]:
    """sum p log(p/q) and its gradient with respect to q (p held fixed)."""
    p, q = as_matrix(p), as_matrix(q)
    if p.shape != q.shape:
        raise DimensionError(f"P {p.shape} and Q {q.shape} differ")
    if p.size == 0:
        return 0.0, np.zeros_like(q)
    safe_p = np.where(p > 0, p, 1.0)
    loss = float(np.sum(np.where(p > 0, p * (np.log(safe_p) - np.log(q)), 0.0)))
    # nonnegative in exact arithmetic; clip the ~1e-16 rounding below zero
    return max(loss, 0.0), -p / q


def kl_loss(p, q, p3, q3, beta: float) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(P||Q) + beta KL(P3||Q3); returns the loss and dL/dQ, dL/dQ3."""
    l_own, g_own = kl_divergence(p, q)
    l_fused, g_fused = kl_divergence(p3, q3)
    return l_own + beta * l_fused, g_own, beta * g_fused


def kl_latent_grad(z, centers, p, gamma: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(P||Q(z, centers)) with gradients for ``z`` and ``centers``."""
    q = soft_assign(z, centers, gamma)
    loss, g_q = kl_divergence(p, q)
    g_z, g_c = soft_assign_backward(z, centers, q, gamma, g_q)
    return loss, g_z, g_c
