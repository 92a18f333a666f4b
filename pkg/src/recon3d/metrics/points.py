"""Point-cloud metrics: Chamfer, earth mover's (exact and Sinkhorn) and
Frechet point-cloud distance over a fixed random point-feature network.

Scalings follow the reporting convention: CD and EMD x100, FPD x0.1.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.special import logsumexp

CD_SCALE = 100.0
EMD_SCALE = 100.0
FPD_SCALE = 0.1
EXACT_EMD_MAX = 1024


class NumericalError(ArithmeticError):
    pass


def _cloud(p, name="P") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {p.shape}")
    if len(p) == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(p).all():
        raise ValueError(f"{name} has non-finite coordinates")
    return p


def chamfer(p, q, scale: float = CD_SCALE) -> float:
    """Mean squared nearest distance P->Q plus Q->P."""
    p, q = _cloud(p), _cloud(q, "Q")
    d_pq, _ = cKDTree(q).query(p)
    d_qp, _ = cKDTree(p).query(q)
    return float((np.mean(d_pq ** 2) + np.mean(d_qp ** 2)) * scale)


def _pair(p, q):
    p, q = _cloud(p), _cloud(q, "Q")
    if len(p) != len(q):
        raise ValueError(f"EMD needs equal sizes, got {len(p)} and {len(q)}")
    return p, q


def _cost(p, q) -> np.ndarray:
    return np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(-1))


def emd_exact(p, q, scale: float = EMD_SCALE) -> float:
    """Mean matched Euclidean distance of the minimum-cost perfect matching."""
    p, q = _pair(p, q)
    if len(p) > EXACT_EMD_MAX:
        raise ValueError(f"exact EMD supports at most {EXACT_EMD_MAX} points")
    cost = _cost(p, q)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean() * scale)


def emd_sinkhorn(p, q, eps: float = 0.01, max_iter: int = 500, tol: float = 1e-7,
                 scale: float = EMD_SCALE) -> float:
    """Entropic optimal transport between uniform clouds, log-domain.

    ``eps`` is relative to the mean pairwise cost. Returns the transport cost
    of the regularized plan (entropy term excluded)."""
    p, q = _pair(p, q)
    n = len(p)
    cost = _cost(p, q)
    unit = cost.mean()
    if unit == 0:
        return 0.0
    c = cost / unit
    log_w = -np.log(n)
    f = np.zeros(n)
    g = np.zeros(n)
    # epsilon scaling: anneal from a coarse regularization down to eps with warm starts
    schedule = []
    e = 1.0
    while e > eps:
        schedule += [e] * 5
        e /= 2
    schedule = schedule[: max_iter // 2] + [eps] * (max_iter - min(len(schedule), max_iter // 2))
    for e in schedule:
        f = -e * logsumexp((g[None, :] - c) / e + log_w, axis=1)
        g = -e * logsumexp((f[:, None] - c) / e + log_w, axis=0)
        if e > eps:
            continue
        log_plan = (f[:, None] + g[None, :] - c) / e + 2 * log_w
        # after the g update the columns are exact; check the rows
        if np.abs(np.exp(logsumexp(log_plan, axis=1)) - 1.0 / n).sum() < tol:
            break
    plan = np.exp(log_plan)
    return float((plan * cost).sum() * scale)


def nearest_mean(p, q) -> float:
    """Mean distance from each point of P to its nearest point in Q (unscaled)."""
    d, _ = cKDTree(_cloud(q, "Q")).query(_cloud(p))
    return float(d.mean())


class PointFeatureNet:
    """Untrained, seeded point network: a shared 3-layer per-point MLP whose
    layer outputs are max-pooled and concatenated into one feature vector."""

    def __init__(self, widths=(64, 128, 256), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.layers = []
        d = 3
        for w in widths:
            self.layers.append((rng.standard_normal((d, w)) * np.sqrt(2.0 / d), rng.standard_normal(w) * 0.1))
            d = w
        self.dim = sum(widths)

    def point_features(self, points) -> np.ndarray:
        h = _cloud(points)
        feats = []
        for w, b in self.layers:
            h = np.maximum(h @ w + b, 0.0)
            feats.append(h)
        return np.concatenate(feats, axis=1)

    def __call__(self, points) -> np.ndarray:
        return self.point_features(points).max(axis=0)


def sqrtm_psd_product(a: np.ndarray, b: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Square root of A @ B for PSD A, B: sqrt(A) B sqrt(A) is symmetric PSD, so
    Tr sqrt(AB) = Tr sqrt(sqrt(A) B sqrt(A)), computed by eigendecomposition."""
    wa, va = np.linalg.eigh((a + a.T) / 2)
    scale = max(1.0, float(np.abs(wa).max()))
    if wa.min() < -tol * scale:
        raise NumericalError(f"covariance is not PSD (min eigenvalue {wa.min():.3g})")
    ra = (va * np.sqrt(np.clip(wa, 0, None))) @ va.T
    m = ra @ b @ ra
    w, v = np.linalg.eigh((m + m.T) / 2)
    if w.min() < -tol * max(1.0, float(np.abs(w).max())):
        raise NumericalError(f"product is not PSD after symmetrization (min eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu_a, sigma_a, mu_b, sigma_b) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), unscaled."""
    mu_a, mu_b = np.asarray(mu_a, float), np.asarray(mu_b, float)
    sigma_a, sigma_b = np.atleast_2d(sigma_a).astype(float), np.atleast_2d(sigma_b).astype(float)
    covmean = sqrtm_psd_product(sigma_a, sigma_b)
    d = float(((mu_a - mu_b) ** 2).sum() + np.trace(sigma_a) + np.trace(sigma_b) - 2 * np.trace(covmean))
    return max(d, 0.0)


def fpd(features_a, features_b, scale: float = FPD_SCALE) -> float:
    """Frechet distance between Gaussian fits of two feature sets (rows = samples)."""
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ValueError("feature sets must be 2-D with matching width")
    if len(fa) < 2 or len(fb) < 2:
        raise ValueError("FPD needs at least 2 samples per set")
    return scale * frechet_distance(fa.mean(0), np.cov(fa, rowvar=False), fb.mean(0), np.cov(fb, rowvar=False))


def object_fpd(net: PointFeatureNet, p, q, scale: float = FPD_SCALE) -> float:
    """Per-object FPD: Gaussian fits of the per-point features of two clouds."""
    return fpd(net.point_features(p), net.point_features(q), scale)
