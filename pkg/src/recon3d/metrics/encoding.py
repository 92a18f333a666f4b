"""Linear encoding-model analysis: ridge maps from latents to signal pixels,
per-pixel correlation on held-out data, and ROI contrast of the correlation map."""
from __future__ import annotations

import numpy as np


def ridge_fit(x, y, lam: float) -> np.ndarray:
    """argmin_W ||XW - Y||^2 + lam ||W||^2 in closed form (no intercept)."""
    if lam < 0:
        raise ValueError("ridge penalty must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1 or len(y) != len(x):
        raise ValueError("need X (B, D) and Y (B, P) with B >= 1")
    d = x.shape[1]
    if lam == 0:
        return np.linalg.lstsq(x, y, rcond=None)[0]
    if d <= len(x):
        return np.linalg.solve(x.T @ x + lam * np.eye(d), x.T @ y)
    # dual form is cheaper when there are fewer samples than features
    return x.T @ np.linalg.solve(x @ x.T + lam * np.eye(len(x)), y)


def pearson_map(pred, actual) -> np.ndarray:
    """Per-column Pearson r over rows; columns with zero variance give 0."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.ndim != 2:
        raise ValueError("pred and actual must be equal (B, P) arrays")
    if len(pred) < 2:
        raise ValueError("need at least 2 rows")
    pc = pred - pred.mean(0)
    ac = actual - actual.mean(0)
    den = np.sqrt((pc ** 2).sum(0) * (ac ** 2).sum(0))
    num = (pc * ac).sum(0)
    ok = den > 1e-12 * np.maximum(1.0, np.abs(num))
    r = np.zeros(pred.shape[1])
    r[ok] = num[ok] / den[ok]
    return np.clip(r, -1.0, 1.0)


def roi_contrast(r_map, roi_mask) -> tuple[float, float]:
    r = np.asarray(r_map, dtype=np.float64)
    mask = np.asarray(roi_mask, dtype=bool)
    if r.shape != mask.shape:
        raise ValueError(f"map {r.shape} and mask {mask.shape} differ in shape")
    if not mask.any() or mask.all():
        raise ValueError("ROI mask and its complement must both be non-empty")
    return float(r[mask].mean()), float(r[~mask].mean())
