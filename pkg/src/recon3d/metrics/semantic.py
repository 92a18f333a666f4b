"""N-way top-k identification accuracy over image features."""
from __future__ import annotations

import numpy as np


def _cos(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a / max(np.linalg.norm(a), 1e-12)
    b = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), 1e-12)
    return b @ a


def nway_topk(recon_feature, gt_feature, distractor_pool, n: int = 2, k: int = 1, trials: int = 100,
              seed: int = 0) -> float:
    """Fraction of trials in which the ground truth ranks in the top ``k`` of
    itself plus ``n - 1`` distractors drawn without replacement from the pool,
    by cosine similarity to the reconstruction. Ties count in favor of the GT."""
    recon = np.asarray(recon_feature, dtype=np.float64)
    gt = np.asarray(gt_feature, dtype=np.float64)
    pool = np.asarray(distractor_pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[1] != recon.shape[-1] or gt.shape != recon.shape:
        raise ValueError("features must share one width")
    if n < 2 or not 1 <= k <= n:
        raise ValueError("need n >= 2 and 1 <= k <= n")
    if len(pool) < n - 1:
        raise ValueError(f"distractor pool of {len(pool)} is too small for {n}-way")
    rng = np.random.default_rng(seed)
    s_gt = _cos(recon, gt[None])[0]
    s_pool = _cos(recon, pool)
    hits = 0
    for _ in range(trials):
        idx = rng.choice(len(pool), size=n - 1, replace=False)
        # rank of the GT = 1 + number of distractors strictly more similar
        hits += int((s_pool[idx] > s_gt).sum() < k)
    return hits / trials


def nway_accuracy(recon_features, gt_features, n: int, k: int = 1, trials: int = 100, seed: int = 0) -> np.ndarray:
    """Per-object accuracy; distractors for object i are the other GT features."""
    recon = np.asarray(recon_features, dtype=np.float64)
    gt = np.asarray(gt_features, dtype=np.float64)
    out = np.empty(len(recon))
    for i in range(len(recon)):
        pool = np.delete(gt, i, axis=0)
        out[i] = nway_topk(recon[i], gt[i], pool, n, k, trials, seed + i)
    return out
