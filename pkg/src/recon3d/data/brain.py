"""Synthetic per-subject brain responses to rotating-object videos.

Each subject owns a fixed linear map from pooled view features to a 2-D signal
image. The map is concentrated inside a subject-specific visual ROI; outside
the ROI the frames are dominated by stimulus-independent background activity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .render import ViewSet

ROI_ENERGY_TARGET = 0.85


@dataclass
class BrainForwardModel:
    subject_id: str
    seed: int
    roi_mask: np.ndarray  # (S, S) bool
    projection: np.ndarray = field(repr=False)  # (n_features, S*S) float32
    resting: np.ndarray = field(repr=False)  # (S*S,) float32
    feature_grid: int = 16
    smoothing: float = 2.0
    noise_std: float = 2.0
    background_std: float = 0.6
    lag: int = 2
    pool_width: int = 3

    @property
    def size(self) -> int:
        return self.roi_mask.shape[0]

    def roi_energy_fraction(self) -> float:
        w2 = self.projection.astype(np.float64) ** 2
        inside = w2[:, self.roi_mask.ravel()].sum()
        return float(inside / w2.sum())


@dataclass
class FmriTrial:
    frames: np.ndarray  # (n_frames, S, S) float32, each frame z-scored
    subject_id: str = ""
    object_id: str = ""
    split: str = ""
    session: int = 0


def _smooth_fields(rng, n, size, coarse=64, sigma=3.0) -> np.ndarray:
    f = rng.standard_normal((n, coarse, coarse))
    f = ndimage.gaussian_filter(f, sigma=(0, sigma, sigma), mode="wrap")
    f /= f.std(axis=(1, 2), keepdims=True)
    if size != coarse:
        f = ndimage.zoom(f, (1, size / coarse, size / coarse), order=1)
    return f.astype(np.float32)


def _roi_mask(rng, size) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(2, 4))):
        cy, cx = rng.uniform(0.25, 0.75, 2)
        ay, ax = rng.uniform(0.1, 0.2, 2)
        th = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        mask |= (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
    return mask


def make_subject(subject_id: str, seed: int, *, size: int = 256, feature_grid: int = 16,
                 smoothing: float = 2.0, noise_std: float = 2.0, background_std: float = 0.6,
                 lag: int = 2, pool_width: int = 3, leak: float = 0.15) -> BrainForwardModel:
    rng = np.random.default_rng([seed, 0xB2A1])
    mask = _roi_mask(rng, size)
    n_feat = feature_grid ** 2
    proj = _smooth_fields(rng, n_feat, size).reshape(n_feat, -1)
    flat_mask = mask.ravel()
    proj[:, ~flat_mask] *= leak
    inside = float((proj[:, flat_mask].astype(np.float64) ** 2).sum())
    outside = float((proj[:, ~flat_mask].astype(np.float64) ** 2).sum())
    if inside / (inside + outside) < ROI_ENERGY_TARGET:
        proj[:, ~flat_mask] *= np.sqrt(inside * (1 - ROI_ENERGY_TARGET) / (ROI_ENERGY_TARGET * outside))
    proj /= np.sqrt(0.008 * n_feat)
    resting = _smooth_fields(rng, 1, size)[0].ravel()
    return BrainForwardModel(subject_id, seed, mask, proj.astype(np.float32), resting,
                             feature_grid, smoothing, noise_std, background_std, lag, pool_width)


def view_features(views: ViewSet | np.ndarray, grid: int = 16) -> np.ndarray:
    images = views.images if isinstance(views, ViewSet) else np.asarray(views)
    k, h, w = images.shape
    blocks = images.reshape(k, grid, h // grid, grid, w // grid)
    return blocks.mean(axis=(2, 4)).reshape(k, grid * grid)


def pooling_windows(n_views: int, n_frames: int, lag: int, pool_width: int) -> list[np.ndarray]:
    """View indices whose responses reach each frame after the hemodynamic lag."""
    onset = np.arange(n_views) * (n_frames / n_views)
    out = []
    for f in range(n_frames):
        lo, hi = f - lag - pool_width + 1, f - lag + 1
        out.append(np.flatnonzero((onset >= lo) & (onset < hi)))
    return out


def stimulus_response(views: ViewSet | np.ndarray, subject: BrainForwardModel, n_frames: int = 10) -> np.ndarray:
    """Noise-free, unsmoothed, stimulus-driven part of each frame, (n_frames, S*S)."""
    feats = view_features(views, subject.feature_grid)
    pooled = np.zeros((n_frames, feats.shape[1]), dtype=np.float32)
    for f, idx in enumerate(pooling_windows(len(feats), n_frames, subject.lag, subject.pool_width)):
        if len(idx):
            pooled[f] = feats[idx].mean(axis=0)
    return pooled @ subject.projection


def zscore_frames(frames: np.ndarray) -> np.ndarray:
    flat = frames.reshape(len(frames), -1).astype(np.float64)
    mu = flat.mean(axis=1, keepdims=True)
    sd = flat.std(axis=1, keepdims=True)
    sd[sd < 1e-12] = 1.0
    return ((flat - mu) / sd).reshape(frames.shape).astype(np.float32)


def simulate_fmri(views: ViewSet, subject: BrainForwardModel, seed: int = 0, n_frames: int = 10,
                  noise_std: float | None = None) -> FmriTrial:
    if len(views) == 0:
        raise ValueError("views must be nonempty")
    s = subject.size
    noise_std = subject.noise_std if noise_std is None else noise_std
    rng = np.random.default_rng([subject.seed, seed, 0xF3])
    signal = stimulus_response(views, subject, n_frames)
    signal += 0.3 * subject.resting
    if subject.background_std > 0:
        base = _smooth_fields(rng, 1, s, sigma=4.0)[0].ravel()
        drift = _smooth_fields(rng, n_frames, s, sigma=4.0).reshape(n_frames, -1)
        signal += subject.background_std * (0.8 * base + 0.6 * drift)
    if noise_std > 0:
        signal += noise_std * rng.standard_normal(signal.shape).astype(np.float32)
    frames = signal.reshape(n_frames, s, s)
    if subject.smoothing > 0:
        frames = ndimage.gaussian_filter(frames, sigma=(0, subject.smoothing, subject.smoothing))
    return FmriTrial(zscore_frames(frames), subject.subject_id)
