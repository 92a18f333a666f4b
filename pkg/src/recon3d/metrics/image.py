"""Image-space metrics: SSIM and a perceptual distance over frozen encoder activations."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

C1 = 0.01 ** 2
C2 = 0.03 ** 2


class ShapeError(ValueError):
    pass


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # correlate over the full image, then keep the positions where the window fits
    half = win.shape[0] // 2
    out = ndimage.correlate(img, win, mode="constant")
    return out[half:img.shape[0] - half, half:img.shape[1] - half]


def ssim(a, b) -> float:
    """Mean SSIM over all fully contained 11x11 Gaussian (sigma 1.5) windows,
    for images with values in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"ssim needs two images of equal 2-D shape, got {a.shape} and {b.shape}")
    if min(a.shape) < 11:
        raise ShapeError("images must be at least 11x11")
    win = _gaussian_window()
    mu_a, mu_b = _filter_valid(a, win), _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a ** 2
    var_b = _filter_valid(b * b, win) - mu_b ** 2
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


@torch.no_grad()
def perceptual_distance(encoder, a, b) -> float:
    """LPIPS-style distance: per-layer activations of a frozen encoder are
    normalized per token over channels, squared differences are summed over
    channels and averaged over tokens, and the layer values are averaged."""
    ta = torch.as_tensor(np.asarray(a), dtype=torch.float32)
    tb = torch.as_tensor(np.asarray(b), dtype=torch.float32)
    if ta.shape != tb.shape:
        raise ShapeError(f"perceptual_distance needs equal shapes, got {tuple(ta.shape)} and {tuple(tb.shape)}")
    batch = ta.dim() == 3
    # separate passes with identical batch shapes keep the result exactly symmetric
    _, la = encoder(ta.reshape(-1, *ta.shape[-2:]), return_layers=True)
    _, lb = encoder(tb.reshape(-1, *tb.shape[-2:]), return_layers=True)
    total = torch.zeros(len(la[0]), dtype=torch.float64)
    for ha, hb in zip(la, lb):
        ha, hb = F.normalize(ha.double(), dim=-1), F.normalize(hb.double(), dim=-1)
        total += ((ha - hb) ** 2).sum(-1).mean(-1)
    d = total / len(la)
    return d.numpy() if batch else float(d[0])
