"""Feature-bridge diffusion: an epsilon-predicting transformer that maps the
brain latent c_f to a vision latent by ancestral DDPM sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import FbdmConfig
from .layers import Block, init_weights, sinusoidal_embedding
from .nfe import LatentFeature, latent


@dataclass(frozen=True)
class DiffusionSchedule:
    """Index 0 is the data (beta_0 = 0, alpha_bar_0 = 1); steps run 1..T."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas) - 1


def make_schedule(T: int = 100, beta_min: float | None = None, beta_max: float | None = None) -> DiffusionSchedule:
    """Linear betas. Default endpoints rescale the canonical 1000-step
    (1e-4, 0.02) schedule by 1000/T so the total injected noise is preserved."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if beta_min is None:
        beta_min = 1e-4 * 1000 / T
    if beta_max is None:
        beta_max = min(0.02 * 1000 / T, 0.999)
    if not (0 < beta_min < 1 and 0 < beta_max < 1):
        raise ValueError("betas must lie in (0, 1)")
    if T > 1 and not beta_min < beta_max:
        raise ValueError("beta_min must be smaller than beta_max")
    betas = np.concatenate([[0.0], np.linspace(beta_min, beta_max, T)]) if T > 1 else np.array([0.0, beta_min])
    alphas = 1.0 - betas
    return DiffusionSchedule(betas, alphas, np.cumprod(alphas))


def _gather(arr: np.ndarray, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    vals = torch.as_tensor(arr, dtype=like.dtype)[t]
    return vals.view(-1, *([1] * (like.dim() - 1))) if t.dim() else vals


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` is an int or a (B,) tensor."""
    if eps.shape != x0.shape:
        raise ValueError("eps must match x0 in shape")
    t = torch.as_tensor(t, dtype=torch.long)
    if bool((t < 1).any()) or bool((t > schedule.T).any()):
        raise ValueError(f"t must lie in [1, {schedule.T}]")
    ab = _gather(schedule.alpha_bars, t, x0)
    return ab.sqrt() * x0 + (1 - ab).sqrt() * eps


class Denoiser(nn.Module):
    """Token layout: [time (1), c_f (L_c), x_t (L_c), learnable (L_c)];
    the transformer output is read from the learnable tokens only.

    That output is a correction on top of sqrt(1 - abar_t) x_t, the best
    linear noise estimate for unit-variance data. Without the skip term the
    network shrinks its estimate slightly, and ancestral sampling amplifies
    that bias by up to 1 / sqrt(abar_T)."""

    def __init__(self, cfg: FbdmConfig, latent_len: int, latent_dim: int):
        super().__init__()
        self.cfg = cfg
        self.latent_len = latent_len
        self.latent_dim = latent_dim
        w = cfg.width
        self.time_proj = nn.Linear(w, w)
        self.cond_proj = nn.Linear(latent_dim, w)
        self.x_proj = nn.Linear(latent_dim, w)
        self.learned = nn.Parameter(torch.randn(1, latent_len, w) * 0.02)
        self.pos = nn.Parameter(torch.randn(1, 1 + 3 * latent_len, w) * 0.02)
        self.blocks = nn.ModuleList(Block(w, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(w)
        self.out = nn.Linear(w, latent_dim)
        init_weights(self)
        sched = make_schedule(cfg.timesteps, cfg.beta_min or None, cfg.beta_max or None)
        self.register_buffer("skip", torch.as_tensor(np.sqrt(1.0 - sched.alpha_bars), dtype=torch.float32),
                             persistent=False)

    @property
    def n_tokens(self) -> int:
        return 1 + 3 * self.latent_len

    def forward(self, x_t: torch.Tensor, t, c_f: torch.Tensor) -> torch.Tensor:
        shape = (self.latent_len, self.latent_dim)
        if x_t.shape[-2:] != shape or c_f.shape[-2:] != shape:
            raise ValueError(f"expected (..., {shape[0]}, {shape[1]}) inputs, got "
                             f"{tuple(x_t.shape)} and {tuple(c_f.shape)}")
        squeeze = x_t.dim() == 2
        if squeeze:
            x_t, c_f = x_t.unsqueeze(0), c_f.unsqueeze(0)
        b = len(x_t)
        t = torch.as_tensor(t, dtype=torch.long).expand(b) if torch.as_tensor(t).dim() == 0 else torch.as_tensor(t)
        temb = self.time_proj(sinusoidal_embedding(t, self.cfg.width).to(x_t.dtype)).unsqueeze(1)
        tokens = torch.cat([temb, self.cond_proj(c_f), self.x_proj(x_t),
                            self.learned.expand(b, -1, -1).to(x_t.dtype)], dim=1)
        h = tokens + self.pos.to(x_t.dtype)
        for blk in self.blocks:
            h = blk(h)
        eps = self.out(self.norm(h[:, -self.latent_len:])) + self.skip[t].to(x_t.dtype).view(b, 1, 1) * x_t
        return eps[0] if squeeze else eps


def predict_eps(model, x_t, t, c_f):
    return model(x_t, t, c_f)


def fbdm_loss(model, x0: torch.Tensor, c_f: torch.Tensor, schedule: DiffusionSchedule,
              generator: torch.Generator | None = None) -> torch.Tensor:
    """E || eps - eps_hat(x_t, t, c_f) ||^2 with t ~ U{1..T} per item."""
    if len(x0) == 0:
        raise ValueError("empty batch")
    t = torch.randint(1, schedule.T + 1, (len(x0),), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, schedule)
    return F.mse_loss(model(x_t, t, c_f), eps)


def _normal(shape, gens, dtype):
    if isinstance(gens, list):
        return torch.stack([torch.randn(shape[1:], generator=g, dtype=dtype) for g in gens])
    return torch.randn(shape, generator=gens, dtype=dtype)


@torch.no_grad()
def ddpm_sample(model, c_f: torch.Tensor, schedule: DiffusionSchedule, seed=0,
                shape: tuple[int, ...] | None = None, stochastic: bool = True) -> LatentFeature:
    """Ancestral sampling from x_T ~ N(0, I) with sigma_t^2 = beta_t.

    ``seed`` may be a list with one seed per batch item, which makes every
    item's sample independent of how the batch is composed.
    ``stochastic=False`` drops the injected noise (the mean path)."""
    shape = tuple(c_f.shape) if shape is None else shape
    if isinstance(seed, (list, tuple)):
        if len(seed) != shape[0]:
            raise ValueError("need one seed per batch item")
        gens = [torch.Generator().manual_seed(int(s)) for s in seed]
    else:
        gens = torch.Generator().manual_seed(int(seed))
    x = _normal(shape, gens, c_f.dtype)
    for t in range(schedule.T, 0, -1):
        beta, alpha, ab = schedule.betas[t], schedule.alphas[t], schedule.alpha_bars[t]
        eps = model(x, t, c_f)
        x = (x - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(alpha)
        if stochastic and t > 1:
            x = x + np.sqrt(beta) * _normal(shape, gens, c_f.dtype)
    return latent(x, "c_v_hat")
