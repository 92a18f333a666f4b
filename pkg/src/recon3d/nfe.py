"""Neuro-fusion encoder: per-frame signal encoder, temporal aggregation,
the frozen vision encoder that defines the target space, and the contrastive
alignment loss between the two."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import NfeConfig
from .layers import Block, PatchEmbed, init_weights


class FmriEmbedding(NamedTuple):
    tokens: torch.Tensor  # (B, frames, tokens_per_frame, embed_dim)
    cls: torch.Tensor  # (B, frames, embed_dim)


class LatentFeature(NamedTuple):
    tokens: torch.Tensor  # (..., L_c, D_c)
    pooled: torch.Tensor  # (..., D_c), mean of tokens
    role: str  # "c_f" | "c_v" | "c_v_hat"


def latent(tokens: torch.Tensor, role: str) -> LatentFeature:
    return LatentFeature(tokens, tokens.mean(dim=-2), role)


class FrameEncoder(nn.Module):
    """ViT over each frame independently; frames are folded into the batch."""

    def __init__(self, cfg: NfeConfig):
        super().__init__()
        self.cfg = cfg
        self.patch = PatchEmbed(cfg.frame_size, cfg.patch_size, cfg.embed_dim)
        n = self.patch.grid ** 2
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.pos = nn.Parameter(torch.randn(1, n + 1, cfg.embed_dim) * 0.02)
        self.blocks = nn.ModuleList(Block(cfg.embed_dim, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.embed_dim)
        init_weights(self)

    @property
    def tokens_per_frame(self) -> int:
        return self.patch.grid ** 2

    def forward(self, frames: torch.Tensor) -> FmriEmbedding:
        if frames.dim() == 3:
            frames = frames.unsqueeze(0)
        b, f, h, w = frames.shape
        if f != self.cfg.n_frames or h != self.cfg.frame_size or w != self.cfg.frame_size:
            raise ValueError(f"expected (B, {self.cfg.n_frames}, {self.cfg.frame_size}, "
                             f"{self.cfg.frame_size}) frames, got {tuple(frames.shape)}")
        if not torch.isfinite(frames).all():
            raise ValueError("frames contain non-finite values")
        x = self.patch(frames.reshape(b * f, h, w))
        x = torch.cat([self.cls_token.expand(len(x), -1, -1), x], dim=1) + self.pos
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x).view(b, f, -1, self.cfg.embed_dim)
        return FmriEmbedding(x[:, :, 1:], x[:, :, 0])


class FeatureAggregator(nn.Module):
    """Order-aware fusion of per-frame summaries into L_c latent tokens:
    temporal position embeddings, a small transformer, then cross-attention
    from learned queries."""

    def __init__(self, cfg: NfeConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_dim
        self.inp = nn.Linear(cfg.embed_dim, d)
        self.time_pos = nn.Parameter(torch.randn(1, cfg.n_frames, d) * 0.02)
        self.blocks = nn.ModuleList(Block(d, cfg.fa_heads) for _ in range(cfg.fa_depth))
        self.queries = nn.Parameter(torch.randn(1, cfg.latent_len, d) * 0.02)
        self.q_norm = nn.LayerNorm(d)
        self.kv_norm = nn.LayerNorm(d)
        self.cross = nn.MultiheadAttention(d, cfg.fa_heads, batch_first=True)
        self.out_norm = nn.LayerNorm(d)
        init_weights(self)
        # a randomly initialized aggregator must already depend on frame order
        nn.init.normal_(self.time_pos, std=0.5)

    def forward(self, emb: FmriEmbedding) -> LatentFeature:
        cls = emb.cls
        if cls.shape[1] != self.cfg.n_frames:
            raise ValueError(f"expected {self.cfg.n_frames} frames, got {cls.shape[1]}")
        x = self.inp(cls) + self.time_pos
        for blk in self.blocks:
            x = blk(x)
        kv = self.kv_norm(x)
        q = self.q_norm(self.queries.expand(len(x), -1, -1))
        out, _ = self.cross(q, kv, kv, need_weights=False)
        return latent(self.out_norm(out + self.queries), "c_f")


class NeuroFusionEncoder(nn.Module):
    def __init__(self, cfg: NfeConfig):
        super().__init__()
        self.cfg = cfg
        self.frames = FrameEncoder(cfg)
        self.aggregate = FeatureAggregator(cfg)
        self.log_temperature = nn.Parameter(torch.tensor(math.log(cfg.temperature_init)))

    @property
    def temperature(self) -> torch.Tensor:
        return self.log_temperature.exp()

    def forward(self, frames: torch.Tensor) -> tuple[LatentFeature, FmriEmbedding]:
        emb = self.frames(frames)
        return self.aggregate(emb), emb

    def fmri_summary(self, emb: FmriEmbedding) -> torch.Tensor:
        """Frame-averaged [CLS] summary, the alternative adapter input."""
        return emb.cls.mean(dim=1)


def _grid_shape(n: int) -> tuple[int, int]:
    a = int(math.isqrt(n))
    while n % a:
        a -= 1
    return a, n // a


class VisionEncoder(nn.Module):
    """Small ViT standing in for the frozen image encoder. Each image maps to
    L_c tokens of width D_c (pooled patch grid, normalized per token); its
    embedding is the token mean."""

    def __init__(self, cfg: NfeConfig, n_classes: int = 13):
        super().__init__()
        self.cfg = cfg
        self.patch = PatchEmbed(cfg.view_size, cfg.vision_patch, cfg.vision_dim)
        n = self.patch.grid ** 2
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.vision_dim))
        self.pos = nn.Parameter(torch.randn(1, n + 1, cfg.vision_dim) * 0.02)
        self.blocks = nn.ModuleList(Block(cfg.vision_dim, cfg.vision_heads) for _ in range(cfg.vision_depth))
        self.norm = nn.LayerNorm(cfg.vision_dim)
        self.out_grid = _grid_shape(cfg.latent_len)
        self.out = nn.Linear(cfg.vision_dim, cfg.latent_dim)
        self.head = nn.Linear(cfg.latent_dim, n_classes)
        init_weights(self)

    def forward(self, images: torch.Tensor, return_layers: bool = False):
        if images.dim() == 2:
            images = images.unsqueeze(0)
        x = self.patch(images)
        x = torch.cat([self.cls_token.expand(len(x), -1, -1), x], dim=1) + self.pos
        layers = [x]
        for blk in self.blocks:
            x = blk(x)
            layers.append(x)
        x = self.norm(x)[:, 1:]
        g = self.patch.grid
        grid = x.transpose(1, 2).reshape(len(x), -1, g, g)
        pooled = F.adaptive_avg_pool2d(grid, self.out_grid).flatten(2).transpose(1, 2)
        tokens = F.layer_norm(self.out(pooled), (self.cfg.latent_dim,))
        if return_layers:
            return tokens, layers
        return tokens

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        return self(images).mean(dim=-2)

    def logits(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(images))


def encode_views(encoder: VisionEncoder, views, n: int, seed: int = 0) -> LatentFeature:
    """c_v from ``n`` randomly chosen views: tokens and pooled vector are the
    averages of the per-view token grids and per-view embeddings."""
    images = views.images if hasattr(views, "images") else views
    images = torch.as_tensor(np.asarray(images), dtype=torch.float32)
    if n < 1 or n > len(images):
        raise ValueError(f"cannot average {n} of {len(images)} views")
    idx = np.sort(np.random.default_rng(seed).choice(len(images), size=n, replace=False))
    tokens = encoder(images[idx]).mean(dim=0)
    return latent(tokens, "c_v")


def clip_align_loss(c_f: torch.Tensor, c_v: torch.Tensor, temperature) -> torch.Tensor:
    """Symmetric InfoNCE over cosine similarities; row i of each batch is a positive pair."""
    if c_f.shape != c_v.shape or c_f.dim() != 2:
        raise ValueError(f"expected matching (B, D) batches, got {tuple(c_f.shape)} and {tuple(c_v.shape)}")
    if len(c_f) == 0:
        raise ValueError("empty batch")
    temperature = torch.as_tensor(temperature, dtype=c_f.dtype)
    if not bool(temperature > 0):
        raise ValueError("temperature must be positive")
    logits = F.normalize(c_f, dim=-1) @ F.normalize(c_v, dim=-1).T / temperature
    target = torch.arange(len(c_f))
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target))
