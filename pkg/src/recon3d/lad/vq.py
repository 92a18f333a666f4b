"""Voxel VQ autoencoder: 3-D conv encoder to a g^3 latent grid, nearest-entry
codebook quantization, and a transposed-conv decoder back to occupancy logits."""
from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import LadConfig


class Quantized(NamedTuple):
    index: torch.Tensor  # (...,) long
    vector: torch.Tensor  # (..., D_q), straight-through w.r.t. the input
    error: torch.Tensor  # (...,) squared distance to the chosen entry


def quantize(v: torch.Tensor, codebook: torch.Tensor) -> Quantized:
    """Nearest codebook entry by Euclidean distance, lowest index on ties.

    The returned vector carries the straight-through gradient: downstream
    gradients reach ``v`` unchanged."""
    if not torch.isfinite(v).all():
        raise ValueError("quantize received non-finite input")
    flat = v.reshape(-1, v.shape[-1])
    d = torch.cdist(flat.detach(), codebook.detach(), compute_mode="donot_use_mm_for_euclid_dist")
    index = d.argmin(dim=1)
    q = codebook[index]
    err = ((flat.detach() - q.detach()) ** 2).sum(dim=1)
    st = flat + (q - flat).detach()
    lead = v.shape[:-1]
    return Quantized(index.view(lead), st.view(v.shape), err.view(lead))


class ResBlock3d(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.c1 = nn.Conv3d(ch, ch, 3, padding=1)
        self.c2 = nn.Conv3d(ch, ch, 3, padding=1)

    def forward(self, x):
        return x + self.c2(F.gelu(self.c1(F.gelu(x))))


class VQAutoencoder(nn.Module):
    def __init__(self, cfg: LadConfig):
        super().__init__()
        self.cfg = cfg
        steps = int(round(math.log2(cfg.resolution // cfg.latent_grid)))
        if steps < 1 or 2 ** steps * cfg.latent_grid != cfg.resolution:
            raise ValueError("resolution / latent_grid must be a power of two >= 2")
        # every resolution halving is a strided conv; no full-resolution layer keeps CPU training cheap
        c = cfg.vq_channels
        enc, ch = [nn.Conv3d(1, c, 4, stride=2, padding=1)], c
        for _ in range(steps - 1):
            enc += [nn.GELU(), nn.Conv3d(ch, 2 * ch, 4, stride=2, padding=1)]
            ch *= 2
        enc += [ResBlock3d(ch), nn.GELU(), nn.Conv3d(ch, cfg.codebook_dim, 1)]
        self.encoder = nn.Sequential(*enc)
        dec = [nn.Conv3d(cfg.codebook_dim, ch, 3, padding=1), ResBlock3d(ch)]
        for _ in range(steps - 1):
            dec += [nn.GELU(), nn.ConvTranspose3d(ch, ch // 2, 4, stride=2, padding=1)]
            ch //= 2
        dec += [nn.GELU(), nn.ConvTranspose3d(ch, 1, 4, stride=2, padding=1)]
        self.decoder = nn.Sequential(*dec)
        self.codebook = nn.Parameter(torch.randn(cfg.codebook_size, cfg.codebook_dim) * 0.1)

    @property
    def n_codes(self) -> int:
        return self.cfg.latent_grid ** 3

    def _check(self, occ):
        r = self.cfg.resolution
        if occ.dim() == 3:
            occ = occ.unsqueeze(0)
        if tuple(occ.shape[1:]) != (r, r, r):
            raise ValueError(f"expected ({r}, {r}, {r}) grids, got {tuple(occ.shape[1:])}")
        return occ.float()

    def encode_continuous(self, occ: torch.Tensor) -> torch.Tensor:
        """(B, R, R, R) -> (B, m, D_q), row-major over the latent grid."""
        z = self.encoder(self._check(occ).unsqueeze(1))
        return z.permute(0, 2, 3, 4, 1).reshape(len(z), -1, self.cfg.codebook_dim)

    def encode(self, occ: torch.Tensor) -> torch.Tensor:
        return quantize(self.encode_continuous(occ), self.codebook).index

    def decode_vectors(self, zq: torch.Tensor) -> torch.Tensor:
        g = self.cfg.latent_grid
        x = zq.reshape(len(zq), g, g, g, -1).permute(0, 4, 1, 2, 3)
        return self.decoder(x).squeeze(1)

    def decode_logits(self, codes: torch.Tensor) -> torch.Tensor:
        if codes.dim() == 1:
            codes = codes.unsqueeze(0)
        if codes.shape[1] != self.n_codes:
            raise ValueError(f"expected {self.n_codes} codes, got {codes.shape[1]}")
        return self.decode_vectors(self.codebook[codes])

    def decode(self, codes: torch.Tensor) -> torch.Tensor:
        """Occupancy in {0, 1}; probability exactly 0.5 counts as occupied."""
        return (torch.sigmoid(self.decode_logits(codes)) >= 0.5).to(torch.uint8)

    def forward(self, occ: torch.Tensor):
        occ = self._check(occ)
        ze = self.encode_continuous(occ)
        q = quantize(ze, self.codebook)
        logits = self.decode_vectors(q.vector)
        recon = F.binary_cross_entropy_with_logits(logits, occ)
        codebook_loss = F.mse_loss(self.codebook[q.index], ze.detach())
        commitment = F.mse_loss(ze, self.codebook[q.index].detach())
        total = recon + codebook_loss + self.cfg.commitment * commitment
        return {"loss": total, "recon": recon, "codebook": codebook_loss,
                "commitment": commitment, "index": q.index, "latent": ze.detach(), "logits": logits}


def voxel_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a, b = a.bool().flatten(1), b.bool().flatten(1)
    inter = (a & b).sum(1).float()
    union = (a | b).sum(1).float()
    return torch.where(union > 0, inter / union.clamp(min=1), torch.ones_like(union))


@torch.no_grad()
def revive_codes(model: VQAutoencoder, latents: torch.Tensor, used: torch.Tensor, generator=None) -> int:
    """Move codebook entries that no latent selected onto randomly chosen
    encoder outputs. Returns the number of revived entries."""
    dead = torch.nonzero(~used).flatten()
    if not len(dead):
        return 0
    flat = latents.reshape(-1, latents.shape[-1])
    pick = torch.randint(0, len(flat), (len(dead),), generator=generator)
    model.codebook.data[dead] = flat[pick]
    return len(dead)
