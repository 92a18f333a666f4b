"""Conditional autoregressive transformer over VQ code sequences.

Sequence layout: ``[c_v_hat tokens (L_c), separator, z_1 .. z_{m-1}]``; the
output at the separator predicts z_1 and the output at z_{i-1} predicts z_i.
Adapters sit after every ``adapter_period`` blocks and inject a per-item fMRI
summary into a residual bottleneck.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import LadConfig
from ..layers import Block, init_weights


class Adapter(nn.Module):
    """x + up(gelu(down(x) + cond(f))); the up-projection starts at zero so the
    adapter is the identity on the residual stream until trained."""

    def __init__(self, width: int, bottleneck: int, cond_dim: int):
        super().__init__()
        self.down = nn.Linear(width, bottleneck)
        self.cond = nn.Linear(cond_dim, bottleneck)
        self.up = nn.Linear(bottleneck, width)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x, f):
        return x + self.up(F.gelu(self.down(x) + self.cond(f).unsqueeze(1)))


class ARDecoder(nn.Module):
    def __init__(self, cfg: LadConfig, latent_len: int, latent_dim: int, fmri_dim: int):
        super().__init__()
        self.cfg = cfg
        self.latent_len = latent_len
        self.m = cfg.n_codes
        w = cfg.width
        self.max_len = cfg.max_seq_len or latent_len + 1 + self.m
        if self.max_len < latent_len + self.m:
            raise ValueError("max_seq_len too short for the conditioning prefix plus codes")
        self.tok = nn.Embedding(cfg.codebook_size, w)
        self.cond = nn.Linear(latent_dim, w)
        self.sep = nn.Parameter(torch.zeros(1, 1, w))
        self.pos = nn.Parameter(torch.zeros(1, self.max_len, w))
        self.blocks = nn.ModuleList(Block(w, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(w)
        self.head = nn.Linear(w, cfg.codebook_size)
        init_weights(self)
        nn.init.normal_(self.pos, std=0.02)
        nn.init.normal_(self.sep, std=0.02)
        nn.init.normal_(self.tok.weight, std=0.02)
        self.adapter_after = [i for i in range(cfg.depth) if (i + 1) % cfg.adapter_period == 0]
        r = max(1, w // cfg.adapter_ratio)
        self.adapters = nn.ModuleList(Adapter(w, r, fmri_dim) for _ in self.adapter_after)

    # trained in stage 2 together with the adapters; everything else is the frozen base
    STAGE2_PREFIXES = ("adapters.", "cond.", "sep")

    def base_parameters(self):
        """Parameters frozen in stage 2: blocks, embeddings, positions and head."""
        return [p for n, p in self.named_parameters() if not n.startswith(self.STAGE2_PREFIXES)]

    def stage2_parameters(self):
        return [p for n, p in self.named_parameters() if n.startswith(self.STAGE2_PREFIXES)]

    def _run(self, x, fmri, caches=None):
        slot = {b: i for i, b in enumerate(self.adapter_after)}
        for i, blk in enumerate(self.blocks):
            x = blk(x, causal=True, cache=None if caches is None else caches[i])
            if fmri is not None and i in slot:
                x = self.adapters[slot[i]](x, fmri)
        return self.head(self.norm(x))

    def prefix_embeddings(self, cond_tokens):
        b = len(cond_tokens)
        return torch.cat([self.cond(cond_tokens), self.sep.expand(b, -1, -1)], dim=1)

    def forward(self, codes: torch.Tensor, cond_tokens: torch.Tensor, fmri: torch.Tensor | None = None):
        """Logits (B, n + 1, K): entry i predicts code i given codes[:, :i]."""
        x = self.prefix_embeddings(cond_tokens)
        if codes.shape[1]:
            x = torch.cat([x, self.tok(codes)], dim=1)
        if x.shape[1] > self.max_len:
            raise ValueError("sequence exceeds max_seq_len")
        x = x + self.pos[:, : x.shape[1]]
        return self._run(x, fmri)[:, self.latent_len:]


def _check_codes(z: torch.Tensor, k: int):
    if z.dtype not in (torch.int64, torch.int32) or bool((z < 0).any()) or bool((z >= k).any()):
        raise ValueError(f"code indices must be integers in [0, {k})")


def ar_logits(model: ARDecoder, prefix: torch.Tensor, cond_tokens, fmri=None) -> torch.Tensor:
    """Next-code distribution (B, K) after ``prefix`` (B, p) with p < m."""
    if prefix.dim() == 1:
        prefix = prefix.unsqueeze(0)
    if prefix.shape[1] >= model.m:
        raise ValueError(f"prefix length {prefix.shape[1]} leaves no position to predict (m = {model.m})")
    _check_codes(prefix, model.cfg.codebook_size)
    if cond_tokens.dim() == 2:
        cond_tokens = cond_tokens.unsqueeze(0)
    if fmri is not None and fmri.dim() == 1:
        fmri = fmri.unsqueeze(0)
    return torch.softmax(model(prefix, cond_tokens, fmri)[:, -1], dim=-1)


def nll_loss(model: ARDecoder, z: torch.Tensor, cond_tokens, fmri=None, reduction: str = "mean") -> torch.Tensor:
    """Teacher-forced mean over positions of -log p(z_i | c_v_hat, z_<i)."""
    if z.dim() == 1:
        z = z.unsqueeze(0)
    _check_codes(z, model.cfg.codebook_size)
    if cond_tokens.dim() == 2:
        cond_tokens = cond_tokens.unsqueeze(0)
    logits = model(z[:, :-1], cond_tokens, fmri)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), z.reshape(-1), reduction=reduction)


@torch.no_grad()
def ar_sample(model: ARDecoder, cond_tokens, fmri=None, temperature: float = 1.0, top_k: int = 0,
              seed=0) -> torch.Tensor:
    """Sample m codes with a key/value cache. ``temperature == 0`` is greedy.
    ``seed`` may be a list with one seed per batch item."""
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if cond_tokens.dim() == 2:
        cond_tokens = cond_tokens.unsqueeze(0)
    if fmri is not None and fmri.dim() == 1:
        fmri = fmri.unsqueeze(0)
    b = len(cond_tokens)
    seeds = list(seed) if isinstance(seed, (list, tuple)) else [int(seed) * 1_000_003 + i for i in range(b)]
    gens = [torch.Generator().manual_seed(int(s)) for s in seeds]
    caches = [{} for _ in model.blocks]
    x = model.prefix_embeddings(cond_tokens)
    x = x + model.pos[:, : x.shape[1]]
    pos = x.shape[1]
    out = torch.empty(b, model.m, dtype=torch.long)
    for i in range(model.m):
        logits = model._run(x, fmri, caches)[:, -1]
        if temperature == 0:
            nxt = logits.argmax(dim=-1)
        else:
            logits = logits / temperature
            if top_k:
                kth = torch.topk(logits, min(top_k, logits.shape[-1]), dim=-1).values[:, -1:]
                logits = logits.masked_fill(logits < kth, float("-inf"))
            probs = torch.softmax(logits, dim=-1)
            nxt = torch.stack([torch.multinomial(probs[j], 1, generator=gens[j])[0] for j in range(b)])
        out[:, i] = nxt
        x = model.tok(nxt).unsqueeze(1) + model.pos[:, pos: pos + 1]
        pos += 1
    return out
