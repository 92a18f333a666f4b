"""Instantiate the published-size configuration, count parameters and run a
single-item forward pass through every model without training.

The decoder at that size does not fit comfortably in desk memory, so it is
built on the meta device for counting, and its forward pass materializes one
transformer block at a time."""
from __future__ import annotations

import gc
import time

import torch

from .config import ExperimentConfig, paper_scale
from .fbdm import Denoiser
from .layers import count_parameters, init_weights
from .lad import ARDecoder, VQAutoencoder
from .nfe import NeuroFusionEncoder, VisionEncoder


def _materialize(module: torch.nn.Module) -> torch.nn.Module:
    module.to_empty(device="cpu")
    with torch.no_grad():
        for p in module.parameters():
            p.normal_(0, 0.02)
    init_weights(module)
    return module


@torch.no_grad()
def streamed_decoder_forward(ar: ARDecoder, codes, cond_tokens, fmri) -> torch.Tensor:
    """ARDecoder.forward with blocks created, run and released one at a time."""
    for name, mod in ar.named_children():
        if name != "blocks":
            _materialize(mod)
    for name in ("sep", "pos"):
        p = getattr(ar, name)
        setattr(ar, name, torch.nn.Parameter(torch.randn(p.shape) * 0.02))
    for a in ar.adapters:
        torch.nn.init.zeros_(a.up.weight)
        torch.nn.init.zeros_(a.up.bias)
    x = torch.cat([ar.prefix_embeddings(cond_tokens), ar.tok(codes)], dim=1)
    x = x + ar.pos[:, : x.shape[1]]
    slot = {b: i for i, b in enumerate(ar.adapter_after)}
    for i in range(len(ar.blocks)):
        blk = _materialize(ar.blocks[i])
        x = blk(x, causal=True)
        ar.blocks[i] = blk.to("meta")
        del blk
        gc.collect()
        if i in slot:
            x = ar.adapters[slot[i]](x, fmri)
    return ar.head(ar.norm(x))[:, ar.latent_len:]


@torch.no_grad()
def shape_check(cfg: ExperimentConfig | None = None) -> dict:
    cfg = cfg or paper_scale()
    n, f, lad = cfg.nfe, cfg.fbdm, cfg.lad
    torch.manual_seed(0)
    report: dict = {"preset": cfg.preset, "parameters": {}, "outputs": {}}
    t0 = time.time()

    nfe = NeuroFusionEncoder(n).eval()
    report["parameters"]["frame_encoder"] = count_parameters(nfe.frames)
    report["parameters"]["aggregator"] = count_parameters(nfe.aggregate)
    c_f, emb = nfe(torch.randn(1, n.n_frames, n.frame_size, n.frame_size))
    report["outputs"]["c_f"] = list(c_f.tokens.shape)
    report["outputs"]["frame_tokens"] = list(emb.tokens.shape)
    fmri = c_f.pooled if lad.adapter_input == "cf" else nfe.fmri_summary(emb)
    del nfe, emb
    gc.collect()

    vision = VisionEncoder(n, n_classes=cfg.data.n_categories).eval()
    report["parameters"]["vision_encoder"] = count_parameters(vision)
    report["outputs"]["c_v"] = list(vision(torch.rand(1, n.view_size, n.view_size)).shape)
    del vision

    den = Denoiser(f, n.latent_len, n.latent_dim).eval()
    report["parameters"]["denoiser"] = count_parameters(den)
    eps = den(torch.randn_like(c_f.tokens), torch.tensor([f.timesteps]), c_f.tokens)
    report["outputs"]["eps"] = list(eps.shape)
    del den

    vq = VQAutoencoder(lad).eval()
    report["parameters"]["vq_autoencoder"] = count_parameters(vq)
    codes = vq.encode(torch.rand(1, lad.resolution, lad.resolution, lad.resolution) > 0.9)
    report["outputs"]["codes"] = list(codes.shape)
    report["outputs"]["voxels"] = list(vq.decode(codes).shape)
    del vq

    with torch.device("meta"):
        ar = ARDecoder(lad, n.latent_len, n.latent_dim, fmri.shape[-1])
    report["parameters"]["ar_decoder"] = count_parameters(ar)
    report["parameters"]["ar_adapters"] = sum(p.numel() for p in ar.adapters.parameters())
    report["ar_layout"] = {"depth": lad.depth, "width": lad.width, "heads": lad.heads,
                           "adapters_after_blocks": ar.adapter_after, "max_seq_len": ar.max_len,
                           "sequence_used": n.latent_len + 1 + lad.n_codes - 1}
    logits = streamed_decoder_forward(ar, codes[:, :-1], c_f.tokens, fmri)
    report["outputs"]["ar_logits"] = list(logits.shape)
    report["outputs"]["finite"] = bool(torch.isfinite(logits).all())
    report["parameters"]["total"] = sum(v for k, v in report["parameters"].items() if k != "ar_adapters")
    report["seconds"] = round(time.time() - t0, 1)
    return report
