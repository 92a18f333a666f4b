from dataclasses import replace

import numpy as np
import pytest
import torch

from recon3d.config import LadConfig, NfeConfig, FbdmConfig, preset
from recon3d.pipeline import Reconstructor, StageError, build_models

NFE = NfeConfig(patch_size=64, embed_dim=32, depth=1, heads=2, latent_len=4, latent_dim=16, fa_heads=2,
                vision_patch=56, vision_dim=16, vision_depth=1, vision_heads=2)


def _cfg(**abl):
    base = preset("fast")
    cfg = replace(base, nfe=NFE, fbdm=FbdmConfig(width=32, depth=1, heads=2, timesteps=5),
                  lad=LadConfig(resolution=32, latent_grid=4, codebook_size=16, codebook_dim=8, vq_channels=4,
                                width=32, depth=2, heads=2, adapter_period=1))
    return replace(cfg, ablation=replace(cfg.ablation, **abl)) if abl else cfg


@pytest.fixture(scope="module")
def frames():
    return np.random.default_rng(0).standard_normal((3, 10, 256, 256)).astype(np.float32)


def test_outputs_independent_of_batch_composition(frames):
    torch.manual_seed(0)
    rec = Reconstructor(_cfg(), build_models(_cfg()))
    full = rec.voxels(frames, seed=3)
    assert full.shape == (3, 32, 32, 32) and full.dtype == bool
    assert np.array_equal(rec.voxels(frames[1], seed=3)[0], full[1])
    assert np.array_equal(rec.voxels(frames, seed=3, batch=2), full)
    _, chat, fmri = rec.latents(frames, seed=3)
    assert chat.shape == (3, 4, 16) and fmri.shape[0] == 3


def test_no_diffusion_uses_brain_tokens(frames):
    torch.manual_seed(0)
    cfg = _cfg(no_diffusion=True)
    rec = Reconstructor(cfg, build_models(cfg))
    c_f, chat, _ = rec.latents(frames)
    assert torch.equal(c_f.tokens, chat)


def test_stage_errors_name_the_stage(frames):
    torch.manual_seed(0)
    rec = Reconstructor(_cfg(), build_models(_cfg()))
    with pytest.raises(StageError, match="select_frames"):
        rec.latents(frames[:, :4])
    with pytest.raises(StageError, match="encode_frames"):
        rec.latents(np.full_like(frames[:1], np.nan))
