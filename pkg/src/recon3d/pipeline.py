"""End-to-end reconstruction: signal frames -> brain latent -> generated vision
latent -> code sequence -> voxel grid -> mesh."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import ExperimentConfig
from .data.dataset import select_frames
from .fbdm import Denoiser, DiffusionSchedule, ddpm_sample, make_schedule
from .lad import ARDecoder, Mesh, VQAutoencoder, ar_sample, extract_mesh
from .nfe import NeuroFusionEncoder, VisionEncoder


class StageError(RuntimeError):
    """A reconstruction failure tagged with the stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def schedule_for(cfg: ExperimentConfig) -> DiffusionSchedule:
    f = cfg.fbdm
    return make_schedule(f.timesteps, f.beta_min or None, f.beta_max or None)


@dataclass
class Models:
    vision: VisionEncoder
    vq: VQAutoencoder
    ar: ARDecoder
    nfe: NeuroFusionEncoder
    denoiser: Denoiser

    def as_dict(self) -> dict:
        return {"vision": self.vision, "vq": self.vq, "ar": self.ar, "nfe": self.nfe, "denoiser": self.denoiser}

    def eval(self) -> "Models":
        for m in self.as_dict().values():
            m.eval()
        return self


def build_models(cfg: ExperimentConfig) -> Models:
    n = cfg.nfe
    return Models(
        vision=VisionEncoder(n, n_classes=cfg.data.n_categories),
        vq=VQAutoencoder(cfg.lad),
        ar=ARDecoder(cfg.lad, n.latent_len, n.latent_dim, n.latent_dim if cfg.lad.adapter_input == "cf" else n.embed_dim),
        nfe=NeuroFusionEncoder(n),
        denoiser=Denoiser(cfg.fbdm, n.latent_len, n.latent_dim),
    )


def adapter_input(cfg: ExperimentConfig, nfe: NeuroFusionEncoder, c_f, emb) -> torch.Tensor:
    return c_f.pooled if cfg.lad.adapter_input == "cf" else nfe.fmri_summary(emb)


class Reconstructor:
    """Batched inference with per-item seeds, so every output depends only on
    (checkpoints, trial, seed) and not on batch composition."""

    def __init__(self, cfg: ExperimentConfig, models: Models):
        self.cfg = cfg
        self.models = models.eval()
        self.schedule = schedule_for(cfg)

    def _stage(self, name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with the stage attached
            raise StageError(name, exc) from exc

    @torch.no_grad()
    def latents(self, frames: np.ndarray, seed: int = 0):
        """(B, 10, S, S) raw trial frames -> (c_f, c_v_hat tokens, adapter input)."""
        m = self.models
        sel = self._stage("select_frames", lambda: np.stack([select_frames(f, "eval")[1] for f in frames]))
        x = torch.as_tensor(sel, dtype=torch.float32)
        c_f, emb = self._stage("encode_frames", m.nfe, x)
        if self.cfg.ablation.no_diffusion:
            chat = c_f.tokens
        else:
            seeds = [seed] * len(x)
            chat = self._stage("ddpm_sample", ddpm_sample, m.denoiser, c_f.tokens, self.schedule, seed=seeds).tokens
        return c_f, chat, adapter_input(self.cfg, m.nfe, c_f, emb)

    @torch.no_grad()
    def codes(self, frames: np.ndarray, seed: int = 0) -> torch.Tensor:
        _, chat, fmri = self.latents(frames, seed)
        lad = self.cfg.lad
        seeds = [seed] * len(chat)
        return self._stage("ar_sample", ar_sample, self.models.ar, chat, fmri, temperature=lad.temperature,
                           top_k=lad.top_k, seed=seeds)

    @torch.no_grad()
    def voxels(self, frames: np.ndarray, seed: int = 0, batch: int = 16) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.ndim == 3:
            frames = frames[None]
        out = []
        for i in range(0, len(frames), batch):
            z = self.codes(frames[i:i + batch], seed)
            out.append(self._stage("vq_decode", self.models.vq.decode, z).numpy().astype(bool))
        return np.concatenate(out)

    def reconstruct(self, frames: np.ndarray, seed: int = 0) -> Mesh:
        grid = self.voxels(frames, seed)[0]
        return self._stage("extract_mesh", extract_mesh, grid)
