"""Training loops: frozen pretrained components (vision encoder, VQ
autoencoder, base decoder) and the two training stages."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint
from .config import ConfigError, ExperimentConfig
from .data.dataset import Dataset, select_frames
from .fbdm import ddpm_sample, fbdm_loss
from .lad import nll_loss, revive_codes, voxel_iou
from .nfe import clip_align_loss
from .pipeline import Models, adapter_input, build_models, schedule_for

log = logging.getLogger(__name__)


class FreezeError(RuntimeError):
    """A parameter that must stay frozen changed during training."""


def seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def _optimizer(params, lr, wd, steps, warmup=0):
    """AdamW with optional linear warmup over ``warmup`` steps, then cosine decay."""
    opt = torch.optim.AdamW(params, lr=lr, weight_decay=wd)

    def factor(s):
        if s < warmup:
            return (s + 1) / warmup
        return 0.5 * (1 + math.cos(math.pi * min(s, steps) / steps))

    return opt, torch.optim.lr_scheduler.LambdaLR(opt, factor)


def _batches(n, size, gen):
    perm = torch.randperm(n, generator=gen)
    return [perm[i:i + size] for i in range(0, n, size)]


class DataCache:
    """In-memory arrays for the splits a run touches."""

    def __init__(self, ds: Dataset):
        self.ds = ds
        self._frames: dict[tuple, np.ndarray] = {}

    def core_subject(self) -> str:
        ids = self.ds.subject_ids("core")
        if not ids:
            raise ConfigError("dataset has no Core subject")
        return ids[0]

    def trial_key(self, t: dict) -> str:
        name = t["object_id"] if t["session"] == 0 else f"{t['object_id']}.{t['session']}"
        return f"{t['split']}/{t['subject']}/{name}"

    def frames(self, trials: list[dict]) -> np.ndarray:
        out = []
        for t in trials:
            key = self.trial_key(t)
            if key not in self._frames:
                self._frames[key] = self.ds.load_trial(t).frames
            out.append(self._frames[key])
        return np.stack(out)

    def voxels(self, oids) -> np.ndarray:
        return np.stack([self.ds.load_voxels(o) for o in oids])

    def views(self, oids) -> np.ndarray:
        return np.stack([self.ds.load_views(o) for o in oids])


# ---------------------------------------------------------------- pretraining

PRETRAIN_FILES = ("vision.pt", "vq.pt", "prior.pt")


def pretrain_key(cfg: ExperimentConfig) -> str:
    """Hash of everything the frozen components depend on."""
    t = cfg.train
    blob = {
        "data": dataclasses.asdict(cfg.data),
        "nfe_vision": {k: getattr(cfg.nfe, k) for k in ("view_size", "vision_patch", "vision_dim", "vision_depth",
                                                          "vision_heads", "latent_len", "latent_dim",
                                                          "n_view_frames")},
        "lad": dataclasses.asdict(cfg.lad),
        "train": {k: getattr(t, k) for k in ("batch_size", "vision_epochs", "vision_lr", "vq_epochs", "vq_lr",
                                             "prior_epochs", "prior_lr", "weight_decay")},
        "adapter_fmri_dim": cfg.nfe.embed_dim if cfg.lad.adapter_input == "femb" else cfg.nfe.latent_dim,
        "seed": cfg.pretrain_seed,
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def pretrained_path(cfg: ExperimentConfig) -> Path:
    base = Path(cfg.pretrained_dir) if cfg.pretrained_dir else Path(cfg.out or ".") / "pretrained"
    return base / pretrain_key(cfg)


@torch.no_grad()
def view_tokens(vision, views: np.ndarray, batch: int = 64) -> torch.Tensor:
    """(n_obj, k, H, W) renders -> (n_obj, k, L_c, D_c) per-view tokens."""
    n, k = views.shape[:2]
    flat = torch.as_tensor(views.reshape(n * k, *views.shape[2:]), dtype=torch.float32)
    out = torch.cat([vision(flat[i:i + batch]) for i in range(0, len(flat), batch)])
    return out.view(n, k, *out.shape[1:])


def sample_cv(tokens: torch.Tensor, n_views: int, gen: torch.Generator) -> torch.Tensor:
    """Average ``n_views`` random views per item: (B, k, L, D) -> (B, L, D)."""
    b, k = tokens.shape[:2]
    idx = torch.argsort(torch.rand(b, k, generator=gen), dim=1)[:, :n_views]
    picked = torch.gather(tokens, 1, idx[:, :, None, None].expand(-1, -1, *tokens.shape[2:]))
    return picked.mean(dim=1)


def fixed_cv(tokens: torch.Tensor, n_views: int, seed: int) -> torch.Tensor:
    """Deterministic c_v per object (first ``n_views`` of a seeded permutation)."""
    return sample_cv(tokens, n_views, torch.Generator().manual_seed(seed))


def train_vision(cfg, models: Models, views: np.ndarray, labels: np.ndarray, gen) -> list[float]:
    t = cfg.train
    x = torch.as_tensor(views.reshape(-1, *views.shape[2:]), dtype=torch.float32)
    y = torch.as_tensor(np.repeat(labels, views.shape[1]), dtype=torch.long)
    steps = t.vision_epochs * math.ceil(len(x) / t.batch_size)
    opt, sched = _optimizer(models.vision.parameters(), t.vision_lr, t.weight_decay, steps)
    losses = []
    models.vision.train()
    for ep in range(t.vision_epochs):
        tot, correct = 0.0, 0
        for idx in _batches(len(x), t.batch_size, gen):
            logits = models.vision.logits(x[idx])
            loss = F.cross_entropy(logits, y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            tot += loss.item() * len(idx)
            correct += int((logits.argmax(1) == y[idx]).sum())
        losses.append(tot / len(x))
        log.info("vision epoch %d loss %.4f acc %.3f", ep + 1, losses[-1], correct / len(x))
    models.vision.eval()
    return losses


def train_vq(cfg, models: Models, occ: np.ndarray, gen) -> tuple[list[float], float]:
    t = cfg.train
    vq = models.vq
    x = torch.as_tensor(occ)
    steps = t.vq_epochs * math.ceil(len(x) / t.batch_size)
    opt, sched = _optimizer(vq.parameters(), t.vq_lr, 0.0, steps)
    losses = []
    for ep in range(t.vq_epochs):
        vq.train()
        tot = 0.0
        used = torch.zeros(vq.cfg.codebook_size, dtype=torch.bool)
        latents = []
        for idx in _batches(len(x), t.batch_size, gen):
            out = vq(x[idx])
            opt.zero_grad()
            out["loss"].backward()
            opt.step()
            sched.step()
            tot += out["loss"].item() * len(idx)
            used[out["index"].unique()] = True
            latents.append(out["latent"])
        losses.append(tot / len(x))
        # unused entries are moved onto live encoder outputs during the first half
        revived = revive_codes(vq, torch.cat(latents), used, gen) if ep < t.vq_epochs // 2 else 0
        log.info("vq epoch %d loss %.4f used %d revived %d", ep + 1, losses[-1], int(used.sum()), revived)
    vq.eval()
    with torch.no_grad():
        iou = torch.cat([voxel_iou(vq.decode(vq.encode(x[i:i + 64])), x[i:i + 64]) for i in range(0, len(x), 64)])
    return losses, float(iou.mean())


@torch.no_grad()
def encode_codes(vq, occ: np.ndarray) -> torch.Tensor:
    x = torch.as_tensor(occ)
    return torch.cat([vq.encode(x[i:i + 64]) for i in range(0, len(x), 64)])


def train_prior(cfg, models: Models, codes: torch.Tensor, tokens: torch.Tensor, gen) -> list[float]:
    """Base decoder on ground-truth code sequences conditioned on ground-truth
    c_v, without adapters."""
    t = cfg.train
    ar = models.ar
    params = ar.base_parameters() + [p for n, p in ar.named_parameters() if n.startswith(("cond.", "sep"))]
    steps = t.prior_epochs * math.ceil(len(codes) / t.batch_size)
    opt, sched = _optimizer(params, t.prior_lr, t.weight_decay, steps)
    losses = []
    ar.train()
    for ep in range(t.prior_epochs):
        tot = 0.0
        for idx in _batches(len(codes), t.batch_size, gen):
            cv = sample_cv(tokens[idx], cfg.nfe.n_view_frames, gen)
            loss = nll_loss(ar, codes[idx], cv, None)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 1.0)
            opt.step()
            sched.step()
            tot += loss.item() * len(idx)
        losses.append(tot / len(codes))
        log.info("prior epoch %d nll %.4f", ep + 1, losses[-1])
    ar.eval()
    return losses


def _load_pretrained(root: Path, models: Models) -> None:
    checkpoint.load(root / "vision.pt", {"vision": models.vision})
    checkpoint.load(root / "vq.pt", {"vq": models.vq})
    # the base decoder file carries its own (identity) adapters; keep the run's
    base = copy.deepcopy(models.ar)
    checkpoint.load(root / "prior.pt", {"ar": base})
    state = {k: v for k, v in base.state_dict().items() if not k.startswith("adapters.")}
    models.ar.load_state_dict(state, strict=False)


def pretrain(cfg: ExperimentConfig, cache: DataCache, force: bool = False) -> dict:
    """Train the frozen components once per pretrain key and cache them."""
    root = pretrained_path(cfg)
    info_path = root / "pretrain.json"
    if not force and info_path.is_file() and all((root / f).is_file() for f in PRETRAIN_FILES):
        return json.loads(info_path.read_text())
    ds = cache.ds
    oids = ds.object_ids("train")
    if not oids:
        raise ConfigError("dataset has no training objects")
    labels = np.array([ds.class_id(o) for o in oids])
    views = cache.views(oids)
    occ = cache.voxels(oids)
    info: dict = {"key": pretrain_key(cfg), "seconds": {}}

    gen = seed_everything(cfg.pretrain_seed)
    models = build_models(cfg)
    t0 = time.time()
    info["vision_loss"] = train_vision(cfg, models, views, labels, gen)
    info["seconds"]["vision"] = time.time() - t0

    t0 = time.time()
    gen = seed_everything(cfg.pretrain_seed + 1)
    vq_losses, iou = train_vq(cfg, models, occ, gen)
    info["vq_loss"], info["vq_train_iou"] = vq_losses, iou
    info["seconds"]["vq"] = time.time() - t0
    log.info("vq round-trip IoU on training shapes %.4f", iou)

    t0 = time.time()
    gen = seed_everything(cfg.pretrain_seed + 2)
    tokens = view_tokens(models.vision, views)
    codes = encode_codes(models.vq, occ)
    info["codes_used"] = int(codes.unique().numel())
    info["prior_nll"] = train_prior(cfg, models, codes, tokens, gen)
    info["seconds"]["prior"] = time.time() - t0

    root.mkdir(parents=True, exist_ok=True)
    info["hashes"] = {
        "vision": checkpoint.save(root / "vision.pt", {"vision": models.vision}),
        "vq": checkpoint.save(root / "vq.pt", {"vq": models.vq}),
        "prior": checkpoint.save(root / "prior.pt", {"ar": models.ar}),
    }
    info["frozen"] = frozen_hashes(models)
    info_path.write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    return info


def fresh_models(cfg: ExperimentConfig) -> Models:
    """Run-seeded models with the cached pretrained parts loaded."""
    seed_everything(cfg.seed)
    models = build_models(cfg)
    root = pretrained_path(cfg)
    if not all((root / f).is_file() for f in PRETRAIN_FILES):
        raise ConfigError(f"pretrained components missing under {root}")
    _load_pretrained(root, models)
    return models.eval()


# ---------------------------------------------------------------- stages


@dataclass
class TrainData:
    frames: np.ndarray  # (N, 10, S, S)
    codes: torch.Tensor  # (N, m)
    tokens: torch.Tensor  # (N, k, L_c, D_c) per-view vision tokens
    object_ids: list = field(default_factory=list)


def train_data(cfg, cache: DataCache, models: Models) -> TrainData:
    trials = cache.ds.trials("train", cache.core_subject())
    if not trials:
        raise ConfigError("no training trials for the Core subject")
    oids = [t["object_id"] for t in trials]
    uniq = sorted(set(oids))
    pos = {o: i for i, o in enumerate(uniq)}
    idx = [pos[o] for o in oids]
    tokens = view_tokens(models.vision, cache.views(uniq))[idx]
    codes = encode_codes(models.vq, cache.voxels(uniq))[idx]
    return TrainData(cache.frames(trials), codes, tokens, oids)


def _random_frames(frames: np.ndarray, count: int, rng: np.random.Generator) -> torch.Tensor:
    out = [select_frames(f, "train", seed=int(rng.integers(2 ** 31)), count=count)[1] for f in frames]
    return torch.as_tensor(np.stack(out), dtype=torch.float32)


def _upstream_losses(cfg, models: Models, frames, cv, gen, schedule):
    c_f, emb = models.nfe(frames)
    losses = {}
    if cfg.train.contrastive_weight > 0 and not cfg.ablation.no_contrastive:
        losses["contrastive"] = cfg.train.contrastive_weight * clip_align_loss(c_f.pooled, cv.mean(-2),
                                                                               models.nfe.temperature)
    if cfg.train.diffusion_weight > 0 and not cfg.ablation.no_diffusion:
        losses["diffusion"] = cfg.train.diffusion_weight * fbdm_loss(models.denoiser, cv, c_f.tokens, schedule, gen)
    return c_f, emb, losses


def _clamp_temperature(nfe):
    with torch.no_grad():
        nfe.log_temperature.clamp_(min=math.log(0.01), max=math.log(1.0))


def train_stage1(cfg: ExperimentConfig, models: Models, data: TrainData) -> list[dict]:
    """Jointly train the signal encoder, aggregator, temperature and denoiser."""
    t = cfg.train
    gen = seed_everything(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    schedule = schedule_for(cfg)
    params = list(models.nfe.parameters()) + list(models.denoiser.parameters())
    n = len(data.frames)
    steps = max(1, t.stage1_epochs * math.ceil(n / t.batch_size))
    opt, sched = _optimizer(params, t.lr_stage1, t.weight_decay, steps, int(t.warmup_frac * steps))
    history = []
    if cfg.ablation.no_contrastive and cfg.ablation.no_diffusion:
        log.info("stage 1 has no loss terms under this ablation; skipped")
        return history
    models.nfe.train()
    models.denoiser.train()
    for ep in range(t.stage1_epochs):
        sums: dict[str, float] = {}
        for idx in _batches(n, t.batch_size, gen):
            frames = _random_frames(data.frames[idx.numpy()], cfg.nfe.n_frames, rng)
            cv = sample_cv(data.tokens[idx], cfg.nfe.n_view_frames, gen)
            _, _, losses = _upstream_losses(cfg, models, frames, cv, gen, schedule)
            loss = sum(losses.values())
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 1.0)
            opt.step()
            sched.step()
            _clamp_temperature(models.nfe)
            for k, v in {"total": loss, **losses}.items():
                sums[k] = sums.get(k, 0.0) + v.item() * len(idx)
        history.append({k: v / n for k, v in sums.items()})
        log.info("stage1 epoch %d %s", ep + 1, " ".join(f"{k} {v:.4f}" for k, v in history[-1].items()))
    models.nfe.eval()
    models.denoiser.eval()
    return history


@torch.no_grad()
def bridge_latents(cfg, models: Models, frames: np.ndarray, batch: int = 64) -> torch.Tensor:
    """c_v_hat for fixed evaluation frames, sampled once (no gradient)."""
    schedule = schedule_for(cfg)
    models.nfe.eval()
    models.denoiser.eval()
    out = []
    for i in range(0, len(frames), batch):
        x = torch.as_tensor(np.stack([select_frames(f, "eval")[1] for f in frames[i:i + batch]]),
                            dtype=torch.float32)
        c_f, _ = models.nfe(x)
        seeds = [cfg.eval.sample_seed] * len(x)
        out.append(ddpm_sample(models.denoiser, c_f.tokens, schedule, seed=seeds).tokens)
    return torch.cat(out)


def frozen_hashes(models: Models) -> dict:
    return {"vq": checkpoint.params_hash(models.vq.parameters()),
            "ar_base": checkpoint.params_hash(models.ar.base_parameters()),
            "vision": checkpoint.params_hash(models.vision.parameters())}


@torch.no_grad()
def heldout_nll(cfg, models: Models, frames, codes, cond) -> float:
    total = 0.0
    for i in range(0, len(frames), 32):
        x = torch.as_tensor(np.stack([select_frames(f, "eval")[1] for f in frames[i:i + 32]]), dtype=torch.float32)
        c_f, emb = models.nfe(x)
        c = c_f.tokens if cfg.ablation.no_diffusion else cond[i:i + 32]
        fmri = adapter_input(cfg, models.nfe, c_f, emb)
        total += nll_loss(models.ar, codes[i:i + 32], c, fmri, reduction="sum").item()
    return total / (len(frames) * codes.shape[1])


def train_stage2(cfg: ExperimentConfig, models: Models, data: TrainData) -> list[dict]:
    """Adapters, condition projection and upstream modules; VQ and base decoder frozen."""
    t = cfg.train
    gen = seed_everything(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed + 1)
    schedule = schedule_for(cfg)
    before = frozen_hashes(models)
    for p in models.vq.parameters():
        p.requires_grad_(False)
    for p in models.vision.parameters():
        p.requires_grad_(False)
    for p in models.ar.base_parameters():
        p.requires_grad_(False)
    cond = None if cfg.ablation.no_diffusion else bridge_latents(cfg, models, data.frames)
    params = models.ar.stage2_parameters() + list(models.nfe.parameters())
    if not cfg.ablation.no_diffusion:
        params += list(models.denoiser.parameters())
    n = len(data.frames)
    steps = max(1, t.stage2_epochs * math.ceil(n / t.batch_size))
    opt, sched = _optimizer(params, t.lr_stage2, t.weight_decay, steps, int(t.warmup_frac * steps))
    history = []
    for ep in range(t.stage2_epochs):
        models.nfe.train()
        models.denoiser.train()
        models.ar.train()
        sums: dict[str, float] = {}
        for idx in _batches(n, t.batch_size, gen):
            frames = _random_frames(data.frames[idx.numpy()], cfg.nfe.n_frames, rng)
            cv = sample_cv(data.tokens[idx], cfg.nfe.n_view_frames, gen)
            c_f, emb, losses = _upstream_losses(cfg, models, frames, cv, gen, schedule)
            c = c_f.tokens if cond is None else cond[idx]
            losses["nll"] = nll_loss(models.ar, data.codes[idx], c, adapter_input(cfg, models.nfe, c_f, emb))
            loss = sum(losses.values())
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 1.0)
            opt.step()
            sched.step()
            _clamp_temperature(models.nfe)
            for k, v in {"total": loss, **losses}.items():
                sums[k] = sums.get(k, 0.0) + v.item() * len(idx)
        history.append({k: v / n for k, v in sums.items()})
        log.info("stage2 epoch %d %s", ep + 1, " ".join(f"{k} {v:.4f}" for k, v in history[-1].items()))
    models.eval()
    for p in models.vq.parameters():
        p.requires_grad_(True)
    for p in models.ar.base_parameters():
        p.requires_grad_(True)
    after = frozen_hashes(models)
    for k in before:
        if before[k] != after[k]:
            raise FreezeError(f"frozen parameters of {k} changed during stage 2")
    return history
