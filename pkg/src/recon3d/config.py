"""Configuration dataclasses, named presets and the sectioned key=value file format.

A config file is a plain INI file. Every section maps onto one dataclass below
and every key onto one field; unknown keys are rejected. The ``preset`` key in
``[experiment]`` selects the base values that the remaining keys override::

    [experiment]
    preset = fast
    seed = 1

    [train]
    stage1_epochs = 40
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


def _doc(text: str, default: Any = dataclasses.MISSING, **kw):
    if default is dataclasses.MISSING:
        return field(metadata={"doc": text}, **kw)
    return field(default=default, metadata={"doc": text}, **kw)


@dataclass
class DataConfig:
    n_categories: int = _doc("number of Core categories", 13)
    train_per_category: int = _doc("Core training objects per category", 20)
    test_per_category: int = _doc("Core test objects per category", 4)
    core_subjects: int = _doc("subjects that view the Core set", 1)
    ap_subjects: int = _doc("across-person subjects (view Core test objects)", 1)
    apac_subjects: int = _doc("across-person-and-class subjects", 1)
    apac_categories: int = _doc("held-out categories viewed by APAC subjects", 4)
    apac_per_category: int = _doc("objects per held-out category", 4)
    test_repeats: int = _doc("trials recorded per Core test object", 1)
    resolution: int = _doc("voxel grid resolution R", 32)
    n_views: int = _doc("rendered views per object (k)", 12)
    view_size: int = _doc("rendered view height/width in pixels", 224)
    pitch: float = _doc("camera pitch in degrees, measured from the vertical axis", 60.0)
    frame_size: int = _doc("signal image height/width in pixels", 256)
    n_frames: int = _doc("frames per trial", 10)
    feature_grid: int = _doc("side of the pooled view-feature grid fed to the forward model", 16)
    noise_std: float = _doc("white measurement noise std (before smoothing)", 2.0)
    background_std: float = _doc("amplitude of stimulus-independent background activity", 0.6)
    smoothing: float = _doc("Gaussian smoothing width in pixels", 2.0)
    lag: int = _doc("hemodynamic lag in frames", 2)
    pool_width: int = _doc("frames of stimulus pooled into one response frame", 3)
    seed: int = _doc("global dataset seed", 0)

    def validate(self) -> None:
        if self.n_categories < 1:
            raise ConfigError("n_categories must be >= 1")
        if self.train_per_category < 0 or self.test_per_category < 0:
            raise ConfigError("per-category counts must be non-negative")
        if self.n_views < 1:
            raise ConfigError("n_views must be >= 1")
        if self.view_size % self.feature_grid:
            raise ConfigError("view_size must be divisible by feature_grid")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")


@dataclass
class NfeConfig:
    frame_size: int = _doc("input frame side", 256)
    n_frames: int = _doc("frames consumed per trial", 6)
    patch_size: int = _doc("frame-encoder patch size", 16)
    embed_dim: int = _doc("frame-encoder width", 256)
    depth: int = _doc("frame-encoder depth", 4)
    heads: int = _doc("frame-encoder heads", 4)
    mlp_ratio: float = _doc("MLP hidden/width ratio", 4.0)
    latent_len: int = _doc("latent token count L_c", 16)
    latent_dim: int = _doc("latent width D_c", 128)
    fa_depth: int = _doc("feature-aggregation blocks", 2)
    fa_heads: int = _doc("feature-aggregation heads", 4)
    view_size: int = _doc("vision-encoder input side", 224)
    vision_patch: int = _doc("vision-encoder patch size", 32)
    vision_dim: int = _doc("vision-encoder width", 128)
    vision_depth: int = _doc("vision-encoder depth", 2)
    vision_heads: int = _doc("vision-encoder heads", 4)
    n_view_frames: int = _doc("rendered views averaged into c_v", 4)
    temperature_init: float = _doc("initial contrastive temperature", 0.07)

    def validate(self) -> None:
        if self.frame_size % self.patch_size:
            raise ConfigError("frame_size must be divisible by patch_size")
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")
        if self.latent_dim % self.fa_heads:
            raise ConfigError("latent_dim must be divisible by fa_heads")
        if self.view_size % self.vision_patch:
            raise ConfigError("view_size must be divisible by vision_patch")
        if self.vision_dim % self.vision_heads:
            raise ConfigError("vision_dim must be divisible by vision_heads")


@dataclass
class FbdmConfig:
    timesteps: int = _doc("diffusion steps T", 100)
    beta_min: float = _doc("first beta; 0 selects 1e-4*1000/T", 0.0)
    beta_max: float = _doc("last beta; 0 selects 0.02*1000/T", 0.0)
    width: int = _doc("denoiser width", 128)
    depth: int = _doc("denoiser depth", 3)
    heads: int = _doc("denoiser heads", 4)
    mlp_ratio: float = _doc("MLP hidden/width ratio", 4.0)

    def validate(self) -> None:
        if self.timesteps < 1:
            raise ConfigError("timesteps must be >= 1")
        if self.width % self.heads:
            raise ConfigError("width must be divisible by heads")


@dataclass
class LadConfig:
    resolution: int = _doc("voxel resolution R", 32)
    latent_grid: int = _doc("latent grid side g (m = g^3 codes)", 8)
    codebook_size: int = _doc("codebook entries K", 256)
    codebook_dim: int = _doc("codebook width D_q", 64)
    vq_channels: int = _doc("VQ autoencoder hidden channels", 32)
    commitment: float = _doc("commitment loss weight", 0.25)
    width: int = _doc("AR decoder width", 256)
    depth: int = _doc("AR decoder depth", 6)
    heads: int = _doc("AR decoder heads", 4)
    mlp_ratio: float = _doc("MLP hidden/width ratio", 4.0)
    adapter_period: int = _doc("insert an adapter after every this many blocks", 4)
    adapter_ratio: int = _doc("adapter bottleneck r = width // adapter_ratio", 8)
    adapter_input: str = _doc("fMRI summary fed to adapters: cf | femb", "cf")
    max_seq_len: int = _doc("positional capacity; 0 means L_c + 1 + m", 0)
    temperature: float = _doc("sampling temperature (0 = greedy)", 0.0)
    top_k: int = _doc("top-k filter when sampling (0 = off)", 0)

    def validate(self) -> None:
        if self.resolution % self.latent_grid:
            raise ConfigError("resolution must be divisible by latent_grid")
        if self.codebook_size < 2:
            raise ConfigError("codebook_size must be >= 2")
        if self.width % self.heads:
            raise ConfigError("width must be divisible by heads")
        if self.adapter_period < 1:
            raise ConfigError("adapter_period must be >= 1")
        if self.adapter_input not in ("cf", "femb"):
            raise ConfigError("adapter_input must be cf or femb")

    @property
    def n_codes(self) -> int:
        return self.latent_grid ** 3


@dataclass
class TrainConfig:
    batch_size: int = _doc("minibatch size for every stage", 32)
    vision_epochs: int = _doc("vision-encoder classifier epochs", 30)
    vision_lr: float = _doc("vision-encoder learning rate", 1e-3)
    vq_epochs: int = _doc("VQ autoencoder epochs", 150)
    vq_lr: float = _doc("VQ autoencoder learning rate", 2e-3)
    prior_epochs: int = _doc("base AR decoder epochs", 60)
    prior_lr: float = _doc("base AR decoder learning rate", 1e-3)
    stage1_epochs: int = _doc("stage-1 epochs", 60)
    lr_stage1: float = _doc("stage-1 learning rate", 1e-4)
    stage2_epochs: int = _doc("stage-2 epochs", 20)
    lr_stage2: float = _doc("stage-2 learning rate", 5e-5)
    warmup_frac: float = _doc("fraction of stage-1/2 steps with linear learning-rate warmup", 0.05)
    contrastive_weight: float = _doc("weight of the contrastive loss", 1.0)
    diffusion_weight: float = _doc("weight of the diffusion loss", 1.0)
    weight_decay: float = _doc("AdamW weight decay", 0.01)


@dataclass
class EvalConfig:
    n_points: int = _doc("points sampled per mesh", 512)
    n_eval_views: int = _doc("evaluation renders per shape", 6)
    nway_trials: int = _doc("trials per object for n-way accuracy", 100)
    sinkhorn_eps: float = _doc("Sinkhorn regularization", 0.01)
    exact_emd: bool = _doc("use the exact assignment solver for EMD", True)
    sample_seed: int = _doc("seed for diffusion and AR sampling", 0)
    ridge_lambdas: str = _doc("comma-separated ridge penalties swept by analyze", "0.1,1,10")


@dataclass
class AblationConfig:
    no_diffusion: bool = _doc("feed c_f directly as the generated vision latent", False)
    no_contrastive: bool = _doc("drop the contrastive loss", False)


@dataclass
class ExperimentConfig:
    preset: str = "desk"
    data: DataConfig = field(default_factory=DataConfig)
    nfe: NfeConfig = field(default_factory=NfeConfig)
    fbdm: FbdmConfig = field(default_factory=FbdmConfig)
    lad: LadConfig = field(default_factory=LadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    seed: int = 0
    pretrain_seed: int = 1234
    data_root: str = ""
    out: str = ""
    pretrained_dir: str = ""

    def validate(self) -> None:
        self.data.validate()
        self.nfe.validate()
        self.fbdm.validate()
        self.lad.validate()
        if self.nfe.frame_size != self.data.frame_size:
            raise ConfigError("nfe.frame_size must equal data.frame_size")
        if self.nfe.view_size != self.data.view_size:
            raise ConfigError("nfe.view_size must equal data.view_size")
        if self.lad.resolution != self.data.resolution:
            raise ConfigError("lad.resolution must equal data.resolution")
        if self.nfe.n_frames > self.data.n_frames:
            raise ConfigError("nfe.n_frames exceeds frames per trial")

    def resolved_data_root(self) -> Path:
        root = self.data_root or os.environ.get("RECON3D_DATA_ROOT", "")
        if not root:
            raise ConfigError("no dataset root: set data_root or RECON3D_DATA_ROOT")
        return Path(root)

    def model_dict(self) -> dict:
        """Everything that determines trained weights (paths excluded)."""
        d = dataclasses.asdict(self)
        for key in ("data_root", "out", "pretrained_dir"):
            d.pop(key)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.model_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


SECTIONS = {
    "data": DataConfig,
    "nfe": NfeConfig,
    "fbdm": FbdmConfig,
    "lad": LadConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "ablation": AblationConfig,
}
_EXPERIMENT_KEYS = ("preset", "seed", "pretrain_seed", "data_root", "out", "pretrained_dir")


def paper_scale() -> ExperimentConfig:
    """Hyperparameters of the published model (instantiation checks only)."""
    return ExperimentConfig(
        preset="paper",
        data=DataConfig(train_per_category=100, test_per_category=8, core_subjects=8,
                        ap_subjects=2, apac_subjects=4, apac_categories=42,
                        apac_per_category=4, test_repeats=2, n_views=192),
        nfe=NfeConfig(patch_size=16, embed_dim=1024, depth=24, heads=16, mlp_ratio=0.99,
                      latent_len=256, latent_dim=512, fa_heads=8, vision_patch=32,
                      vision_dim=768, vision_depth=12, vision_heads=12, n_view_frames=4),
        fbdm=FbdmConfig(timesteps=100, width=512, depth=6, heads=8, mlp_ratio=0.99),
        lad=LadConfig(codebook_size=8192, codebook_dim=512, vq_channels=64, width=3072,
                      depth=32, heads=16, mlp_ratio=0.99, adapter_period=4, max_seq_len=1027),
        eval=EvalConfig(n_points=2048),
    )


def desk() -> ExperimentConfig:
    return ExperimentConfig(preset="desk")


def fast() -> ExperimentConfig:
    """Smallest preset that still learns on the desk dataset on one CPU core."""
    return ExperimentConfig(
        preset="fast",
        nfe=NfeConfig(patch_size=32, embed_dim=128, depth=2, heads=4, latent_len=8,
                      latent_dim=64, fa_heads=4, vision_patch=32, vision_dim=64,
                      vision_depth=2, vision_heads=4),
        fbdm=FbdmConfig(width=128, depth=2, heads=4),
        lad=LadConfig(vq_channels=16, width=128, depth=4, heads=4, adapter_period=2),
        train=TrainConfig(batch_size=32, vision_epochs=12, vq_epochs=80, prior_epochs=40,
                          stage1_epochs=40, lr_stage1=5e-4, stage2_epochs=12, lr_stage2=5e-4),
    )


PRESETS = {"paper": paper_scale, "desk": desk, "fast": fast}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _coerce(value: str, typ):
    typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ, typ)
    if typ is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return typ(value)
    except ValueError:
        raise ConfigError(f"cannot parse {value!r} as {typ.__name__}") from None


def apply_overrides(cfg: ExperimentConfig, section: str, items: dict[str, str]) -> ExperimentConfig:
    if section == "experiment":
        updates = {}
        for key, value in items.items():
            if key not in _EXPERIMENT_KEYS or key == "preset":
                raise ConfigError(f"unknown key experiment.{key}")
            typ = int if key in ("seed", "pretrain_seed") else str
            updates[key] = _coerce(value, typ)
        return replace(cfg, **updates)
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    sub = getattr(cfg, section)
    types = {f.name: f.type for f in fields(sub)}
    updates = {}
    for key, value in items.items():
        if key not in types:
            raise ConfigError(f"unknown key {section}.{key}")
        updates[key] = _coerce(value, types[key])
    return replace(cfg, **{section: replace(sub, **updates)})


def load_config(path: str | os.PathLike | None = None, preset_name: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path)
    name = preset_name or parser.get("experiment", "preset", fallback="desk")
    cfg = preset(name)
    for section in parser.sections():
        items = {k: v for k, v in parser.items(section) if not (section == "experiment" and k == "preset")}
        cfg = apply_overrides(cfg, section, items)
    cfg.validate()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]", f"preset = {cfg.preset}"]
    for key in _EXPERIMENT_KEYS[1:]:
        lines.append(f"{key} = {getattr(cfg, key)}")
    for section in SECTIONS:
        lines.append("")
        lines.append(f"[{section}]")
        for f in fields(getattr(cfg, section)):
            lines.append(f"{f.name} = {getattr(getattr(cfg, section), f.name)}")
    return "\n".join(lines) + "\n"


def describe_keys() -> str:
    """Markdown table of every config key with its desk default."""
    cfg = desk()
    rows = ["| key | default | meaning |", "|---|---|---|"]
    rows.append("| experiment.preset | desk | base preset: paper, desk or fast |")
    rows.append("| experiment.seed | 0 | training and sampling seed |")
    rows.append("| experiment.pretrain_seed | 1234 | seed of the frozen vision encoder, VQ autoencoder and base decoder |")
    rows.append("| experiment.data_root | (env RECON3D_DATA_ROOT) | dataset directory |")
    rows.append("| experiment.out | | run directory |")
    rows.append("| experiment.pretrained_dir | out/pretrained | cache for frozen pretrained models |")
    for section in SECTIONS:
        for f in fields(getattr(cfg, section)):
            rows.append(f"| {section}.{f.name} | {getattr(getattr(cfg, section), f.name)} | {f.metadata['doc']} |")
    return "\n".join(rows)
