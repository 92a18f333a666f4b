"""Experiment commands behind the CLI. Every command reads an
ExperimentConfig, writes into ``cfg.out`` and returns plain data."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, ExperimentConfig, dump_config
from .data.dataset import Dataset, build_dataset, manifest_bytes, plan_dataset
from .evaluation import analyze, evaluate, gt_control
from .metrics import MetricReport, to_csv, to_text
from .pipeline import Models, Reconstructor
from .training import (DataCache, FreezeError, bridge_latents, encode_codes, fresh_models, frozen_hashes, heldout_nll, pretrain,
                       pretrain_key, pretrained_path, train_data, train_stage1, train_stage2)

log = logging.getLogger(__name__)

ABLATIONS = {
    "full": (False, False),
    "no_diffusion": (True, False),
    "no_contrastive": (False, True),
    "no_both": (True, True),
}


class RunRecord:
    """JSON record of a run directory: config hash, checkpoint hashes, losses,
    metric rows and wall-clock seconds."""

    def __init__(self, out: Path):
        self.path = Path(out) / "record.json"
        self.data = json.loads(self.path.read_text()) if self.path.is_file() else {}

    def update(self, **kw) -> None:
        for k, v in kw.items():
            if isinstance(v, dict) and isinstance(self.data.get(k), dict):
                self.data[k].update(v)
            else:
                self.data[k] = v
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=1, sort_keys=True) + "\n")


def _out(cfg: ExperimentConfig) -> Path:
    if not cfg.out:
        raise ConfigError("no output directory: pass --out or set experiment.out")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg: ExperimentConfig) -> Dataset:
    root = cfg.resolved_data_root()
    if not (root / "manifest").is_file():
        raise ConfigError(f"dataset not found at {root}; run gen-data first")
    ds = Dataset(root)
    if ds.config != cfg.data:
        raise ConfigError(f"dataset at {root} was generated with a different data config")
    return ds


def _start(cfg: ExperimentConfig) -> tuple[Path, RunRecord]:
    out = _out(cfg)
    (out / "config.ini").write_text(dump_config(cfg))
    rec = RunRecord(out)
    rec.update(config_hash=cfg.hash(), preset=cfg.preset, seed=cfg.seed)
    return out, rec


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: ExperimentConfig, progress=None) -> Path:
    root = cfg.resolved_data_root()
    planned = manifest_bytes(plan_dataset(cfg.data))
    path = root / "manifest"
    if path.is_file() and path.read_bytes() == planned:
        try:
            Dataset(root).verify()
            log.info("dataset at %s is already complete", root)
            return path
        except ValueError:
            pass
    build_dataset(cfg.data, root, progress=progress)
    return path


def _require_stage2(cfg: ExperimentConfig) -> None:
    # checked before anything is written so a mistyped --out leaves no directory behind
    if not cfg.out:
        raise ConfigError("no output directory: pass --out or set experiment.out")
    path = _stage2_path(Path(cfg.out))
    if not path.is_file():
        raise ConfigError(f"missing stage-2 checkpoint {path}; run train-stage2 first")


def _stage1_path(out: Path) -> Path:
    return out / "stage1.pt"


def _stage2_path(out: Path) -> Path:
    return out / "stage2.pt"


def cmd_train_stage1(cfg: ExperimentConfig) -> dict:
    out, rec = _start(cfg)
    cache = DataCache(_dataset(cfg))
    t0 = time.time()
    info = pretrain(cfg, cache)
    rec.update(pretrained={"key": pretrain_key(cfg), "dir": str(pretrained_path(cfg)), "hashes": info["hashes"],
                           "vq_train_iou": info["vq_train_iou"]})
    t1 = time.time()
    models = fresh_models(cfg)
    data = train_data(cfg, cache, models)
    history = train_stage1(cfg, models, data)
    digest = checkpoint.save(_stage1_path(out), {"nfe": models.nfe, "denoiser": models.denoiser},
                             extra={"config_hash": cfg.hash()})
    rec.update(checkpoints={"stage1": digest}, losses={"stage1": history},
               seconds={"pretrain": t1 - t0, "stage1": time.time() - t1})
    return {"checkpoint": digest, "losses": history}


def load_stage(cfg: ExperimentConfig, stage: int) -> Models:
    out = Path(cfg.out)
    models = fresh_models(cfg)
    if stage == 1:
        checkpoint.load(_stage1_path(out), {"nfe": models.nfe, "denoiser": models.denoiser})
    else:
        expected = frozen_hashes(models)
        checkpoint.load(_stage2_path(out), {"nfe": models.nfe, "denoiser": models.denoiser, "ar": models.ar})
        if frozen_hashes(models) != expected:
            raise FreezeError("stage-2 checkpoint does not carry the pretrained frozen parameters")
    return models.eval()


def cmd_train_stage2(cfg: ExperimentConfig) -> dict:
    if not cfg.out or not _stage1_path(Path(cfg.out)).is_file():
        raise ConfigError(f"missing stage-1 checkpoint under {cfg.out or '(no --out)'}; run train-stage1 first")
    out, rec = _start(cfg)
    cache = DataCache(_dataset(cfg))
    pretrain(cfg, cache)
    models = load_stage(cfg, 1)
    data = train_data(cfg, cache, models)
    test = cache.ds.trials("test", cache.core_subject())
    frames = cache.frames(test)
    codes = encode_codes(models.vq, cache.voxels([t["object_id"] for t in test]))
    nll_before = heldout_nll(cfg, models, frames, codes, None if cfg.ablation.no_diffusion
                             else bridge_latents(cfg, models, frames))
    t0 = time.time()
    history = train_stage2(cfg, models, data)
    seconds = time.time() - t0
    nll_after = heldout_nll(cfg, models, frames, codes, None if cfg.ablation.no_diffusion
                            else bridge_latents(cfg, models, frames))
    digest = checkpoint.save(_stage2_path(out), {"nfe": models.nfe, "denoiser": models.denoiser, "ar": models.ar},
                             extra={"config_hash": cfg.hash()})
    rec.update(checkpoints={"stage2": digest}, losses={"stage2": history},
               heldout_nll={"adapter_init": nll_before, "trained": nll_after},
               frozen=frozen_hashes(models), seconds={"stage2": seconds})
    return {"checkpoint": digest, "losses": history, "heldout_nll": (nll_before, nll_after)}


def _write_reports(out: Path, name: str, reports: list[MetricReport], title: str) -> None:
    mdir = out / "metrics"
    mdir.mkdir(parents=True, exist_ok=True)
    (mdir / f"{name}.csv").write_text(to_csv(reports))
    (mdir / f"{name}.txt").write_text(to_text(reports, title))
    (mdir / f"{name}.json").write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True) + "\n")


def _save_recon(out: Path, name: str, keys, occ, gt) -> None:
    rdir = out / "recon"
    rdir.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(rdir / f"{name}.npz", keys=np.array(keys), recon=np.packbits(occ, axis=-1),
                        gt=np.packbits(gt, axis=-1))


def cmd_evaluate(cfg: ExperimentConfig, split: str = "test", subject: str | None = None) -> list[MetricReport]:
    _require_stage2(cfg)
    out, rec = _start(cfg)
    cache = DataCache(_dataset(cfg))
    models = load_stage(cfg, 2)
    if split == "test" and subject is None:
        subject = cache.core_subject()
    report, (keys, occ, gt) = evaluate(cfg, models, cache, split, subject, method=_method_name(cfg))
    control = gt_control(cfg, models.vision, keys, gt)
    name = split if subject is None else f"{split}_{subject}"
    _write_reports(out, name, [report, control], f"{name} ({len(keys)} trials)")
    _save_recon(out, name, keys, occ, gt)
    rec.update(metrics={name: report.row()}, evaluated_with=rec.data.get("checkpoints", {}).get("stage2"))
    return [report, control]


def _method_name(cfg: ExperimentConfig) -> str:
    for name, flags in ABLATIONS.items():
        if flags == (cfg.ablation.no_diffusion, cfg.ablation.no_contrastive):
            return name
    return "full"


def variant(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    """The config of one ablation: same model config, flags set, own run dir,
    pretrained components shared with the parent run."""
    nd, nc = ABLATIONS[name]
    shared = cfg.pretrained_dir or str(Path(cfg.out) / "pretrained")
    return replace(cfg, ablation=replace(cfg.ablation, no_diffusion=nd, no_contrastive=nc),
                   out=str(Path(cfg.out) / "ablate" / name), pretrained_dir=shared)


def _strip_ablation(cfg: ExperimentConfig) -> dict:
    d = cfg.model_dict()
    d.pop("ablation")
    return d


def cmd_ablate(cfg: ExperimentConfig, variants=tuple(ABLATIONS)) -> list[MetricReport]:
    out, rec = _start(cfg)
    reports = []
    base = _strip_ablation(cfg)
    for name in variants:
        v = variant(cfg, name)
        if _strip_ablation(v) != base:
            raise ConfigError("ablation configs must differ only in ablation flags")
        log.info("ablation %s", name)
        if not _stage2_path(Path(v.out)).is_file():
            cmd_train_stage1(v)
            cmd_train_stage2(v)
        r = cmd_evaluate(v)[0]
        r.method = name
        reports.append(r)
    _write_reports(out, "ablation", reports, "ablations on the Core test split")
    rec.update(ablation={r.method: r.row() for r in reports})
    return reports


def cmd_ood(cfg: ExperimentConfig) -> list[MetricReport]:
    _require_stage2(cfg)
    out, rec = _start(cfg)
    cache = DataCache(_dataset(cfg))
    models = load_stage(cfg, 2)
    reports = []
    for label, split, subject in (("in-distribution", "test", cache.core_subject()), ("APT", "ap", None),
                                  ("APACT", "apac", None)):
        if not cache.ds.trials(split, subject):
            log.info("no %s trials; skipped", split)
            continue
        r, (keys, occ, gt) = evaluate(cfg, models, cache, split, subject, method=label)
        _save_recon(out, f"ood_{split}", keys, occ, gt)
        reports.append(r)
    _write_reports(out, "ood", reports, "out-of-distribution subjects and categories")
    rec.update(ood={r.method: r.row() for r in reports})
    return reports


def cmd_analyze(cfg: ExperimentConfig, noiseless: bool = True) -> dict:
    _require_stage2(cfg)
    out, rec = _start(cfg)
    cache = DataCache(_dataset(cfg))
    models = load_stage(cfg, 2)
    result = analyze(cfg, models, cache, noiseless=noiseless)
    maps = result.pop("maps")
    np.savez_compressed(out / "analysis_maps.npz", roi=cache.ds.subject(result["subject"]).roi_mask, **maps)
    (out / "analysis.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    rec.update(analysis=result["features"])
    return result


def cmd_reconstruct(cfg: ExperimentConfig, trial: str, seed: int, out_path: str) -> Path:
    """Reconstruct one trial (its directory relative to the dataset root) to an OBJ file."""
    ds = _dataset(cfg)
    matches = [t for t in ds.manifest["trials"] if DataCache(ds).trial_key(t) == trial.strip("/")]
    if not matches:
        raise ConfigError(f"unknown trial {trial!r}; expected <split>/<subject>/<object_id>")
    models = load_stage(cfg, 2)
    mesh = Reconstructor(cfg, models).reconstruct(ds.load_trial(matches[0]).frames, seed=seed)
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mesh.to_obj(path)
    return path


def cmd_report(run_dir, views: int = 6, max_objects: int = 4) -> dict:
    from .figures import comparison_grid
    from .metrics import PUBLISHED_FULL, read_csv

    run = Path(run_dir)
    if not run.is_dir():
        raise ConfigError(f"run directory not found: {run}")
    mdir = run / "metrics"
    csvs = sorted(mdir.glob("*.csv")) if mdir.is_dir() else []
    if not csvs:
        raise ConfigError(f"no metric tables under {mdir}; run evaluate first")
    rows = [{"method": "published (real recordings)", **PUBLISHED_FULL}]
    sections = []
    for path in csvs:
        table = read_csv(path.read_text())
        sections.append(to_text(table, path.stem))
        for r in table:
            rows.append({**r, "method": f"{path.stem}:{r['method']}"})
    (run / "report.csv").write_text(to_csv(rows))
    text = to_text(rows, "all tables") + "\n" + "\n".join(sections)
    (run / "report.txt").write_text(text)
    figures = comparison_grid(run, views=views, max_objects=max_objects)
    return {"rows": rows, "figures": [str(f) for f in figures]}
