"""Reconstruction of a split and the metric suite, plus the encoding-model
ROI analysis of the latents."""
from __future__ import annotations

import logging

import numpy as np
import torch

from .config import ConfigError, ExperimentConfig
from .data.brain import simulate_fmri
from .data.dataset import EVAL_FRAMES, _derive_seed, select_frames
from .data.render import ViewSet, render_views
from .data.shapes import ShapeSpec, generate_shape
from .lad import extract_mesh, sample_points
from .metrics import (MetricReport, PointFeatureNet, chamfer, emd_exact, emd_sinkhorn, nway_accuracy, object_fpd,
                      pearson_map, perceptual_distance, ridge_fit, roi_contrast, ssim)
from .pipeline import Models, Reconstructor
from .training import DataCache, bridge_latents, fixed_cv, view_tokens

log = logging.getLogger(__name__)

N_EVAL_VIEWS = 6


def eval_renders(occ: np.ndarray, cfg: ExperimentConfig) -> np.ndarray:
    """Six renders at 60-degree azimuth steps; blank images for an empty grid."""
    if not occ.any():
        return np.zeros((N_EVAL_VIEWS, cfg.data.view_size, cfg.data.view_size), dtype=np.float32)
    return render_views(occ, N_EVAL_VIEWS, cfg.data.pitch, cfg.data.view_size).images


def surface_points(occ: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Area-weighted surface samples; an empty grid collapses to the origin."""
    if not occ.any():
        return np.zeros((n, 3))
    return sample_points(extract_mesh(occ), n, seed)


@torch.no_grad()
def image_features(vision, renders: np.ndarray) -> np.ndarray:
    """(n, 6, H, W) -> (n, D) view-averaged embeddings of the frozen encoder."""
    x = torch.as_tensor(renders.reshape(-1, *renders.shape[2:]), dtype=torch.float32)
    emb = torch.cat([vision.embed(x[i:i + 64]) for i in range(0, len(x), 64)])
    return emb.view(renders.shape[0], renders.shape[1], -1).mean(1).double().numpy()


def score(cfg: ExperimentConfig, vision, method: str, keys, recon_occ, gt_occ, point_seed: int = 0) -> MetricReport:
    """All metrics for aligned lists of reconstructed and ground-truth grids."""
    ev = cfg.eval
    net = PointFeatureNet(seed=0)
    rec_r = np.stack([eval_renders(o, cfg) for o in recon_occ])
    gt_r = np.stack([eval_renders(o, cfg) for o in gt_occ])
    rec_f, gt_f = image_features(vision, rec_r), image_features(vision, gt_r)
    n = len(keys)
    two = nway_accuracy(rec_f, gt_f, 2, 1, ev.nway_trials, seed=ev.sample_seed) if n >= 2 else np.full(n, np.nan)
    ten = nway_accuracy(rec_f, gt_f, 10, 1, ev.nway_trials, seed=ev.sample_seed) if n >= 10 else np.full(n, np.nan)
    report = MetricReport(method)
    for i, key in enumerate(keys):
        p = surface_points(recon_occ[i], ev.n_points, point_seed)
        q = surface_points(gt_occ[i], ev.n_points, point_seed)
        emd = emd_exact(p, q) if ev.exact_emd else emd_sinkhorn(p, q, ev.sinkhorn_eps)
        report.add(key, {
            "2way": float(two[i]), "10way": float(ten[i]),
            "perceptual": float(np.mean(perceptual_distance(vision, rec_r[i], gt_r[i]))),
            "ssim": float(np.mean([ssim(a, b) for a, b in zip(rec_r[i], gt_r[i])])),
            "fpd": object_fpd(net, p, q), "cd": chamfer(p, q), "emd": emd,
            "empty": float(not recon_occ[i].any()),
        })
    return report.finalize()


def split_trials(cache: DataCache, split: str, subject: str | None = None) -> list[dict]:
    trials = cache.ds.trials(split, subject)
    if not trials:
        raise ConfigError(f"no trials for split {split!r}" + (f" subject {subject!r}" if subject else ""))
    return trials


def reconstruct_split(cfg: ExperimentConfig, models: Models, cache: DataCache, trials: list[dict]):
    rec = Reconstructor(cfg, models)
    frames = cache.frames(trials)
    occ = rec.voxels(frames, seed=cfg.eval.sample_seed)
    gt = cache.voxels([t["object_id"] for t in trials]).astype(bool)
    return [cache.trial_key(t) for t in trials], occ, gt


def evaluate(cfg: ExperimentConfig, models: Models, cache: DataCache, split: str = "test",
             subject: str | None = None, method: str = "full"):
    trials = split_trials(cache, split, subject)
    keys, occ, gt = reconstruct_split(cfg, models, cache, trials)
    log.info("%s: %d trials reconstructed, %d empty", split, len(keys), int((~occ.any(axis=(1, 2, 3))).sum()))
    return score(cfg, models.vision, method, keys, occ, gt), (keys, occ, gt)


def gt_control(cfg: ExperimentConfig, vision, keys, gt) -> MetricReport:
    """GT scored against itself: the identity row of the table."""
    return score(cfg, vision, "gt", keys, gt, gt)


# ---------------------------------------------------------------- encoding analysis


def noiseless_frames(cache: DataCache, trials: list[dict]) -> np.ndarray:
    """Regenerate trials for the same subjects and sessions without measurement noise."""
    ds = cache.ds
    subjects = {}
    out = []
    for t in trials:
        if t["subject"] not in subjects:
            subjects[t["subject"]] = ds.subject(t["subject"], noise_std=0.0)
        obj = ds.objects[t["object_id"]]
        spec = ShapeSpec.from_dict(obj["spec"])
        views = ViewSet(ds.load_views(t["object_id"]), None, ds.config.pitch)
        trial = simulate_fmri(views, subjects[t["subject"]], seed=_derive_seed(spec.seed, t["session"]),
                              n_frames=ds.config.n_frames, noise_std=0.0)
        out.append(trial.frames)
    return np.stack(out)


@torch.no_grad()
def brain_latents(models: Models, frames: np.ndarray) -> torch.Tensor:
    out = []
    for i in range(0, len(frames), 32):
        x = torch.as_tensor(np.stack([select_frames(f, "eval")[1] for f in frames[i:i + 32]]), dtype=torch.float32)
        out.append(models.nfe(x)[0].tokens)
    return torch.cat(out)


def analyze(cfg: ExperimentConfig, models: Models, cache: DataCache, noiseless: bool = True) -> dict:
    """Ridge maps from each latent (c_f, c_v, c_v_hat) to the mean evaluation
    frame, fit on training trials and scored by per-pixel correlation on test
    trials; reports ROI contrast at the best penalty."""
    subject = cache.core_subject()
    train_t = split_trials(cache, "train", subject)
    test_t = split_trials(cache, "test", subject)
    if noiseless:
        f_train, f_test = noiseless_frames(cache, train_t), noiseless_frames(cache, test_t)
    else:
        f_train, f_test = cache.frames(train_t), cache.frames(test_t)
    ev = list(EVAL_FRAMES)
    y_train = f_train[:, ev].mean(1).reshape(len(f_train), -1)
    y_test = f_test[:, ev].mean(1).reshape(len(f_test), -1)
    roi = cache.ds.subject(subject).roi_mask

    def cv_for(trials):
        oids = [t["object_id"] for t in trials]
        tok = view_tokens(models.vision, cache.views(oids))
        return fixed_cv(tok, cfg.nfe.n_view_frames, cfg.eval.sample_seed)

    feats = {
        "c_f": (brain_latents(models, f_train), brain_latents(models, f_test)),
        "c_v": (cv_for(train_t), cv_for(test_t)),
    }
    if not cfg.ablation.no_diffusion:
        feats["c_v_hat"] = (bridge_latents(cfg, models, f_train), bridge_latents(cfg, models, f_test))
    lambdas = [float(v) for v in cfg.eval.ridge_lambdas.split(",")]
    result = {"subject": subject, "noiseless": noiseless, "lambdas": lambdas, "features": {}}
    for name, (a, b) in feats.items():
        xa = a.reshape(len(a), -1).double().numpy()
        xb = b.reshape(len(b), -1).double().numpy()
        mu, sd = xa.mean(0), xa.std(0) + 1e-8
        xa, xb = (xa - mu) / sd, (xb - mu) / sd
        y_mu = y_train.mean(0)
        best = None
        for lam in lambdas:
            w = ridge_fit(xa, y_train - y_mu, lam)
            r = pearson_map(xb @ w + y_mu, y_test).reshape(roi.shape)
            inside, outside = roi_contrast(r, roi)
            entry = {"lambda": lam, "mean_r": float(r.mean()), "inside": inside, "outside": outside}
            if best is None or entry["mean_r"] > best["mean_r"]:
                best, best_map = entry, r
        best["contrast"] = best["inside"] - best["outside"]
        result["features"][name] = best
        result.setdefault("maps", {})[name] = best_map
    return result
