"""One test per acceptance criterion. Each prints a single PASS/FAIL line."""
import itertools
import json
import time
from dataclasses import replace
from pathlib import Path

import mpmath
import numpy as np
import pytest
import torch

from recon3d import harness
from recon3d.config import FbdmConfig, load_config, preset
from recon3d.data.dataset import Dataset
from recon3d.data.render import render_views
from recon3d.data.shapes import generate_shape, sample_spec
from recon3d.fbdm import Denoiser, ddpm_sample, fbdm_loss, make_schedule, q_sample
from recon3d.lad import extract_mesh, sample_points
from recon3d.metrics import (PointFeatureNet, chamfer, emd_exact, emd_sinkhorn, fpd, object_fpd,
                             perceptual_distance, ssim, wins)
from recon3d.nfe import VisionEncoder, clip_align_loss
from recon3d.shapecheck import shape_check

from .conftest import SEEDS
from .test_fbdm import OracleDenoiser


def report(n, ok, detail):
    print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# ---- 1: metric oracles ---------------------------------------------------

def test_01_metric_oracles():
    t0 = time.time()
    cfg = preset("desk")
    net = PointFeatureNet(seed=0)
    torch.manual_seed(0)
    vision = VisionEncoder(cfg.nfe).eval()
    worst = {"cd": 0.0, "emd": 0.0, "fpd": 0.0, "perceptual": 0.0, "ssim": 0.0}
    rng = np.random.default_rng(0)
    for i in range(50):
        grid = generate_shape(sample_spec(i % 13, 1000 + i), 32)
        pts = sample_points(extract_mesh(grid), 256, seed=i)
        worst["cd"] = max(worst["cd"], chamfer(pts, pts))
        worst["emd"] = max(worst["emd"], emd_exact(pts, pts))
        worst["fpd"] = max(worst["fpd"], object_fpd(net, pts, pts))
        img = render_views(grid, 1).images[0]
        worst["ssim"] = max(worst["ssim"], abs(ssim(img, img) - 1.0))
        with torch.no_grad():
            worst["perceptual"] = max(worst["perceptual"], perceptual_distance(vision, img, img))
    self_ok = all(worst[k] <= 1e-6 for k in ("cd", "emd", "fpd", "perceptual")) and worst["ssim"] <= 1e-9

    brute_err = 0.0
    for n in range(1, 7):
        for trial in range(5):
            p, q = rng.random((n, 3)), rng.random((n, 3))
            c = np.linalg.norm(p[:, None] - q[None], axis=-1)
            best = min(sum(c[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n)))
            brute_err = max(brute_err, abs(emd_exact(p, q) - 100 * best / n))
    p, q = rng.random((64, 3)), rng.random((64, 3)) + np.array([0.2, 0.0, 0.0])
    exact = emd_exact(p, q)
    sink_rel = abs(emd_sinkhorn(p, q) - exact) / exact
    seconds = time.time() - t0
    ok = self_ok and brute_err < 1e-9 and sink_rel < 0.01 and seconds < 120
    report(1, ok, f"self-distance worst {worst}, brute-force EMD max err {brute_err:.2e}, "
                  f"sinkhorn rel err {sink_rel:.4f}, {seconds:.1f}s")


# ---- 2: diffusion laws ---------------------------------------------------

def test_02_diffusion_laws():
    t0 = time.time()
    s = make_schedule(100)
    mpmath.mp.dps = 50
    prod = mpmath.mpf(1)
    sched_err = 0.0
    for t in range(1, 101):
        beta = mpmath.mpf(1e-3) + (mpmath.mpf(0.2) - mpmath.mpf(1e-3)) * (t - 1) / 99
        prod *= 1 - beta
        sched_err = max(sched_err, abs(float(prod) - s.alpha_bars[t]))

    g = torch.Generator().manual_seed(0)
    var_err = {}
    x0 = torch.full((100_000,), 0.7, dtype=torch.float64)
    for t in (1, 25, 50, 100):
        eps = torch.randn(x0.shape, generator=g, dtype=torch.float64)
        xt = q_sample(x0, t, eps, s)
        var_err[t] = round(abs(xt.var().item() / (1 - s.alpha_bars[t]) - 1), 5)

    target = torch.randn(16, 8, 32, generator=g, dtype=torch.float64)
    out = ddpm_sample(OracleDenoiser(target, s), target, s, seed=1).tokens
    conv = ((out - target).norm() / target.norm()).item()
    seconds = time.time() - t0
    ok = sched_err <= 1e-10 and max(var_err.values()) < 0.02 and conv < 1e-3 and seconds < 300
    report(2, ok, f"schedule max err {sched_err:.2e}, variance rel err {var_err}, "
                  f"oracle sampler rel err {conv:.2e}, {seconds:.1f}s")


# ---- 3: gradient checks --------------------------------------------------

def _directional_check(fn, tensors, n_dirs=6, h=1e-6, seed=0):
    """Max relative error between autograd and central differences along
    random directions in the joint space of ``tensors``."""
    g = torch.Generator().manual_seed(seed)
    loss = fn()
    grads = torch.autograd.grad(loss, tensors)
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [torch.randn(t.shape, generator=g, dtype=t.dtype) for t in tensors]
        analytic = sum((gr * d).sum() for gr, d in zip(grads, dirs)).item()
        with torch.no_grad():
            for t, d in zip(tensors, dirs):
                t.add_(h * d)
            plus = fn().item()
            for t, d in zip(tensors, dirs):
                t.sub_(2 * h * d)
            minus = fn().item()
            for t, d in zip(tensors, dirs):
                t.add_(h * d)
        numeric = (plus - minus) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    return worst


def test_03_gradient_checks():
    t0 = time.time()
    g = torch.Generator().manual_seed(0)
    a = torch.randn(8, 16, dtype=torch.float64, generator=g, requires_grad=True)
    b = torch.randn(8, 16, dtype=torch.float64, generator=g, requires_grad=True)
    tau = torch.tensor(0.2, dtype=torch.float64, requires_grad=True)
    clip_err = _directional_check(lambda: clip_align_loss(a, b, tau), [a, b, tau])

    torch.manual_seed(0)
    den = Denoiser(FbdmConfig(width=32, depth=2, heads=2, timesteps=20), 4, 8).double()
    s = make_schedule(20)
    x0 = torch.randn(6, 4, 8, dtype=torch.float64, generator=g, requires_grad=True)
    cf = torch.randn(6, 4, 8, dtype=torch.float64, generator=g, requires_grad=True)

    def diffusion():  # the same t and noise on every call
        return fbdm_loss(den, x0, cf, s, torch.Generator().manual_seed(7))

    fbdm_err = _directional_check(diffusion, [x0, cf] + list(den.parameters()))
    seconds = time.time() - t0
    ok = clip_err <= 1e-4 and fbdm_err <= 1e-4 and seconds < 120
    report(3, ok, f"clip_align_loss rel err {clip_err:.2e}, fbdm_loss rel err {fbdm_err:.2e}, {seconds:.1f}s")


# ---- 4-8: trained desk runs ----------------------------------------------

def _pretrain_info(cfg):
    from recon3d.training import pretrained_path
    return json.loads((pretrained_path(cfg) / "pretrain.json").read_text())


def test_04_vq_roundtrip(desk_runs):
    info = _pretrain_info(desk_runs["seeds"][SEEDS[0]]["full"])
    iou, seconds = info["vq_train_iou"], info["seconds"]["vq"]
    n = len(Dataset(desk_runs["seeds"][SEEDS[0]]["full"].data_root).object_ids("train"))
    ok = iou >= 0.8 and seconds <= 1800
    report(4, ok, f"VQ round-trip IoU {iou:.4f} on training shapes ({n} training objects), {seconds / 60:.1f} min")


def test_05_end_to_end(desk_runs):
    full = desk_runs["seeds"][SEEDS[0]]["full"]
    rec = json.loads((Path(full.out) / "record.json").read_text())
    row = rec["metrics"]["test_core-01"]
    info = _pretrain_info(full)
    train_s = sum(info["seconds"].values()) + rec["seconds"]["stage1"] + rec["seconds"]["stage2"]
    s1 = rec["losses"]["stage1"]
    drop = 1 - s1[-1]["total"] / s1[0]["total"]
    ok = row["10way"] >= 0.2 and row["2way"] >= 0.6 and train_s <= 3 * 3600
    report(5, ok, f"10-way {row['10way']:.3f}, 2-way {row['2way']:.3f}, training {train_s / 3600:.2f} h "
                  f"(stage-1 loss drop {drop:.0%}, held-out NLL {rec['heldout_nll']})")


def test_06_ablation(desk_runs):
    per_seed = {}
    for seed, run in desk_runs["seeds"].items():
        per_seed[seed] = wins(run["ablation"]["full"], run["ablation"]["no_both"])
    good = sum(len(w) >= 3 for w in per_seed.values())
    report(6, good * 2 > len(per_seed), f"full beats no_both on {per_seed} ({good}/{len(per_seed)} seeds with >= 3)")


def test_07_ood(desk_runs):
    cds = {seed: (run["ood"]["in-distribution"]["cd"], run["ood"]["APT"]["cd"])
           for seed, run in desk_runs["seeds"].items()}
    worse = sum(apt > ind for ind, apt in cds.values())
    report(7, worse >= 2, f"(in-distribution CD, APT CD) per seed {cds}; APT worse in {worse}/{len(cds)}")


def test_08_roi_contrast(desk_runs):
    full = desk_runs["seeds"][SEEDS[0]]["full"]
    res = harness.cmd_analyze(full, noiseless=True)
    c = res["features"]["c_f"]
    report(8, c["contrast"] >= 0.1, f"c_f inside {c['inside']:.3f} outside {c['outside']:.3f} "
                                     f"contrast {c['contrast']:.3f} (lambda {c['lambda']})")


# ---- 9: paper-scale shapes -----------------------------------------------

def test_09_paper_scale_shape_check():
    r = shape_check()
    cfg = preset("paper")
    out = r["outputs"]
    ok = (out["c_f"] == [1, cfg.nfe.latent_len, cfg.nfe.latent_dim]
          and out["ar_logits"] == [1, cfg.lad.n_codes, cfg.lad.codebook_size]
          and out["codes"] == [1, cfg.lad.n_codes] and out["finite"]
          and len(r["ar_layout"]["adapters_after_blocks"]) == cfg.lad.depth // cfg.lad.adapter_period)
    report(9, ok, f"parameters {r['parameters']}, outputs {out}, {r['seconds']}s")


# ---- 10: determinism -----------------------------------------------------

def test_10_determinism(tiny, tmp_path):
    cfg = tiny["cfg"]
    other = replace(cfg, data_root=str(tmp_path / "data"))
    harness.cmd_gen_data(other)
    a = sorted(p.relative_to(cfg.data_root) for p in Path(cfg.data_root).rglob("*") if p.is_file())
    b = sorted(p.relative_to(other.data_root) for p in Path(other.data_root).rglob("*") if p.is_file())
    same_data = a == b and all((Path(cfg.data_root) / p).read_bytes() == (Path(other.data_root) / p).read_bytes()
                               for p in a)
    harness.cmd_evaluate(cfg)
    csv = Path(cfg.out) / "metrics" / "test_core-01.csv"
    first = csv.read_bytes()
    harness.cmd_evaluate(replace(cfg, data_root=other.data_root))
    same_csv = csv.read_bytes() == first
    report(10, same_data and same_csv, f"{len(a)} dataset files identical: {same_data}; evaluation CSV identical: "
                                       f"{same_csv}")
