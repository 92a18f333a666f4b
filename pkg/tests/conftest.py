import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from recon3d import harness
from recon3d.config import load_config, preset

torch.set_num_threads(1)

# a minutes-scale end-to-end configuration for harness tests
TINY = """[experiment]
preset = fast
data_root = {root}/data
out = {root}/run
pretrained_dir = {root}/pretrained

[data]
n_categories = 10
train_per_category = 2
test_per_category = 1
n_views = 4
apac_categories = 2
apac_per_category = 5

[lad]
codebook_size = 32
width = 64
depth = 2
adapter_period = 1

[train]
batch_size = 5
vision_epochs = 1
vq_epochs = 2
prior_epochs = 1
stage1_epochs = 20
stage2_epochs = 2

[fbdm]
timesteps = 10

[eval]
n_points = 64
nway_trials = 10
"""

SEEDS = (0, 1, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    yield


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    ini = root / "tiny.ini"
    ini.write_text(TINY.format(root=root))
    cfg = load_config(ini)
    harness.cmd_gen_data(cfg)
    s1 = harness.cmd_train_stage1(cfg)
    s2 = harness.cmd_train_stage2(cfg)
    return {"ini": ini, "cfg": cfg, "root": root, "s1": s1, "s2": s2}


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """The fast preset on the desk dataset: full model and no_both for three
    seeds, sharing one set of pretrained frozen components. Set
    RECON3D_ACCEPT_DIR to keep the runs between sessions."""
    root = Path(os.environ.get("RECON3D_ACCEPT_DIR") or tmp_path_factory.mktemp("accept"))
    base = replace(preset("fast"), data_root=str(root / "desk"), pretrained_dir=str(root / "pretrained"))
    t0 = time.time()
    harness.cmd_gen_data(base)
    runs = {"root": root, "gen_seconds": time.time() - t0, "seeds": {}}
    for seed in SEEDS:
        cfg = replace(base, seed=seed, out=str(root / f"seed{seed}"))
        ablation = {r.method: r.row() for r in harness.cmd_ablate(cfg, variants=("full", "no_both"))}
        full = harness.variant(cfg, "full")
        ood = {r.method: r.row() for r in harness.cmd_ood(full)}
        runs["seeds"][seed] = {"cfg": cfg, "full": full, "ablation": ablation, "ood": ood}
    return runs
