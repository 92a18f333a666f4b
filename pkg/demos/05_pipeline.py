"""
End to end on a tiny configuration
==================================

Generate a small dataset, train both stages, evaluate and write the report.
The same steps are available as ``recon3d`` subcommands; this runs them
in-process on a configuration small enough for a few minutes of CPU.
"""
import sys
import tempfile
from pathlib import Path

from recon3d import harness
from recon3d.config import load_config

root = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="recon3d-"))
ini = root / "tiny.ini"
ini.parent.mkdir(parents=True, exist_ok=True)
ini.write_text(f"""[experiment]
preset = fast
data_root = {root}/data
out = {root}/run

[data]
n_categories = 10
train_per_category = 2
test_per_category = 1
n_views = 4

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
""")
cfg = load_config(ini)

harness.cmd_gen_data(cfg)
print("stage 1 losses", [round(h["total"], 3) for h in harness.cmd_train_stage1(cfg)["losses"]][::5])
print("held-out NLL before / after stage 2", harness.cmd_train_stage2(cfg)["heldout_nll"])
for r in harness.cmd_evaluate(cfg):
    print(r.method, {k: round(v, 3) for k, v in r.aggregate.items()})
print("report figures:", harness.cmd_report(cfg.out)["figures"])
