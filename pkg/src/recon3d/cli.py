"""Command-line entry point: ``recon3d <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .config import ConfigError, load_config

COMMANDS = ("gen-data", "train-stage1", "train-stage2", "reconstruct", "evaluate", "ablate", "ood", "analyze",
            "report", "shape-check")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--preset", help="base preset (paper, desk, fast); overrides the file's preset")
    common.add_argument("--seed", type=int, help="training and sampling seed")
    common.add_argument("--out", help="run directory")
    common.add_argument("--data-root", help="dataset directory (default: $RECON3D_DATA_ROOT)")
    common.add_argument("--pretrained-dir", help="cache directory for the frozen pretrained components")
    common.add_argument("--timesteps", type=int, help="diffusion steps T")
    common.add_argument("--beta-min", type=float, help="first beta of the linear schedule")
    common.add_argument("--beta-max", type=float, help="last beta of the linear schedule")
    common.add_argument("--sample-seed", type=int, help="seed for diffusion and decoder sampling")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="recon3d", description="3-D shape reconstruction from simulated fMRI")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate the synthetic dataset")
    sub.add_parser("train-stage1", parents=[common], help="pretrain frozen parts if needed, then stage 1")
    sub.add_parser("train-stage2", parents=[common], help="adapter stage on top of a stage-1 run")
    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct one trial to an OBJ mesh")
    r.add_argument("--trial", required=True, help="trial directory relative to the dataset root")
    r.add_argument("--run", help="trained run directory (default: experiment.out of the config)")
    e = sub.add_parser("evaluate", parents=[common], help="reconstruct a split and compute all metrics")
    e.add_argument("--split", default="test", choices=("test", "ap", "apac", "train"))
    e.add_argument("--subject")
    sub.add_parser("ablate", parents=[common], help="full model and the three ablations")
    sub.add_parser("ood", parents=[common], help="evaluate on across-subject and held-out-category trials")
    a = sub.add_parser("analyze", parents=[common], help="ridge encoding analysis of the latents")
    a.add_argument("--noisy", action="store_true", help="use the recorded (noisy) frames instead of noiseless ones")
    rp = sub.add_parser("report", parents=[common], help="tables and comparison images for a run directory")
    rp.add_argument("run_dir", nargs="?", help="run directory (default: --out)")
    sub.add_parser("shape-check", parents=[common], help="instantiate the paper-scale models and run one forward")
    return p


def _config(args):
    cfg = load_config(args.config, args.preset)
    upd = {}
    # for reconstruct, --out names the mesh file and --seed the sampling seed
    keys = ("data_root", "pretrained_dir") if args.command == "reconstruct" else ("seed", "out", "data_root",
                                                                                  "pretrained_dir")
    if args.command == "reconstruct" and args.run:
        upd["out"] = args.run
    for key in keys:
        val = getattr(args, key)
        if val is not None:
            upd[key] = val
    cfg = replace(cfg, **upd)
    f = {}
    if args.timesteps is not None:
        f["timesteps"] = args.timesteps
    if args.beta_min is not None:
        f["beta_min"] = args.beta_min
    if args.beta_max is not None:
        f["beta_max"] = args.beta_max
    if f:
        cfg = replace(cfg, fbdm=replace(cfg.fbdm, **f))
    if args.sample_seed is not None:
        cfg = replace(cfg, eval=replace(cfg.eval, sample_seed=args.sample_seed))
    cfg.validate()
    return cfg


def run(argv=None) -> object:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    cfg = _config(args)
    from . import harness

    cmd = args.command
    if cmd == "gen-data":
        return str(harness.cmd_gen_data(cfg))
    if cmd == "train-stage1":
        return harness.cmd_train_stage1(cfg)["checkpoint"]
    if cmd == "train-stage2":
        return harness.cmd_train_stage2(cfg)["checkpoint"]
    if cmd == "reconstruct":
        if not cfg.out:
            raise ConfigError("reconstruct needs the trained run directory (--run)")
        seed = args.seed if args.seed is not None else cfg.eval.sample_seed
        return str(harness.cmd_reconstruct(cfg, args.trial, seed, args.out or "mesh.obj"))
    if cmd == "evaluate":
        from .metrics import to_text
        return to_text(harness.cmd_evaluate(cfg, args.split, args.subject))
    if cmd == "ablate":
        from .metrics import to_text
        return to_text(harness.cmd_ablate(cfg))
    if cmd == "ood":
        from .metrics import to_text
        return to_text(harness.cmd_ood(cfg))
    if cmd == "analyze":
        return json.dumps(harness.cmd_analyze(cfg, noiseless=not args.noisy)["features"], indent=1, sort_keys=True)
    if cmd == "report":
        run_dir = args.run_dir or cfg.out
        if not run_dir:
            raise ConfigError("report needs a run directory")
        res = harness.cmd_report(run_dir)
        return "\n".join([f"{r['method']}" for r in res["rows"]] + res["figures"])
    if cmd == "shape-check":
        from .shapecheck import shape_check
        return json.dumps(shape_check(), indent=1)
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None) -> int:
    try:
        result = run(argv)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # noqa: BLE001 - every failure becomes one machine-readable line
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    if result is not None:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
