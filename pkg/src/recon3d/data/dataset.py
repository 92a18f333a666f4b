"""On-disk paired dataset: objects, renders and simulated subject trials.

Layout under ``root``::

    manifest                                  JSON, sorted keys
    objects/<object_id>/voxel.bin             bit-packed occupancy
    objects/<object_id>/views/view_<i>.f32    rendered views
    <split>/<subject>/<object_id>/frame_<nn>.f32

Splits are ``train`` and ``test`` (Core subjects), ``ap`` (across-person
subjects viewing the Core test objects) and ``apac`` (across-person subjects
viewing objects from held-out categories). Further sessions of the same
object are stored under ``<object_id>.<session>``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import ConfigError, DataConfig
from . import io
from .brain import BrainForwardModel, FmriTrial, make_subject, simulate_fmri
from .render import render_views
from .shapes import ShapeSpec, category_name, generate_shape, sample_spec

FORMAT = "recon3d-dataset/1"
EVAL_FRAMES = (2, 3, 4, 5, 6, 7)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, dtype=np.uint64)[0] >> 1)


def subject_roster(cfg: DataConfig) -> list[dict]:
    roster = []
    for group, count, offset in (("core", cfg.core_subjects, 0), ("ap", cfg.ap_subjects, 100),
                                 ("apac", cfg.apac_subjects, 200)):
        for i in range(count):
            roster.append({
                "id": f"{group}-{i + 1:02d}", "group": group, "seed": _derive_seed(cfg.seed, offset + i),
                "noise_std": cfg.noise_std, "background_std": cfg.background_std,
                "smoothing": cfg.smoothing, "lag": cfg.lag, "pool_width": cfg.pool_width,
                "feature_grid": cfg.feature_grid, "size": cfg.frame_size,
            })
    return roster


def subject_from_entry(entry: dict, noise_std: float | None = None) -> BrainForwardModel:
    return make_subject(entry["id"], entry["seed"], size=entry["size"], feature_grid=entry["feature_grid"],
                        smoothing=entry["smoothing"],
                        noise_std=entry["noise_std"] if noise_std is None else noise_std,
                        background_std=entry["background_std"], lag=entry["lag"],
                        pool_width=entry["pool_width"])


def _trial_dir(split, subject, object_id, session) -> str:
    name = object_id if session == 0 else f"{object_id}.{session}"
    return f"{split}/{subject}/{name}"


def plan_dataset(cfg: DataConfig) -> dict:
    """The manifest that :func:`build_dataset` would write, without touching disk."""
    cfg.validate()
    objects, splits = [], {"train": {}, "test": {}, "ap": {}, "apac": {}}
    core_train, core_test, apac_objs = [], [], []
    for cat in range(cfg.n_categories):
        for i in range(cfg.train_per_category + cfg.test_per_category):
            oid = f"{category_name(cat)}-{i:04d}"
            spec = sample_spec(cat, _derive_seed(cfg.seed, cat, i))
            objects.append(_object_entry(oid, cat, spec, cfg))
            (core_train if i < cfg.train_per_category else core_test).append(oid)
    for j in range(cfg.apac_categories):
        cat = cfg.n_categories + j
        for i in range(cfg.apac_per_category):
            oid = f"{category_name(cat)}-{i:04d}"
            spec = sample_spec(cat, _derive_seed(cfg.seed, cat, i))
            objects.append(_object_entry(oid, cat, spec, cfg))
            apac_objs.append(oid)

    roster = subject_roster(cfg)
    trials = []

    def add(split, subject, oids, sessions):
        splits[split][subject] = list(oids)
        for oid in oids:
            for ses in range(sessions):
                d = _trial_dir(split, subject, oid, ses)
                trials.append({"split": split, "subject": subject, "object_id": oid, "session": ses,
                               "frames": [f"{d}/frame_{f:02d}.f32" for f in range(cfg.n_frames)]})

    for s in roster:
        if s["group"] == "core":
            add("train", s["id"], core_train, 1)
            add("test", s["id"], core_test, cfg.test_repeats)
        elif s["group"] == "ap":
            add("ap", s["id"], core_test, 1)
        else:
            add("apac", s["id"], apac_objs, 1)
    return {
        "format": FORMAT,
        "root": ".",
        "seed": cfg.seed,
        "config": dataclasses.asdict(cfg),
        "categories": [category_name(c) for c in range(cfg.n_categories)],
        "apac_categories": [category_name(cfg.n_categories + j) for j in range(cfg.apac_categories)],
        "subjects": roster,
        "objects": objects,
        "splits": splits,
        "trials": trials,
    }


def _object_entry(oid, cat, spec: ShapeSpec, cfg: DataConfig) -> dict:
    return {"object_id": oid, "category": category_name(cat), "class_id": cat, "spec": spec.to_dict(),
            "voxel": f"objects/{oid}/voxel.bin",
            "views": [f"objects/{oid}/views/view_{i:03d}.f32" for i in range(cfg.n_views)]}


def manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, sort_keys=True, indent=1) + "\n").encode()


def build_dataset(cfg: DataConfig, root, progress=None) -> dict:
    if cfg.n_categories < 1:
        raise ConfigError("dataset needs at least one category")
    manifest = plan_dataset(cfg)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    subjects = {s["id"]: subject_from_entry(s) for s in manifest["subjects"]}
    by_object: dict[str, list[dict]] = {}
    for t in manifest["trials"]:
        by_object.setdefault(t["object_id"], []).append(t)
    for n, obj in enumerate(manifest["objects"]):
        grid = generate_shape(ShapeSpec.from_dict(obj["spec"]), cfg.resolution)
        (root / obj["voxel"]).parent.mkdir(parents=True, exist_ok=True)
        io.write_voxels(root / obj["voxel"], grid.occupancy)
        views = render_views(grid, cfg.n_views, cfg.pitch, cfg.view_size)
        (root / obj["views"][0]).parent.mkdir(parents=True, exist_ok=True)
        for path, img in zip(obj["views"], views.images):
            io.write_f32(root / path, img)
        obj_seed = obj["spec"]["seed"]
        for t in by_object.get(obj["object_id"], []):
            trial = simulate_fmri(views, subjects[t["subject"]], seed=_derive_seed(obj_seed, t["session"]),
                                  n_frames=cfg.n_frames)
            (root / t["frames"][0]).parent.mkdir(parents=True, exist_ok=True)
            for path, frame in zip(t["frames"], trial.frames):
                io.write_f32(root / path, frame)
        if progress:
            progress(n + 1, len(manifest["objects"]))
    (root / "manifest").write_bytes(manifest_bytes(manifest))
    return manifest


class Dataset:
    """Read-only access to a built dataset."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest"
        if not path.is_file():
            raise ConfigError(f"no dataset manifest at {path}")
        self.manifest = json.loads(path.read_text())
        self.config = DataConfig(**self.manifest["config"])
        self.objects = {o["object_id"]: o for o in self.manifest["objects"]}
        self.subjects = {s["id"]: s for s in self.manifest["subjects"]}

    @property
    def categories(self) -> list[str]:
        return self.manifest["categories"]

    def trials(self, split: str, subject: str | None = None) -> list[dict]:
        return [t for t in self.manifest["trials"]
                if t["split"] == split and (subject is None or t["subject"] == subject)]

    def subject_ids(self, group: str) -> list[str]:
        return [s["id"] for s in self.manifest["subjects"] if s["group"] == group]

    def object_ids(self, split: str) -> list[str]:
        seen: dict[str, None] = {}
        for oids in self.manifest["splits"][split].values():
            for oid in oids:
                seen.setdefault(oid)
        return list(seen)

    def load_trial(self, trial: dict) -> FmriTrial:
        frames = np.stack([io.read_f32(self.root / p) for p in trial["frames"]])
        return FmriTrial(frames, trial["subject"], trial["object_id"], trial["split"], trial["session"])

    def load_views(self, object_id: str) -> np.ndarray:
        return np.stack([io.read_f32(self.root / p) for p in self.objects[object_id]["views"]])

    def load_voxels(self, object_id: str) -> np.ndarray:
        return io.read_voxels(self.root / self.objects[object_id]["voxel"])

    def class_id(self, object_id: str) -> int:
        return self.objects[object_id]["class_id"]

    def subject(self, subject_id: str, noise_std: float | None = None) -> BrainForwardModel:
        return subject_from_entry(self.subjects[subject_id], noise_std)

    def verify(self) -> None:
        """Check file presence and split hygiene; raises ValueError on violation."""
        for o in self.manifest["objects"]:
            for p in [o["voxel"], *o["views"]]:
                if not (self.root / p).is_file():
                    raise ValueError(f"missing file {p}")
        for t in self.manifest["trials"]:
            for p in t["frames"]:
                if not (self.root / p).is_file():
                    raise ValueError(f"missing file {p}")
        splits = self.manifest["splits"]
        for subject, test_objs in splits["test"].items():
            overlap = set(test_objs) & set(splits["train"].get(subject, []))
            if overlap:
                raise ValueError(f"{subject}: objects in both train and test: {sorted(overlap)[:3]}")
        core = set(self.manifest["categories"])
        if core & set(self.manifest["apac_categories"]):
            raise ValueError("APAC categories overlap Core categories")


def select_frames(trial: FmriTrial | np.ndarray, mode: str = "eval", seed: int = 0, count: int = 6):
    """Pick ``count`` frames: uniformly at random (train) or the middle ones (eval).

    Returns ``(indices, frames)`` with indices ascending.
    """
    frames = trial.frames if isinstance(trial, FmriTrial) else np.asarray(trial)
    if len(frames) != 10:
        raise ValueError(f"expected 10 frames, got {len(frames)}")
    if mode == "eval":
        idx = np.array(EVAL_FRAMES[:count]) if count == 6 else np.arange(count) + (10 - count) // 2
    elif mode == "train":
        idx = np.sort(np.random.default_rng(seed).choice(10, size=count, replace=False))
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return idx, frames[idx]
