"""Side-by-side renders of ground truth and reconstructions."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .data.render import render_views

PITCH = 60.0
LABEL_WIDTH = 80


def _unpack(arr: np.ndarray, r: int) -> np.ndarray:
    return np.unpackbits(arr, axis=-1, count=r).astype(bool)


def _row(occ: np.ndarray, views: int, size: int) -> np.ndarray:
    if not occ.any():
        return np.zeros((size, size * views), dtype=np.float32)
    imgs = render_views(occ, views, PITCH, size).images
    return np.concatenate(list(imgs), axis=1)


def _sources(run: Path) -> list[tuple[str, Path]]:
    found = [("full", p) for p in sorted(run.glob("recon/test*.npz"))]
    found += [(p.parent.parent.name, p) for p in sorted(run.glob("ablate/*/recon/test*.npz"))]
    return found


def comparison_grid(run_dir, views: int = 6, max_objects: int = 4, size: int = 96, resolution: int = 32) -> list[Path]:
    """One PNG per object: a ground-truth row and one row per method, ``views``
    columns at equal azimuth steps."""
    run = Path(run_dir)
    sources = _sources(run)
    if not sources:
        return []
    loaded = []
    for name, path in sources:
        z = np.load(path)
        loaded.append((name, list(z["keys"]), _unpack(z["recon"], resolution), _unpack(z["gt"], resolution)))
    all_keys = loaded[0][1]
    # spread the picks over the split so several categories appear
    picks = np.unique(np.linspace(0, len(all_keys) - 1, min(max_objects, len(all_keys))).round().astype(int))
    keys = [all_keys[i] for i in picks]
    out_dir = run / "figures"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for key in keys:
        gt = loaded[0][3][loaded[0][1].index(key)]
        rows, labels = [_row(gt, views, size)], ["gt"]
        for name, ks, recon, _ in loaded:
            if key in ks:
                rows.append(_row(recon[ks.index(key)], views, size))
                labels.append(name)
        img = np.concatenate(rows, axis=0)
        img = np.concatenate([np.zeros((len(img), LABEL_WIDTH), dtype=img.dtype), img], axis=1)
        pil = Image.fromarray((np.clip(img, 0, 1) * 255).astype(np.uint8))
        draw = ImageDraw.Draw(pil)
        for i, label in enumerate(labels):
            draw.text((4, i * size + size // 2 - 6), label, fill=255)
        path = out_dir / (str(key).replace("/", "_") + ".png")
        pil.save(path)
        written.append(path)
    (out_dir / "rows.txt").write_text("gt\n" + "\n".join(name for name, *_ in loaded) + "\n")
    return written
