"""Metric tables: CSV and aligned plain-text rendering in the standard column order."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

COLUMNS = ("2way", "10way", "perceptual", "ssim", "fpd", "cd", "emd")
# higher is better for the first, lower for the rest
HIGHER_BETTER = {"2way": True, "10way": True, "perceptual": False, "ssim": True,
                 "fpd": False, "cd": False, "emd": False}
CONVENTIONS = ("CD: symmetric sum of mean squared nearest distances x1e2; "
               "EMD: mean matched Euclidean distance x1e2; FPD x1e-1; "
               "perceptual: normalized frozen-encoder activation distance")
# values published for the full model on the real recordings, for side-by-side tables
PUBLISHED_FULL = {"2way": 0.839, "10way": 0.432, "perceptual": 0.230, "ssim": 0.734,
                  "fpd": 3.157, "cd": 1.742, "emd": 3.833}


@dataclass
class MetricReport:
    method: str
    per_object: dict[str, dict[str, float]] = field(default_factory=dict)
    aggregate: dict[str, float] = field(default_factory=dict)

    def add(self, object_id: str, values: dict[str, float]) -> None:
        self.per_object[object_id] = dict(values)

    def finalize(self) -> "MetricReport":
        self.aggregate = {}
        for col in COLUMNS:
            vals = [v[col] for v in self.per_object.values() if col in v]
            self.aggregate[col] = math.fsum(vals) / len(vals) if vals else float("nan")
        return self

    def row(self) -> dict:
        return {"method": self.method, **{c: self.aggregate.get(c, float("nan")) for c in COLUMNS}}

    def to_dict(self) -> dict:
        return {"method": self.method, "aggregate": self.aggregate, "per_object": self.per_object}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["method"], d.get("per_object", {}), d.get("aggregate", {}))


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method",) + COLUMNS)
    for r in reports:
        row = r.row() if isinstance(r, MetricReport) else r
        w.writerow([row["method"]] + [_fmt(row.get(c)) for c in COLUMNS])
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    rows = []
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != ("method",) + COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    for rec in reader:
        rows.append({"method": rec["method"], **{c: float(rec[c]) for c in COLUMNS}})
    return rows


def to_text(reports, title: str = "") -> str:
    rows = [r.row() if isinstance(r, MetricReport) else r for r in reports]
    width = max([len("method")] + [len(r["method"]) for r in rows])
    head = f"{'method':<{width}}  " + "  ".join(f"{c:>10}" for c in COLUMNS)
    arrows = f"{'':<{width}}  " + "  ".join(f"{'(up)' if HIGHER_BETTER[c] else '(down)':>10}" for c in COLUMNS)
    lines = [title] if title else []
    lines += [head, arrows, "-" * len(head)]
    for r in rows:
        cells = []
        for c in COLUMNS:
            v = r.get(c)
            cells.append(f"{'nan' if v is None or math.isnan(v) else f'{v:.3f}':>10}")
        lines.append(f"{r['method']:<{width}}  " + "  ".join(cells))
    lines.append(CONVENTIONS)
    return "\n".join(lines) + "\n"


def wins(a: dict, b: dict, columns=("perceptual", "ssim", "fpd", "cd", "emd")) -> list[str]:
    """Columns on which row ``a`` is strictly better than row ``b``."""
    out = []
    for c in columns:
        if HIGHER_BETTER[c] and a[c] > b[c] or not HIGHER_BETTER[c] and a[c] < b[c]:
            out.append(c)
    return out
