"""Segmentation metrics and evaluation reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volume import LabelVolume

__all__ = [
    "SubjectRecord",
    "MetricRow",
    "EvaluationReport",
    "dice",
    "boundary",
    "average_surface_distance",
    "structure_volume",
    "pearson",
    "bin_by_age",
    "flag_outliers",
    "AGE_EDGES",
    "CSV_COLUMNS",
]

AGE_EDGES = (26.0, 32.0, 36.0, 40.0, 45.0)
CSV_COLUMNS = ("subject_id", "structure_id", "structure", "dice", "asd_mm", "volume_mm3")


def _masks(pred: LabelVolume, gt: LabelVolume, structure: int):
    if not pred.geometry.same_as(gt.geometry):
        raise ValueError("prediction and ground truth must share geometry")
    return pred.labels == structure, gt.labels == structure


def _dice_masks(x: np.ndarray, y: np.ndarray) -> float:
    nx, ny = int(np.count_nonzero(x)), int(np.count_nonzero(y))
    if nx + ny == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(x & y)) / (nx + ny)


def dice(pred: LabelVolume, gt: LabelVolume, structure: int) -> float:
    """Overlap ``2|X & Y| / (|X| + |Y|)``; 1.0 when both masks are empty."""
    return _dice_masks(*_masks(pred, gt, structure))


_FACE = ndimage.generate_binary_structure(3, 1)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one face neighbour outside (the grid edge counts as outside)."""
    eroded = ndimage.binary_erosion(mask, structure=_FACE, border_value=0)
    return mask & ~eroded


def _surface_distances(a: np.ndarray, b: np.ndarray, spacing) -> tuple[np.ndarray, np.ndarray]:
    ba, bb = boundary(a), boundary(b)
    dist_to_b = ndimage.distance_transform_edt(~bb, sampling=spacing)
    dist_to_a = ndimage.distance_transform_edt(~ba, sampling=spacing)
    return dist_to_b[ba], dist_to_a[bb]


def average_surface_distance(pred: LabelVolume, gt: LabelVolume, structure: int) -> float:
    """Symmetric mean boundary-to-boundary distance in mm.

    All boundary distances from both directions are pooled before averaging.
    """
    x, y = _masks(pred, gt, structure)
    if not x.any() or not y.any():
        raise ValueError(f"structure {structure} is empty in one of the maps")
    d1, d2 = _surface_distances(x, y, gt.geometry.spacing)
    return float((d1.sum() + d2.sum()) / (d1.size + d2.size))


def structure_volume(labels: LabelVolume, structure: int) -> float:
    if structure not in labels.dictionary:
        raise ValueError(f"structure {structure} is not in the dictionary")
    return int(np.count_nonzero(labels.labels == structure)) * labels.geometry.voxel_volume


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1D sequences of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise ValueError("zero variance")
    r = float(np.dot(dx / sx, dy / sy))
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    age_weeks: float | None = None
    contrast: str = "T2w"

    def __post_init__(self):
        if self.age_weeks is not None and not 20 <= self.age_weeks <= 50:
            raise ValueError(f"{self.subject_id}: age {self.age_weeks} outside [20, 50] weeks")
        if self.contrast not in ("T1w", "T2w", "synthetic"):
            raise ValueError(f"unknown contrast {self.contrast!r}")


@dataclass(frozen=True)
class MetricRow:
    subject_id: str
    structure_id: int
    structure: str
    dice: float
    asd_mm: float
    volume_mm3: float


@dataclass
class EvaluationReport:
    rows: list[MetricRow] = field(default_factory=list)
    subjects: dict[str, SubjectRecord] = field(default_factory=dict)

    def add(self, row: MetricRow):
        if any(r.subject_id == row.subject_id and r.structure_id == row.structure_id for r in self.rows):
            raise ValueError(f"duplicate row for {row.subject_id}/{row.structure}")
        self.rows.append(row)

    def structures(self) -> list[tuple[int, str]]:
        return sorted({(r.structure_id, r.structure) for r in self.rows})

    def subject_ids(self) -> list[str]:
        return list(dict.fromkeys(r.subject_id for r in self.rows))

    def subject_mean_dice(self) -> dict[str, float]:
        acc: dict[str, list[float]] = {}
        for r in self.rows:
            acc.setdefault(r.subject_id, []).append(r.dice)
        return {s: float(np.mean(v)) for s, v in acc.items()}

    def per_structure(self) -> dict[str, dict]:
        out = {}
        for sid, name in self.structures():
            rs = [r for r in self.rows if r.structure_id == sid]
            d = np.array([r.dice for r in rs])
            a = np.array([r.asd_mm for r in rs])
            out[name] = {
                "structure_id": sid,
                "n": len(rs),
                "dice_mean": float(d.mean()),
                "dice_median": float(np.median(d)),
                "dice_std": float(d.std()),
                "asd_mean_mm": float(np.nanmean(a)) if np.isfinite(a).any() else float("nan"),
                "volume_mean_mm3": float(np.mean([r.volume_mm3 for r in rs])),
            }
        return out

    def volumes(self, structure_id: int) -> dict[str, float]:
        return {r.subject_id: r.volume_mm3 for r in self.rows if r.structure_id == structure_id}

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.subject_id, r.structure_id, r.structure, repr(r.dice), repr(r.asd_mm),
                            repr(r.volume_mm3)])

    @classmethod
    def from_csv(cls, path, subjects=None) -> "EvaluationReport":
        rep = cls(subjects=dict(subjects or {}))
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                rep.add(MetricRow(rec["subject_id"], int(rec["structure_id"]), rec["structure"],
                                  float(rec["dice"]), float(rec["asd_mm"]), float(rec["volume_mm3"])))
        return rep

    def summary(self, k: float = 2.5) -> dict:
        out = {
            "n_subjects": len(self.subject_ids()),
            "structures": self.per_structure(),
            "age_bins": bin_by_age(self),
        }
        if len(self.subject_ids()) >= 10:
            out["outliers"] = flag_outliers(self, k)
        return out

    def write_summary(self, path, **extra):
        with open(path, "w") as f:
            json.dump({**self.summary(), **extra}, f, indent=2, default=_json_default)
            f.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _bin_label(lo, hi, last):
    return f"[{lo:g}, {hi:g}]" if last else f"[{lo:g}, {hi:g})"


def _describe(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "values": []}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": int(v.size), "mean": float(v.mean()), "median": float(med),
            "q1": float(q1), "q3": float(q3), "values": v.tolist()}


def bin_by_age(report: EvaluationReport, edges=AGE_EDGES) -> dict[str, dict]:
    """Distribution of per-subject structure-averaged Dice per age bin.

    Bins are half-open except the last, which includes its upper edge.
    Subjects with no age or outside every bin land in ``"unbinned"``.
    """
    edges = [float(e) for e in edges]
    labels = [_bin_label(lo, hi, i == len(edges) - 2) for i, (lo, hi) in enumerate(zip(edges, edges[1:]))]
    groups: dict[str, list[float]] = {lab: [] for lab in labels}
    groups["unbinned"] = []
    for sid, d in report.subject_mean_dice().items():
        rec = report.subjects.get(sid)
        age = None if rec is None else rec.age_weeks
        groups[age_bin(age, edges)].append(d)
    return {lab: _describe(v) for lab, v in groups.items()}


def age_bin(age, edges=AGE_EDGES) -> str:
    edges = [float(e) for e in edges]
    if age is None:
        return "unbinned"
    n = len(edges) - 1
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        last = i == n - 1
        if lo <= age < hi or (last and age == hi):
            return _bin_label(lo, hi, last)
    return "unbinned"


def flag_outliers(report: EvaluationReport, k: float = 2.5) -> list[str]:
    """Subjects whose mean Dice is below ``mean - k * std`` of the population."""
    means = report.subject_mean_dice()
    if len(means) < 10:
        raise ValueError("outlier flagging needs at least 10 subjects")
    v = np.array(list(means.values()))
    mu, sd = v.mean(), v.std()
    cut = mu - k * sd
    return [s for s, d in means.items() if d < cut]
