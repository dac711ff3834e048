"""Directory-level evaluation of predicted label maps against ground truth."""

from __future__ import annotations

import csv
import logging
import os

import numpy as np

from .labels import BRAIN_BACKGROUND_IDS, merge_for_eval
from .metrics import (EvaluationReport, MetricRow, SubjectRecord, average_surface_distance, dice,
                      pearson, structure_volume)
from .volume import LabelVolume, read_nifti

log = logging.getLogger(__name__)

__all__ = ["read_subjects", "find_volume", "evaluate_subject", "evaluate_dirs"]


def read_subjects(path) -> list[SubjectRecord]:
    """CSV with a ``subject_id`` column and optional ``age_weeks`` / ``contrast``."""
    out = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            age = rec.get("age_weeks")
            out.append(SubjectRecord(rec["subject_id"], float(age) if age not in (None, "") else None,
                                     rec.get("contrast") or "T2w"))
    return out


def find_volume(directory, subject_id) -> str | None:
    for ext in (".nii.gz", ".nii"):
        p = os.path.join(directory, subject_id + ext)
        if os.path.exists(p):
            return p
    return None


def _as_labels(vol, path) -> LabelVolume:
    if not isinstance(vol, LabelVolume):
        raise ValueError(f"{path}: expected an integer label map")
    return vol


def _with_dictionary(pred: LabelVolume, gt: LabelVolume) -> LabelVolume:
    """Give a prediction the ground-truth vocabulary (plus any extra ids it uses)."""
    dictionary = dict(gt.dictionary)
    for i in pred.present_ids():
        dictionary.setdefault(i, pred.dictionary.get(i, f"label_{i}"))
    return LabelVolume(pred.geometry, pred.labels, dictionary)


def evaluate_subject(pred: LabelVolume, gt: LabelVolume, subject_id: str,
                     exclude=BRAIN_BACKGROUND_IDS, merge: bool = True) -> list[MetricRow]:
    gt = LabelVolume(gt.geometry, gt.labels, gt.dictionary)
    pred = _with_dictionary(pred, gt)
    if merge:
        try:
            gt, pred = merge_for_eval(gt), merge_for_eval(pred)
        except ValueError as exc:
            log.warning("%s: CSF/Ventricles not merged (%s)", subject_id, exc)
    rows = []
    for sid, name in sorted(gt.dictionary.items()):
        if sid in exclude:
            continue
        try:
            asd = average_surface_distance(pred, gt, sid)
        except ValueError:
            asd = float("nan")
        rows.append(MetricRow(subject_id, sid, name, dice(pred, gt, sid), asd,
                              structure_volume(pred, sid)))
    return rows


def evaluate_dirs(pred_dir, gt_dir, subjects_csv, out_dir=None, pred_dir_b=None,
                  exclude=BRAIN_BACKGROUND_IDS, k: float = 2.5):
    """Evaluate every listed subject and optionally write the report files.

    Files are ``<subject_id>.nii[.gz]`` in both directories. With
    ``pred_dir_b`` (e.g. predictions from the other contrast) the per-structure
    Pearson correlation of predicted volumes across subjects is added to the
    summary. Returns ``(report, summary, missing)``.
    """
    subjects = read_subjects(subjects_csv)
    report = EvaluationReport(subjects={s.subject_id: s for s in subjects})
    missing = []
    volumes_b: dict[int, dict[str, float]] = {}
    for s in subjects:
        p, g = find_volume(pred_dir, s.subject_id), find_volume(gt_dir, s.subject_id)
        pb = find_volume(pred_dir_b, s.subject_id) if pred_dir_b else None
        if p is None or g is None or (pred_dir_b and pb is None):
            log.warning("subject %s missing, excluded", s.subject_id)
            missing.append(s.subject_id)
            continue
        gt = _as_labels(read_nifti(g), g)
        for row in evaluate_subject(_as_labels(read_nifti(p), p), gt, s.subject_id, exclude):
            report.add(row)
        if pb:
            for row in evaluate_subject(_as_labels(read_nifti(pb), pb), gt, s.subject_id, exclude):
                volumes_b.setdefault(row.structure_id, {})[s.subject_id] = row.volume_mm3
    summary = report.summary(k)
    summary["missing"] = missing
    if pred_dir_b:
        corr = {}
        for sid, name in report.structures():
            a = report.volumes(sid)
            ids = [i for i in a if i in volumes_b.get(sid, {})]
            try:
                corr[name] = pearson([a[i] for i in ids], [volumes_b[sid][i] for i in ids])
            except ValueError as exc:
                log.warning("no volume correlation for %s: %s", name, exc)
                corr[name] = float("nan")
        summary["volume_pearson"] = corr
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.to_csv(os.path.join(out_dir, "report.csv"))
        _write_json(os.path.join(out_dir, "summary.json"), summary)
        _write_json(os.path.join(out_dir, "age_bins.json"), summary["age_bins"])
        with open(os.path.join(out_dir, "outliers.txt"), "w") as f:
            for sid in summary.get("outliers", []):
                f.write(sid + "\n")
    return report, summary, missing


def _write_json(path, obj):
    import json

    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o))

    with open(path, "w") as f:
        json.dump(obj, f, indent=2, default=default)
        f.write("\n")
