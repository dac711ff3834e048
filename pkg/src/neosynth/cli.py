"""Command-line entry point: ``neosynth <subcommand> ...``.

Exit codes: 0 success, 1 partial failure, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .evaluation import evaluate_dirs
from .labels import WM, fuse_head_labels, subdivide_label
from .patches import PatchSpec, sample_patches, write_shard
from .pipeline import (ConfigError, GenerationConfig, Subject, generate_dataset, load_config,
                       read_manifest, replay, subdivision_path)
from .surfaces import gm_from_surfaces, read_mesh, splice_gm, voxelize_pv
from .volume import Geometry, LabelVolume, ScalarVolume, read_nifti, write_nifti

log = logging.getLogger("neosynth")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _stem(path: str) -> str:
    name = os.path.basename(path)
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return name[: -len(ext)]
    return name


def _read_subject_list(path) -> list[Subject]:
    with open(path, newline="") as f:
        return [Subject(r["subject_id"], r["labels"], r.get("image") or None) for r in csv.DictReader(f)]


def _config(args) -> GenerationConfig:
    cfg = load_config(args.config) if args.config else GenerationConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_generate(args) -> int:
    cfg = _config(args)
    subjects = _read_subject_list(args.subjects) if args.subjects else []
    subjects += [Subject(_stem(p), p, None) for p in args.labels]
    if not subjects:
        raise ConfigError("no subjects given (use --subjects or label paths)")
    manifest, failed = generate_dataset(subjects, cfg, args.out, jobs=args.jobs)
    print(f"wrote {manifest} ({failed} failed)")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_subdivide(args) -> int:
    labels, image = read_nifti(args.labels), read_nifti(args.image)
    if not isinstance(labels, LabelVolume) or not isinstance(image, ScalarVolume):
        raise ConfigError("subdivide-labels needs an integer label map and a float image")
    out_base = os.path.join(args.out, os.path.basename(args.labels)) if args.out else args.labels
    os.makedirs(os.path.dirname(out_base) or ".", exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    for n in args.n:
        sub = subdivide_label(labels, image, args.target_label, n, seed=seed)
        path = subdivision_path(out_base, n)
        write_nifti(sub, path)
        print(path)
    return EXIT_OK


def cmd_fuse(args) -> int:
    brain, head = read_nifti(args.brain), read_nifti(args.head)
    fused = fuse_head_labels(brain, head)
    write_nifti(fused, args.out)
    print(args.out)
    return EXIT_OK


def cmd_surf2labels(args) -> int:
    base = read_nifti(args.labels)
    white, pial = read_mesh(args.white), read_mesh(args.pial)
    geom = base.geometry
    pv_white = voxelize_pv(white, geom, args.supersample)
    pv_gm, clamped = gm_from_surfaces(white, pial, geom, args.supersample, return_clamped=True)
    spliced = splice_gm(base, pv_gm, pv_white)
    write_nifti(spliced, args.out)
    if args.pv_out:
        write_nifti(pv_gm, args.pv_out)
    gm_before = int(np.count_nonzero(base.labels == 2))
    gm_after = int(np.count_nonzero(spliced.labels == 2))
    ratio = gm_before / gm_after if gm_after else float("nan")
    print(json.dumps({"out": args.out, "clamped_voxels": clamped, "gm_volume_ratio": ratio}))
    return EXIT_OK


def cmd_sample_patches(args) -> int:
    image, labels = read_nifti(args.image), read_nifti(args.labels)
    spec = PatchSpec(tuple(args.size), args.count, tuple(args.exclude))
    patches = sample_patches(image, labels, spec, seed=args.seed)
    if args.out.endswith(".bin"):
        write_shard(patches, args.out)
        print(args.out)
        return EXIT_OK
    os.makedirs(args.out, exist_ok=True)
    stem = _stem(args.image)
    for i, p in enumerate(patches):
        start = np.array(p.start, dtype=np.float64)
        affine = image.geometry.affine.copy()
        affine[:3, 3] = affine[:3, :3] @ start + affine[:3, 3]
        g = Geometry(p.image.shape, affine)
        write_nifti(ScalarVolume(g, p.image), os.path.join(args.out, f"{stem}_p{i:02d}_image.nii.gz"))
        write_nifti(LabelVolume(g, p.labels), os.path.join(args.out, f"{stem}_p{i:02d}_labels.nii.gz"),
                    sidecar=False)
    print(f"wrote {len(patches)} patch pairs to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _, summary, missing = evaluate_dirs(args.pred, args.gt, args.subjects, args.out, args.pred_b,
                                        k=args.k)
    for name, stats in summary["structures"].items():
        print(f"{name:>16s}  dice {100 * stats['dice_mean']:6.2f}  asd {stats['asd_mean_mm']:.3f} mm")
    return EXIT_PARTIAL if missing else EXIT_OK


def cmd_replay(args) -> int:
    if os.path.exists(args.record):
        records = read_manifest(args.record)
    else:
        records = [json.loads(args.record)]
    if args.sample_id:
        records = [r for r in records if r["sample_id"] == args.sample_id]
        if not records:
            raise ConfigError(f"sample {args.sample_id} not in manifest")
    record = records[0]
    out = args.out or "replay"
    replay(record, out)
    status = EXIT_OK
    if os.path.exists(args.record) and record.get("outputs"):
        src_dir = os.path.dirname(os.path.abspath(args.record))
        for key, name in record["outputs"].items():
            a, b = os.path.join(src_dir, name), os.path.join(out, name)
            if os.path.exists(a) and os.path.abspath(a) != os.path.abspath(b):
                same = open(a, "rb").read() == open(b, "rb").read()
                print(f"{key}: {'identical' if same else 'DIFFERS'}")
                status = status if same else EXIT_PARTIAL
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neosynth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, jobs=False):
        if config:
            sp.add_argument("--config", help="YAML generation config")
        sp.add_argument("--seed", type=int)
        if jobs:
            sp.add_argument("--jobs", type=int, default=1)

    g = sub.add_parser("generate", help="generate synthetic training volumes")
    common(g, jobs=True)
    g.add_argument("--subjects", help="CSV with subject_id,labels[,image]")
    g.add_argument("--out", required=True)
    g.add_argument("labels", nargs="*", help="label maps (subject id = file stem)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("subdivide-labels", help="split WM into intensity clusters")
    common(s, config=False)
    s.add_argument("labels")
    s.add_argument("image")
    s.add_argument("--n", type=int, nargs="+", default=[2, 3, 4, 5, 6])
    s.add_argument("--target-label", type=int, default=WM)
    s.add_argument("--out", help="output directory (default: next to the labels)")
    s.set_defaults(func=cmd_subdivide)

    f = sub.add_parser("fuse-head", help="add head tissue labels around a brain map")
    f.add_argument("brain")
    f.add_argument("head")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    t = sub.add_parser("surf2labels", help="splice surface-derived GM into a label map")
    t.add_argument("labels")
    t.add_argument("white")
    t.add_argument("pial")
    t.add_argument("--supersample", type=int, default=4)
    t.add_argument("--pv-out", help="also write the GM partial volume map")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_surf2labels)

    sp = sub.add_parser("sample-patches", help="structure-balanced patch extraction")
    common(sp, config=False)
    sp.add_argument("image")
    sp.add_argument("labels")
    sp.add_argument("--size", type=int, nargs=3, default=[128, 128, 128])
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--exclude", type=int, nargs="*", default=[])
    sp.add_argument("--out", required=True, help="directory, or a .bin shard path")
    sp.set_defaults(func=cmd_sample_patches)

    e = sub.add_parser("evaluate", help="Dice/ASD/volume report against ground truth")
    e.add_argument("pred")
    e.add_argument("gt")
    e.add_argument("subjects", help="CSV with subject_id,age_weeks[,contrast]")
    e.add_argument("--pred-b", help="second prediction set for volume correlation")
    e.add_argument("--k", type=float, default=2.5, help="outlier threshold in std units")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("replay", help="regenerate a manifest record")
    r.add_argument("record", help="manifest .jsonl path or a JSON record")
    r.add_argument("--sample-id")
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
