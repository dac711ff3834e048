"""Recipe-level orchestration, from a YAML config to a manifest of written samples."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np
import yaml

from .labels import WM, subdivide_label
from .motion import TRAJECTORY_MODELS, MotionSpec, corrupt, trajectory_model
from .spatial import AffineSpec, ElasticSpec, deform, sample_affine, sample_elastic, spatial_sampler
from .synth import (BiasFieldSpec, ContrastPrior, NoiseSpec, add_noise, labels_to_image,
                    minmax_normalize, sample_bias_field)
from .volume import LabelVolume, ScalarVolume, read_nifti, write_nifti

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMA_VERSION",
    "RECIPES",
    "ConfigError",
    "GenerationConfig",
    "Subject",
    "sample_seed",
    "generate_sample",
    "dataT2_augment",
    "generate_dataset",
    "replay",
    "load_config",
]

SCHEMA_VERSION = 1

# recipe -> (motion allowed, inhomogeneity allowed)
RECIPES = {
    "Synth": (False, False),
    "SynthMot": (True, False),
    "SynthInh": (False, True),
    "SynthMotInh": (True, True),
    "DataT2-aug": (False, False),
}
DEFAULT_PROBABILITY = 0.5

STAGES = ("gates", "inhomogeneity", "affine", "elastic", "contrast", "bias", "motion", "noise", "gamma")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MotionConfig:
    probability: float | None = None
    translation_max_range_mm: tuple[float, float] = (3.0, 8.0)
    rotation_max_range_deg: tuple[float, float] = (3.0, 8.0)
    n_events_range: tuple[int, int] = (1, 3)
    phase_axis: int = 1
    demean: bool = True
    model: str = "step"

    @property
    def spec(self) -> MotionSpec:
        return MotionSpec(self.translation_max_range_mm, self.rotation_max_range_deg,
                          self.n_events_range, self.phase_axis, self.demean)


@dataclass(frozen=True)
class InhomogeneityConfig:
    probability: float | None = None
    n_set: tuple[int, ...] = (2, 3, 4, 5, 6)
    target_label: int = WM


@dataclass(frozen=True)
class GammaConfig:
    log_range: tuple[float, float] = (-0.3, 0.3)


_SECTIONS = {
    "contrast": ContrastPrior,
    "affine": AffineSpec,
    "elastic": ElasticSpec,
    "bias": BiasFieldSpec,
    "noise": NoiseSpec,
    "motion": MotionConfig,
    "inhomogeneity": InhomogeneityConfig,
    "gamma": GammaConfig,
}


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, (list, tuple)) else v


def _listify(v):
    return [_listify(x) for x in v] if isinstance(v, (list, tuple)) else v


def _build_section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    try:
        return cls(**{k: _tuplify(v) for k, v in raw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


@dataclass(frozen=True)
class GenerationConfig:
    recipe: str = "Synth"
    seed: int = 0
    samples_per_subject: int = 1
    contrast: ContrastPrior = field(default_factory=ContrastPrior)
    affine: AffineSpec = field(default_factory=AffineSpec)
    elastic: ElasticSpec = field(default_factory=ElasticSpec)
    bias: BiasFieldSpec = field(default_factory=BiasFieldSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    motion: MotionConfig = field(default_factory=MotionConfig)
    inhomogeneity: InhomogeneityConfig = field(default_factory=InhomogeneityConfig)
    gamma: GammaConfig = field(default_factory=GammaConfig)
    background_ids: tuple[int, ...] = (0,)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} is not supported (expected {SCHEMA_VERSION})")
        if self.recipe not in RECIPES:
            raise ConfigError(f"recipe must be one of {sorted(RECIPES)}, got {self.recipe!r}")
        if int(self.samples_per_subject) < 1:
            raise ConfigError("samples_per_subject must be >= 1")
        allow_mot, allow_inh = RECIPES[self.recipe]
        motion = replace(self.motion, probability=self._gate("motion", self.motion.probability, allow_mot))
        inh = replace(self.inhomogeneity,
                      probability=self._gate("inhomogeneity", self.inhomogeneity.probability, allow_inh))
        if motion.model not in TRAJECTORY_MODELS:
            raise ConfigError(f"motion.model {motion.model!r} is not registered ({sorted(TRAJECTORY_MODELS)})")
        if not set(inh.n_set) <= {2, 3, 4, 5, 6} or not inh.n_set:
            raise ConfigError("inhomogeneity.n_set must be a non-empty subset of {2..6}")
        lo, hi = self.gamma.log_range
        if lo > hi:
            raise ConfigError("gamma.log_range must be ordered")
        object.__setattr__(self, "motion", motion)
        object.__setattr__(self, "inhomogeneity", inh)
        object.__setattr__(self, "background_ids", tuple(int(b) for b in self.background_ids))

    def _gate(self, name, p, allowed):
        if p is None:
            return DEFAULT_PROBABILITY if allowed else 0.0
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"{name}.probability must be in [0, 1]")
        if p > 0 and not allowed:
            raise ConfigError(f"recipe {self.recipe} does not allow {name} (probability {p})")
        return p

    @classmethod
    def from_dict(cls, raw: dict) -> "GenerationConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        kwargs = {}
        for k, v in raw.items():
            if k in _SECTIONS:
                kwargs[k] = _build_section(k, _SECTIONS[k], v or {})
            elif k == "background_ids":
                kwargs[k] = tuple(v)
            else:
                kwargs[k] = v
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {"schema_version": self.schema_version, "recipe": self.recipe, "seed": self.seed,
               "samples_per_subject": self.samples_per_subject}
        for name in _SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _listify(getattr(sec, f.name)) for f in fields(sec)}
        out["background_ids"] = list(self.background_ids)
        return out


def load_config(path) -> GenerationConfig:
    with open(path) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return GenerationConfig.from_dict(raw or {})


def sample_seed(base_seed: int, subject_id: str, index: int) -> int:
    """Stable per-sample seed, independent of worker scheduling."""
    h = hashlib.sha256(f"{base_seed}/{subject_id}/{index}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def _stage_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STAGES))
    return {name: np.random.default_rng(c) for name, c in zip(STAGES, children)}


def draw_gates(cfg: GenerationConfig, seed: int) -> dict[str, bool]:
    rng = _stage_rngs(seed)["gates"]
    u_mot, u_inh = rng.random(2)
    return {"motion": bool(u_mot < cfg.motion.probability),
            "inhomogeneity": bool(u_inh < cfg.inhomogeneity.probability)}


def _sigma_str(params: dict) -> dict:
    return {str(k): list(v) for k, v in params.items()}


def generate_sample(labels: LabelVolume, cfg: GenerationConfig, seed: int, *,
                    intensities: ScalarVolume | None = None, subdivisions: dict | None = None):
    """Generate one synthetic image and its target label map.

    Stage order: subdivision (if it fires), affine + elastic on labels,
    per-label contrast, bias, motion (background zeroed first), noise, min-max.
    ``subdivisions`` maps N to a precomputed subdivided map and doubles as a
    cache when ``intensities`` is given.

    Returns ``(image, target_labels, params)``.
    """
    if cfg.recipe == "DataT2-aug":
        raise ConfigError("DataT2-aug uses dataT2_augment with a real image")
    rngs = _stage_rngs(seed)
    gates = draw_gates(cfg, seed)
    params: dict = {"gates": gates}

    work = labels
    n_choice = int(rngs["inhomogeneity"].choice(cfg.inhomogeneity.n_set))
    if gates["inhomogeneity"]:
        work = _subdivided(labels, n_choice, cfg, intensities, subdivisions)
        params["inhomogeneity"] = {"N": n_choice}

    geom = labels.geometry
    aff = sample_affine(cfg.affine, rngs["affine"])
    field_ = sample_elastic(geom, cfg.elastic, rngs["elastic"])
    sampler = spatial_sampler(geom, aff, field_)
    work = deform(work, sampler, "nearest")
    params["affine"] = aff.to_dict()
    params["elastic"] = field_.summary()

    image, contrast = labels_to_image(work, cfg.contrast, rngs["contrast"])
    params["contrast"] = _sigma_str(contrast)

    bias, coeffs = sample_bias_field(geom, cfg.bias, rngs["bias"], return_coefficients=True)
    image = image.with_values(image.values * bias.values)
    params["bias"] = {"order": cfg.bias.order, "coefficients": coeffs.tolist()}

    if gates["motion"]:
        values = image.values.copy()
        values[np.isin(work.labels, cfg.background_ids)] = 0.0
        spec = cfg.motion.spec
        traj = trajectory_model(cfg.motion.model)(spec, geom.dims[spec.phase_axis], rngs["motion"])
        image = corrupt(image.with_values(values), traj)
        params["motion"] = traj.to_dict()

    image, sigma = add_noise(image, cfg.noise, rngs["noise"], return_sigma=True)
    params["noise"] = {"sigma": sigma}
    image = minmax_normalize(image)
    return image, work.project("target"), params


def _subdivided(labels, n, cfg, intensities, cache):
    if cache is not None and n in cache:
        return cache[n]
    if intensities is None:
        raise ValueError(f"inhomogeneity fired (N={n}) but no intensities or precomputed subdivision given")
    sub = subdivide_label(labels, intensities, cfg.inhomogeneity.target_label, n)
    if cache is not None:
        cache[n] = sub
    return sub


def _gamma(values: np.ndarray, gamma: float) -> np.ndarray:
    return np.sign(values) * np.abs(values) ** gamma


def dataT2_augment(image: ScalarVolume, labels: LabelVolume, cfg: GenerationConfig, seed: int):
    """Augment a real image: shared spatial warp, bias, noise, gamma, min-max.

    Returns ``(image, target_labels, params)``. Gamma uses ``exp(beta)`` with
    ``beta ~ U[gamma.log_range]`` and keeps the sign of negative values.
    """
    if not image.geometry.same_as(labels.geometry):
        raise ValueError("image and labels must share geometry")
    rngs = _stage_rngs(seed)
    geom = labels.geometry
    aff = sample_affine(cfg.affine, rngs["affine"])
    field_ = sample_elastic(geom, cfg.elastic, rngs["elastic"])
    sampler = spatial_sampler(geom, aff, field_)
    img = deform(image, sampler, "trilinear")
    lab = deform(labels, sampler, "nearest")
    bias, coeffs = sample_bias_field(geom, cfg.bias, rngs["bias"], return_coefficients=True)
    img = img.with_values(img.values * bias.values)
    img, sigma = add_noise(img, cfg.noise, rngs["noise"], return_sigma=True)
    beta = float(rngs["gamma"].uniform(*cfg.gamma.log_range))
    g = float(np.exp(beta))
    img = img.with_values(_gamma(img.values.astype(np.float64), g).astype(np.float32))
    img = minmax_normalize(img)
    params = {"affine": aff.to_dict(), "elastic": field_.summary(),
              "bias": {"order": cfg.bias.order, "coefficients": coeffs.tolist()},
              "noise": {"sigma": sigma}, "gamma": {"beta": beta, "gamma": g}}
    return img, lab.project("target"), params


# --------------------------------------------------------------------------
# Datasets and manifests


@dataclass(frozen=True)
class Subject:
    subject_id: str
    labels: str
    image: str | None = None

    def to_dict(self) -> dict:
        return {"subject_id": self.subject_id, "labels": self.labels, "image": self.image}


def subdivision_path(labels_path: str, n: int) -> str:
    for ext in (".nii.gz", ".nii"):
        if labels_path.endswith(ext):
            return f"{labels_path[: -len(ext)]}_sub{n}{ext}"
    return f"{labels_path}_sub{n}"


@lru_cache(maxsize=8)
def _load(path):
    return read_nifti(path)


def _load_subject(subject: Subject, cfg: GenerationConfig):
    labels = _load(subject.labels)
    if not isinstance(labels, LabelVolume):
        raise ValueError(f"{subject.labels}: expected an integer label map")
    image = _load(subject.image) if subject.image else None
    subdivisions = {}
    for n in cfg.inhomogeneity.n_set:
        p = subdivision_path(subject.labels, n)
        if os.path.exists(p):
            subdivisions[n] = _load(p)
    return labels, image, subdivisions


def _sample_names(subject_id: str, index: int) -> tuple[str, str, str]:
    sid = f"{subject_id}_{index:04d}"
    return sid, f"{sid}_image.nii.gz", f"{sid}_labels.nii.gz"


def run_sample(subject: Subject, cfg: GenerationConfig, index: int, out_dir: str | None,
               seed: int | None = None) -> dict:
    """Generate, write and describe one sample; failures become error records."""
    seed = sample_seed(cfg.seed, subject.subject_id, index) if seed is None else seed
    sid, img_name, lab_name = _sample_names(subject.subject_id, index)
    record = {"sample_id": sid, "source_subject": subject.subject_id, "index": index,
              "recipe": cfg.recipe, "seed": seed, "subject": subject.to_dict(),
              "config": cfg.to_dict()}
    try:
        labels, image, subdivisions = _load_subject(subject, cfg)
        if cfg.recipe == "DataT2-aug":
            if image is None:
                raise ValueError("DataT2-aug needs a real image for every subject")
            img, lab, params = dataT2_augment(image, labels, cfg, seed)
        else:
            img, lab, params = generate_sample(labels, cfg, seed, intensities=image,
                                               subdivisions=subdivisions)
        if out_dir is not None:
            write_nifti(img, os.path.join(out_dir, img_name))
            write_nifti(lab, os.path.join(out_dir, lab_name))
        record.update(params=params, outputs={"image": img_name, "labels": lab_name},
                      status="ok", error=None)
    except Exception as exc:  # a failed sample must not stop the run
        log.error("sample %s failed: %s", sid, exc)
        record.update(params=None, outputs=None, status="error", error=f"{type(exc).__name__}: {exc}")
    return record


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def generate_dataset(subjects: list[Subject], cfg: GenerationConfig, out_dir, jobs: int = 1,
                     manifest_name: str = "manifest.jsonl") -> tuple[str, int]:
    """Generate ``samples_per_subject`` samples per subject.

    Records are appended to a JSON-lines manifest by this process only.
    Returns ``(manifest_path, n_failed)``.
    """
    os.makedirs(out_dir, exist_ok=True)
    tasks = [(s, i) for s in subjects for i in range(cfg.samples_per_subject)]
    manifest = os.path.join(out_dir, manifest_name)
    failed = 0
    with open(manifest, "w") as f:
        if jobs <= 1:
            results = (run_sample(s, cfg, i, out_dir) for s, i in tasks)
            for rec in results:
                failed += rec["status"] != "ok"
                f.write(_dump(rec) + "\n")
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(run_sample, s, cfg, i, out_dir) for s, i in tasks]
                for fut in as_completed(futures):
                    rec = fut.result()
                    failed += rec["status"] != "ok"
                    f.write(_dump(rec) + "\n")
                    f.flush()
    return manifest, failed


def read_manifest(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(ln) for ln in f if ln.strip()]


def replay(record: dict, out_dir: str | None = None):
    """Regenerate a manifest record. Returns ``(image, labels, params)``."""
    cfg = GenerationConfig.from_dict(record["config"])
    subject = Subject(**record["subject"])
    labels, image, subdivisions = _load_subject(subject, cfg)
    if cfg.recipe == "DataT2-aug":
        img, lab, params = dataT2_augment(image, labels, cfg, record["seed"])
    else:
        img, lab, params = generate_sample(labels, cfg, record["seed"], intensities=image,
                                           subdivisions=subdivisions)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _, img_name, lab_name = _sample_names(subject.subject_id, record["index"])
        write_nifti(img, os.path.join(out_dir, img_name))
        write_nifti(lab, os.path.join(out_dir, lab_name))
    return img, lab, params
