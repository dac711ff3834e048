"""Rigid head motion during acquisition, simulated in k-space.

Phase-encode lines are acquired sequentially along ``phase_axis`` from the
most negative to the most positive frequency. Each trajectory segment owns a
contiguous block of lines; the composite k-space takes every line from the
spectrum of the image in the pose held while that line was acquired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft

from .volume import RigidTransform, ScalarVolume, apply_rigid

__all__ = ["MotionSpec", "MotionTrajectory", "sample_trajectory", "corrupt", "center_line",
           "register_trajectory_model", "trajectory_model"]


@dataclass(frozen=True)
class MotionSpec:
    translation_max_range_mm: tuple[float, float] = (3.0, 8.0)
    rotation_max_range_deg: tuple[float, float] = (3.0, 8.0)
    n_events_range: tuple[int, int] = (1, 3)
    phase_axis: int = 1
    demean: bool = True

    def __post_init__(self):
        for name in ("translation_max_range_mm", "rotation_max_range_deg"):
            lo, hi = (float(v) for v in getattr(self, name))
            if lo > hi or lo < 0:
                raise ValueError(f"{name}: expected 0 <= lo <= hi, got {(lo, hi)}")
            object.__setattr__(self, name, (lo, hi))
        lo, hi = (int(v) for v in self.n_events_range)
        if lo > hi or lo < 1:
            raise ValueError(f"n_events_range: expected 1 <= lo <= hi, got {(lo, hi)}")
        object.__setattr__(self, "n_events_range", (lo, hi))
        if self.phase_axis not in (0, 1, 2):
            raise ValueError("phase_axis must be 0, 1 or 2")


def center_line(n_lines: int) -> int:
    """Acquisition index of the k-space centre line (DC after fftshift)."""
    return n_lines // 2


@dataclass(frozen=True)
class MotionTrajectory:
    """Piecewise-constant poses; segment ``s`` starts at ``fractions[s]``."""

    fractions: tuple[float, ...]
    poses: tuple[RigidTransform, ...]
    n_lines: int
    phase_axis: int = 1
    max_translation_mm: float = 0.0
    max_rotation_deg: float = 0.0

    def __post_init__(self):
        if len(self.fractions) != len(self.poses) or not self.fractions:
            raise ValueError("need one pose per segment")
        if self.fractions[0] != 0.0 or any(b <= a for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError("fractions must start at 0 and increase strictly")
        if self.fractions[-1] >= 1.0:
            raise ValueError("fractions must be < 1")

    @classmethod
    def static(cls, n_lines: int, pose: RigidTransform = RigidTransform(), phase_axis: int = 1):
        return cls((0.0,), (pose,), n_lines, phase_axis)

    def segment_lines(self) -> list[tuple[int, int]]:
        starts = [int(round(f * self.n_lines)) for f in self.fractions] + [self.n_lines]
        return list(zip(starts[:-1], starts[1:]))

    def pose_of_line(self, line: int) -> RigidTransform:
        for (a, b), pose in zip(self.segment_lines(), self.poses):
            if a <= line < b:
                return pose
        raise IndexError(line)

    def to_dict(self) -> dict:
        return {
            "n_lines": self.n_lines,
            "phase_axis": self.phase_axis,
            "max_translation_mm": self.max_translation_mm,
            "max_rotation_deg": self.max_rotation_deg,
            "segments": [{"fraction": f, **p.to_dict()} for f, p in zip(self.fractions, self.poses)],
        }

    @classmethod
    def from_dict(cls, d) -> "MotionTrajectory":
        segs = d["segments"]
        return cls(
            tuple(float(s["fraction"]) for s in segs),
            tuple(RigidTransform.from_dict(s) for s in segs),
            int(d["n_lines"]),
            int(d.get("phase_axis", 1)),
            float(d.get("max_translation_mm", 0.0)),
            float(d.get("max_rotation_deg", 0.0)),
        )


def _rescale(params: np.ndarray, peak: float) -> np.ndarray:
    norm = np.linalg.norm(params, axis=1).max()
    if peak == 0.0 or norm == 0.0:
        return np.zeros_like(params)
    return params * (peak / norm)


def sample_trajectory(spec: MotionSpec = MotionSpec(), n_lines: int = 128, seed=None) -> MotionTrajectory:
    """Step-event trajectory whose peak translation/rotation norms hit the drawn maxima.

    ``K`` events occur at distinct random lines; each adds a random Gaussian
    step to the pose. With ``spec.demean`` the segment holding the k-space
    centre line is re-based to the identity before scaling, so that segment
    stays exactly aligned with the label map.
    """
    if n_lines < 2:
        raise ValueError("n_lines must be >= 2")
    rng = np.random.default_rng(seed)
    t_max = float(rng.uniform(*spec.translation_max_range_mm))
    r_max = float(rng.uniform(*spec.rotation_max_range_deg))
    k = int(rng.integers(spec.n_events_range[0], spec.n_events_range[1] + 1))
    k = min(k, n_lines - 1)
    events = np.sort(rng.choice(np.arange(1, n_lines), size=k, replace=False))
    steps = rng.standard_normal((k, 6))
    poses = np.vstack([np.zeros(6), np.cumsum(steps, axis=0)])
    starts = np.concatenate([[0], events])
    if spec.demean:
        seg = int(np.searchsorted(starts, center_line(n_lines), side="right") - 1)
        poses = poses - poses[seg]
    trans = _rescale(poses[:, :3], t_max)
    rot = _rescale(poses[:, 3:], r_max)
    return MotionTrajectory(
        tuple(float(s) / n_lines for s in starts),
        tuple(RigidTransform(tuple(t), tuple(r)) for t, r in zip(trans, rot)),
        n_lines,
        spec.phase_axis,
        t_max,
        r_max,
    )


TRAJECTORY_MODELS = {"step": sample_trajectory}


def register_trajectory_model(name: str, fn):
    """Make ``fn(spec, n_lines, seed) -> MotionTrajectory`` selectable as ``motion.model``.

    Registration happens per process, so with ``jobs > 1`` it must run at
    import time of a module the workers also import.
    """
    TRAJECTORY_MODELS[name] = fn


def trajectory_model(name: str):
    try:
        return TRAJECTORY_MODELS[name]
    except KeyError:
        raise KeyError(f"unknown trajectory model {name!r}; known: {sorted(TRAJECTORY_MODELS)}") from None


def _phase_ramp(shape, voxel_shift) -> np.ndarray:
    """Separable k-space factors that circularly shift an image by ``voxel_shift``."""
    ramps = []
    for ax, (n, s) in enumerate(zip(shape, voxel_shift)):
        f = fft.fftfreq(n)
        r = np.exp(-2j * np.pi * f * s)
        ramps.append(r.reshape([-1 if a == ax else 1 for a in range(3)]))
    return ramps[0] * ramps[1] * ramps[2]


def corrupt(img: ScalarVolume, traj: MotionTrajectory, workers: int | None = None) -> ScalarVolume:
    """Magnitude image of the composite k-space of a moving object.

    Rotations are applied by image-domain trilinear resampling about the grid
    centre; translations as a k-space phase ramp, i.e. an exact circular
    shift.
    """
    values = img.values
    if not np.all(np.isfinite(values)):
        raise ValueError("input contains NaN or Inf")
    axis = traj.phase_axis
    n = values.shape[axis]
    if traj.n_lines != n:
        raise ValueError(f"trajectory has {traj.n_lines} lines, image has {n} along axis {axis}")
    inv_linear = np.linalg.inv(img.geometry.affine[:3, :3])
    k_all = None
    segments = traj.segment_lines()
    spectra = {}
    for (a, b), pose in zip(segments, traj.poses):
        if a == b:
            continue
        spectrum = spectra.get(pose)
        if spectrum is None:
            rotated = apply_rigid(img, RigidTransform((0, 0, 0), pose.rotation), "trilinear")
            spectrum = fft.fftn(rotated.values.astype(np.float64), workers=workers)
            if any(pose.translation):
                spectrum *= _phase_ramp(values.shape, inv_linear @ np.asarray(pose.translation))
            spectra[pose] = spectrum
        if len(segments) == 1:
            k_all = spectrum
            break
        if k_all is None:
            k_all = np.empty_like(spectrum)
        # acquisition order is ascending frequency: shifted index a..b
        freq_index = fft.fftshift(np.arange(n))[a:b]
        sl = [slice(None)] * 3
        sl[axis] = freq_index
        k_all[tuple(sl)] = spectrum[tuple(sl)]
    out = np.abs(fft.ifftn(k_all, workers=workers))
    return ScalarVolume(img.geometry, out.astype(np.float32))
