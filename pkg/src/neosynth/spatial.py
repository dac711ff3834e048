"""Random affine and B-spline elastic deformations.

Everything is backward (pull) warping: an output voxel looks up the input
position it came from. Affine and elastic steps are folded into one sampling
map so label maps go through a single nearest-neighbour lookup.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .volume import Geometry, LabelVolume, ScalarVolume, _interp_order, pull, voxel_grid

__all__ = [
    "AffineSpec",
    "ElasticSpec",
    "ScaledRigidTransform",
    "DeformationField",
    "sample_affine",
    "sample_elastic",
    "warp",
    "spatial_sampler",
    "deform",
]


def _ordered(r, name):
    lo, hi = (float(v) for v in r)
    if lo > hi:
        raise ValueError(f"{name}: {lo} > {hi}")
    return (lo, hi)


@dataclass(frozen=True)
class AffineSpec:
    scale_range: tuple[float, float] = (0.9, 1.1)
    rotation_range_deg: tuple[float, float] = (-20.0, 20.0)
    translation_range_mm: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        for name in ("scale_range", "rotation_range_deg", "translation_range_mm"):
            object.__setattr__(self, name, _ordered(getattr(self, name), name))
        if self.scale_range[0] <= 0:
            raise ValueError("scale_range must be strictly positive")


@dataclass(frozen=True)
class ElasticSpec:
    control_points: int = 12
    max_displacement_mm: float = 8.0

    def __post_init__(self):
        if int(self.control_points) < 4:
            raise ValueError("control_points must be >= 4")
        if self.max_displacement_mm < 0:
            raise ValueError("max_displacement_mm must be >= 0")
        object.__setattr__(self, "control_points", int(self.control_points))
        object.__setattr__(self, "max_displacement_mm", float(self.max_displacement_mm))


@dataclass(frozen=True)
class ScaledRigidTransform:
    """Per-axis scaling, extrinsic XYZ rotation (deg) and translation (mm).

    Forward point map about the grid centre ``c``: ``y = R S (x - c) + c + t``.
    """

    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def is_identity(self) -> bool:
        return (tuple(self.scales) == (1.0, 1.0, 1.0) and not any(self.rotation)
                and not any(self.translation))

    def world_matrix(self, center) -> np.ndarray:
        a = Rotation.from_euler("xyz", self.rotation, degrees=True).as_matrix() @ np.diag(self.scales)
        c = np.asarray(center, dtype=np.float64)
        m = np.eye(4)
        m[:3, :3] = a
        m[:3, 3] = c - a @ c + np.asarray(self.translation)
        return m

    def to_dict(self) -> dict:
        return {"scales": list(self.scales), "rotation": list(self.rotation),
                "translation": list(self.translation)}


def sample_affine(spec: AffineSpec = AffineSpec(), seed=None) -> ScaledRigidTransform:
    rng = np.random.default_rng(seed)
    scales = rng.uniform(*spec.scale_range, size=3)
    rotation = rng.uniform(*spec.rotation_range_deg, size=3)
    translation = rng.uniform(*spec.translation_range_mm, size=3)
    return ScaledRigidTransform(tuple(map(float, scales)), tuple(map(float, rotation)),
                                tuple(map(float, translation)))


@lru_cache(maxsize=32)
def _spline_weights(n_out: int, n_ctrl: int) -> np.ndarray:
    """Dense ``(n_out, n_ctrl)`` interpolating cubic B-spline weights.

    The control knots span the axis end to end. Interpolation is linear in
    the control values, so interpolating each unit vector yields the weights.
    """
    coords = np.linspace(0.0, n_ctrl - 1.0, n_out) if n_out > 1 else np.zeros(1)
    w = np.empty((n_out, n_ctrl))
    for i in range(n_ctrl):
        e = np.zeros(n_ctrl)
        e[i] = 1.0
        w[:, i] = ndimage.map_coordinates(e, coords[None], order=3, mode="mirror")
    w.setflags(write=False)
    return w


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Control grid of world-mm displacements spanning the volume."""

    control: np.ndarray  # (n, n, n, 3)
    max_displacement_mm: float
    interpolation: str = "cubic-bspline"

    def is_identity(self) -> bool:
        return not np.any(self.control)

    def dense(self, dims, sl: slice | None = None) -> np.ndarray:
        """Displacement field ``(ni, nj, nk, 3)`` in mm, optionally for a slab."""
        n = self.control.shape[:3]
        wi, wj, wk = (_spline_weights(int(d), int(c)) for d, c in zip(dims, n))
        if sl is not None:
            wi = wi[sl]
        return np.einsum("ia,jb,kc,abcd->ijkd", wi, wj, wk, self.control, optimize=True)

    def summary(self) -> dict:
        digest = hashlib.sha256(np.ascontiguousarray(self.control, dtype="<f8").tobytes()).hexdigest()
        norms = np.linalg.norm(self.control, axis=-1)
        return {"control_points": int(self.control.shape[0]),
                "max_control_norm_mm": float(norms.max(initial=0.0)),
                "sha256": digest}


def sample_elastic(geom: Geometry, spec: ElasticSpec = ElasticSpec(), seed=None) -> DeformationField:
    """Uniform per-component control displacements, clamped to the max norm."""
    rng = np.random.default_rng(seed)
    n = spec.control_points
    m = spec.max_displacement_mm
    disp = rng.uniform(-m, m, size=(n, n, n, 3))
    norms = np.linalg.norm(disp, axis=-1, keepdims=True)
    scale = np.where(norms > m, m / np.maximum(norms, 1e-300), 1.0)
    return DeformationField(disp * scale, m)


def spatial_sampler(geom: Geometry, affine: ScaledRigidTransform | None = None,
                    field: DeformationField | None = None):
    """Build ``coords_fn(slab)`` mapping output voxels to input voxel coordinates.

    The affine is applied to the image first, the elastic warp second:
    ``out(x) = in(A^-1(x + d(x)))``. Returns ``None`` for the identity.
    """
    if (affine is None or affine.is_identity()) and (field is None or field.is_identity()):
        return None
    to_world = geom.affine
    to_input = geom.inverse_affine
    if affine is not None and not affine.is_identity():
        to_input = to_input @ np.linalg.inv(affine.world_matrix(geom.center))

    def coords_fn(sl):
        v = voxel_grid(geom.dims, sl)
        x = np.tensordot(to_world[:3, :3], v, axes=1) + to_world[:3, 3, None, None, None]
        if field is not None and not field.is_identity():
            x += np.moveaxis(field.dense(geom.dims, sl), -1, 0)
        return np.tensordot(to_input[:3, :3], x, axes=1) + to_input[:3, 3, None, None, None]

    return coords_fn


def deform(vol, sampler, mode: str):
    """Apply a sampler from :func:`spatial_sampler` (``None`` means identity)."""
    if sampler is None:
        _interp_order(vol, mode)
        if isinstance(vol, LabelVolume):
            return vol.with_labels(vol.labels.copy())
        return ScalarVolume(vol.geometry, vol.values.copy())
    return pull(vol, sampler, mode)


def warp(vol, field: DeformationField, mode: str = "trilinear"):
    """Backward warp: output voxel ``v`` samples the input at ``v + field(v)``."""
    return deform(vol, spatial_sampler(vol.geometry, None, field), mode)
