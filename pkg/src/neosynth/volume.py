"""Voxel grid types plus the NIfTI and resampling helpers built on them.

Voxel arrays are indexed ``(i, j, k)`` and mapped to world millimetres by a
4x4 affine, as in NIfTI. Volumes are treated as immutable: every operation
returns a new object.
"""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import nibabel as nib
import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

__all__ = [
    "Geometry",
    "ScalarVolume",
    "LabelVolume",
    "RigidTransform",
    "NiftiError",
    "read_nifti",
    "write_nifti",
    "read_dictionary",
    "write_dictionary",
    "sidecar_path",
    "resample",
    "apply_rigid",
    "apply_world_map",
]

LABEL_DTYPES = (np.uint8, np.int16, np.int32)
SCALAR_DTYPES = (np.float32,)


class NiftiError(ValueError):
    """Raised for NIfTI files outside the supported subset."""


@dataclass(frozen=True, eq=False)
class Geometry:
    """Voxel grid shape plus voxel-to-world affine (mm)."""

    dims: tuple[int, int, int]
    affine: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got {affine.shape}")
        if not np.all(np.isfinite(affine)) or abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise ValueError("affine is not invertible")
        affine.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "affine", affine)

    @classmethod
    def from_spacing(cls, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "Geometry":
        affine = np.diag([*map(float, spacing), 1.0])
        affine[:3, 3] = origin
        return cls(tuple(dims), affine)

    @property
    def spacing(self) -> np.ndarray:
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    @property
    def voxel_volume(self) -> float:
        return float(abs(np.linalg.det(self.affine[:3, :3])))

    @property
    def center(self) -> np.ndarray:
        """World position of the geometric centre of the grid."""
        return self.affine[:3, :3] @ ((np.array(self.dims) - 1) / 2.0) + self.affine[:3, 3]

    @property
    def inverse_affine(self) -> np.ndarray:
        return np.linalg.inv(self.affine)

    def same_as(self, other: "Geometry", atol: float = 1e-6) -> bool:
        return self.dims == other.dims and np.allclose(self.affine, other.affine, atol=atol)

    def __eq__(self, other):
        return isinstance(other, Geometry) and self.same_as(other, atol=0.0)

    def __repr__(self):
        sp = ", ".join(f"{s:g}" for s in self.spacing)
        return f"Geometry(dims={self.dims}, spacing=({sp}))"


def _check_shape(geometry: Geometry, array: np.ndarray):
    if tuple(array.shape) != geometry.dims:
        raise ValueError(f"array shape {array.shape} does not match dims {geometry.dims}")


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    geometry: Geometry
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float32)
        _check_shape(self.geometry, values)
        if not np.all(np.isfinite(values)):
            raise ValueError("volume contains NaN or Inf values")
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "ScalarVolume":
        return ScalarVolume(self.geometry, values)


def _identity_groups(ids) -> dict[str, dict[int, int]]:
    return {"generation": {i: i for i in ids}, "target": {i: i for i in ids}}


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer label map with a name dictionary and named id groupings.

    ``groups["generation"]`` maps each label to the id used when drawing
    intensities; ``groups["target"]`` maps each label to the id used as the
    segmentation target. Every target id must itself be a dictionary entry so
    that target maps stay self-describing.
    """

    geometry: Geometry
    labels: np.ndarray
    dictionary: Mapping[int, str] = field(default_factory=dict)
    groups: Mapping[str, Mapping[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if not np.issubdtype(labels.dtype, np.integer):
            if np.issubdtype(labels.dtype, np.bool_):
                labels = labels.astype(np.uint8)
            else:
                raise TypeError(f"labels must be integer typed, got {labels.dtype}")
        _check_shape(self.geometry, labels)
        present = [int(v) for v in np.unique(labels)]
        if present and present[0] < 0:
            raise ValueError("label ids must be non-negative")
        dictionary = {int(k): str(v) for k, v in self.dictionary.items()}
        if not dictionary:
            dictionary = {i: f"label_{i}" for i in present}
        missing = sorted(set(present) - set(dictionary))
        if missing:
            raise ValueError(f"label ids {missing} are not in the dictionary")
        groups = {name: {int(k): int(v) for k, v in g.items()} for name, g in self.groups.items()}
        defaults = _identity_groups(dictionary)
        for name in ("generation", "target"):
            groups.setdefault(name, defaults[name])
        for name, g in groups.items():
            gaps = sorted(set(dictionary) - set(g))
            if gaps:
                raise ValueError(f"group {name!r} has no entry for ids {gaps}")
        dangling = sorted(set(groups["target"].values()) - set(dictionary))
        if dangling:
            raise ValueError(f"target ids {dangling} are not in the dictionary")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dictionary", dictionary)
        object.__setattr__(self, "groups", groups)

    def present_ids(self) -> list[int]:
        return [int(v) for v in np.unique(self.labels)]

    def ids_named(self, name: str) -> list[int]:
        return [i for i, n in self.dictionary.items() if n == name]

    def group_lut(self, group: str) -> np.ndarray:
        g = self.groups[group]
        lut = np.zeros(max(max(g), int(self.labels.max(initial=0))) + 1, dtype=np.int64)
        for k, v in g.items():
            lut[k] = v
        return lut

    def project(self, group: str = "target") -> "LabelVolume":
        """Relabel through a group map; the result is closed under identity groups."""
        lut = self.group_lut(group)
        mapped = lut[self.labels]
        ids = sorted(set(self.groups[group].values()))
        dictionary = {i: self.dictionary[i] for i in ids}
        return LabelVolume(self.geometry, _compact(mapped), dictionary)

    def with_labels(self, labels: np.ndarray, dictionary=None, groups=None) -> "LabelVolume":
        return LabelVolume(
            self.geometry,
            labels,
            self.dictionary if dictionary is None else dictionary,
            self.groups if groups is None else groups,
        )


Volume = Union[ScalarVolume, LabelVolume]


def _compact(labels: np.ndarray) -> np.ndarray:
    """Cast an integer array to the smallest writable label dtype."""
    hi = int(labels.max(initial=0))
    for dt in LABEL_DTYPES:
        if hi <= np.iinfo(dt).max:
            return labels.astype(dt, copy=False)
    raise ValueError(f"label id {hi} does not fit int32")


@dataclass(frozen=True)
class RigidTransform:
    """Rigid motion about the volume centre.

    Rotation angles are extrinsic XYZ Euler angles in degrees. The transform
    moves image content by ``y -> R (y - c) + c + t``.
    """

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))

    @property
    def matrix(self) -> np.ndarray:
        return Rotation.from_euler("xyz", self.rotation, degrees=True).as_matrix()

    def is_identity(self) -> bool:
        return not any(self.translation) and not any(self.rotation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self.compose(other)`` applies ``other`` first, then ``self``."""
        r = Rotation.from_euler("xyz", self.rotation, degrees=True)
        r_other = Rotation.from_euler("xyz", other.rotation, degrees=True)
        t = r.apply(other.translation) + np.asarray(self.translation)
        return RigidTransform(tuple(t), tuple((r * r_other).as_euler("xyz", degrees=True)))

    def inverse(self) -> "RigidTransform":
        r_inv = Rotation.from_euler("xyz", self.rotation, degrees=True).inv()
        t = -r_inv.apply(self.translation)
        return RigidTransform(tuple(t), tuple(r_inv.as_euler("xyz", degrees=True)))

    def world_matrix(self, center) -> np.ndarray:
        """4x4 forward point map in world coordinates."""
        m = np.eye(4)
        r = self.matrix
        c = np.asarray(center, dtype=np.float64)
        m[:3, :3] = r
        m[:3, 3] = c - r @ c + np.asarray(self.translation)
        return m

    def to_dict(self) -> dict:
        return {"translation": list(self.translation), "rotation": list(self.rotation)}

    @classmethod
    def from_dict(cls, d) -> "RigidTransform":
        return cls(tuple(d["translation"]), tuple(d["rotation"]))


# --------------------------------------------------------------------------
# NIfTI


def sidecar_path(path) -> str:
    path = os.fspath(path)
    for ext in (".nii.gz", ".nii"):
        if path.endswith(ext):
            return path[: -len(ext)] + ".json"
    return path + ".json"


def read_dictionary(path) -> tuple[dict[int, str], dict[str, dict[int, int]]]:
    """Load a label dictionary sidecar.

    The file maps ``id -> {"name", "generation_group", "target_group"}``.
    """
    with open(path) as f:
        raw = json.load(f)
    dictionary, gen, tgt = {}, {}, {}
    for key, entry in raw.items():
        i = int(key)
        if isinstance(entry, str):
            entry = {"name": entry}
        dictionary[i] = str(entry["name"])
        gen[i] = int(entry.get("generation_group", i))
        tgt[i] = int(entry.get("target_group", i))
    return dictionary, {"generation": gen, "target": tgt}


def write_dictionary(vol: LabelVolume, path):
    out = {
        str(i): {
            "name": name,
            "generation_group": vol.groups["generation"][i],
            "target_group": vol.groups["target"][i],
        }
        for i, name in sorted(vol.dictionary.items())
    }
    with open(path, "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")


def _check_header(hdr):
    if int(hdr["sizeof_hdr"]) != 348:
        raise NiftiError(f"sizeof_hdr: expected 348, got {int(hdr['sizeof_hdr'])}")
    magic = bytes(hdr["magic"]).rstrip(b"\x00")
    if magic not in (b"n+1", b"ni1"):
        raise NiftiError(f"magic: unsupported value {magic!r}")
    dim = [int(d) for d in hdr["dim"]]
    ndim = dim[0]
    if ndim < 3 or ndim > 7:
        raise NiftiError(f"dim[0]: expected 3, got {ndim}")
    if ndim > 3 and any(d > 1 for d in dim[4 : ndim + 1]):
        raise NiftiError(f"dim: unsupported shape {tuple(dim[1 : ndim + 1])}, only 3D volumes are supported")
    if any(d < 1 for d in dim[1:4]):
        raise NiftiError(f"dim: non-positive extent in {tuple(dim[1:4])}")
    dtype = hdr.get_data_dtype()
    if dtype.byteorder == ">":
        raise NiftiError("datatype: big-endian data is not supported")
    if dtype.newbyteorder("=").type not in LABEL_DTYPES + SCALAR_DTYPES:
        raise NiftiError(f"datatype: unsupported dtype {dtype}")


def _diagnose_raw(path) -> str | None:
    """Name the first malformed field of a raw NIfTI-1 header, if any."""
    opener = gzip.open if path.endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            raw = f.read(348)
    except OSError:
        return None
    if len(raw) < 348:
        return "sizeof_hdr: file shorter than a NIfTI-1 header"
    (size,) = struct.unpack("<i", raw[:4])
    if size != 348:
        return f"sizeof_hdr: expected 348, got {size}"
    magic = raw[344:348].rstrip(b"\x00")
    if magic not in (b"n+1", b"ni1"):
        return f"magic: unsupported value {magic!r}"
    return None


def read_nifti(path, dictionary_path=None) -> Volume:
    """Read a 3D NIfTI-1 file.

    Integer data gives a :class:`LabelVolume` (with the ``.json`` sidecar next
    to the file, if any); float32 data gives a :class:`ScalarVolume`.
    """
    path = os.fspath(path)
    try:
        img = nib.load(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # nibabel raises a zoo of header errors
        raise NiftiError(f"{path}: {_diagnose_raw(path) or 'cannot parse header'} ({exc})") from exc
    if not isinstance(img, nib.Nifti1Image):
        raise NiftiError(f"{path}: not a single-file NIfTI-1 image")
    hdr = img.header
    _check_header(hdr)
    affine = img.affine
    if affine is None or not np.all(np.isfinite(affine)) or abs(np.linalg.det(affine[:3, :3])) < 1e-12:
        raise NiftiError(f"{path}: srow/qform: affine is not invertible")
    raw = np.asanyarray(img.dataobj)
    if raw.ndim > 3:
        raw = raw.reshape(raw.shape[:3])
    slope, inter = hdr.get_slope_inter()
    if slope not in (None, 1.0) or inter not in (None, 0.0):
        raise NiftiError(f"{path}: scl_slope: scaled data is not supported")
    data = np.array(raw, dtype=raw.dtype.newbyteorder("="), copy=True)
    geometry = Geometry(data.shape, affine)
    if np.issubdtype(data.dtype, np.integer):
        side = dictionary_path or sidecar_path(path)
        if dictionary_path or os.path.exists(side):
            dictionary, groups = read_dictionary(side)
            return LabelVolume(geometry, data, dictionary, groups)
        return LabelVolume(geometry, data)
    return ScalarVolume(geometry, data)


def write_nifti(vol: Volume, path, sidecar: bool = True):
    """Write a volume; label maps also get their dictionary sidecar."""
    path = os.fspath(path)
    if isinstance(vol, LabelVolume):
        data = vol.labels
        if data.dtype.type not in LABEL_DTYPES:
            data = _compact(data)
    else:
        data = vol.values.astype(np.float32, copy=False)
    img = nib.Nifti1Image(np.asarray(data), vol.geometry.affine)
    img.set_qform(vol.geometry.affine, code=1)
    img.set_sform(vol.geometry.affine, code=1)
    img.header.set_xyzt_units("mm")
    try:
        nib.save(img, path)
        if sidecar and isinstance(vol, LabelVolume):
            write_dictionary(vol, sidecar_path(path))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


# --------------------------------------------------------------------------
# Resampling

_ORDER = {"nearest": 0, "trilinear": 1}


def _interp_order(vol: Volume, mode: str) -> int:
    if mode not in _ORDER:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    if isinstance(vol, LabelVolume) and mode != "nearest":
        raise ValueError("label volumes must be resampled with mode='nearest'")
    return _ORDER[mode]


def _default_fill(vol: Volume, fill):
    if fill is not None:
        return fill
    return 0


def _array(vol: Volume) -> np.ndarray:
    return vol.labels if isinstance(vol, LabelVolume) else vol.values


def _rebuild(vol: Volume, geometry: Geometry, data: np.ndarray) -> Volume:
    if isinstance(vol, LabelVolume):
        return LabelVolume(geometry, data.astype(vol.labels.dtype), vol.dictionary, vol.groups)
    return ScalarVolume(geometry, data.astype(vol.values.dtype, copy=False))


def resample(vol: Volume, target: Geometry, mode: str = "trilinear", fill=None,
             world_map: np.ndarray | None = None) -> Volume:
    """Resample ``vol`` onto ``target``.

    ``world_map`` is an optional 4x4 matrix taking output world points to the
    input world points to sample. Out-of-bounds samples take ``fill`` (0,
    which is also the background label id).
    """
    order = _interp_order(vol, mode)
    fill = _default_fill(vol, fill)
    m = vol.geometry.inverse_affine
    if world_map is not None:
        m = m @ world_map
    m = m @ target.affine
    src = _array(vol)
    if target.dims == vol.geometry.dims and np.allclose(m, np.eye(4), atol=1e-12, rtol=0):
        return _rebuild(vol, target, src.copy())
    work = src if order == 0 else src.astype(np.float64)
    out = ndimage.affine_transform(
        work, m[:3, :3], offset=m[:3, 3], output_shape=target.dims,
        order=order, mode="constant", cval=fill, prefilter=False,
    )
    return _rebuild(vol, target, out)


def apply_world_map(vol: Volume, world_map: np.ndarray, mode: str, fill=None) -> Volume:
    """Resample ``vol`` on its own grid through an output->input world map."""
    return resample(vol, vol.geometry, mode, fill, world_map=world_map)


def apply_rigid(vol: Volume, t: RigidTransform, mode: str = "trilinear", fill=None) -> Volume:
    """Move volume content by a rigid transform about the grid centre."""
    _interp_order(vol, mode)
    if t.is_identity():
        return _rebuild(vol, vol.geometry, _array(vol).copy())
    forward = t.world_matrix(vol.geometry.center)
    return apply_world_map(vol, np.linalg.inv(forward), mode, fill)


def pull(vol: Volume, coords_fn: Callable[[slice], np.ndarray], mode: str, fill=None,
         chunk: int = 16) -> Volume:
    """Backward-warp ``vol`` with an arbitrary per-voxel sampling map.

    ``coords_fn(sl)`` returns input voxel coordinates of shape
    ``(3, n_i, nj, nk)`` for the output slab ``sl`` along the first axis.
    Work is done slab by slab to bound memory.
    """
    order = _interp_order(vol, mode)
    fill = _default_fill(vol, fill)
    src = _array(vol)
    work = src if order == 0 else src.astype(np.float64)
    out = np.empty(vol.geometry.dims, dtype=src.dtype)
    for start in range(0, vol.geometry.dims[0], chunk):
        sl = slice(start, min(start + chunk, vol.geometry.dims[0]))
        coords = coords_fn(sl)
        out[sl] = ndimage.map_coordinates(work, coords, order=order, mode="constant",
                                          cval=fill, prefilter=False)
    return _rebuild(vol, vol.geometry, out)


def voxel_grid(dims: Sequence[int], sl: slice | None = None) -> np.ndarray:
    """Voxel index grid ``(3, ...)`` in float64, optionally restricted to a slab."""
    ranges = [np.arange(d, dtype=np.float64) for d in dims]
    if sl is not None:
        ranges[0] = ranges[0][sl]
    return np.stack(np.meshgrid(*ranges, indexing="ij"))
