"""Structure-balanced patch extraction and the packed patch shard format.

Shard layout (little-endian)::

    magic   4 bytes  b"NSPT"
    count   uint32
    size    3 x uint32
    then, per patch: float32 image block, uint8 label block (C order)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .volume import LabelVolume, ScalarVolume

__all__ = ["PatchSpec", "Patch", "sample_patches", "write_shard", "read_shard", "SHARD_MAGIC"]

SHARD_MAGIC = b"NSPT"
_HEADER = struct.Struct("<4sI3I")


@dataclass(frozen=True)
class PatchSpec:
    size: tuple[int, int, int] = (128, 128, 128)
    count_per_volume: int = 8
    exclude: tuple[int, ...] = ()

    def __post_init__(self):
        size = tuple(int(s) for s in self.size)
        if len(size) != 3 or min(size) < 1:
            raise ValueError("patch size must be 3 positive integers")
        if self.count_per_volume < 0:
            raise ValueError("count_per_volume must be >= 0")
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "exclude", tuple(int(e) for e in self.exclude))


@dataclass(frozen=True, eq=False)
class Patch:
    image: np.ndarray
    labels: np.ndarray
    center: tuple[int, int, int]
    start: tuple[int, int, int]
    structure: int


def sample_patches(image: ScalarVolume, labels: LabelVolume, spec: PatchSpec = PatchSpec(), seed=None,
                   group: str = "target") -> list[Patch]:
    """Draw a structure uniformly, then a voxel uniformly within it, and crop around it.

    Structures are the ``group`` ids present in the map, minus
    ``spec.exclude``. Windows are clamped inside the volume, so the centre
    voxel, and hence the drawn structure, is always inside the patch.
    """
    if not image.geometry.same_as(labels.geometry):
        raise ValueError("image and labels must share geometry")
    dims = np.array(labels.geometry.dims)
    size = np.array(spec.size)
    if np.any(size > dims):
        raise ValueError(f"patch size {spec.size} exceeds volume dims {tuple(dims)}")
    rng = np.random.default_rng(seed)
    target = labels.group_lut(group)[labels.labels].ravel()
    order = np.argsort(target, kind="stable")
    ids, starts, counts = np.unique(target[order], return_index=True, return_counts=True)
    keep = ~np.isin(ids, spec.exclude)
    ids, starts, counts = ids[keep], starts[keep], counts[keep]
    if ids.size == 0:
        raise ValueError("no eligible structure in the label map")
    tmap = target.reshape(labels.labels.shape)
    out = []
    for _ in range(spec.count_per_volume):
        s = int(rng.integers(ids.size))
        flat = order[starts[s] + rng.integers(counts[s])]
        center = np.array(np.unravel_index(flat, dims))
        start = np.clip(center - size // 2, 0, dims - size)
        sl = tuple(slice(a, a + n) for a, n in zip(start, size))
        out.append(Patch(image.values[sl].copy(), tmap[sl].copy(), tuple(map(int, center)),
                         tuple(map(int, start)), int(ids[s])))
    return out


def write_shard(patches: list[Patch], path):
    if not patches:
        size = (0, 0, 0)
    else:
        size = patches[0].image.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SHARD_MAGIC, len(patches), *size))
        for p in patches:
            if p.image.shape != size or p.labels.shape != size:
                raise ValueError("all patches in a shard must have the same size")
            if p.labels.min(initial=0) < 0 or p.labels.max(initial=0) > 255:
                raise ValueError("shard labels must fit uint8")
            f.write(np.ascontiguousarray(p.image, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(p.labels, dtype="u1").tobytes())


def read_shard(path) -> list[tuple[np.ndarray, np.ndarray]]:
    with open(path, "rb") as f:
        magic, count, *size = _HEADER.unpack(f.read(_HEADER.size))
        if magic != SHARD_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        n = int(np.prod(size))
        out = []
        for _ in range(count):
            img = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(size)
            lab = np.frombuffer(f.read(n), dtype="u1").reshape(size)
            out.append((img.astype(np.float32), lab.copy()))
    return out
