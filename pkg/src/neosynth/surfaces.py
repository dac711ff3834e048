"""Surface-based GM ground truth: mesh partial volumes and label splicing."""

from __future__ import annotations

import logging
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .labels import CSF, GM, WM
from .volume import Geometry, LabelVolume, ScalarVolume

log = logging.getLogger(__name__)

__all__ = [
    "TriangleMesh",
    "MeshError",
    "read_mesh",
    "write_off",
    "icosphere",
    "voxelize_pv",
    "gm_from_surfaces",
    "splice_gm",
]

# sub-voxel ray offsets (in voxels); majority vote over the three rays
RAY_JITTER = ((1.13e-6, 0.71e-6), (-0.83e-6, 1.37e-6), (0.59e-6, -1.21e-6))


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) world mm
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("vertices must be (V, 3) and faces (F, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def check_closed(self):
        """Raise unless every edge is shared by exactly two faces with opposite direction."""
        directed = Counter()
        for a, b, c in self.faces.tolist():
            directed.update(((a, b), (b, c), (c, a)))
        for (a, b), n in directed.items():
            if n != 1:
                raise MeshError(f"edge ({a}, {b}) is used {n} times in the same direction; "
                                "mesh is not consistently oriented")
            if directed.get((b, a), 0) != 1:
                raise MeshError(f"edge ({a}, {b}) has no matching opposite edge; mesh is not closed")

    def signed_volume(self) -> float:
        v0, v1, v2 = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)

    def transformed(self, matrix: np.ndarray) -> "TriangleMesh":
        v = self.vertices @ matrix[:3, :3].T + matrix[:3, 3]
        return TriangleMesh(v, self.faces)


def _read_off(path) -> TriangleMesh:
    with open(path) as f:
        tokens = [ln.split("#", 1)[0].strip() for ln in f]
    tokens = [t for t in tokens if t]
    if not tokens or not tokens[0].startswith("OFF"):
        raise MeshError(f"{path}: missing OFF header")
    head = tokens[0][3:].split() or tokens.pop(1).split()
    nv, nf = int(head[0]), int(head[1])
    body = tokens[1 : 1 + nv + nf]
    verts = np.array([list(map(float, ln.split()[:3])) for ln in body[:nv]])
    faces = []
    for ln in body[nv:]:
        parts = ln.split()
        if int(parts[0]) != 3:
            raise MeshError(f"{path}: only triangular faces are supported")
        faces.append([int(p) for p in parts[1:4]])
    return TriangleMesh(verts.reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path) -> TriangleMesh:
    """Read an ASCII OFF or GIfTI surface (coordinates assumed in world mm)."""
    path = os.fspath(path)
    if path.endswith(".off"):
        return _read_off(path)
    if path.endswith(".gii"):
        import nibabel as nib

        img = nib.load(path)
        coords = img.agg_data("NIFTI_INTENT_POINTSET")
        faces = img.agg_data("NIFTI_INTENT_TRIANGLE")
        if coords is None or faces is None:
            raise MeshError(f"{path}: GIfTI file lacks pointset or triangle arrays")
        return TriangleMesh(coords, faces)
    raise MeshError(f"{path}: unsupported mesh format (use .off or .gii)")


def write_off(mesh: TriangleMesh, path):
    with open(path, "w") as f:
        f.write(f"OFF\n{len(mesh.vertices)} {len(mesh.faces)} 0\n")
        for x, y, z in mesh.vertices.tolist():
            f.write(f"{x!r} {y!r} {z!r}\n")
        for a, b, c in mesh.faces.tolist():
            f.write(f"3 {a} {b} {c}\n")


def icosphere(radius: float = 1.0, center=(0.0, 0.0, 0.0), subdivisions: int = 4) -> TriangleMesh:
    """Outward-oriented geodesic sphere."""
    t = (1 + 5**0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, float)
    return TriangleMesh(v, np.array(faces))


# --------------------------------------------------------------------------
# Partial volume by supersampled ray parity


def _row_crossings(tri: np.ndarray, ys: np.ndarray, zs: np.ndarray):
    """Crossings of +x rays with triangles in voxel index space.

    Rays sit at every ``(ys[a], zs[b])``. Returns ``(row_a, row_b, x)`` arrays
    for each ray/triangle intersection. Triangles parallel to x are skipped.
    """
    p0, p1, p2 = tri[:, 0], tri[:, 1], tri[:, 2]
    # 2D signed area in the (y, z) plane
    area = (p1[:, 1] - p0[:, 1]) * (p2[:, 2] - p0[:, 2]) - (p2[:, 1] - p0[:, 1]) * (p1[:, 2] - p0[:, 2])
    keep = area != 0
    tri, area = tri[keep], area[keep]
    dy = ys[1] - ys[0] if len(ys) > 1 else 1.0
    dz = zs[1] - zs[0] if len(zs) > 1 else 1.0
    lo = tri[:, :, 1:].min(axis=1)
    hi = tri[:, :, 1:].max(axis=1)
    a0 = np.clip(np.ceil((lo[:, 0] - ys[0]) / dy).astype(np.int64), 0, len(ys))
    a1 = np.clip(np.floor((hi[:, 0] - ys[0]) / dy).astype(np.int64) + 1, 0, len(ys))
    b0 = np.clip(np.ceil((lo[:, 1] - zs[0]) / dz).astype(np.int64), 0, len(zs))
    b1 = np.clip(np.floor((hi[:, 1] - zs[0]) / dz).astype(np.int64) + 1, 0, len(zs))
    na = np.maximum(a1 - a0, 0)
    nb = np.maximum(b1 - b0, 0)
    count = na * nb
    total = int(count.sum())
    if total == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    t_idx = np.repeat(np.arange(len(tri)), count)
    offs = np.arange(total) - np.repeat(np.cumsum(count) - count, count)
    ra = a0[t_idx] + offs // nb[t_idx]
    rb = b0[t_idx] + offs % nb[t_idx]
    py, pz = ys[ra], zs[rb]
    t = tri[t_idx]
    q0, q1, q2 = t[:, 0], t[:, 1], t[:, 2]

    def edge(u, v):
        return (v[:, 1] - u[:, 1]) * (pz - u[:, 2]) - (v[:, 2] - u[:, 2]) * (py - u[:, 1])

    w0 = edge(q1, q2)
    w1 = edge(q2, q0)
    w2 = edge(q0, q1)
    s = np.sign(area[t_idx])
    inside = (w0 * s >= 0) & (w1 * s >= 0) & (w2 * s >= 0)
    ar = area[t_idx][inside]
    x = (w0[inside] * q0[inside, 0] + w1[inside] * q1[inside, 0] + w2[inside] * q2[inside, 0]) / ar
    return ra[inside], rb[inside], x


def _inside_subgrid(tri_vox, xs, ys, zs, jitter) -> np.ndarray:
    """Boolean parity-inside mask on the sub-point grid ``xs x ys x zs``."""
    ra, rb, xc = _row_crossings(tri_vox, ys + jitter[0], zs + jitter[1])
    nx = len(xs)
    dx = xs[1] - xs[0] if nx > 1 else 1.0
    # first sub-point strictly beyond each crossing gets toggled
    k = np.clip(np.floor((xc - xs[0]) / dx).astype(np.int64) + 1, 0, nx)
    k = np.where((k > 0) & (k <= nx) & (xs[np.minimum(k, nx) - 1] > xc), k - 1, k)
    toggles = np.zeros((len(ys), len(zs), nx + 1), dtype=np.int32)
    np.add.at(toggles, (ra, rb, k), 1)
    parity = np.cumsum(toggles[..., :nx], axis=-1) & 1
    return np.moveaxis(parity.astype(bool), -1, 0)


def voxelize_pv(mesh: TriangleMesh, geom: Geometry, supersample: int = 4, check: bool = True,
                slab: int = 8) -> ScalarVolume:
    """Fraction of each voxel's ``supersample**3`` sub-points inside a closed mesh.

    Inside/outside is decided by the parity of crossings along +x in voxel
    index space, voted over three slightly offset rays so that rays grazing
    an edge or vertex cannot flip the result.
    """
    s = int(supersample)
    if s < 1:
        raise ValueError("supersample must be >= 1")
    if check:
        mesh.check_closed()
    tri_vox = mesh.transformed(geom.inverse_affine).vertices[mesh.faces]
    pv = np.zeros(geom.dims, dtype=np.float64)
    if tri_vox.size == 0:
        return ScalarVolume(geom, pv.astype(np.float32))
    lo = np.floor(tri_vox.reshape(-1, 3).min(axis=0)).astype(int) - 1
    hi = np.ceil(tri_vox.reshape(-1, 3).max(axis=0)).astype(int) + 2
    lo = np.clip(lo, 0, geom.dims)
    hi = np.clip(hi, 0, geom.dims)
    if np.any(hi <= lo):
        return ScalarVolume(geom, pv.astype(np.float32))
    offsets = (np.arange(s) + 0.5) / s - 0.5

    def sub(a, b):
        return (np.arange(a, b)[:, None] + offsets[None, :]).ravel()

    xs = sub(lo[0], hi[0])
    ys = sub(lo[1], hi[1])
    # slabs along z bound the size of the sub-point grid
    for z0 in range(lo[2], hi[2], slab):
        z1 = min(z0 + slab, hi[2])
        zs = sub(z0, z1)
        zmin, zmax = zs[0] - 1e-3, zs[-1] + 1e-3
        sel = (tri_vox[:, :, 2].max(axis=1) >= zmin) & (tri_vox[:, :, 2].min(axis=1) <= zmax)
        votes = sum(_inside_subgrid(tri_vox[sel], xs, ys, zs, j).astype(np.int8) for j in RAY_JITTER)
        inside = votes >= 2
        nx, ny, nz = hi[0] - lo[0], hi[1] - lo[1], z1 - z0
        frac = inside.reshape(nx, s, ny, s, nz, s).mean(axis=(1, 3, 5))
        pv[lo[0] : hi[0], lo[1] : hi[1], z0:z1] = frac
    return ScalarVolume(geom, pv.astype(np.float32))


def gm_from_surfaces(white: TriangleMesh, pial: TriangleMesh, geom: Geometry, supersample: int = 4,
                     return_clamped: bool = False):
    """``clamp(PV(pial) - PV(white), 0, 1)``; optionally also the clamped-voxel count."""
    pv_pial = voxelize_pv(pial, geom, supersample).values.astype(np.float64)
    pv_white = voxelize_pv(white, geom, supersample).values.astype(np.float64)
    diff = pv_pial - pv_white
    clamped = int(np.count_nonzero((diff < 0) | (diff > 1)))
    if clamped:
        log.info("%d voxels clamped where white lies outside pial", clamped)
    gm = ScalarVolume(geom, np.clip(diff, 0.0, 1.0).astype(np.float32))
    if return_clamped:
        return gm, clamped
    return gm


def splice_gm(base: LabelVolume, pv_gm: ScalarVolume, pv_white: ScalarVolume,
              gm_id: int = GM, wm_id: int = WM, csf_id: int = CSF, threshold: float = 0.5) -> LabelVolume:
    """Replace the GM label by ``pv_gm > threshold``.

    Voxels leaving GM become WM when inside the white surface (``pv_white >
    threshold``), CSF otherwise. New GM only takes over WM or CSF voxels, so
    every other structure is left untouched.
    """
    if not (base.geometry.same_as(pv_gm.geometry) and base.geometry.same_as(pv_white.geometry)):
        raise ValueError("label map and partial volume maps must share geometry")
    out = base.labels.copy()
    new_gm = pv_gm.values > threshold
    old_gm = out == gm_id
    freed = old_gm & ~new_gm
    inside_white = pv_white.values > threshold
    out[freed & inside_white] = wm_id
    out[freed & ~inside_white] = csf_id
    out[new_gm & np.isin(base.labels, (wm_id, csf_id))] = gm_id
    return base.with_labels(out)
