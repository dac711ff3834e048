"""Nested-ellipsoid neonatal "baby phantom" used by tests and demos."""

from __future__ import annotations

import numpy as np

from .labels import (BACKGROUND, BSTEM, CEREB, CSF, DEEP_GM, GM, HIPAMY, VENTRICLES, WM,
                     dhcp_dictionary)
from .surfaces import TriangleMesh, icosphere
from .volume import Geometry, LabelVolume, ScalarVolume

__all__ = ["baby_phantom", "phantom_surfaces", "head_phantom", "BRAIN_RADII", "LAYERS"]

# brain ellipsoid semi-axes as fractions of the grid size
BRAIN_RADII = (0.40, 0.34, 0.30)
# outer scale of each shell, outermost first
LAYERS = ((BACKGROUND, 1.0), (CSF, 0.95), (GM, 0.88), (WM, 0.78))

T2_MEANS = {0: 0.0, BACKGROUND: 0.05, CSF: 1.0, GM: 0.45, VENTRICLES: 0.95, CEREB: 0.4,
            DEEP_GM: 0.35, BSTEM: 0.3, HIPAMY: 0.5}


def _ellipsoid(grid, center, radii):
    return sum(((g - c) / r) ** 2 for g, c, r in zip(grid, center, radii)) <= 1.0


def baby_phantom(size: int = 96, spacing: float = 1.0, seed=0):
    """Label map with the nine dHCP tissues and a matching T2-like image.

    WM intensity is bimodal (brighter towards the front), so it can be
    subdivided into meaningful clusters. Returns ``(labels, t2)``.
    """
    n = int(size)
    geom = Geometry.from_spacing((n, n, n), (spacing,) * 3, origin=(-(n - 1) * spacing / 2,) * 3)
    g = np.meshgrid(*[np.arange(n, dtype=np.float64)] * 3, indexing="ij")
    c = np.full(3, (n - 1) / 2)
    radii = np.array(BRAIN_RADII) * n
    lab = np.zeros((n, n, n), dtype=np.uint8)
    for label, scale in LAYERS:
        lab[_ellipsoid(g, c, radii * scale)] = label

    def blob(offset, frac, label):
        m = _ellipsoid(g, c + np.array(offset) * n, np.array(frac) * n)
        lab[m] = label

    blob((0.0, 0.05, 0.03), (0.05, 0.03, 0.06), VENTRICLES)
    blob((0.0, -0.05, 0.03), (0.05, 0.03, 0.06), VENTRICLES)
    blob((0.02, 0.07, -0.04), (0.06, 0.03, 0.04), DEEP_GM)
    blob((0.02, -0.07, -0.04), (0.06, 0.03, 0.04), DEEP_GM)
    blob((-0.06, 0.11, -0.09), (0.04, 0.02, 0.02), HIPAMY)
    blob((-0.06, -0.11, -0.09), (0.04, 0.02, 0.02), HIPAMY)
    blob((-0.17, 0.0, -0.12), (0.07, 0.13, 0.06), CEREB)
    blob((-0.05, 0.0, -0.16), (0.04, 0.04, 0.06), BSTEM)

    rng = np.random.default_rng(seed)
    t2 = np.zeros(lab.shape)
    for label, mu in T2_MEANS.items():
        t2[lab == label] = mu
    wm = lab == WM
    front = g[0] > c[0]
    t2[wm & front] = 0.75
    t2[wm & ~front] = 0.6
    t2 += rng.normal(0.0, 0.02, lab.shape) * (lab > 0)
    np.clip(t2, 0.0, None, out=t2)  # magnitude images are non-negative
    labels = LabelVolume(geom, lab, dhcp_dictionary())
    return labels, ScalarVolume(geom, t2.astype(np.float32))


def _ellipsoid_mesh(geom: Geometry, scale: float, subdivisions: int) -> TriangleMesh:
    n = geom.dims[0]
    unit = icosphere(1.0, subdivisions=subdivisions)
    radii_vox = np.array(BRAIN_RADII) * n * scale
    center_vox = (np.array(geom.dims) - 1) / 2
    v_vox = unit.vertices * radii_vox + center_vox
    v_world = v_vox @ geom.affine[:3, :3].T + geom.affine[:3, 3]
    return TriangleMesh(v_world, unit.faces)


def phantom_surfaces(labels: LabelVolume, white_scale: float = 0.80, pial_scale: float = 0.86,
                     subdivisions: int = 4) -> tuple[TriangleMesh, TriangleMesh]:
    """White and pial ellipsoid meshes for the phantom, in world mm.

    The defaults sit slightly inside the label shells so that splicing
    produces a thinner cortex than the volumetric GM.
    """
    return (_ellipsoid_mesh(labels.geometry, white_scale, subdivisions),
            _ellipsoid_mesh(labels.geometry, pial_scale, subdivisions))


def head_phantom(labels: LabelVolume) -> LabelVolume:
    """Head-class map (0 background, 1..9 head classes) wrapping the phantom brain."""
    n = labels.geometry.dims[0]
    g = np.meshgrid(*[np.arange(n, dtype=np.float64)] * 3, indexing="ij")
    c = np.full(3, (n - 1) / 2)
    radii = np.array(BRAIN_RADII) * n
    head = np.zeros(labels.geometry.dims, dtype=np.uint8)
    # skin (7) > skull (8) > dura (1), outermost first
    for cls, scale in ((7, 1.22), (8, 1.15), (1, 1.06)):
        head[_ellipsoid(g, c, radii * scale)] = cls
    head[_ellipsoid(g, c, radii * 1.02)] = 0  # gap left by the removed template brain
    return LabelVolume(labels.geometry, head)
