"""
Cortical grey matter from surfaces
==================================

Volumetric GM labels tend to be too thick. Here GM is rebuilt from a white
and a pial surface as the partial-volume difference between the two, then
spliced into the label map without touching deep structures.
"""

# %%
import numpy as np

from neosynth.phantom import baby_phantom, phantom_surfaces
from neosynth.surfaces import gm_from_surfaces, icosphere, splice_gm, voxelize_pv
from neosynth.volume import Geometry

# %%
# The voxelizer on a sphere of radius 20 mm.
geom = Geometry.from_spacing((56, 56, 56), origin=(-27.5,) * 3)
pv = voxelize_pv(icosphere(20.0, subdivisions=5), geom, supersample=4)
print(f"voxelized {pv.values.sum():.1f} mm3 vs exact {4 / 3 * np.pi * 20**3:.1f} mm3")

# %%
labels, _ = baby_phantom(64)
white, pial = phantom_surfaces(labels)
gm_pv, clamped = gm_from_surfaces(white, pial, labels.geometry, return_clamped=True)
spliced = splice_gm(labels, gm_pv, voxelize_pv(white, labels.geometry))

before = np.count_nonzero(labels.labels == 2)
after = np.count_nonzero(spliced.labels == 2)
print(f"GM voxels {before} -> {after} (ratio {before / after:.2f}), clamped voxels {clamped}")

# %%
for i in (5, 6, 7, 8, 9):
    same = np.array_equal(labels.labels == i, spliced.labels == i)
    print(f"{labels.dictionary[i]:>10s} unchanged: {same}")
