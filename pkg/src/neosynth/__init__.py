"""Synthetic neonatal MRI generation from label maps, and segmentation evaluation."""

__version__ = "0.1.0"

from .volume import (Geometry, LabelVolume, RigidTransform, ScalarVolume, apply_rigid, read_nifti,
                     resample, write_nifti)
from .synth import (BiasFieldSpec, ContrastPrior, NoiseSpec, add_noise, labels_to_image,
                    minmax_normalize, sample_bias_field)
from .spatial import AffineSpec, ElasticSpec, sample_affine, sample_elastic, warp
from .motion import MotionSpec, MotionTrajectory, corrupt, sample_trajectory
from .labels import fit_gmm_1d, fuse_head_labels, merge_for_eval, subdivide_label
from .surfaces import TriangleMesh, gm_from_surfaces, splice_gm, voxelize_pv
from .metrics import average_surface_distance, dice, flag_outliers, pearson, structure_volume
from .patches import PatchSpec, sample_patches
from .pipeline import GenerationConfig, dataT2_augment, generate_dataset, generate_sample
