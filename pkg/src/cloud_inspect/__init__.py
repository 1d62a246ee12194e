"""Point-cloud registration and irregularity inspection.

Aligns a field scan onto a reference scan across unknown scale and
orientation differences (similarity ICP), classifies per-point differences
against a distance threshold, measures the volume of unmatched regions,
and renders color-annotated diff clouds. See the README for the CLI and
the demos/ directory for library walkthroughs.
"""

from ._version import __version__
from .compare import (ComparisonResult, MatchLabel, auto_threshold, classify,
                      colorize_diff, compare)
from .geometry import (Aabb, PointCloud, SimilarityTransform, VoxelGrid,
                       bounding_box, centroid, occupancy_volume,
                       voxel_downsample, voxelize)
from .kdtree import KdTree, set_query_threads
from .ply import PlyError, PlyHeader, load_ply, read_header, read_ply, save_ply, write_ply
from .registration import (CorrespondenceSet, CorrespondenceStarvation,
                           IcpIteration, IcpParams, IcpResult,
                           estimate_similarity, icp, initial_align, register)
from .synth import (DefectOutcome, DefectSpec, Primitive, SceneSpec, SynthCase,
                    apply_defects, generate_scene, inject_defect, make_case,
                    perturb, preset_defects, preset_scene, rotation_about_axis)

__all__ = [
    "__version__",
    "Aabb", "PointCloud", "SimilarityTransform", "VoxelGrid",
    "bounding_box", "centroid", "occupancy_volume", "voxel_downsample", "voxelize",
    "KdTree", "set_query_threads",
    "IcpParams", "IcpResult", "IcpIteration", "CorrespondenceSet",
    "CorrespondenceStarvation", "estimate_similarity", "initial_align",
    "icp", "register",
    "MatchLabel", "ComparisonResult", "classify", "compare", "auto_threshold",
    "colorize_diff",
    "PlyError", "PlyHeader", "read_ply", "write_ply", "load_ply", "save_ply",
    "read_header",
    "Primitive", "SceneSpec", "DefectSpec", "DefectOutcome", "SynthCase",
    "generate_scene", "inject_defect", "apply_defects", "perturb", "make_case",
    "preset_scene", "preset_defects", "rotation_about_axis",
]
