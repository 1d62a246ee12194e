"""Seeded synthetic scenes with injected defects and known ground truth.

Scenes are unions of surface-sampled primitives (boxes, cylinders,
spheres), mimicking what photogrammetry-style reconstruction yields:
object surfaces, not interiors. Defects either delete the points inside a
region or displace them rigidly, and the constructive truth (which points
changed, and the volume they occupied) is returned alongside. A seeded
random similarity perturbation stands in for the frame mismatch between
two independently reconstructed models.

All randomness flows through a Philox4x64 counter-based generator keyed
directly by the 64-bit case seed, so every cloud here is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .compare import MatchLabel, auto_threshold
from .geometry import (Aabb, PointCloud, SimilarityTransform, bounding_box,
                       occupancy_volume, voxelize)

__all__ = [
    "Primitive",
    "SceneSpec",
    "DefectSpec",
    "DefectOutcome",
    "SynthCase",
    "generate_scene",
    "inject_defect",
    "apply_defects",
    "perturb",
    "rotation_about_axis",
    "make_case",
    "preset_scene",
    "preset_defects",
    "PRESET_NAMES",
    "scene_spec_to_dict",
    "scene_spec_from_dict",
    "defect_spec_to_dict",
    "defect_spec_from_dict",
]

_SHAPE_DIMS = {"box": 3, "cylinder": 2, "sphere": 1}


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


@dataclass(frozen=True)
class Primitive:
    """One surface-sampled solid: shape, canonical dimensions, world pose.

    Dimensions are, per shape: box (dx, dy, dz); cylinder (radius, height,
    axis +z before posing); sphere (radius,). Point count is
    round(points_per_unit_area * posed surface area).
    """

    shape: str
    dimensions: tuple
    points_per_unit_area: float
    pose: SimilarityTransform = field(default_factory=SimilarityTransform.identity)

    def __post_init__(self):
        if self.shape not in _SHAPE_DIMS:
            raise ValueError(f"unknown shape {self.shape!r}")
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != _SHAPE_DIMS[self.shape]:
            raise ValueError(
                f"{self.shape} needs {_SHAPE_DIMS[self.shape]} dimensions, got {len(dims)}"
            )
        if any(not d > 0 for d in dims):
            raise ValueError("dimensions must be positive")
        if not self.points_per_unit_area > 0:
            raise ValueError("points_per_unit_area must be positive")
        object.__setattr__(self, "dimensions", dims)


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class DefectSpec:
    """A change to inject: delete or rigidly displace the points in `region`."""

    kind: str  # "remove_region" | "move_region"
    region: Aabb
    displacement: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in ("remove_region", "move_region"):
            raise ValueError(f"unknown defect kind {self.kind!r}")
        d = np.ascontiguousarray(self.displacement, dtype=np.float64).reshape(3)
        d.setflags(write=False)
        object.__setattr__(self, "displacement", d)


@dataclass(frozen=True)
class DefectOutcome:
    """Defected cloud plus constructive truth labels for both clouds."""

    cloud: PointCloud
    original_labels: np.ndarray  # per point of the pristine cloud
    defected_labels: np.ndarray  # per point of the returned cloud


@dataclass(frozen=True)
class SynthCase:
    """A full test case: pristine reference, perturbed defective field, truth."""

    reference: PointCloud
    field: PointCloud
    true_transform: SimilarityTransform
    truth_labels_reference: np.ndarray
    truth_labels_field: np.ndarray
    defect_volume_truth: float
    defect_volume_voxel_size: float


def _apportion(total: int, weights) -> list:
    """Split `total` into integer parts proportional to weights (largest
    remainder, ties to the earlier entry). Deterministic and exact."""
    w = np.asarray(weights, dtype=np.float64)
    quota = total * w / w.sum()
    counts = np.floor(quota).astype(int)
    remainder = total - int(counts.sum())
    if remainder > 0:
        frac = quota - counts
        for i in np.argsort(-frac, kind="stable")[:remainder]:
            counts[i] += 1
    return counts.tolist()


def _sample_box(dims, count: int, rng: np.random.Generator) -> np.ndarray:
    dx, dy, dz = dims
    areas = [dy * dz, dy * dz, dx * dz, dx * dz, dx * dy, dx * dy]
    out = np.empty((count, 3))
    row = 0
    for face, k in enumerate(_apportion(count, areas)):
        uv = rng.random((k, 2)) - 0.5
        block = out[row:row + k]
        axis = face // 2
        side = 0.5 if face % 2 == 0 else -0.5
        spans = [d for j, d in enumerate((dx, dy, dz)) if j != axis]
        block[:, axis] = side * (dx, dy, dz)[axis]
        others = [j for j in range(3) if j != axis]
        block[:, others[0]] = uv[:, 0] * spans[0]
        block[:, others[1]] = uv[:, 1] * spans[1]
        row += k
    return out


def _sample_cylinder(dims, count: int, rng: np.random.Generator) -> np.ndarray:
    radius, height = dims
    lateral = 2 * math.pi * radius * height
    cap = math.pi * radius * radius
    out = np.empty((count, 3))
    k_lat, k_top, k_bot = _apportion(count, [lateral, cap, cap])
    u = rng.random((k_lat, 2))
    theta = 2 * math.pi * u[:, 0]
    out[:k_lat, 0] = radius * np.cos(theta)
    out[:k_lat, 1] = radius * np.sin(theta)
    out[:k_lat, 2] = (u[:, 1] - 0.5) * height
    row = k_lat
    for k, z in ((k_top, height / 2), (k_bot, -height / 2)):
        u = rng.random((k, 2))
        rho = radius * np.sqrt(u[:, 0])
        theta = 2 * math.pi * u[:, 1]
        out[row:row + k, 0] = rho * np.cos(theta)
        out[row:row + k, 1] = rho * np.sin(theta)
        out[row:row + k, 2] = z
        row += k
    return out


def _sample_sphere(dims, count: int, rng: np.random.Generator) -> np.ndarray:
    radius = dims[0]
    u = rng.random((count, 2))
    z = 2.0 * u[:, 0] - 1.0
    theta = 2 * math.pi * u[:, 1]
    rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return radius * np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])


_SAMPLERS = {"box": _sample_box, "cylinder": _sample_cylinder, "sphere": _sample_sphere}


def _surface_area(p: Primitive) -> float:
    if p.shape == "box":
        dx, dy, dz = p.dimensions
        return 2.0 * (dx * dy + dy * dz + dx * dz)
    if p.shape == "cylinder":
        r, h = p.dimensions
        return 2 * math.pi * r * h + 2 * math.pi * r * r
    r = p.dimensions[0]
    return 4 * math.pi * r * r


def generate_scene(spec: SceneSpec) -> PointCloud:
    """Surface-sample every primitive; bit-identical for a given seed."""
    rng = _rng(spec.seed)
    parts = []
    for prim in spec.primitives:
        area = _surface_area(prim) * prim.pose.scale**2
        count = int(round(prim.points_per_unit_area * area))
        if count <= 0:
            continue
        canonical = _SAMPLERS[prim.shape](prim.dimensions, count, rng)
        parts.append(prim.pose.apply_points(canonical))
    if not parts:
        raise ValueError("scene produced zero points")
    return PointCloud(np.vstack(parts))


def apply_defects(cloud: PointCloud, defects) -> DefectOutcome:
    """Inject defects in order, tracking truth labels through removals."""
    original_labels = np.full(len(cloud), np.int8(MatchLabel.MATCHED))
    current = cloud
    current_labels = original_labels.copy()
    back_index = np.arange(len(cloud))
    for defect in defects:
        inside = defect.region.contains(current.points)
        original_labels[back_index[inside]] = np.int8(MatchLabel.UNMATCHED)
        if defect.kind == "remove_region":
            keep = ~inside
            current = current.select(keep)
            current_labels = current_labels[keep]
            back_index = back_index[keep]
        else:
            pts = current.points.copy()
            pts[inside] += defect.displacement
            current = PointCloud(pts, current.colors)
            current_labels = current_labels.copy()
            current_labels[inside] = np.int8(MatchLabel.UNMATCHED)
    return DefectOutcome(current, original_labels, current_labels)


def inject_defect(cloud: PointCloud, defect: DefectSpec) -> DefectOutcome:
    """Single-defect form of apply_defects."""
    return apply_defects(cloud, [defect])


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(a)
    if norm < 1e-12:
        raise ValueError("axis must be nonzero")
    x, y, z = a / norm
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle_rad) * k + (1.0 - math.cos(angle_rad)) * (k @ k)


def perturb(cloud: PointCloud, rotation_max_deg: float, translation_max_frac: float,
            scale_range, noise_sigma: float, seed: int):
    """Apply a seeded random similarity transform plus optional Gaussian noise.

    Rotation angle is uniform in [0, rotation_max_deg] about a uniform random
    axis; translation magnitude uniform in [0, translation_max_frac * bbox
    diagonal] along a uniform random direction; scale uniform in scale_range.
    Returns (perturbed cloud, exact transform used). Noise, when nonzero, is
    added after the transform and is not part of the returned transform.
    """
    if not 0.0 <= rotation_max_deg <= 180.0:
        raise ValueError("rotation_max_deg must lie in [0, 180]")
    lo, hi = (float(scale_range[0]), float(scale_range[1]))
    if not (0 < lo <= hi):
        raise ValueError("scale_range must be positive and ordered")
    if translation_max_frac < 0 or noise_sigma < 0:
        raise ValueError("translation_max_frac and noise_sigma must be nonnegative")
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    rng = _rng(seed)
    axis = rng.standard_normal(3)
    if np.linalg.norm(axis) < 1e-12:
        axis = np.array([0.0, 0.0, 1.0])
    angle = math.radians(rng.uniform(0.0, rotation_max_deg))
    rotation = rotation_about_axis(axis, angle)
    direction = rng.standard_normal(3)
    n = np.linalg.norm(direction)
    direction = direction / n if n >= 1e-12 else np.array([1.0, 0.0, 0.0])
    diagonal = bounding_box(cloud).diagonal if len(cloud) > 1 else 0.0
    magnitude = rng.uniform(0.0, translation_max_frac * diagonal)
    scale = rng.uniform(lo, hi)
    transform = SimilarityTransform(scale, rotation, magnitude * direction)
    moved = transform.apply_points(cloud.points)
    if noise_sigma > 0:
        moved = moved + rng.normal(0.0, noise_sigma, moved.shape)
    return PointCloud(moved, cloud.colors), transform


# ---------------------------------------------------------------------------
# Bundled presets: a drilling-tower stand-in, a pet figurine, and a chair.
# Each is deliberately anisotropic with nonzero skew on every axis so the
# coarse principal-axis alignment is well determined, and each carries
# canonical defect regions covering a whole protruding feature.
# ---------------------------------------------------------------------------

def _translate(x, y, z) -> SimilarityTransform:
    return SimilarityTransform(1.0, np.eye(3), np.array([x, y, z]))


def _posed(x, y, z, rotation=None) -> SimilarityTransform:
    r = np.eye(3) if rotation is None else rotation
    return SimilarityTransform(1.0, r, np.array([x, y, z]))


def _tower_scene(seed: int, density: float) -> SceneSpec:
    # tapered trunk with offset upper stages plus a large ground-level
    # buttress; the heavy fixed asymmetry keeps every principal-axis skew
    # sign stable even after the three service brackets are removed
    prims = (
        Primitive("box", (3.2, 2.4, 2.2), density, _translate(0.0, 0.0, 1.1)),
        Primitive("box", (1.2, 1.8, 1.0), density, _translate(-2.1, -0.75, 0.6)),
        Primitive("box", (2.2, 1.6, 1.8), density, _translate(0.55, -0.6, 3.1)),
        Primitive("cylinder", (0.55, 2.6), density, _translate(0.9, -0.95, 5.3)),
        # three service brackets; the canonical defects delete them
        Primitive("box", (1.4, 0.5, 0.5), density, _translate(2.25, 0.3, 1.3)),
        Primitive("box", (0.5, 1.2, 0.5), density, _translate(0.8, -1.95, 3.3)),
        Primitive("box", (1.0, 0.45, 0.45), density, _translate(1.9, -0.95, 5.7)),
    )
    return SceneSpec(prims, seed)


def _tower_defects() -> tuple:
    move = np.array([1.0, 0.0, 0.6])
    return (
        DefectSpec("remove_region", Aabb((1.5, 0.0, 1.0), (3.0, 0.6, 1.6)), move),
        DefectSpec("remove_region", Aabb((0.5, -2.6, 3.0), (1.1, -1.35, 3.6)), move),
        DefectSpec("remove_region", Aabb((1.38, -1.2, 5.42), (2.45, -0.7, 5.98)), move),
    )


def _shiba_scene(seed: int, density: float) -> SceneSpec:
    # elongated body with an offset head and a small tail; the proportions
    # keep the principal axes well separated and every axis clearly skewed,
    # so the coarse alignment stays stable even with the tail removed
    tail_pose = _posed(-1.2, -0.15, 0.9, rotation_about_axis((0, 1, 0), math.pi / 2))
    prims = (
        Primitive("box", (1.8, 1.1, 0.7), density, _translate(0.0, 0.0, 0.8)),
        Primitive("sphere", (0.5,), density, _translate(1.0, 0.3, 1.35)),
        Primitive("cylinder", (0.1, 0.7), density, tail_pose),
    )
    return SceneSpec(prims, seed)


def _shiba_defects() -> tuple:
    return (
        DefectSpec("remove_region", Aabb((-1.6, -0.45, 0.6), (-0.88, 0.15, 1.2)),
                   np.array([0.5, 0.0, 0.5])),
    )


def _chair_scene(seed: int, density: float) -> SceneSpec:
    # seat, off-center back, and a heavy footrest bar; the movable armrest
    # is kept small and near the middle so lifting it barely shifts the
    # third moments the coarse alignment keys on
    legs = tuple(
        Primitive("cylinder", (0.1, 0.8), density, _translate(sx * 0.75, sy * 0.75, 0.475))
        for sx in (-1, 1) for sy in (-1, 1)
    )
    prims = (
        Primitive("box", (2.4, 1.8, 0.25), density, _translate(0.0, 0.0, 1.0)),
        Primitive("box", (2.0, 0.2, 1.9), density, _translate(0.2, 0.8, 2.1)),
        Primitive("box", (2.0, 0.7, 0.35), density, _translate(-0.5, -0.8, 0.2)),
        Primitive("box", (0.18, 0.9, 0.1), density, _translate(-0.9, 0.0, 1.35)),
    ) + legs
    return SceneSpec(prims, seed)


def _chair_defects() -> tuple:
    return (
        DefectSpec("move_region", Aabb((-1.05, -0.55, 1.25), (-0.75, 0.55, 1.45)),
                   np.array([0.0, 0.0, 0.45])),
    )


_PRESETS = {
    "tower": (_tower_scene, _tower_defects, 555.0),  # ~50k points
    "shiba": (_shiba_scene, _shiba_defects, 625.0),
    "chair": (_chair_scene, _chair_defects, 625.0),
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset_scene(name: str, seed: int, density: Optional[float] = None) -> SceneSpec:
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r} (available: {', '.join(PRESET_NAMES)})")
    builder, _, default_density = _PRESETS[name]
    return builder(seed, default_density if density is None else float(density))


def preset_defects(name: str, kind: Optional[str] = None) -> tuple:
    """Canonical defects for a preset; `kind` overrides remove/move."""
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r} (available: {', '.join(PRESET_NAMES)})")
    defects = _PRESETS[name][1]()
    if kind is None:
        return defects
    if kind == "none":
        return ()
    if kind in ("remove", "move"):
        full = "remove_region" if kind == "remove" else "move_region"
        return tuple(DefectSpec(full, d.region, d.displacement) for d in defects)
    raise ValueError(f"unknown defect kind {kind!r}")


def make_case(preset: str, seed: int, *, density: Optional[float] = None,
              defect: Optional[str] = None, rotation_max_deg: float = 30.0,
              translation_max_frac: float = 0.2, scale_range=(0.9, 1.2),
              noise_sigma: float = 0.0) -> SynthCase:
    """Build a full inspection case from a preset.

    The reference is the pristine scene at `seed`; the field cloud has the
    preset defects injected (override with defect="remove"/"move"/"none")
    and a random similarity perturbation drawn from seed + 1 applied on
    top. Truth labels ride along, as does the defect volume measured by
    voxelizing the changed points at the reference's own auto threshold.
    """
    reference = generate_scene(preset_scene(preset, seed, density))
    defects = preset_defects(preset, defect)
    outcome = apply_defects(reference, defects)
    field_cloud, transform = perturb(outcome.cloud, rotation_max_deg,
                                     translation_max_frac, scale_range,
                                     noise_sigma, seed + 1)
    voxel = auto_threshold(reference, reference)
    changed = reference.points[outcome.original_labels == MatchLabel.UNMATCHED]
    volume = occupancy_volume(voxelize(changed, voxel)) if len(changed) else 0.0
    return SynthCase(
        reference=reference,
        field=field_cloud,
        true_transform=transform,
        truth_labels_reference=outcome.original_labels,
        truth_labels_field=outcome.defected_labels,
        defect_volume_truth=volume,
        defect_volume_voxel_size=voxel,
    )


# ---------------------------------------------------------------------------
# Config-file (de)serialization: scene and defect specs as plain JSON trees.
# ---------------------------------------------------------------------------

def _transform_to_dict(t: SimilarityTransform) -> dict:
    return {
        "scale": t.scale,
        "rotation": t.rotation.tolist(),
        "translation": t.translation.tolist(),
    }


def _transform_from_dict(d: dict) -> SimilarityTransform:
    return SimilarityTransform(
        d.get("scale", 1.0),
        np.asarray(d.get("rotation", np.eye(3).tolist())),
        np.asarray(d.get("translation", [0.0, 0.0, 0.0])),
    )


def scene_spec_to_dict(spec: SceneSpec) -> dict:
    return {
        "seed": spec.seed,
        "primitives": [
            {
                "shape": p.shape,
                "dimensions": list(p.dimensions),
                "points_per_unit_area": p.points_per_unit_area,
                "pose": _transform_to_dict(p.pose),
            }
            for p in spec.primitives
        ],
    }


def scene_spec_from_dict(d: dict) -> SceneSpec:
    prims = tuple(
        Primitive(
            shape=p["shape"],
            dimensions=tuple(p["dimensions"]),
            points_per_unit_area=float(p["points_per_unit_area"]),
            pose=_transform_from_dict(p.get("pose", {})),
        )
        for p in d["primitives"]
    )
    return SceneSpec(prims, int(d.get("seed", 0)))


def defect_spec_to_dict(spec: DefectSpec) -> dict:
    return {
        "kind": spec.kind,
        "region": {"min": spec.region.min.tolist(), "max": spec.region.max.tolist()},
        "displacement": spec.displacement.tolist(),
    }


def defect_spec_from_dict(d: dict) -> DefectSpec:
    return DefectSpec(
        kind=d["kind"],
        region=Aabb(np.asarray(d["region"]["min"]), np.asarray(d["region"]["max"])),
        displacement=np.asarray(d.get("displacement", [0.0, 0.0, 0.0])),
    )
