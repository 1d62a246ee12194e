"""Inspection report assembly and serialization.

The report is the machine-readable result of an inspection run: inputs and
point counts, the registration outcome (when one ran), both comparison
directions, and a PASS/DEFECT verdict. Reports serialize to JSON that
validates against the schema shipped in schemas/report.schema.json, and the
bytes are deterministic for identical runs (timing is opt-in for exactly
that reason).
"""

from __future__ import annotations

import json
from importlib import resources

from ._version import __version__
from .compare import ComparisonResult
from .geometry import SimilarityTransform
from .registration import IcpResult

__all__ = [
    "SCHEMA_VERSION",
    "transform_to_dict",
    "registration_to_dict",
    "build_report",
    "report_to_json",
    "schema_text",
]

SCHEMA_VERSION = 1


def transform_to_dict(t: SimilarityTransform) -> dict:
    """Scale + row-major 3x3 rotation + translation, all plain lists."""
    return {
        "scale": t.scale,
        "rotation": t.rotation.tolist(),
        "translation": t.translation.tolist(),
    }


def registration_to_dict(initial: SimilarityTransform, result: IcpResult) -> dict:
    return {
        "initial_transform": transform_to_dict(initial),
        "final_transform": transform_to_dict(result.transform),
        "iterations_run": result.iterations_run,
        "converged": result.converged,
        "final_rmse": result.final_rmse,
        "history": [
            {
                "cost": it.cost,
                "rmse": it.rmse,
                "correspondence_count": it.correspondence_count,
            }
            for it in result.history
        ],
    }


def build_report(*, reference_path: str, field_path: str,
                 reference_points: tuple[int, int], field_points: tuple[int, int],
                 registration: dict | None, comparison: ComparisonResult,
                 threshold_source: str, volume_limit: float,
                 timing: dict | None = None) -> dict:
    """Assemble the full report dict; the verdict follows the volume rule.

    reference_points/field_points are (loaded, used) pairs, where "used" is
    the count after any downsampling. threshold_source is "user" or "auto".
    """
    if threshold_source not in ("user", "auto"):
        raise ValueError(f"threshold_source must be 'user' or 'auto', got {threshold_source!r}")
    worst = max(comparison.unmatched_volume_a, comparison.unmatched_volume_b)
    verdict = "DEFECT" if worst > volume_limit else "PASS"
    return {
        "schema_version": SCHEMA_VERSION,
        "versions": {"package": __version__},
        "inputs": {
            "reference_path": reference_path,
            "field_path": field_path,
            "reference_points": {"loaded": reference_points[0], "used": reference_points[1]},
            "field_points": {"loaded": field_points[0], "used": field_points[1]},
        },
        "registration": registration,
        "comparison": {
            "threshold": comparison.threshold,
            "threshold_source": threshold_source,
            "voxel_size": comparison.voxel_size,
            "volume_limit": volume_limit,
            "field": {
                "unmatched_count": comparison.unmatched_count_a,
                "unmatched_volume": comparison.unmatched_volume_a,
            },
            "reference": {
                "unmatched_count": comparison.unmatched_count_b,
                "unmatched_volume": comparison.unmatched_volume_b,
            },
        },
        "verdict": verdict,
        "timing": timing,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def schema_text() -> str:
    """The bundled JSON schema for inspection reports."""
    return (resources.files("cloud_inspect") / "schemas" / "report.schema.json").read_text()
