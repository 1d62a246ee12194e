"""Command-line surface: align, compare, inspect, synth, info.

Exit codes are a stable contract:
  0  success / PASS
  2  input error (unreadable or malformed file, bad flag value)
  3  registration did not converge within the iteration budget
  4  comparison verdict is DEFECT
  5  registration failed outright (e.g. correspondence starvation)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from ._version import __version__
from .compare import MatchLabel, auto_threshold, colorize_diff, compare
from .geometry import (PointCloud, bounding_box, occupancy_volume,
                       voxel_downsample, voxelize)
from .kdtree import KdTree, set_query_threads
from .ply import BINARY_LE, PlyError, read_header, read_ply, save_ply
from .registration import (CorrespondenceStarvation, IcpParams, icp,
                           initial_align)
from .report import (build_report, registration_to_dict, report_to_json,
                     transform_to_dict)
from .synth import (PRESET_NAMES, SynthCase, apply_defects,
                    defect_spec_from_dict, defect_spec_to_dict,
                    generate_scene, make_case, perturb, preset_defects,
                    scene_spec_from_dict)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGENCE = 3
EXIT_DEFECT = 4
EXIT_REGISTRATION = 5

DOWNSAMPLE_POINT_LIMIT = 200_000


class _CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _load_cloud(path) -> PointCloud:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise _CliError(EXIT_INPUT, f"{path}: {e.strerror or e}")
    try:
        return read_ply(data)
    except PlyError as e:
        loc = f" (byte offset {e.offset})" if e.offset is not None else ""
        raise _CliError(EXIT_INPUT, f"{path}: {e}{loc}")


def _icp_params(args) -> IcpParams:
    max_dist = args.max_distance
    if getattr(args, "unbounded", False):
        max_dist = float("inf")
    try:
        return IcpParams(
            max_iterations=args.max_iterations,
            tolerance=args.tolerance,
            max_correspondence_distance=max_dist,
            with_scaling=not args.no_scale,
        )
    except ValueError as e:
        raise _CliError(EXIT_INPUT, str(e))


def _run_registration(field: PointCloud, reference: PointCloud, params: IcpParams):
    """Coarse init plus ICP; source is the field cloud, target the reference."""
    try:
        init = initial_align(field, reference)
        result = icp(field, reference, init, params)
    except CorrespondenceStarvation as e:
        raise _CliError(EXIT_REGISTRATION, f"registration failed: {e}")
    except ValueError as e:
        raise _CliError(EXIT_REGISTRATION, f"registration failed: {e}")
    return init, result


def _resolve_threshold(args, field: PointCloud, reference: PointCloud):
    if args.threshold is not None:
        if not args.threshold > 0:
            raise _CliError(EXIT_INPUT, f"invalid threshold {args.threshold}: must be positive")
        return args.threshold, "user"
    try:
        return auto_threshold(field, reference), "auto"
    except ValueError as e:
        raise _CliError(EXIT_INPUT, f"cannot derive auto threshold: {e}")


def _emit_report(args, report: dict) -> None:
    text = report_to_json(report)
    if args.report:
        Path(args.report).write_text(text)
        if not args.quiet:
            print(f"verdict: {report['verdict']} (report written to {args.report})")
    else:
        sys.stdout.write(text)


def _maybe_downsample(args, reference: PointCloud, field: PointCloud):
    """Inspect-stage downsampling: explicit voxel, auto above the size limit."""
    voxel = None
    if args.voxel is not None:
        if not args.voxel > 0:
            raise _CliError(EXIT_INPUT, f"invalid voxel {args.voxel}: must be positive")
        voxel = args.voxel
    elif not args.no_downsample and max(len(reference), len(field)) > DOWNSAMPLE_POINT_LIMIT:
        voxel = auto_threshold(field, reference) / 3.0
    if voxel is None:
        return reference, field
    return voxel_downsample(reference, voxel), voxel_downsample(field, voxel)


def cmd_align(args) -> int:
    reference = _load_cloud(args.reference)
    field = _load_cloud(args.field)
    params = _icp_params(args)
    init, result = _run_registration(field, reference, params)
    save_ply(args.out, result.transform.apply(field), BINARY_LE, "f64")
    registration = registration_to_dict(init, result)
    if args.json:
        sys.stdout.write(json.dumps(registration, indent=2) + "\n")
    elif not args.quiet:
        t = result.transform
        print(f"aligned {args.field} -> {args.reference}: "
              f"scale {t.scale:.6g}, rmse {result.final_rmse:.6g}, "
              f"{result.iterations_run} iterations, "
              f"{'converged' if result.converged else 'not converged'}")
        print(f"wrote {args.out}")
    return EXIT_OK if result.converged else EXIT_NONCONVERGENCE


def cmd_compare(args) -> int:
    reference = _load_cloud(args.reference)
    field = _load_cloud(args.field)
    threshold, source = _resolve_threshold(args, field, reference)
    voxel_size = args.voxel_size if args.voxel_size is not None else threshold
    if not voxel_size > 0:
        raise _CliError(EXIT_INPUT, f"invalid voxel size {voxel_size}: must be positive")
    timer = time.perf_counter()
    result = compare(field, reference, threshold, voxel_size)
    elapsed = time.perf_counter() - timer
    save_ply(args.out, colorize_diff(field, reference, result, args.palette),
             BINARY_LE, "f64")
    report = build_report(
        reference_path=args.reference, field_path=args.field,
        reference_points=(len(reference), len(reference)),
        field_points=(len(field), len(field)),
        registration=None, comparison=result, threshold_source=source,
        volume_limit=args.volume_limit,
        timing={"compare_seconds": elapsed} if args.timing else None,
    )
    _emit_report(args, report)
    return EXIT_DEFECT if report["verdict"] == "DEFECT" else EXIT_OK


def cmd_inspect(args) -> int:
    t_start = time.perf_counter()
    reference_full = _load_cloud(args.reference)
    field_full = _load_cloud(args.field)
    reference, field = _maybe_downsample(args, reference_full, field_full)
    params = _icp_params(args)
    t_reg = time.perf_counter()
    init, result = _run_registration(field, reference, params)
    aligned = result.transform.apply(field)
    t_cmp = time.perf_counter()
    threshold, source = _resolve_threshold(args, aligned, reference)
    voxel_size = args.voxel_size if args.voxel_size is not None else threshold
    comparison = compare(aligned, reference, threshold, voxel_size)
    t_end = time.perf_counter()
    save_ply(args.out, colorize_diff(aligned, reference, comparison, args.palette),
             BINARY_LE, "f64")
    timing = None
    if args.timing:
        timing = {
            "load_seconds": t_reg - t_start,
            "registration_seconds": t_cmp - t_reg,
            "comparison_seconds": t_end - t_cmp,
        }
    report = build_report(
        reference_path=args.reference, field_path=args.field,
        reference_points=(len(reference_full), len(reference)),
        field_points=(len(field_full), len(field)),
        registration=registration_to_dict(init, result),
        comparison=comparison, threshold_source=source,
        volume_limit=args.volume_limit, timing=timing,
    )
    _emit_report(args, report)
    if report["verdict"] == "DEFECT":
        return EXIT_DEFECT
    return EXIT_OK if result.converged else EXIT_NONCONVERGENCE


def _synth_case(args):
    if args.scene:
        try:
            config = json.loads(Path(args.scene).read_text())
        except OSError as e:
            raise _CliError(EXIT_INPUT, f"{args.scene}: {e.strerror or e}")
        except json.JSONDecodeError as e:
            raise _CliError(EXIT_INPUT, f"{args.scene}: invalid JSON ({e})")
        try:
            spec = scene_spec_from_dict(config)
            if args.seed is not None:
                spec = scene_spec_from_dict({**config, "seed": args.seed})
            defects = tuple(defect_spec_from_dict(d) for d in config.get("defects", []))
        except (KeyError, ValueError, TypeError) as e:
            raise _CliError(EXIT_INPUT, f"{args.scene}: bad scene config ({e})")
        if args.defect == "none":
            defects = ()
        reference = generate_scene(spec)
        outcome = apply_defects(reference, defects)
        field, transform = perturb(outcome.cloud, args.rot_max, args.trans_max,
                                   (args.scale_min, args.scale_max), args.noise,
                                   spec.seed + 1)
        voxel = auto_threshold(reference, reference)
        changed = reference.points[outcome.original_labels == MatchLabel.UNMATCHED]
        volume = occupancy_volume(voxelize(changed, voxel)) if len(changed) else 0.0
        case = SynthCase(reference, field, transform, outcome.original_labels,
                         outcome.defected_labels, volume, voxel)
        return case, defects, None, spec.seed
    preset = args.preset
    if preset not in PRESET_NAMES:
        raise _CliError(EXIT_INPUT,
                        f"unknown preset {preset!r}; available: {', '.join(PRESET_NAMES)}")
    seed = args.seed if args.seed is not None else 0
    kind = None if args.defect == "preset" else args.defect
    case = make_case(preset, seed, density=args.density, defect=kind,
                     rotation_max_deg=args.rot_max, translation_max_frac=args.trans_max,
                     scale_range=(args.scale_min, args.scale_max),
                     noise_sigma=args.noise)
    return case, preset_defects(preset, kind), preset, seed


def cmd_synth(args) -> int:
    if not args.scene and not args.preset:
        raise _CliError(EXIT_INPUT,
                        f"a preset name or --scene is required; presets: {', '.join(PRESET_NAMES)}")
    case, defects, preset, seed = _synth_case(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_ply(out_dir / "reference.ply", case.reference, BINARY_LE, "f64")
    save_ply(out_dir / "field.ply", case.field, BINARY_LE, "f64")
    truth = {
        "preset": preset,
        "seed": seed,
        "true_transform": transform_to_dict(case.true_transform),
        "reference_points": len(case.reference),
        "field_points": len(case.field),
        "reference_unmatched": int(np.sum(case.truth_labels_reference == MatchLabel.UNMATCHED)),
        "field_unmatched": int(np.sum(case.truth_labels_field == MatchLabel.UNMATCHED)),
        "defect_volume": case.defect_volume_truth,
        "defect_volume_voxel_size": case.defect_volume_voxel_size,
        "defects": [defect_spec_to_dict(d) for d in defects],
    }
    (out_dir / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    if args.json:
        sys.stdout.write(json.dumps({
            "out_dir": str(out_dir),
            "files": ["reference.ply", "field.ply", "truth.json"],
        }, indent=2) + "\n")
    elif not args.quiet:
        print(f"wrote reference.ply, field.ply, truth.json to {out_dir}")
    return EXIT_OK


def cmd_info(args) -> int:
    try:
        data = Path(args.path).read_bytes()
    except OSError as e:
        raise _CliError(EXIT_INPUT, f"{args.path}: {e.strerror or e}")
    try:
        header = read_header(data)
        cloud = read_ply(data)
    except PlyError as e:
        loc = f" (byte offset {e.offset})" if e.offset is not None else ""
        raise _CliError(EXIT_INPUT, f"{args.path}: {e}{loc}")
    spacing = None
    if len(cloud) >= 2:
        spacing = float(np.median(KdTree(cloud).point_spacings()))
    box = bounding_box(cloud) if len(cloud) else None
    info = {
        "path": args.path,
        "format": header.format,
        "points": len(cloud),
        "has_color": cloud.colors is not None,
        "bbox": None if box is None else {"min": box.min.tolist(), "max": box.max.tolist()},
        "median_spacing": spacing,
    }
    sys.stdout.write(json.dumps(info, indent=2) + "\n")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--json", action="store_true", help="machine-readable stdout")
    parser.add_argument("--quiet", action="store_true", help="suppress progress chatter")
    parser.add_argument("--threads", type=int, default=None,
                        help="query thread count (0 = auto; env CLOUD_INSPECT_THREADS)")


def _add_registration_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--no-scale", action="store_true",
                        help="pin scale to 1 (rigid registration)")
    parser.add_argument("--max-iterations", type=int, default=50)
    parser.add_argument("--tolerance", type=float, default=None,
                        help="convergence displacement; default 1e-6 x target bbox diagonal")
    parser.add_argument("--max-distance", type=float, default=None,
                        help="correspondence cutoff; default 5%% of target bbox diagonal")
    parser.add_argument("--unbounded", action="store_true",
                        help="disable the correspondence cutoff")


def _add_compare_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threshold", type=float, default=None,
                        help="match distance threshold; default 3 x median reference spacing")
    parser.add_argument("--voxel-size", type=float, default=None,
                        help="volume voxel edge; default equals the threshold")
    parser.add_argument("--volume-limit", type=float, default=0.0,
                        help="largest unmatched volume that still passes")
    parser.add_argument("--palette", choices=["red-green", "pink"], default="red-green")
    parser.add_argument("--report", default=None, help="write the JSON report here")
    parser.add_argument("--timing", action="store_true",
                        help="include wall-clock timing in the report "
                             "(off by default so identical runs are byte-identical)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloud-inspect",
        description="Align point-cloud scans and flag geometric differences.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="register the field scan onto the reference")
    p.add_argument("reference")
    p.add_argument("field")
    p.add_argument("--out", required=True, help="write the aligned field cloud here")
    _add_registration_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("compare", help="classify differences between aligned scans")
    p.add_argument("reference")
    p.add_argument("field")
    p.add_argument("--out", required=True, help="write the colorized diff cloud here")
    _add_compare_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="align, compare and report in one pass")
    p.add_argument("reference")
    p.add_argument("field")
    p.add_argument("--out", required=True, help="write the colorized diff cloud here")
    p.add_argument("--voxel", type=float, default=None,
                   help="downsample both clouds at this voxel size first")
    p.add_argument("--no-downsample", action="store_true",
                   help="never downsample, even above the size limit")
    _add_registration_flags(p)
    _add_compare_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth", help="generate a synthetic reference/field pair")
    p.add_argument("preset", nargs="?", default=None,
                   help=f"one of: {', '.join(PRESET_NAMES)}")
    p.add_argument("--scene", default=None, help="scene config JSON instead of a preset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--defect", choices=["preset", "remove", "move", "none"],
                   default="preset")
    p.add_argument("--density", type=float, default=None,
                   help="points per unit surface area")
    p.add_argument("--rot-max", type=float, default=30.0,
                   help="max perturbation rotation, degrees")
    p.add_argument("--trans-max", type=float, default=0.2,
                   help="max perturbation translation, fraction of bbox diagonal")
    p.add_argument("--scale-min", type=float, default=0.9)
    p.add_argument("--scale-max", type=float, default=1.2)
    p.add_argument("--noise", type=float, default=0.0,
                   help="Gaussian coordinate noise sigma")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("info", help="summarize a PLY file")
    p.add_argument("path")
    _add_common(p)
    p.set_defaults(func=cmd_info)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None:
        env = os.environ.get("CLOUD_INSPECT_THREADS")
        if env is not None:
            try:
                threads = int(env)
            except ValueError:
                print(f"error: CLOUD_INSPECT_THREADS={env!r} is not an integer",
                      file=sys.stderr)
                return EXIT_INPUT
    if threads is not None:
        set_query_threads(threads)
    try:
        return args.func(args)
    except _CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
