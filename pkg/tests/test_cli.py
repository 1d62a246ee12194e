import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from cloud_inspect import PointCloud, load_ply, save_ply
from cloud_inspect.cli import main
from cloud_inspect.compare import GRAY, GREEN
from cloud_inspect.report import schema_text
from cloud_inspect.synth import rotation_about_axis

SCHEMA = json.loads(schema_text())


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def shiba_pair(tmp_path):
    out = tmp_path / "case"
    code = run_cli("synth", "shiba", "--seed", "9", "--density", "220",
                   "--out-dir", str(out), "--quiet")
    assert code == 0
    return out


def test_synth_writes_deterministic_files(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("synth", "tower", "--seed", "7", "--density", "60",
                       "--defect", "remove", "--out-dir", str(out), "--quiet") == 0
    for name in ("reference.ply", "field.ply", "truth.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    truth = json.loads((a / "truth.json").read_text())
    assert truth["reference_unmatched"] > 0
    assert truth["defect_volume"] > 0


def test_synth_unknown_preset(tmp_path, capsys):
    code = run_cli("synth", "pagoda", "--out-dir", str(tmp_path / "x"))
    assert code == 2
    err = capsys.readouterr().err
    assert "unknown preset" in err
    for name in ("tower", "shiba", "chair"):
        assert name in err


def test_synth_none_defect(tmp_path):
    out = tmp_path / "case"
    assert run_cli("synth", "chair", "--seed", "3", "--density", "100",
                   "--defect", "none", "--out-dir", str(out), "--quiet") == 0
    reference = load_ply(out / "reference.ply")
    field = load_ply(out / "field.ply")
    truth = json.loads((out / "truth.json").read_text())
    t = truth["true_transform"]
    # same evaluation order as apply_points: scale folded into the matrix
    moved = (reference.points @ (t["scale"] * np.asarray(t["rotation"])).T
             + np.asarray(t["translation"]))
    assert np.array_equal(moved, field.points)
    assert truth["reference_unmatched"] == 0


def test_synth_scene_config(tmp_path):
    config = {
        "seed": 5,
        "primitives": [
            {"shape": "box", "dimensions": [1.0, 2.0, 3.0],
             "points_per_unit_area": 150.0,
             "pose": {"translation": [0.0, 0.0, 1.5]}},
            {"shape": "sphere", "dimensions": [0.5],
             "points_per_unit_area": 150.0,
             "pose": {"translation": [2.0, 0.5, 0.5]}},
        ],
        "defects": [
            {"kind": "remove_region",
             "region": {"min": [1.4, -0.1, -0.1], "max": [2.6, 1.1, 1.1]}},
        ],
    }
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(config))
    out = tmp_path / "case"
    assert run_cli("synth", "--scene", str(path), "--out-dir", str(out), "--quiet") == 0
    truth = json.loads((out / "truth.json").read_text())
    assert truth["preset"] is None
    assert truth["seed"] == 5  # taken from the config, no --seed given
    assert truth["reference_unmatched"] > 0


def test_align_identical_clouds(tmp_path, capsys):
    rng = np.random.default_rng(80)
    cloud = PointCloud(np.column_stack([rng.exponential(s, 800) for s in (1, 2, 3)]))
    path = tmp_path / "cloud.ply"
    save_ply(path, cloud)
    out = tmp_path / "aligned.ply"
    code = run_cli("align", str(path), str(path), "--out", str(out), "--json")
    assert code == 0
    reg = json.loads(capsys.readouterr().out)
    assert reg["converged"]
    assert reg["final_rmse"] < 1e-9
    assert abs(reg["final_transform"]["scale"] - 1.0) < 1e-9
    aligned = load_ply(out)
    assert np.abs(aligned.points - cloud.points).max() < 1e-9


def test_align_no_scale_flag(shiba_pair, tmp_path, capsys):
    out = tmp_path / "aligned.ply"
    code = run_cli("align", str(shiba_pair / "reference.ply"),
                   str(shiba_pair / "field.ply"), "--out", str(out),
                   "--no-scale", "--json")
    assert code in (0, 3)
    reg = json.loads(capsys.readouterr().out)
    assert reg["final_transform"]["scale"] == 1.0


def test_align_recovers_synth_ground_truth(shiba_pair, tmp_path, capsys):
    out = tmp_path / "aligned.ply"
    code = run_cli("align", str(shiba_pair / "reference.ply"),
                   str(shiba_pair / "field.ply"), "--out", str(out), "--json")
    assert code == 0
    reg = json.loads(capsys.readouterr().out)
    truth = json.loads((shiba_pair / "truth.json").read_text())
    # aligning field onto reference must invert the recorded perturbation
    want_scale = 1.0 / truth["true_transform"]["scale"]
    want_rot = np.asarray(truth["true_transform"]["rotation"]).T
    got = reg["final_transform"]
    assert abs(got["scale"] / want_scale - 1.0) < 1e-3
    assert np.abs(np.asarray(got["rotation"]) - want_rot).max() < 1e-3


def test_inspect_auto_downsample_above_limit(tmp_path, monkeypatch):
    import cloud_inspect.cli as cli_mod
    monkeypatch.setattr(cli_mod, "DOWNSAMPLE_POINT_LIMIT", 1000)
    rng = np.random.default_rng(93)
    cloud = PointCloud(np.column_stack([rng.exponential(s, 4000) for s in (1, 2, 3)]))
    path = tmp_path / "c.ply"
    save_ply(path, cloud)
    report_path = tmp_path / "r.json"
    code = run_cli("inspect", str(path), str(path), "--out", str(tmp_path / "d.ply"),
                   "--report", str(report_path), "--quiet")
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["inputs"]["field_points"]["loaded"] == 4000
    assert report["inputs"]["field_points"]["used"] < 4000
    # and --no-downsample suppresses it
    code = run_cli("inspect", str(path), str(path), "--out", str(tmp_path / "d2.ply"),
                   "--report", str(report_path), "--no-downsample", "--quiet")
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["inputs"]["field_points"]["used"] == 4000


def test_align_invalid_ply_reports_offset(tmp_path, capsys):
    good = tmp_path / "good.ply"
    save_ply(good, PointCloud(np.random.default_rng(0).random((10, 3))))
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\n"
                    b"property float x\nproperty float y\nproperty float z\n"
                    b"end_header\n0 0 0\n1 nan 1\n")
    code = run_cli("align", str(good), str(bad), "--out", str(tmp_path / "o.ply"))
    assert code == 2
    err = capsys.readouterr().err
    assert "bad.ply" in err
    assert "byte offset" in err
    assert "vertex 1" in err


def test_align_missing_file(tmp_path, capsys):
    code = run_cli("align", str(tmp_path / "nope.ply"), str(tmp_path / "nope.ply"),
                   "--out", str(tmp_path / "o.ply"))
    assert code == 2
    assert "nope.ply" in capsys.readouterr().err


def test_compare_identical_pass(tmp_path, capsys):
    cloud = PointCloud(np.random.default_rng(81).random((600, 3)))
    path = tmp_path / "c.ply"
    save_ply(path, cloud)
    diff = tmp_path / "diff.ply"
    code = run_cli("compare", str(path), str(path), "--out", str(diff))
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    jsonschema.validate(report, SCHEMA)
    assert report["verdict"] == "PASS"
    assert report["registration"] is None
    assert report["comparison"]["field"]["unmatched_count"] == 0
    assert report["comparison"]["threshold_source"] == "auto"
    diff_cloud = load_ply(diff)
    assert len(diff_cloud) == len(cloud)
    assert (diff_cloud.colors == GRAY).all()


def test_compare_defect_exit_code(tmp_path, capsys):
    rng = np.random.default_rng(82)
    base = rng.random((2000, 3))
    extra = rng.random((200, 3)) * 0.2 + np.array([4.0, 0.0, 0.0])
    ref_path, field_path = tmp_path / "ref.ply", tmp_path / "field.ply"
    save_ply(ref_path, PointCloud(np.vstack([base, extra])))
    save_ply(field_path, PointCloud(base))
    code = run_cli("compare", str(ref_path), str(field_path),
                   "--out", str(tmp_path / "d.ply"),
                   "--report", str(tmp_path / "r.json"), "--quiet")
    assert code == 4
    report = json.loads((tmp_path / "r.json").read_text())
    jsonschema.validate(report, SCHEMA)
    assert report["verdict"] == "DEFECT"
    assert report["comparison"]["reference"]["unmatched_count"] >= 190


def test_compare_huge_threshold_passes(tmp_path):
    rng = np.random.default_rng(83)
    base = rng.random((1000, 3))
    ref_path, field_path = tmp_path / "ref.ply", tmp_path / "field.ply"
    save_ply(ref_path, PointCloud(np.vstack([base, base * 0.2 + 5.0])))
    save_ply(field_path, PointCloud(base))
    code = run_cli("compare", str(ref_path), str(field_path),
                   "--out", str(tmp_path / "d.ply"), "--threshold", "1000",
                   "--report", str(tmp_path / "r.json"), "--quiet")
    assert code == 0


def test_compare_invalid_threshold(tmp_path, capsys):
    path = tmp_path / "c.ply"
    save_ply(path, PointCloud(np.random.default_rng(84).random((50, 3))))
    code = run_cli("compare", str(path), str(path), "--out", str(tmp_path / "d.ply"),
                   "--threshold", "-1")
    assert code == 2
    assert "threshold" in capsys.readouterr().err


def test_inspect_same_cloud_passes(tmp_path, capsys):
    rng = np.random.default_rng(85)
    cloud = PointCloud(np.column_stack([rng.exponential(s, 1000) for s in (1, 2, 3)]))
    path = tmp_path / "c.ply"
    save_ply(path, cloud)
    code = run_cli("inspect", str(path), str(path), "--out", str(tmp_path / "d.ply"),
                   "--report", str(tmp_path / "r.json"), "--quiet")
    assert code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    jsonschema.validate(report, SCHEMA)
    assert report["verdict"] == "PASS"
    assert report["registration"]["converged"]


def test_inspect_detects_shiba_tail_removal(shiba_pair, tmp_path):
    diff_path = tmp_path / "diff.ply"
    report_path = tmp_path / "report.json"
    code = run_cli("inspect", str(shiba_pair / "reference.ply"),
                   str(shiba_pair / "field.ply"), "--out", str(diff_path),
                   "--report", str(report_path), "--quiet")
    assert code == 4
    report = json.loads(report_path.read_text())
    jsonschema.validate(report, SCHEMA)
    assert report["verdict"] == "DEFECT"
    truth = json.loads((shiba_pair / "truth.json").read_text())
    got = report["comparison"]["reference"]["unmatched_volume"]
    assert truth["defect_volume"] / 2 <= got <= truth["defect_volume"] * 2
    # the removed tail shows up as a green cluster near its original spot
    diff = load_ply(diff_path)
    green = diff.points[(diff.colors == GREEN).all(axis=1)]
    assert len(green) > 0
    tail_center = np.array([-1.2, -0.15, 0.9])
    assert np.linalg.norm(green.mean(axis=0) - tail_center) < 0.3


def test_inspect_starvation_exit_code(tmp_path, capsys):
    rng = np.random.default_rng(86)
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    save_ply(a, PointCloud(rng.random((200, 3))))
    save_ply(b, PointCloud(rng.random((180, 3))))
    code = run_cli("inspect", str(a), str(b), "--out", str(tmp_path / "d.ply"),
                   "--max-distance", "1e-12", "--quiet")
    assert code == 5
    assert "registration failed: correspondence starvation" in capsys.readouterr().err


def test_inspect_downsample_flag(tmp_path):
    rng = np.random.default_rng(87)
    cloud = PointCloud(np.column_stack([rng.exponential(s, 3000) for s in (1, 2, 3)]))
    path = tmp_path / "c.ply"
    save_ply(path, cloud)
    report_path = tmp_path / "r.json"
    code = run_cli("inspect", str(path), str(path), "--out", str(tmp_path / "d.ply"),
                   "--voxel", "0.5", "--report", str(report_path), "--quiet")
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["inputs"]["reference_points"]["loaded"] == 3000
    assert report["inputs"]["reference_points"]["used"] < 3000


def test_pipeline_equivalence(shiba_pair, tmp_path, capsys):
    ref = str(shiba_pair / "reference.ply")
    field = str(shiba_pair / "field.ply")
    report_path = tmp_path / "inspect.json"
    run_cli("inspect", ref, field, "--out", str(tmp_path / "d1.ply"),
            "--report", str(report_path), "--quiet")
    inspect_report = json.loads(report_path.read_text())
    capsys.readouterr()

    aligned = tmp_path / "aligned.ply"
    run_cli("align", ref, field, "--out", str(aligned), "--json")
    align_registration = json.loads(capsys.readouterr().out)
    compare_report_path = tmp_path / "compare.json"
    run_cli("compare", ref, str(aligned), "--out", str(tmp_path / "d2.ply"),
            "--report", str(compare_report_path), "--quiet")
    compare_report = json.loads(compare_report_path.read_text())

    assert inspect_report["registration"] == align_registration
    assert inspect_report["comparison"] == compare_report["comparison"]
    assert inspect_report["verdict"] == compare_report["verdict"]
    assert (tmp_path / "d1.ply").read_bytes() == (tmp_path / "d2.ply").read_bytes()


def test_info_single_point(tmp_path, capsys):
    path = tmp_path / "one.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\n"
                     b"property float x\nproperty float y\nproperty float z\n"
                     b"end_header\n1 2 3\n")
    assert run_cli("info", str(path)) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["points"] == 1
    assert info["median_spacing"] is None
    assert info["bbox"]["min"] == info["bbox"]["max"] == [1.0, 2.0, 3.0]
    assert info["has_color"] is False


def test_info_encoding_independent(tmp_path, capsys):
    cloud = PointCloud(np.random.default_rng(88).random((200, 3)))
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    save_ply(a, cloud, "ascii", "f64")
    save_ply(b, cloud, "binary_little_endian", "f64")
    assert run_cli("info", str(a)) == 0
    info_a = json.loads(capsys.readouterr().out)
    assert run_cli("info", str(b)) == 0
    info_b = json.loads(capsys.readouterr().out)
    for key in ("points", "has_color", "bbox", "median_spacing"):
        assert info_a[key] == info_b[key]
    assert info_a["format"] == "ascii"
    assert info_b["format"] == "binary_little_endian"


def test_info_median_spacing_matches_brute_force(tmp_path, capsys):
    rng = np.random.default_rng(89)
    pts = rng.random((300, 3))
    path = tmp_path / "c.ply"
    save_ply(path, PointCloud(pts))
    run_cli("info", str(path))
    info = json.loads(capsys.readouterr().out)
    d2 = np.sum((pts[None, :, :] - pts[:, None, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    want = float(np.median(np.sqrt(d2.min(axis=1))))
    assert info["median_spacing"] == pytest.approx(want, rel=1e-12)


def test_info_invalid_file(tmp_path, capsys):
    path = tmp_path / "junk.ply"
    path.write_bytes(b"not a ply at all")
    assert run_cli("info", str(path)) == 2
    assert "junk.ply" in capsys.readouterr().err


def test_inspect_deterministic_across_runs_and_threads(shiba_pair, tmp_path):
    outputs = []
    for tag, threads in (("a", "1"), ("b", "8"), ("c", "1")):
        diff = tmp_path / f"diff_{tag}.ply"
        report = tmp_path / f"report_{tag}.json"
        proc = subprocess.run(
            [sys.executable, "-m", "cloud_inspect", "inspect",
             str(shiba_pair / "reference.ply"), str(shiba_pair / "field.ply"),
             "--out", str(diff), "--report", str(report),
             "--threads", threads, "--quiet"],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 4, proc.stderr
        outputs.append((diff.read_bytes(), report.read_bytes()))
    assert outputs[0] == outputs[1] == outputs[2]


def test_align_nonconvergence_exit_code(shiba_pair, tmp_path, capsys):
    out = tmp_path / "aligned.ply"
    code = run_cli("align", str(shiba_pair / "reference.ply"),
                   str(shiba_pair / "field.ply"), "--out", str(out),
                   "--max-iterations", "1", "--tolerance", "1e-15", "--json")
    assert code == 3
    reg = json.loads(capsys.readouterr().out)
    assert reg["converged"] is False
    assert out.exists()  # result still written


def test_threads_env_var(tmp_path, capsys, monkeypatch):
    path = tmp_path / "c.ply"
    save_ply(path, PointCloud(np.random.default_rng(91).random((50, 3))))
    monkeypatch.setenv("CLOUD_INSPECT_THREADS", "1")
    assert run_cli("info", str(path)) == 0
    capsys.readouterr()
    monkeypatch.setenv("CLOUD_INSPECT_THREADS", "lots")
    assert run_cli("info", str(path)) == 2
    assert "CLOUD_INSPECT_THREADS" in capsys.readouterr().err


def test_compare_pink_palette(tmp_path, capsys):
    rng = np.random.default_rng(92)
    base = rng.random((800, 3))
    extra = rng.random((80, 3)) * 0.1 + np.array([3.0, 0, 0])
    ref_path, field_path = tmp_path / "ref.ply", tmp_path / "field.ply"
    save_ply(ref_path, PointCloud(base))
    save_ply(field_path, PointCloud(np.vstack([base, extra])))
    diff_path = tmp_path / "diff.ply"
    code = run_cli("compare", str(ref_path), str(field_path),
                   "--out", str(diff_path), "--palette", "pink", "--quiet",
                   "--report", str(tmp_path / "r.json"))
    assert code == 4
    diff = load_ply(diff_path)
    assert len(diff) == 880  # one-directional: field points only
    from cloud_inspect.compare import PINK
    assert ((diff.colors == PINK).all(axis=1)).sum() >= 75


def test_timing_flag_adds_timing(tmp_path, capsys):
    path = tmp_path / "c.ply"
    save_ply(path, PointCloud(np.random.default_rng(90).random((300, 3))))
    run_cli("compare", str(path), str(path), "--out", str(tmp_path / "d.ply"),
            "--timing")
    report = json.loads(capsys.readouterr().out)
    jsonschema.validate(report, SCHEMA)
    assert report["timing"] is not None
    assert report["timing"]["compare_seconds"] >= 0
