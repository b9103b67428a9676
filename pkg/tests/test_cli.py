import os

import numpy as np
import pytest
from conftest import KITTI_P2, make_record
from scenes import random_frame

from monovox import container, kitti_io
from monovox.cli import run
from monovox.geometry import project_box3d


@pytest.fixture
def frames(tmp_path, rng, kitti_calib):
    """Small KITTI-style tree: label_2, det, calib with 6 frames."""
    lab, det, cal = (tmp_path / d for d in ("label_2", "det", "calib"))
    for d in (lab, det, cal):
        d.mkdir()
    for f in range(6):
        dets, gts = random_frame(rng)
        gts = [g for g in gts if g.class_name != "DontCare"] or [make_record()]
        # make the 2D boxes consistent with the 3D boxes so rescoring is meaningful
        gts = [g.__class__(g.class_name, g.truncation, g.occlusion, g.alpha,
                           project_box3d(g.box3d(), kitti_calib, (1242, 375), True), g.dims,
                           g.location, g.rotation_y) for g in gts]
        (lab / f"{f:06d}.txt").write_text(kitti_io.write_objects(gts))
        (det / f"{f:06d}.txt").write_text(kitti_io.write_objects(dets))
        (cal / f"{f:06d}.txt").write_text(KITTI_P2 + "\n")
    return tmp_path


def test_no_command(capsys):
    assert run([]) == 2


def test_unknown_command(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_help_per_subcommand(capsys):
    for cmd in ("voxelize", "heatmap-dump", "rescore", "evaluate", "split-gen", "validate"):
        assert run([cmd, "--help"]) == 0
        assert "--config" in capsys.readouterr().out


def test_rescore_bijection(frames, tmp_path):
    out = tmp_path / "out"
    assert run(["rescore", str(frames / "det"), str(frames / "calib"), str(out)]) == 0
    assert sorted(os.listdir(out)) == sorted(os.listdir(frames / "det"))
    for name in os.listdir(out):
        before = kitti_io.read_objects(frames / "det" / name, expect_score=True)
        after = kitti_io.read_objects(out / name, expect_score=True)
        assert len(before) == len(after)
        assert all(a.score <= b.score + 1e-6 for a, b in zip(after, before))


def test_rescore_jobs_byte_identical(frames, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["rescore", str(frames / "det"), str(frames / "calib"), str(a)]) == 0
    assert run(["rescore", str(frames / "det"), str(frames / "calib"), str(b), "--jobs", "3"]) == 0
    for name in os.listdir(a):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_rescore_missing_calib(frames, tmp_path):
    os.remove(frames / "calib" / "000003.txt")
    out = tmp_path / "out"
    assert run(["rescore", str(frames / "det"), str(frames / "calib"), str(out)]) == 1
    assert not out.exists()


def test_rescore_config_and_override(frames, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# lambda in metres\nlambda = 20\nclip = false\n")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    args = [str(frames / "det"), str(frames / "calib")]
    assert run(["rescore", *args, str(a), "--lambda", "20", "--no-clip"]) == 0
    assert run(["rescore", *args, str(b), "--config", str(cfg)]) == 0
    assert run(["rescore", *args, str(c), "--config", str(cfg), "--lambda", "80", "--clip"]) == 0
    d = tmp_path / "d"
    assert run(["rescore", *args, str(d)]) == 0
    for name in os.listdir(a):
        assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (c / name).read_bytes() == (d / name).read_bytes()


def test_bad_config(tmp_path, frames):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lambda 20\n")
    assert run(["rescore", str(frames / "det"), str(frames / "calib"), str(tmp_path / "o"), "--config", str(cfg)]) == 1
    assert run(["rescore", "--config", str(tmp_path / "nope.cfg"), "a", "b", "c"]) == 1


def test_evaluate_perfect(frames, tmp_path, capsys):
    det = tmp_path / "perfect"
    det.mkdir()
    for name in os.listdir(frames / "label_2"):
        gts = kitti_io.read_objects(frames / "label_2" / name)
        (det / name).write_text(kitti_io.write_objects(
            [g.with_score(1.0) for g in gts if not g.is_dont_care]))
    curves = tmp_path / "curves.csv"
    assert run(["evaluate", str(frames / "label_2"), str(det), "--curves", str(curves)]) == 0
    out = capsys.readouterr().out
    assert "Car AP|R11" in out and "Car AP|R40" in out
    rows = [line for line in out.splitlines() if "/" in line and "IoU" not in line]
    assert rows and all(cell == "100.00/100.00" for r in rows for cell in r.split())
    assert curves.read_text().startswith("class,")


def test_evaluate_bad_metric(frames, capsys):
    assert run(["evaluate", str(frames / "label_2"), str(frames / "det"), "--metrics", "r12"]) == 2


def test_evaluate_extra_frame(frames):
    (frames / "det" / "000099.txt").write_text("")
    assert run(["evaluate", str(frames / "label_2"), str(frames / "det")]) == 1


def test_evaluate_malformed_labels(frames, capsys):
    (frames / "label_2" / "000002.txt").write_text("Car 0 0 oops\n")
    assert run(["evaluate", str(frames / "label_2"), str(frames / "det")]) == 1
    assert "line 1" in capsys.readouterr().err


def split_inputs(tmp_path):
    mapping = tmp_path / "mapping.txt"
    mapping.write_text("".join(f"{f} scene_{f // 10:02d}\n" for f in range(100)))
    val = tmp_path / "val.txt"
    val.write_text("3\n15\n17\n78\n")
    return mapping, val


def test_split_gen_then_validate(tmp_path, capsys):
    mapping, val = split_inputs(tmp_path)
    out = tmp_path / "split"
    assert run(["split-gen", "--mapping", str(mapping), "--val-frames", str(val), "-o", str(out)]) == 0
    assert "depth train scenes: 7" in capsys.readouterr().out
    assert run(["validate", "--split-dir", str(out), "--mapping", str(mapping), "--val-frames", str(val)]) == 0
    # inject leakage
    with open(out / "depth_train_scenes.txt", "a") as f:
        f.write("scene_01\n")
    assert run(["validate", "--split-dir", str(out), "--mapping", str(mapping), "--val-frames", str(val)]) == 1
    assert "scene_01" in capsys.readouterr().err


def test_split_gen_missing_option(tmp_path):
    mapping, _ = split_inputs(tmp_path)
    assert run(["split-gen", "--mapping", str(mapping)]) == 2


def test_split_gen_from_config(tmp_path):
    mapping, val = split_inputs(tmp_path)
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"mapping={mapping}\nval-frames={val}\noutput={tmp_path / 'split'}\n")
    assert run(["split-gen", "--config", str(cfg)]) == 0
    assert (tmp_path / "split" / "depth_val_scenes.txt").read_text() == "scene_00\nscene_01\nscene_07\n"


def test_validate_dirs(frames, capsys):
    assert run(["validate", "--labels", str(frames / "label_2"), "--detections", str(frames / "det"),
                "--calib-dir", str(frames / "calib")]) == 0
    (frames / "calib" / "000001.txt").write_text("P0: 1 2 3\n")
    assert run(["validate", "--calib-dir", str(frames / "calib")]) == 1
    assert run(["validate"]) == 2


@pytest.fixture
def depth_scene(tmp_path, calib):
    """A flat wall at 20 m behind a box at 12 m, with a matching calib file."""
    h, w = 120, 200
    depth = np.full((h, w), 20.0)
    depth[40:90, 60:140] = 12.0 + np.linspace(0, 1.5, 80)[None, :]
    (tmp_path / "depth.png").write_bytes(kitti_io.encode_depth_png(depth))
    p = calib.p.ravel()
    (tmp_path / "calib.txt").write_text("P2: " + " ".join(f"{v:.12e}" for v in p) + "\n")
    label = make_record(box=(60, 40, 140, 90), loc=(-3.0, 1.0, 13.0))
    (tmp_path / "label.txt").write_text(kitti_io.write_objects([label]))
    return tmp_path


def test_voxelize_box(depth_scene, capsys):
    out = depth_scene / "grid.ocmv"
    argv = ["voxelize", "--calib", str(depth_scene / "calib.txt"), "--depth", str(depth_scene / "depth.png"),
            "--box", "60", "40", "140", "90", "--shape", "8", "4", "16", "-o", str(out)]
    assert run(argv) == 0
    grid = container.load_voxel_grid(out.read_bytes())
    assert grid.counts.shape == (8, 4, 16)
    assert grid.counts.sum() == 80 * 50
    assert "occupancy" in capsys.readouterr().out
    first = out.read_bytes()
    assert run(argv) == 0
    assert out.read_bytes() == first


def test_voxelize_usage(depth_scene):
    base = ["voxelize", "--calib", str(depth_scene / "calib.txt"), "--depth", str(depth_scene / "depth.png"),
            "-o", str(depth_scene / "g")]
    assert run(base) == 2
    assert run(base + ["--box", "0", "0", "1", "1", "--objects", str(depth_scene / "label.txt")]) == 2
    assert run(["voxelize", "--calib", "/nonexistent", "--depth", "x", "-o", "y", "--box", "0", "0", "1", "1"]) == 1


def test_voxelize_objects_and_heatmaps(depth_scene):
    common = ["--calib", str(depth_scene / "calib.txt"), "--depth", str(depth_scene / "depth.png"),
              "--shape", "8", "4", "16"]
    assert run(["voxelize", *common, "--objects", str(depth_scene / "label.txt"), "-o", str(depth_scene / "v")]) == 0
    assert os.listdir(depth_scene / "v") == ["000.ocmv"]
    assert run(["heatmap-dump", *common, "--labels", str(depth_scene / "label.txt"),
                "-o", str(depth_scene / "h")]) == 0
    hm = container.load_heatmap((depth_scene / "h" / "000.ocmh").read_bytes())
    assert hm.scores.shape == (8, 4, 16) and hm.scores.max() == 1.0
