"""Command line entry point: ``monovox <subcommand> ...``.

Exit status is 0 on success, 1 on validation or format errors and 2 on
usage errors.  ``--config FILE`` loads ``key=value`` defaults (keys are the
long option names with dashes or underscores); explicit flags win.  The
only environment variable consulted is ``MONOVOX_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional

from . import container, kitti_io
from .confidence import DEFAULT_LAMBDA, KITTI_IMAGE_SIZE, RescoreConfig, rescore
from .errors import MonovoxError, ValidationError
from .evaluation import DEFAULT_THRESHOLDS, EvalConfig, curves_to_csv, evaluate, format_table
from .geometry import Box2D, rotate_y
from .heatmap import DEFAULT_RADIUS, heatmap_target
from .voxelizer import DEFAULT_MARGIN, DEFAULT_SHAPE, GRID_MODES, POINT_AWARE, prepare_object

logger = logging.getLogger("monovox")


class UsageError(Exception):
    pass


def _add_voxel_options(p):
    p.add_argument("--calib", help="KITTI calibration file (P2 is used)")
    p.add_argument("--depth", help="16-bit depth PNG (value / 256 = metres)")
    p.add_argument("--rgb", help="RGB image; colours are zero when omitted")
    p.add_argument("--shape", type=int, nargs=3, default=list(DEFAULT_SHAPE), metavar=("NX", "NY", "NZ"))
    p.add_argument("--mode", choices=GRID_MODES, default=POINT_AWARE)
    p.add_argument("--margin", type=float, default=DEFAULT_MARGIN,
                   help="drop points deeper than mean depth + margin (metres)")
    p.add_argument("--no-outlier-removal", action="store_true")
    p.add_argument("--no-rotate", action="store_true", help="skip frustum rotation")
    p.add_argument("--box", type=float, nargs=4, metavar=("LEFT", "TOP", "RIGHT", "BOTTOM"))
    p.add_argument("-o", "--output")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value defaults file; flags override it")
    parser = argparse.ArgumentParser(prog="monovox", description="Object-centric voxelization, 3D confidence rescoring and KITTI evaluation tools.", parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    parser.set_defaults(subcommands=sub.choices)

    p = sub.add_parser("voxelize", parents=[common], help="build adaptive voxel grids for 2D boxes")
    _add_voxel_options(p)
    p.add_argument("--objects", help="label/detection file; one grid per non-DontCare row")

    p = sub.add_parser("heatmap-dump", parents=[common], help="write 3D center heatmap targets")
    _add_voxel_options(p)
    p.add_argument("--labels", help="label file; one heatmap per non-DontCare row")
    p.add_argument("--center", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="object center (camera frame) used with --box")
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS, help="peak radius in cells")

    p = sub.add_parser("rescore", parents=[common], help="apply decomposed 3D confidence to detection files")
    p.add_argument("det_dir")
    p.add_argument("calib_dir")
    p.add_argument("out_dir")
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA, help="depth scale in metres")
    p.add_argument("--clip", action=argparse.BooleanOptionalAction, default=True,
                   help="clip projected boxes to the image before IoU")
    p.add_argument("--image-size", type=int, nargs=2, default=list(KITTI_IMAGE_SIZE), metavar=("W", "H"))
    p.add_argument("--image-dir", help="read per-frame image sizes from <frame>.png here")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("evaluate", parents=[common], help="KITTI AP / AOS evaluation")
    p.add_argument("gt_dir")
    p.add_argument("det_dir")
    p.add_argument("--class", dest="cls", default="Car")
    p.add_argument("--metrics", default="r11,r40")
    p.add_argument("--thresholds", help="comma-separated IoU thresholds (class default otherwise)")
    p.add_argument("--curves", help="write precision/recall curves as CSV")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("split-gen", parents=[common], help="depth split excluding detection-validation scenes")
    p.add_argument("--mapping", help="two columns: frame index, scene id")
    p.add_argument("--val-frames", help="one detection-validation frame index per line")
    p.add_argument("-o", "--output")

    p = sub.add_parser("validate", parents=[common], help="check split leakage and file formats")
    p.add_argument("--split-dir")
    p.add_argument("--mapping")
    p.add_argument("--val-frames")
    p.add_argument("--labels", help="directory of label files to parse")
    p.add_argument("--detections", help="directory of detection files to parse")
    p.add_argument("--calib-dir", help="directory of calibration files to parse")
    return parser


def read_config_file(path) -> dict:
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise kitti_io.ParseError("config lines must be key=value", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    if not os.path.isfile(known.config):
        raise ValidationError(f"config file not found: {known.config}")
    raw = read_config_file(known.config)
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    for action in parser.get_default("subcommands").values():
        defaults = {}
        for act in action._actions:
            if act.dest in raw:
                defaults[act.dest] = _convert(act, raw[act.dest])
        action.set_defaults(**defaults)


def _convert(action, text):
    if isinstance(action, argparse.BooleanOptionalAction):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(action, argparse._StoreTrueAction):
        return text.lower() in ("1", "true", "yes", "on")
    conv = action.type or str
    if action.nargs not in (None, "?"):
        return [conv(t) for t in text.replace(",", " ").split()]
    return conv(text)


def _require_paths(*pairs):
    for label, path, kind in pairs:
        if path is None:
            continue
        ok = os.path.isdir(path) if kind == "dir" else os.path.isfile(path)
        if not ok or not os.access(path, os.R_OK):
            raise ValidationError(f"{label} not found or unreadable: {path}")


def _frame_files(directory) -> List[str]:
    return sorted(f for f in os.listdir(directory) if f.endswith(".txt"))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _need(args, *names):
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)} (flag or config file)")


def _load_voxel_inputs(args):
    _need(args, "calib", "depth", "output")
    _require_paths(("calib", args.calib, "file"), ("depth", args.depth, "file"), ("rgb", args.rgb, "file"))
    calib = kitti_io.read_calibration(args.calib)
    with open(args.depth, "rb") as f:
        depth = kitti_io.load_depth_map(f.read())
    rgb = kitti_io.load_rgb(args.rgb) if args.rgb else None
    return calib, depth, rgb


def _prepare(args, calib, depth, rgb, box):
    margin = None if args.no_outlier_removal else args.margin
    return prepare_object(depth, rgb, box, calib, tuple(args.shape), args.mode, margin, not args.no_rotate)


def cmd_voxelize(args) -> int:
    if (args.box is None) == (args.objects is None):
        raise UsageError("voxelize needs exactly one of --box or --objects")
    _require_paths(("objects", args.objects, "file"))
    calib, depth, rgb = _load_voxel_inputs(args)
    if args.box is not None:
        obj = _prepare(args, calib, depth, rgb, Box2D(*args.box))
        with open(args.output, "wb") as f:
            f.write(container.dump_voxel_grid(obj.grid))
        print(container.grid_summary(obj.grid))
        return 0
    os.makedirs(args.output, exist_ok=True)
    for i, rec in enumerate(kitti_io.read_objects(args.objects)):
        if rec.is_dont_care:
            continue
        obj = _prepare(args, calib, depth, rgb, rec.box2d)
        path = os.path.join(args.output, f"{i:03d}.ocmv")
        with open(path, "wb") as f:
            f.write(container.dump_voxel_grid(obj.grid))
        print(f"[{i:03d}] {rec.class_name}")
        print(container.grid_summary(obj.grid))
    return 0


def _heatmap_for(args, calib, depth, rgb, box, center):
    obj = _prepare(args, calib, depth, rgb, box)
    center = rotate_y([center], -obj.frustum_angle)[0]
    return heatmap_target(obj.spec, center, args.radius)


def cmd_heatmap(args) -> int:
    if args.labels is None and (args.box is None or args.center is None):
        raise UsageError("heatmap-dump needs --labels, or --box together with --center")
    _require_paths(("labels", args.labels, "file"))
    calib, depth, rgb = _load_voxel_inputs(args)
    if args.labels is None:
        hm = _heatmap_for(args, calib, depth, rgb, Box2D(*args.box), args.center)
        with open(args.output, "wb") as f:
            f.write(container.dump_heatmap(hm))
        return 0
    os.makedirs(args.output, exist_ok=True)
    for i, rec in enumerate(kitti_io.read_objects(args.labels)):
        if rec.is_dont_care:
            continue
        hm = _heatmap_for(args, calib, depth, rgb, rec.box2d, rec.box3d().geometric_center)
        with open(os.path.join(args.output, f"{i:03d}.ocmh"), "wb") as f:
            f.write(container.dump_heatmap(hm))
    return 0


def _rescore_frame(job):
    name, det_path, calib_path, cfg = job
    dets = kitti_io.read_objects(det_path, expect_score=True)
    calib = kitti_io.read_calibration(calib_path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = rescore(dets, calib, cfg)
    return name, kitti_io.write_objects(out), [str(w.message) for w in caught]


def cmd_rescore(args) -> int:
    _require_paths(("detection dir", args.det_dir, "dir"), ("calib dir", args.calib_dir, "dir"),
                   ("image dir", args.image_dir, "dir"))
    jobs = []
    for name in _frame_files(args.det_dir):
        calib_path = os.path.join(args.calib_dir, name)
        _require_paths(("calibration for " + name, calib_path, "file"))
        size = tuple(args.image_size)
        if args.image_dir:
            stem = os.path.splitext(name)[0]
            img = os.path.join(args.image_dir, stem + ".png")
            _require_paths(("image for " + name, img, "file"))
            size = kitti_io.image_size(img)
        cfg = RescoreConfig(args.lam, args.clip, size)
        jobs.append((name, os.path.join(args.det_dir, name), calib_path, cfg))
    os.makedirs(args.out_dir, exist_ok=True)
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_rescore_frame, jobs))
    else:
        results = [_rescore_frame(j) for j in jobs]
    for count, (name, text, notes) in enumerate(results, start=1):
        for note in notes:
            logger.warning("%s: %s", name, note)
        with open(os.path.join(args.out_dir, name), "w") as f:
            f.write(text)
        logger.info("rescored %d/%d", count, len(results))
    return 0


def _read_dir(directory, expect_score):
    return {os.path.splitext(n)[0]: kitti_io.read_objects(os.path.join(directory, n), expect_score)
            for n in _frame_files(directory)}


def cmd_evaluate(args) -> int:
    _require_paths(("ground-truth dir", args.gt_dir, "dir"), ("detection dir", args.det_dir, "dir"))
    modes = tuple(m.strip().lower() for m in args.metrics.split(",") if m.strip())
    for m in modes:
        if m not in ("r11", "r40"):
            raise UsageError(f"unknown metric {m!r}; use r11 and/or r40")
    if args.thresholds:
        thresholds = tuple(float(t) for t in args.thresholds.split(","))
    else:
        thresholds = DEFAULT_THRESHOLDS.get(args.cls, (0.5,))
    cfg = EvalConfig(classes=(args.cls,), thresholds={args.cls: thresholds}, modes=modes, jobs=args.jobs)
    gts = _read_dir(args.gt_dir, False)
    dets = _read_dir(args.det_dir, True)
    result = evaluate(dets, gts, cfg)
    for mode in modes:
        print(format_table(result, args.cls, mode, thresholds))
        print()
    if args.curves:
        with open(args.curves, "w") as f:
            f.write(curves_to_csv(result))
    return 0


def _read_split_inputs(mapping_path, frames_path):
    with open(mapping_path) as f:
        mapping = kitti_io.parse_frame_scene_mapping(f.read())
    with open(frames_path) as f:
        frames = kitti_io.parse_frame_list(f.read())
    return mapping, frames


def cmd_split_gen(args) -> int:
    _need(args, "mapping", "val_frames", "output")
    _require_paths(("mapping", args.mapping, "file"), ("val frames", args.val_frames, "file"))
    mapping, frames = _read_split_inputs(args.mapping, args.val_frames)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        split = kitti_io.generate_depth_split(mapping, frames)
    for w in caught:
        logger.warning("%s", w.message)
    kitti_io.write_split(split, args.output)
    print(f"depth train scenes: {len(split.depth_train_scenes)}")
    print(f"depth val scenes: {len(split.depth_val_scenes)}")
    return 0


def cmd_validate(args) -> int:
    _require_paths(("split dir", args.split_dir, "dir"), ("mapping", args.mapping, "file"),
                   ("val frames", args.val_frames, "file"), ("labels", args.labels, "dir"),
                   ("detections", args.detections, "dir"), ("calib dir", args.calib_dir, "dir"))
    checked = 0
    problems: List[str] = []
    if args.split_dir:
        if not (args.mapping and args.val_frames):
            raise UsageError("--split-dir needs --mapping and --val-frames")
        mapping, frames = _read_split_inputs(args.mapping, args.val_frames)
        split = kitti_io.read_split(args.split_dir, frames)
        problems += kitti_io.check_split(split, mapping)
        unknown = (split.depth_train_scenes | split.depth_val_scenes) - set(mapping.values())
        if unknown:
            problems.append(f"split lists scenes absent from the mapping: {sorted(unknown)}")
        checked += 1
    for directory, expect_score in ((args.labels, False), (args.detections, True)):
        if directory:
            for name in _frame_files(directory):
                try:
                    kitti_io.read_objects(os.path.join(directory, name), expect_score)
                except MonovoxError as exc:
                    problems.append(str(exc))
            checked += 1
    if args.calib_dir:
        for name in _frame_files(args.calib_dir):
            try:
                kitti_io.read_calibration(os.path.join(args.calib_dir, name))
            except MonovoxError as exc:
                problems.append(f"{name}: {exc}")
        checked += 1
    if checked == 0:
        raise UsageError("validate needs --split-dir or a directory to check")
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return 1
    print("OK: no leakage or format problems found")
    return 0


COMMANDS = {
    "voxelize": cmd_voxelize,
    "heatmap-dump": cmd_heatmap,
    "rescore": cmd_rescore,
    "evaluate": cmd_evaluate,
    "split-gen": cmd_split_gen,
    "validate": cmd_validate,
}


def run(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=os.environ.get("MONOVOX_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (MonovoxError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MonovoxError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
