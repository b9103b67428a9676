import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from monovox.geometry import Box2D, CameraCalib  # noqa: E402
from monovox.kitti_io import ObjectRecord  # noqa: E402

# one real KITTI P2 (training/calib/000000.txt), including the p[2, 3] residual
KITTI_P2 = ("P2: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 4.485728000000e+01 "
            "0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.163791000000e-01 "
            "0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.745884000000e-03")


@pytest.fixture
def calib():
    return CameraCalib.from_intrinsics(700.0, 700.0, 600.0, 180.0)


@pytest.fixture
def kitti_calib():
    from monovox.kitti_io import parse_calibration
    return parse_calibration(KITTI_P2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_record(cls="Car", box=(100, 150, 300, 250), dims=(1.5, 1.6, 3.9), loc=(2.0, 1.5, 20.0),
                ry=-1.47, score=None, truncation=0.0, occlusion=0, alpha=None):
    if alpha is None:
        alpha = ry - math.atan2(loc[0], loc[2])
    return ObjectRecord(cls, truncation, occlusion, alpha, Box2D(*box), tuple(dims), tuple(loc), ry, score)


def inner_box(outer, iou):
    """Box centred inside ``outer`` whose IoU with it is exactly ``iou``."""
    s = iou ** 0.5
    cx = 0.5 * (outer.left + outer.right)
    cy = 0.5 * (outer.top + outer.bottom)
    hw = 0.5 * (outer.right - outer.left) * s
    hh = 0.5 * (outer.bottom - outer.top) * s
    return Box2D(cx - hw, cy - hh, cx + hw, cy + hh)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    def order(line):
        tag = line.split()[1].rstrip(":")
        return int(tag.rstrip("abcdefghijklmnopqrstuvwxyz")), tag

    for line in sorted(ACCEPTANCE_RESULTS, key=order):
        terminalreporter.write_line(line)
