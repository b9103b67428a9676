import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monovox.errors import (ConsistencyError, EmptySplitWarning, FormatError, ParseError,
                            ValidationError)
from monovox.geometry import Box2D
from monovox.kitti_io import (DepthMap, ObjectRecord, check_split, encode_depth_png,
                              generate_depth_split, load_depth_map, parse_calibration,
                              parse_frame_scene_mapping, parse_objects, read_split, write_objects,
                              write_split)

from conftest import KITTI_P2, make_record

ROW = "Car 0.00 0 -1.57 100 150 300 250 1.5 1.6 3.9 2.0 1.5 20.0 -1.47"


class TestCalibration:
    def test_constructed_camera(self):
        c = parse_calibration("P2: 700 0 600 0 0 700 180 0 0 0 1 0")
        assert (c.fx, c.cx, c.fy, c.cy, c.tx) == (700, 600, 700, 180, 0)

    def test_translation_term(self):
        assert parse_calibration("P2: 700 0 600 45 0 700 180 0 0 0 1 0").tx == 45

    def test_real_kitti_file(self):
        text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n" + KITTI_P2 + "\nR0_rect: 1 0 0 0 1 0 0 0 1\n"
        c = parse_calibration(text)
        assert c.fx == pytest.approx(721.5377)
        assert c.ty == pytest.approx(0.2163791)
        np.testing.assert_allclose(c.p[2, :3], [0, 0, 1], atol=1e-6)

    def test_missing_key(self):
        with pytest.raises(FormatError, match="P2:"):
            parse_calibration("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n")

    def test_non_numeric_reports_position(self):
        with pytest.raises(ParseError) as exc:
            parse_calibration("\nP2: 700 0 abc 0 0 700 180 0 0 0 1 0")
        assert exc.value.line == 2
        assert exc.value.column == 11

    def test_wrong_count(self):
        with pytest.raises(ParseError):
            parse_calibration("P2: 700 0 600 0 0 700")


class TestObjects:
    def test_fields(self):
        (r,) = parse_objects(ROW)
        assert r.class_name == "Car"
        assert r.alpha == -1.57
        assert r.location[2] == 20.0
        assert r.rotation_y == -1.47
        assert r.box2d == Box2D(100, 150, 300, 250)
        assert r.dims == (1.5, 1.6, 3.9)
        assert r.score is None

    def test_score(self):
        (r,) = parse_objects(ROW + " 0.93", expect_score=True)
        assert r.score == 0.93

    def test_missing_score(self):
        with pytest.raises(FormatError):
            parse_objects(ROW, expect_score=True)

    def test_short_row(self):
        with pytest.raises(ParseError) as exc:
            parse_objects(ROW + "\n" + " ".join(ROW.split()[:14]))
        assert exc.value.line == 2

    def test_dont_care_retained(self):
        rows = parse_objects("DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10")
        assert rows[0].is_dont_care

    def test_dont_care_dims_written_as_minus_one(self):
        rec = make_record(cls="DontCare", dims=(1.0, 2.0, 3.0))
        fields = write_objects([rec]).split()
        assert fields[8:11] == ["-1.00", "-1.00", "-1.00"]

    def test_empty(self):
        assert write_objects([]) == ""
        assert parse_objects("") == []

    def test_invalid_dims_rejected(self):
        with pytest.raises(ValidationError):
            write_objects([make_record(dims=(0.0, 1.6, 3.9))])

    def test_score_precision(self):
        text = write_objects([make_record(score=0.93), make_record(score=1 / 3)])
        assert text.splitlines()[0].endswith(" 0.930000")
        assert parse_objects(text, expect_score=True)[1].score == 1 / 3

    def test_round_trip_byte_stable(self):
        text = ROW + " 0.5\n" + "Pedestrian 0.12 2 0.33 10.5 20.25 40.75 90.0 1.7 0.6 0.8 -3.1 1.6 12.3 0.1 0.25\n"
        once = write_objects(parse_objects(text, expect_score=True))
        twice = write_objects(parse_objects(once, expect_score=True))
        assert once == twice

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(
        st.floats(0, 1), st.integers(0, 3), st.floats(-math.pi, math.pi),
        st.floats(0, 1000), st.floats(0, 370), st.floats(0.5, 200), st.floats(0.5, 100),
        st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 10),
        st.floats(-40, 40), st.floats(-3, 3), st.floats(0.5, 80), st.floats(-math.pi, math.pi),
        st.floats(0, 1)), max_size=6))
    def test_parse_write_identity(self, rows):
        recs = [ObjectRecord("Car", t, o, a, Box2D(l, tp, l + w, tp + h), (dh, dw, dl), (x, y, z), ry, s)
                for t, o, a, l, tp, w, h, dh, dw, dl, x, y, z, ry, s in rows]
        text = write_objects(recs)
        back = parse_objects(text, expect_score=True) if recs else []
        assert len(back) == len(recs)
        for r, b in zip(recs, back):
            assert b.score == r.score
            assert b.class_name == r.class_name and b.occlusion == r.occlusion
            got = (b.truncation, b.alpha, *b.box2d.as_tuple(), *b.dims, *b.location, b.rotation_y)
            want = (r.truncation, r.alpha, *r.box2d.as_tuple(), *r.dims, *r.location, r.rotation_y)
            np.testing.assert_allclose(got, want, atol=0.005 + 1e-9)
        assert write_objects(back) == text


class TestDepth:
    def test_conventions(self):
        raw = np.array([[0, 256, 65535]], dtype=np.uint16)
        from PIL import Image
        buf = io.BytesIO()
        Image.fromarray(raw).save(buf, format="PNG")
        d = load_depth_map(buf.getvalue())
        assert d.values[0, 1] == 1.0
        assert d.values[0, 2] == pytest.approx(255.99609375)
        assert not d.valid[0, 0] and d.valid[0, 1]

    def test_rejects_8bit(self):
        from PIL import Image
        buf = io.BytesIO()
        Image.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(buf, format="PNG")
        with pytest.raises(FormatError):
            load_depth_map(buf.getvalue())

    def test_rejects_rgb(self):
        from PIL import Image
        buf = io.BytesIO()
        Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(buf, format="PNG")
        with pytest.raises(FormatError):
            load_depth_map(buf.getvalue())

    def test_rejects_garbage(self):
        with pytest.raises(FormatError):
            load_depth_map(b"not an image")

    def test_encode_round_trip(self):
        depth = np.array([[0.0, 10.0], [np.nan, 1.5]])
        d = load_depth_map(encode_depth_png(depth))
        assert d.valid.tolist() == [[False, True], [False, True]]
        assert d.values[1, 1] == 1.5

    def test_from_meters_never_valid_at_zero(self):
        d = DepthMap.from_meters([[0.0, -1.0, 3.0]])
        assert d.valid.tolist() == [[False, False, True]]


class TestSplit:
    MAPPING = {0: "A", 1: "A", 2: "B", 3: "B", 4: "C", 5: "C"}

    def test_single_scene(self):
        s = generate_depth_split(self.MAPPING, {4, 5})
        assert s.depth_train_scenes == {"A", "B"} and s.depth_val_scenes == {"C"}

    def test_two_scenes(self):
        s = generate_depth_split(self.MAPPING, {0, 5})
        assert s.depth_train_scenes == {"B"}

    def test_all_scenes_warns(self):
        with pytest.warns(EmptySplitWarning):
            s = generate_depth_split(self.MAPPING, {0, 2, 4})
        assert s.depth_train_scenes == set()

    def test_unmapped_frame(self):
        with pytest.raises(ConsistencyError, match="99"):
            generate_depth_split(self.MAPPING, {99})

    def test_check_split_detects_leak(self):
        s = generate_depth_split(self.MAPPING, {0})
        assert check_split(s, self.MAPPING) == []
        s.depth_train_scenes.add("A")
        assert check_split(s, self.MAPPING)

    def test_files_round_trip(self, tmp_path):
        s = generate_depth_split(self.MAPPING, {2})
        write_split(s, tmp_path)
        back = read_split(tmp_path, {2})
        assert back.depth_train_scenes == s.depth_train_scenes
        assert back.depth_val_scenes == s.depth_val_scenes

    def test_mapping_parser(self):
        m = parse_frame_scene_mapping("# frame scene\n000001 2011_09_26_drive_0001\n2 X\n")
        assert m == {1: "2011_09_26_drive_0001", 2: "X"}
        with pytest.raises(ParseError):
            parse_frame_scene_mapping("1 2 3")
