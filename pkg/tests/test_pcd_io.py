import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sorbet.errors import FormatError, PcdIOError, SchemaError, ValidationError
from sorbet.geometry import Box3D
from sorbet.pcd_io import (
    Calibration,
    DetectionRecord,
    ObjectClass,
    PointCloud,
    Track,
    format_label,
    format_tracks,
    parse_calibration,
    parse_detections,
    parse_labels,
    parse_tracks,
    pointcloud_from_bytes,
    read_calibration,
    read_detections,
    read_labels,
    read_pointcloud,
    read_tracks,
    write_detections,
    write_pointcloud,
)
from scenes import KITTI_CALIB_TEXT

LABEL_LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.5 1.6 3.9 2.0 1.5 15.0 0.1"


# point clouds ---------------------------------------------------------------

def test_single_point_decode(tmp_path):
    p = tmp_path / "000007.bin"
    p.write_bytes(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    cloud = read_pointcloud(p)
    assert len(cloud) == 1
    assert cloud.points.tolist() == [[1.0, 2.0, 3.0, 0.5]]
    assert cloud.frame_id == "000007"


def test_empty_file_gives_empty_cloud(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(b"")
    cloud = read_pointcloud(p)
    assert len(cloud) == 0 and cloud.points.shape == (0, 4)


def test_zero_points_write_zero_bytes(tmp_path):
    p = tmp_path / "z.bin"
    write_pointcloud(PointCloud(np.zeros((0, 4))), p)
    assert p.stat().st_size == 0


def test_three_points_are_48_bytes(tmp_path):
    p = tmp_path / "t.bin"
    write_pointcloud(PointCloud(np.arange(12, dtype=np.float32).reshape(3, 4)), p)
    assert p.stat().st_size == 48


finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, min_side=0, max_side=64).map(lambda s: (s[0], 4)), elements=finite32))
def test_roundtrip_bit_identical(tmp_path_factory, pts):
    p = tmp_path_factory.mktemp("rt") / "c.bin"
    cloud = PointCloud(pts)
    write_pointcloud(cloud, p)
    raw = p.read_bytes()
    back = read_pointcloud(p)
    assert back.points.tobytes() == pts.tobytes()  # order and bits preserved
    write_pointcloud(back, p)
    assert p.read_bytes() == raw


def test_little_endian_layout():
    cloud = PointCloud(np.array([[1.0, -2.0, 3.5, 0.25]]))
    assert cloud.to_bytes() == struct.pack("<4f", 1.0, -2.0, 3.5, 0.25)


@pytest.mark.parametrize("n", [1, 15, 17])
def test_bad_length_is_format_error(tmp_path, n):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\0" * n)
    with pytest.raises(FormatError):
        read_pointcloud(p)


def test_non_finite_is_format_error():
    with pytest.raises(FormatError):
        pointcloud_from_bytes(struct.pack("<4f", 1.0, math.nan, 0.0, 0.0))
    with pytest.raises(FormatError):
        pointcloud_from_bytes(struct.pack("<4f", math.inf, 0.0, 0.0, 0.0))


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(PcdIOError):
        read_pointcloud(tmp_path / "nope.bin")
    with pytest.raises(OSError):  # PcdIOError is an OSError
        read_pointcloud(tmp_path / "nope.bin")


def test_unwritable_destination(tmp_path):
    with pytest.raises(PcdIOError):
        write_pointcloud(PointCloud(np.zeros((1, 4))), tmp_path / "missing_dir" / "x.bin")


def test_cloud_is_immutable():
    cloud = PointCloud(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        cloud.points[0, 0] = 1.0


def test_cloud_shape_validation():
    with pytest.raises(ValidationError):
        PointCloud(np.zeros((3, 3)))


# calibration ----------------------------------------------------------------

def _calib_text(r0="1 0 0 0 1 0 0 0 1", tr="0 -1 0 0 0 0 -1 0 1 0 0 0", drop=None):
    lines = {
        "P0": " ".join(["0"] * 12),
        "P1": " ".join(["0"] * 12),
        "P2": "700 0 600 45 0 700 180 0 0 0 1 0",
        "P3": " ".join(["0"] * 12),
        "R0_rect": r0,
        "Tr_velo_to_cam": tr,
    }
    return "\n".join(f"{k}: {v}" for k, v in lines.items() if k != drop) + "\n"


def test_identity_r0():
    calib = parse_calibration(_calib_text())
    assert np.array_equal(calib.rect_rotation, np.eye(3))


def test_missing_tr_velo_to_cam(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text(_calib_text(drop="Tr_velo_to_cam"))
    with pytest.raises(FormatError, match="Tr_velo_to_cam"):
        read_calibration(p)


def test_wrong_element_count():
    with pytest.raises(FormatError):
        parse_calibration(_calib_text(r0="1 0 0 0 1 0 0 0"))


def test_unparsable_number():
    with pytest.raises(FormatError):
        parse_calibration(_calib_text(r0="1 0 0 0 one 0 0 0 1"))


def test_non_orthonormal_rotation():
    with pytest.raises(ValidationError):
        parse_calibration(_calib_text(r0="1 0 0 0 2 0 0 0 1"))
    with pytest.raises(ValidationError):
        parse_calibration(_calib_text(tr="1 0 0 0 1 0 0 0 0 0 0.5 0"))


def test_kitti_calib_matches_tokens(tmp_path):
    p = tmp_path / "000000.txt"
    p.write_text(KITTI_CALIB_TEXT)
    calib = read_calibration(p)
    # independent token extraction
    tokens = {}
    for line in KITTI_CALIB_TEXT.splitlines():
        key, rest = line.split(":", 1)
        tokens[key] = [float(t) for t in rest.split()]
    assert calib.cam_projection.ravel().tolist() == tokens["P2"]
    assert calib.rect_rotation.ravel().tolist() == tokens["R0_rect"]
    assert calib.velo_to_cam.ravel().tolist() == tokens["Tr_velo_to_cam"]


def test_calibration_text_roundtrip():
    calib = parse_calibration(KITTI_CALIB_TEXT)
    again = parse_calibration(calib.to_text())
    assert np.array_equal(again.velo_to_cam, calib.velo_to_cam)
    assert np.array_equal(again.rect_rotation, calib.rect_rotation)


def test_canonical_axes():
    calib = Calibration.canonical()
    # LiDAR forward (+x) is camera +z, LiDAR left (+y) is camera -x, up (+z) is camera -y
    assert calib.velo_to_cam[:, :3] @ [1, 0, 0] == pytest.approx([0, 0, 1])
    assert calib.velo_to_cam[:, :3] @ [0, 1, 0] == pytest.approx([-1, 0, 0])
    assert calib.velo_to_cam[:, :3] @ [0, 0, 1] == pytest.approx([0, -1, 0])


# labels ---------------------------------------------------------------------

def test_label_fields(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text(LABEL_LINE + "\n")
    (lab,) = read_labels(p)
    assert lab.cls is ObjectClass.CAR
    assert (lab.h, lab.w, lab.l) == (1.5, 1.6, 3.9)
    assert lab.location == (2.0, 1.5, 15.0)
    assert lab.rotation_y == 0.1
    assert lab.bbox == (587.01, 173.33, 614.12, 200.12)
    assert lab.gt_id == 0


def test_empty_label_file(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text("")
    assert read_labels(p) == []


def test_dontcare_parsed_but_not_target():
    text = LABEL_LINE + "\nDontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n"
    labs = parse_labels(text)
    assert [lab.gt_id for lab in labs] == [0, 1]
    assert labs[1].cls is ObjectClass.DONTCARE
    assert [lab.is_target for lab in labs] == [True, False]


def test_gt_id_is_line_index():
    labs = parse_labels("\n".join([LABEL_LINE.replace("Car", c) for c in ("Car", "Pedestrian", "Cyclist")]))
    assert [(lab.gt_id, lab.cls) for lab in labs] == [
        (0, ObjectClass.CAR), (1, ObjectClass.PEDESTRIAN), (2, ObjectClass.CYCLIST)]


def test_other_kitti_types_are_misc():
    labs = parse_labels("\n".join(LABEL_LINE.replace("Car", t) for t in ("Van", "Truck", "Tram", "Person_sitting", "Misc")))
    assert all(lab.cls is ObjectClass.MISC for lab in labs)
    assert labs[0].type_name == "Van"


@pytest.mark.parametrize("line", [
    LABEL_LINE + " 0.9",             # 16 fields
    LABEL_LINE.rsplit(" ", 1)[0],    # 14 fields
    LABEL_LINE.replace("1.6", "wide"),
    LABEL_LINE.replace("Car", "Spaceship"),
    LABEL_LINE.replace("15.0", "nan"),
])
def test_malformed_label_line(line):
    with pytest.raises(FormatError):
        parse_labels(line)


def test_non_positive_dims():
    with pytest.raises(ValidationError):
        parse_labels(LABEL_LINE.replace(" 1.5 1.6 3.9", " 1.5 0 3.9"))


def test_format_label_roundtrip():
    (lab,) = parse_labels(LABEL_LINE)
    (again,) = parse_labels(format_label(lab))
    assert again == lab


# detections -----------------------------------------------------------------

def _det_json(score=0.9, frame="000001", cls="Car"):
    return ('{"frame": "%s", "class": "%s", "score": %r, "box": {"cx": 10, "cy": 5, "cz": 1, '
            '"l": 3.9, "w": 1.6, "h": 1.5, "yaw": 0.2}}' % (frame, cls, score))


def test_score_above_one_rejected():
    with pytest.raises(ValidationError):
        parse_detections(_det_json(score=1.2))


def test_empty_detections(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("")
    assert read_detections(p) == []


def test_two_lines_in_order():
    dets = parse_detections(_det_json(0.5, "a") + "\n" + _det_json(0.7, "b") + "\n")
    assert [(d.frame_id, d.score) for d in dets] == [("a", 0.5), ("b", 0.7)]
    assert dets[0].box == Box3D(10, 5, 1, 3.9, 1.6, 1.5, 0.2)


def test_detections_roundtrip(tmp_path):
    recs = [DetectionRecord("f", Box3D(1, 2, 3, 4, 2, 1.5, -0.3), ObjectClass.PEDESTRIAN, 0.25)]
    p = tmp_path / "d.jsonl"
    write_detections(recs, p)
    assert read_detections(p) == recs


def test_detections_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("frame,class,score,cx,cy,cz,l,w,h,yaw\n000001,Car,0.8,10,5,1,3.9,1.6,1.5,0.2\n")
    (d,) = read_detections(p)
    assert d.cls is ObjectClass.CAR and d.score == 0.8 and d.box.l == 3.9


@pytest.mark.parametrize("text,err", [
    ('{"frame": "a", "class": "Car", "score": 0.5}', SchemaError),
    ('{"frame": "a", "class": "Car", "score": "x", "box": {}}', SchemaError),
    ("[1, 2]", SchemaError),
    ("{not json", FormatError),
    (_det_json().replace('"l": 3.9', '"l": -1'), ValidationError),
])
def test_malformed_detections(text, err):
    with pytest.raises(err):
        parse_detections(text, "jsonl")


def test_csv_missing_column():
    with pytest.raises(SchemaError):
        parse_detections("frame,class,score\na,Car,0.5\n", "csv")


# tracks ---------------------------------------------------------------------

def test_tracks_parse_and_roundtrip(tmp_path):
    text = "obstacle_id,t,x,y\n1,0.0,0.0,0.0\n1,0.1,1.0,0.5\n2,0.0,5.0,5.0\n2,0.1,5.0,5.0\n"
    p = tmp_path / "tracks.csv"
    p.write_text(text)
    tracks = read_tracks(p)
    assert [t.obstacle_id for t in tracks] == [1, 2]
    assert tracks[0].samples.tolist() == [[0.0, 0.0, 0.0], [0.1, 1.0, 0.5]]
    assert [tr.samples.tolist() for tr in parse_tracks(format_tracks(tracks))] == [tr.samples.tolist() for tr in tracks]


def test_tracks_empty():
    assert parse_tracks("") == []
    assert parse_tracks("obstacle_id,t,x,y\n") == []


def test_tracks_timestamps_strictly_increasing():
    with pytest.raises(ValidationError):
        parse_tracks("obstacle_id,t,x,y\n1,0.1,0,0\n1,0.1,1,1\n")
    with pytest.raises(ValidationError):
        Track(1, [[1.0, 0, 0], [0.5, 0, 0]])


def test_tracks_schema_errors():
    with pytest.raises(SchemaError):
        parse_tracks("id,t,x,y\n1,0,0,0\n")
    with pytest.raises(FormatError):
        parse_tracks("obstacle_id,t,x,y\n1,zero,0,0\n")


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=200))
def test_parsers_are_total(text):
    # any input either parses or raises one of the typed errors
    for parse in (parse_labels, parse_calibration, parse_detections, parse_tracks):
        try:
            parse(text)
        except (FormatError, ValidationError):
            pass
