import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sorbet.errors import EmptyInput
from sorbet.geometry import Box3D, iou_3d
from sorbet.metrics import (
    PLOT_COLUMNS,
    DeviationRecord,
    GroundTruthObject,
    MatchedDetection,
    compute_deviations,
    count_diff,
    deviation_quartiles,
    ground_truth_objects,
    large_deviation_count,
    match_to_ground_truth,
    median_of_large,
    plot_data_csv,
    report_csv,
    report_json,
    reports_from_json,
    signed_iou_deviation,
    summarize,
)
from sorbet.pcd_io import Calibration, DetectionRecord, GroundTruthLabel, ObjectClass
from scenes import random_box

CAR, PED = ObjectClass.CAR, ObjectClass.PEDESTRIAN


def gt(i, box, cls=CAR, frame="f"):
    return GroundTruthObject(i, cls, box, frame)


def det(box, score=0.9, cls=CAR, frame="f"):
    return DetectionRecord(frame, box, cls, score)


def unit(x=0.0, y=0.0):
    return Box3D(x, y, 0, 1, 1, 1, 0)


def md(gt_id, box=None, iou=1.0, detected=True, frame="f"):
    return MatchedDetection(gt_id, box or unit(), iou, detected, frame_id=frame)


# matching -------------------------------------------------------------------

def test_identical_detections_match_everything(rng):
    boxes = [Box3D(10 * i, 0, 0, 4, 2, 1.5, 0.1 * i) for i in range(5)]
    gts = [gt(i, b) for i, b in enumerate(boxes)]
    m = match_to_ground_truth(gts, [det(b) for b in reversed(boxes)])
    assert [x.gt_id for x in m] == list(range(5))
    assert all(x.iou_with_gt == 1.0 and x.detected for x in m)
    assert [x.det_index for x in m] == [4, 3, 2, 1, 0]


def test_one_detection_two_gts_goes_to_higher_iou():
    gts = [gt(0, unit(0)), gt(1, unit(0.6))]
    d = unit(0.2)
    assert iou_3d(gts[0].box, d) > iou_3d(gts[1].box, d) >= 0.25
    (m,) = match_to_ground_truth(gts, [det(d)])
    assert m.gt_id == 0


def test_below_quarter_iou_unmatched():
    d = unit(2 / 3)  # IoU (1/3)/(5/3) = 0.2
    assert iou_3d(unit(), d) == pytest.approx(0.2)
    assert match_to_ground_truth([gt(0, unit())], [det(d)]) == []


def test_match_floor_inclusive():
    d = unit(0.6)  # IoU 0.4/1.6 = 0.25
    assert iou_3d(unit(), d) == pytest.approx(0.25)
    m = match_to_ground_truth([gt(0, unit())], [det(d)], min_iou=iou_3d(unit(), d))
    assert len(m) == 1


def test_ties_prefer_higher_score_then_lower_gt_id():
    # two detections with equal IoU to one gt: higher score wins
    gts = [gt(0, unit())]
    dets = [det(unit(0.3), score=0.4), det(unit(-0.3), score=0.8)]
    (m,) = match_to_ground_truth(gts, dets)
    assert m.det_index == 1
    # one detection with equal IoU to two gts: lower gt_id wins
    gts = [gt(5, unit(0.3)), gt(2, unit(-0.3))]
    (m,) = match_to_ground_truth(gts, [det(unit())])
    assert m.gt_id == 2


def test_detected_class_thresholds():
    # IoU 0.6: detected for a pedestrian (0.5) but not for a car (0.7)
    d = unit(0.25)
    assert iou_3d(unit(), d) == pytest.approx(0.6)
    (car,) = match_to_ground_truth([gt(0, unit(), CAR)], [det(d)])
    (ped,) = match_to_ground_truth([gt(0, unit(), PED)], [det(d, cls=PED)])
    assert not car.detected and ped.detected
    (strict,) = match_to_ground_truth([gt(0, unit(), PED)], [det(d)], detect_iou={CAR: 0.7, PED: 0.65})
    assert not strict.detected


def _random_frame(rng, n_gt, n_det):
    gts = [gt(i, Box3D(rng.uniform(-2, 2), rng.uniform(-2, 2), 0, *rng.uniform(1, 3, 3), rng.uniform(-3, 3)))
           for i in range(n_gt)]
    dets = [det(Box3D(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-0.3, 0.3), *rng.uniform(1, 3, 3),
                      rng.uniform(-3, 3)), score=float(rng.uniform())) for _ in range(n_det)]
    return gts, dets


def test_matching_one_to_one_and_monotone(rng):
    for _ in range(300):
        gts, dets = _random_frame(rng, rng.integers(0, 6), rng.integers(0, 6))
        prev = None
        for floor in (0.05, 0.1, 0.25, 0.4, 0.6):
            m = match_to_ground_truth(gts, dets, min_iou=floor)
            assert len({x.gt_id for x in m}) == len(m) == len({x.det_index for x in m})
            assert all(x.iou_with_gt >= floor for x in m)
            if prev is not None:
                assert len(m) <= prev
            prev = len(m)


def test_ground_truth_objects_skip_dontcare():
    labels = [
        GroundTruthLabel(0, CAR, 1.5, 1.6, 3.9, (2.0, 1.5, 15.0), 0.1),
        GroundTruthLabel(1, ObjectClass.DONTCARE, -1, -1, -1, (-1000, -1000, -1000), -10),
        GroundTruthLabel(2, PED, 1.7, 0.6, 0.8, (-3.0, 1.6, 9.0), 1.0),
    ]
    objs = ground_truth_objects(labels, Calibration.canonical(), "000003")
    assert [o.gt_id for o in objs] == [0, 2]
    assert objs[0].box.cx == pytest.approx(15.0) and objs[0].frame_id == "000003"


# deviations -----------------------------------------------------------------

def test_deviation_arithmetic():
    base = [md(0, Box3D(10, 5, 1, 4, 2, 1.5, 0), iou=0.8)]
    pert = [md(0, Box3D(10.3, 5, 1, 4, 2, 1.5, 0), iou=0.7)]
    (r,) = compute_deviations(base, pert)
    assert r.dx == pytest.approx(0.3) and r.dy == 0 and r.dz == 0
    assert r.dsize == 0 and r.diou == pytest.approx(0.1)
    assert r.signed_dx == pytest.approx(0.3)


def test_deviation_size_is_volume_difference():
    (r,) = compute_deviations([md(0, Box3D(0, 0, 0, 4, 2, 1.5, 0))], [md(0, Box3D(0, 0, 0, 4, 2, 2.0, 0))])
    assert r.dsize == pytest.approx(4 * 2 * 0.5)


def test_deviation_identity(rng):
    base = [md(i, random_box(rng), iou=float(rng.uniform(0.25, 1))) for i in range(20)]
    recs = compute_deviations(base, base)
    assert len(recs) == 20
    assert all(r.dx == r.dy == r.dz == r.dsize == r.diou == 0 for r in recs)


def test_baseline_only_gt_goes_to_diff():
    base = [md(0), md(1)]
    pert = [md(0)]
    assert [r.gt_id for r in compute_deviations(base, pert)] == [0]
    d = count_diff(base, pert)
    assert (d.lost, d.gained, d.count, d.net) == (1, 0, 1, 1)


def test_deviation_keys_include_frame():
    base = [md(0, frame="a"), md(0, unit(1), frame="b")]
    pert = [md(0, unit(0.2), frame="b")]
    (r,) = compute_deviations(base, pert)
    assert r.frame_id == "b" and r.dx == pytest.approx(0.8)


# LDC / DIFF / medians -------------------------------------------------------

def rec(dx=0.0, dy=0.0, dz=0.0, **kw):
    return DeviationRecord(0, dx, dy, dz, kw.get("dsize", 0.0), kw.get("diou", 0.0))


def test_ldc_examples():
    assert large_deviation_count([rec(dx=0.15)]) == (1, 1.0)
    assert large_deviation_count([rec(0.1, 0.1, 0.1)]) == (0, 0.0)
    assert large_deviation_count([]) == (0, 0.0)
    assert large_deviation_count([rec(dz=0.11), rec(), rec(dy=0.3), rec(dx=0.05)]) == (2, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0, 0.5)] * 3), max_size=50))
def test_ldc_partition(vals):
    recs = [rec(*v) for v in vals]
    n, frac = large_deviation_count(recs)
    assert n + sum(1 for r in recs if not r.max_axis > 0.1) == len(recs)
    assert 0 <= frac <= 1


def test_diff_examples():
    base = [md(i) for i in range(100)]
    pert = [md(i) for i in range(90)]
    d = count_diff(base, pert)
    assert (d.count, d.fraction) == (10, 0.10)
    same = count_diff(base, base)
    assert (same.count, same.fraction, same.net) == (0, 0.0, 0)


def test_diff_uses_detected_flag():
    base = [md(0), md(1), md(2, detected=False)]
    pert = [md(0, detected=False), md(1), md(2), md(3)]
    d = count_diff(base, pert)
    assert (d.lost, d.gained, d.baseline_detected, d.perturbed_detected) == (1, 2, 2, 3)
    assert d.count == 3 and d.net == -1
    assert d.fraction == 1.5 and d.net_fraction == -0.5


def test_median_of_large_examples():
    assert median_of_large([rec(dx=0.05)], "dx") == 0
    assert median_of_large([rec(dx=v) for v in (0.12, 0.16, 0.2)], "dx") == pytest.approx(0.16)
    assert median_of_large([rec(dx=v) for v in (0.12, 0.16)], "dx") == pytest.approx(0.14)
    # only large records contribute, selected by their largest axis
    recs = [rec(dx=0.01, dy=0.5, dsize=3.0), rec(dx=0.02, dsize=9.0)]
    assert median_of_large(recs, "dx") == 0.01
    assert median_of_large(recs, "dsize") == 3.0


# quartiles ------------------------------------------------------------------

def test_quartiles_one_to_five():
    q = deviation_quartiles([1, 2, 3, 4, 5])
    assert (q.q1, q.median, q.q3, q.iqr, q.uf, q.lf) == (2, 3, 4, 2, 7, -1)
    assert q.outlier_min is None and q.n_outliers == 0


def test_quartiles_constant_and_single():
    q = deviation_quartiles([0.3] * 7)
    assert q.iqr == 0 and q.uf == q.lf == 0.3 and q.n_outliers == 0
    q = deviation_quartiles([-1.5])
    assert q.q1 == q.median == q.q3 == q.uf == q.lf == -1.5


def test_quartiles_outliers():
    q = deviation_quartiles([1, 2, 3, 4, 5, 20, -9])
    assert (q.outlier_min, q.outlier_max, q.n_outliers) == (-9, 20, 2)
    assert q.outlier_median == 5.5


def test_quartiles_empty():
    with pytest.raises(EmptyInput):
        deviation_quartiles([])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60))
def test_quartiles_ordering(vals):
    q = deviation_quartiles(vals)
    assert q.lf <= q.q1 <= q.median <= q.q3 <= q.uf
    assert q.q1 == pytest.approx(np.percentile(vals, 25), abs=1e-9)


# reports --------------------------------------------------------------------

def test_summarize_and_serialize():
    base = [md(0, Box3D(0, 0, 0, 4, 2, 1.5, 0), 0.9), md(1, Box3D(9, 0, 0, 4, 2, 1.5, 0), 0.8), md(2)]
    pert = [md(0, Box3D(0.3, 0, 0, 4, 2, 1.5, 0), 0.6, detected=False), md(1, Box3D(9.05, 0, 0, 4, 2, 1.5, 0), 0.8)]
    rep, recs = summarize("v", base, pert)
    assert rep.ldc_count == 1 and rep.ldc_fraction == 0.5
    assert rep.median_dx == pytest.approx(0.3) and rep.median_diou == pytest.approx(0.3)
    assert rep.diff_count == 2 and rep.diff_lost == 2 and rep.baseline_detected == 3
    assert rep.matched_records == 2 == len(recs)
    assert reports_from_json(report_json([rep])) == [rep]
    rows = list(csv.reader(io.StringIO(report_csv([rep]))))
    assert rows[0] == ["variant", "metric", "value"]
    metrics = [r[1] for r in rows[1:]]
    assert {"x", "y", "z", "size", "IoU", "LDC", "DIFF"} <= set(metrics)
    assert dict((r[1], r[2]) for r in rows[1:])["LDC"] == "1"


def test_plot_data_csv():
    base = [md(0, Box3D(0, 0, 0, 4, 2, 1.5, 0), 0.9, frame="a")]
    pert = [md(0, Box3D(-0.2, 0.1, 0, 4, 2, 1.5, 0), 0.7, frame="a")]
    (r,) = compute_deviations(base, pert)
    siou = signed_iou_deviation(base, pert)
    text = plot_data_csv([("v", r, siou[r.frame_id, r.gt_id])])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0].keys()) == PLOT_COLUMNS
    assert float(rows[0]["x_deviation"]) == pytest.approx(-0.2)
    assert float(rows[0]["iou_deviation"]) == pytest.approx(-0.2)
    assert math.isclose(float(rows[0]["y_deviation"]), 0.1)
