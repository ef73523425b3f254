"""Ground-truth matching, per-obstacle deviations and robustness aggregates.

A detection is *matched* to a ground-truth obstacle when their 3D IoU is at
least ``MATCH_IOU`` and it is *detected* when the IoU also reaches the class
threshold (0.7 for cars, 0.5 for pedestrians and cyclists).  Deviations
between a baseline and a perturbed run are computed per ground-truth
obstacle matched in both runs.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput
from .geometry import Box3D, camera_box_to_lidar, iou_3d
from .pcd_io import Calibration, DetectionRecord, GroundTruthLabel, ObjectClass

MATCH_IOU = 0.25
LDC_THRESHOLD = 0.1
DETECT_IOU = {
    ObjectClass.CAR: 0.7,
    ObjectClass.PEDESTRIAN: 0.5,
    ObjectClass.CYCLIST: 0.5,
    ObjectClass.MISC: 0.7,
}

DEVIATION_FIELDS = ("dx", "dy", "dz", "dsize", "diou")


@dataclass(frozen=True)
class GroundTruthObject:
    gt_id: int
    cls: ObjectClass
    box: Box3D
    frame_id: str = ""


def ground_truth_objects(labels: Sequence[GroundTruthLabel], calib: Calibration, frame_id: str = "") -> list[GroundTruthObject]:
    """LiDAR-frame ground truth for one frame; DontCare labels are skipped."""
    return [
        GroundTruthObject(lab.gt_id, lab.cls, camera_box_to_lidar(lab, calib), frame_id)
        for lab in labels
        if lab.is_target
    ]


@dataclass(frozen=True)
class MatchedDetection:
    gt_id: int
    box: Box3D
    iou_with_gt: float
    detected: bool
    score: float = 1.0
    det_index: int = -1
    frame_id: str = ""
    gt_range: float = 0.0

    @property
    def key(self) -> tuple[str, int]:
        return (self.frame_id, self.gt_id)


def match_to_ground_truth(
    gts: Sequence[GroundTruthObject],
    dets: Sequence[DetectionRecord],
    min_iou: float = MATCH_IOU,
    detect_iou: Mapping[ObjectClass, float] | None = None,
) -> list[MatchedDetection]:
    """Greedy one-to-one matching of one frame's detections to its ground truth.

    Candidate pairs with IoU >= ``min_iou`` are taken in descending IoU order,
    ties broken by higher detection score, then lower ``gt_id``.  Returns the
    matches sorted by ``gt_id``.
    """
    detect_iou = DETECT_IOU if detect_iou is None else detect_iou
    pairs = []
    for g in gts:
        for j, d in enumerate(dets):
            iou = iou_3d(g.box, d.box)
            if iou >= min_iou:
                pairs.append((-iou, -d.score, g.gt_id, j, g))
    pairs.sort(key=lambda p: p[:4])
    used_gt, used_det, out = set(), set(), []
    for neg_iou, _, gid, j, g in pairs:
        if gid in used_gt or j in used_det:
            continue
        used_gt.add(gid)
        used_det.add(j)
        iou = -neg_iou
        det = dets[j]
        out.append(
            MatchedDetection(
                gt_id=gid,
                box=det.box,
                iou_with_gt=iou,
                detected=iou >= detect_iou.get(g.cls, detect_iou[ObjectClass.CAR]),
                score=det.score,
                det_index=j,
                frame_id=g.frame_id,
                gt_range=g.box.planar_range,
            )
        )
    out.sort(key=lambda m: m.gt_id)
    return out


@dataclass(frozen=True)
class DeviationRecord:
    """Absolute baseline-vs-perturbed deviations of one matched obstacle.

    The ``signed_*`` fields keep perturbed minus baseline center offsets for
    the cascade analysis.
    """

    gt_id: int
    dx: float
    dy: float
    dz: float
    dsize: float
    diou: float
    signed_dx: float = 0.0
    signed_dy: float = 0.0
    signed_dz: float = 0.0
    obstacle_range: float = 0.0
    frame_id: str = ""

    @property
    def max_axis(self) -> float:
        return max(self.dx, self.dy, self.dz)


def compute_deviations(baseline: Sequence[MatchedDetection], perturbed: Sequence[MatchedDetection]) -> list[DeviationRecord]:
    """One record per obstacle matched in both runs, in baseline order."""
    pert = {m.key: m for m in perturbed}
    out = []
    for b in baseline:
        p = pert.get(b.key)
        if p is None:
            continue
        sx, sy, sz = p.box.cx - b.box.cx, p.box.cy - b.box.cy, p.box.cz - b.box.cz
        out.append(
            DeviationRecord(
                gt_id=b.gt_id,
                dx=abs(sx),
                dy=abs(sy),
                dz=abs(sz),
                dsize=abs(p.box.volume - b.box.volume),
                diou=abs(p.iou_with_gt - b.iou_with_gt),
                signed_dx=sx,
                signed_dy=sy,
                signed_dz=sz,
                obstacle_range=b.gt_range,
                frame_id=b.frame_id,
            )
        )
    return out


def large_deviation_count(records: Sequence[DeviationRecord], threshold: float = LDC_THRESHOLD) -> tuple[int, float]:
    """Records whose largest per-axis center deviation is strictly above ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    count = sum(1 for r in records if r.max_axis > threshold)
    return count, (count / len(records) if records else 0.0)


@dataclass(frozen=True)
class DiffCount:
    """Detected-obstacle differences between two runs.

    ``lost`` obstacles are detected only in the baseline, ``gained`` only in
    the perturbed run.  ``count`` is their sum and ``net`` the signed change
    ``baseline_detected - perturbed_detected``.
    """

    lost: int
    gained: int
    baseline_detected: int
    perturbed_detected: int

    @property
    def count(self) -> int:
        return self.lost + self.gained

    @property
    def net(self) -> int:
        return self.baseline_detected - self.perturbed_detected

    @property
    def fraction(self) -> float:
        return self.count / self.baseline_detected if self.baseline_detected else 0.0

    @property
    def net_fraction(self) -> float:
        return self.net / self.baseline_detected if self.baseline_detected else 0.0


def count_diff(baseline: Sequence[MatchedDetection], perturbed: Sequence[MatchedDetection]) -> DiffCount:
    base = {m.key for m in baseline if m.detected}
    pert = {m.key for m in perturbed if m.detected}
    return DiffCount(len(base - pert), len(pert - base), len(base), len(pert))


def median_of_large(records: Sequence[DeviationRecord], field: str, threshold: float = LDC_THRESHOLD) -> float:
    """Median of ``field`` over large-deviation records; 0 when there are none."""
    vals = [getattr(r, field) for r in records if r.max_axis > threshold]
    return float(np.median(vals)) if vals else 0.0


@dataclass(frozen=True)
class QuartileStats:
    q1: float
    median: float
    q3: float
    iqr: float
    uf: float
    lf: float
    outlier_min: float | None
    outlier_max: float | None
    outlier_median: float | None
    n: int = 0
    n_outliers: int = 0


def deviation_quartiles(values: Sequence[float]) -> QuartileStats:
    """Quartiles (linear interpolation), Tukey fences and outlier summary.

    Outliers are values strictly above ``q3 + 1.5 iqr`` or strictly below
    ``q1 - 1.5 iqr``.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyInput("deviation_quartiles needs at least one value")
    q1, med, q3 = (float(v) for v in np.quantile(arr, [0.25, 0.5, 0.75], method="linear"))
    iqr = q3 - q1
    uf = q3 + 1.5 * iqr
    lf = q1 - 1.5 * iqr
    out = arr[(arr > uf) | (arr < lf)]
    if out.size:
        omin, omax, omed = float(out.min()), float(out.max()), float(np.median(out))
    else:
        omin = omax = omed = None
    return QuartileStats(q1, med, q3, iqr, uf, lf, omin, omax, omed, int(arr.size), int(out.size))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class RobustnessReport:
    variant: str
    median_dx: float
    median_dy: float
    median_dz: float
    median_dsize: float
    median_diou: float
    ldc_count: int
    ldc_fraction: float
    diff_count: int
    diff_fraction: float
    diff_net: int
    diff_net_fraction: float
    diff_lost: int
    diff_gained: int
    baseline_detected: int
    matched_records: int

    def table_rows(self) -> list[tuple[str, float]]:
        """(metric, value) rows named like the robustness summary table."""
        return [
            ("x", self.median_dx),
            ("y", self.median_dy),
            ("z", self.median_dz),
            ("size", self.median_dsize),
            ("IoU", self.median_diou),
            ("LDC", self.ldc_count),
            ("LDC_pct", 100.0 * self.ldc_fraction),
            ("DIFF", self.diff_count),
            ("DIFF_pct", 100.0 * self.diff_fraction),
            ("DIFF_net", self.diff_net),
            ("DIFF_net_pct", 100.0 * self.diff_net_fraction),
            ("DIFF_lost", self.diff_lost),
            ("DIFF_gained", self.diff_gained),
            ("baseline_detected", self.baseline_detected),
            ("matched", self.matched_records),
        ]


def summarize(
    variant: str,
    baseline: Sequence[MatchedDetection],
    perturbed: Sequence[MatchedDetection],
    ldc_threshold: float = LDC_THRESHOLD,
) -> tuple[RobustnessReport, list[DeviationRecord]]:
    """Aggregate one variant's matches (any number of frames) into a report."""
    records = compute_deviations(baseline, perturbed)
    ldc, ldc_frac = large_deviation_count(records, ldc_threshold)
    diff = count_diff(baseline, perturbed)
    medians = [median_of_large(records, f, ldc_threshold) for f in DEVIATION_FIELDS]
    report = RobustnessReport(
        variant,
        *medians,
        ldc_count=ldc,
        ldc_fraction=ldc_frac,
        diff_count=diff.count,
        diff_fraction=diff.fraction,
        diff_net=diff.net,
        diff_net_fraction=diff.net_fraction,
        diff_lost=diff.lost,
        diff_gained=diff.gained,
        baseline_detected=diff.baseline_detected,
        matched_records=len(records),
    )
    return report, records


def _num(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def report_csv(reports: Iterable[RobustnessReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "metric", "value"])
    for rep in reports:
        for metric, value in rep.table_rows():
            w.writerow([rep.variant, metric, _num(value)])
    return buf.getvalue()


def report_json(reports: Iterable[RobustnessReport], extra: Mapping | None = None) -> str:
    doc = {"variants": {rep.variant: asdict(rep) for rep in reports}}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def reports_from_json(text: str) -> list[RobustnessReport]:
    doc = json.loads(text)
    return [RobustnessReport(**doc["variants"][k]) for k in sorted(doc["variants"])]


PLOT_COLUMNS = ("variant", "frame", "gt_id", "x_deviation", "y_deviation", "iou_deviation", "obstacle_range")


def plot_data_csv(rows: Iterable[tuple[str, DeviationRecord, float]]) -> str:
    """Signed x/y deviations, IoU deviation and obstacle range per record.

    ``rows`` yields ``(variant, record, signed_iou_deviation)``.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for variant, rec, siou in rows:
        w.writerow([variant, rec.frame_id, rec.gt_id, _num(rec.signed_dx), _num(rec.signed_dy), _num(siou), _num(rec.obstacle_range)])
    return buf.getvalue()


def signed_iou_deviation(baseline: Sequence[MatchedDetection], perturbed: Sequence[MatchedDetection]) -> dict[tuple[str, int], float]:
    pert = {m.key: m for m in perturbed}
    return {b.key: pert[b.key].iou_with_gt - b.iou_with_gt for b in baseline if b.key in pert}
