"""Dataset-level orchestration behind the ``sorbet`` command.

Datasets follow the KITTI object layout::

    <dataset_root>/velodyne/<frame>.bin
    <dataset_root>/label_2/<frame>.txt
    <dataset_root>/calib/<frame>.txt

Perturbed clouds are written to ``<output_root>/<variant>/<frame>.bin`` and
bookkept in ``<output_root>/manifest.json`` so interrupted runs resume.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .cascade import CascadeTable, PerturbationPattern, predict_constant_velocity, run_cascade, stat_points
from .errors import EmptyInput, FormatError, FrameMismatch, SchemaError, SorbetError, ValidationError
from .metrics import (
    DETECT_IOU,
    LDC_THRESHOLD,
    MATCH_IOU,
    GroundTruthObject,
    RobustnessReport,
    ground_truth_objects,
    match_to_ground_truth,
    plot_data_csv,
    report_csv,
    report_json,
    reports_from_json,
    signed_iou_deviation,
    summarize,
)
from .mock_detector import MockDetector
from .pcd_io import (
    ObjectClass,
    _csv_rows,
    _read_text,
    atomic_write_text,
    read_calibration,
    read_detections,
    read_labels,
    read_pointcloud,
    read_tracks,
    write_detections,
    write_pointcloud,
)
from .perturb import SuiteConfig, build_suite, default_suite

log = logging.getLogger(__name__)

DATASET_ENV = "SORBET_DATASET_ROOT"
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class Thresholds:
    match_iou: float = MATCH_IOU
    detect_iou_car: float = DETECT_IOU[ObjectClass.CAR]
    detect_iou_ped_cyc: float = DETECT_IOU[ObjectClass.PEDESTRIAN]
    ldc: float = LDC_THRESHOLD

    def __post_init__(self):
        for name in ("match_iou", "detect_iou_car", "detect_iou_ped_cyc"):
            if not 0 < getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in (0, 1]")
        if not self.ldc > 0:
            raise ValidationError("ldc threshold must be > 0")

    def detect_map(self) -> dict:
        return {
            ObjectClass.CAR: self.detect_iou_car,
            ObjectClass.MISC: self.detect_iou_car,
            ObjectClass.PEDESTRIAN: self.detect_iou_ped_cyc,
            ObjectClass.CYCLIST: self.detect_iou_ped_cyc,
        }


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Path
    output_root: Path
    suite: SuiteConfig = field(default_factory=default_suite)
    thresholds: Thresholds = field(default_factory=Thresholds)
    range_filter: float = 10.0
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "RunConfig":
        base_dir = Path(base_dir or ".")

        def path(value):
            p = Path(value)
            return p if p.is_absolute() else base_dir / p

        try:
            root = data.get("dataset_root") or os.environ.get(DATASET_ENV)
            if not root:
                raise FormatError(f"dataset_root missing and ${DATASET_ENV} unset")
            suite_ref = data.get("suite", "default")
            if suite_ref == "default":
                suite = default_suite()
            elif isinstance(suite_ref, dict):
                suite = SuiteConfig.from_dict(suite_ref)
            else:
                suite = SuiteConfig.load(path(suite_ref))
            if "master_seed" in data:
                suite = SuiteConfig(suite.variants, int(data["master_seed"]), suite.profile)
            return cls(
                dataset_root=path(root),
                output_root=path(data.get("output_root", "sorbet_out")),
                suite=suite,
                thresholds=Thresholds(**data.get("thresholds", {})),
                range_filter=float(data.get("range_filter", 10.0)),
                workers=int(data.get("parallelism", data.get("workers", 1))),
            )
        except TypeError as exc:
            raise FormatError(f"invalid run config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(_read_text(path))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        return cls.from_dict(data, Path(path).parent)


# ---------------------------------------------------------------------------
# perturb


def dataset_frames(root: Path) -> list[str]:
    return sorted(p.stem for p in (Path(root) / "velodyne").glob("*.bin"))


def _frame_paths(root: Path, frame: str) -> tuple[Path, Path, Path]:
    root = Path(root)
    return root / "velodyne" / f"{frame}.bin", root / "label_2" / f"{frame}.txt", root / "calib" / f"{frame}.txt"


def _perturb_frame(args):
    root, out_root, suite, frame = args
    try:
        velo, label, calib = _frame_paths(root, frame)
        cloud = read_pointcloud(velo)
        labels = read_labels(label)
        cal = read_calibration(calib)
        entries = {}
        for variant, (spec, outcome) in zip(suite.variants, build_suite(cloud, labels, cal, suite)):
            dest = Path(out_root) / variant.name
            dest.mkdir(parents=True, exist_ok=True)
            write_pointcloud(outcome.cloud, dest / f"{frame}.bin")
            entries[variant.name] = {"seed": spec.seed, **outcome.summary()}
        return frame, entries, None
    except (SorbetError, OSError) as exc:
        return frame, None, {"frame": frame, "error": type(exc).__name__, "message": str(exc)}


@dataclass
class PerturbResult:
    manifest: dict
    errors: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _manifest_text(manifest: dict) -> str:
    return json.dumps(manifest, indent=1, sort_keys=True) + "\n"


def cmd_perturb(config: RunConfig, frames: Sequence[str] | None = None, workers: int | None = None) -> PerturbResult:
    """Write every suite variant of every selected frame, resuming from the manifest."""
    out_root = Path(config.output_root)
    out_root.mkdir(parents=True, exist_ok=True)
    frames = sorted(set(frames)) if frames else dataset_frames(config.dataset_root)
    suite_doc = config.suite.to_dict()
    suite_doc["specs"] = {v.name: {k: val for k, val in v.spec(0, "").to_dict().items() if k != "seed"} for v in config.suite.variants}
    manifest = {"suite": suite_doc, "frames": {}, "errors": []}

    mpath = out_root / MANIFEST
    if mpath.exists():
        try:
            old = json.loads(mpath.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            old = None
        if old and old.get("suite") == suite_doc:
            manifest["frames"] = old.get("frames", {})

    names = [v.name for v in config.suite.variants]
    todo, skipped = [], []
    for f in frames:
        done = manifest["frames"].get(f)
        if done and set(done) == set(names) and all((out_root / n / f"{f}.bin").exists() for n in names):
            skipped.append(f)
        else:
            todo.append(f)

    jobs = [(config.dataset_root, out_root, config.suite, f) for f in todo]
    n_workers = workers or config.workers
    errors = []

    def collect(results):
        for frame, entries, err in results:
            if err:
                log.warning("frame %s failed: %s", frame, err["message"])
                errors.append(err)
            else:
                manifest["frames"][frame] = entries
            manifest["errors"] = sorted(errors, key=lambda e: e["frame"])
            atomic_write_text(mpath, _manifest_text(manifest))

    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            collect(pool.map(_perturb_frame, jobs))
    else:
        collect(map(_perturb_frame, jobs))
    if not jobs:
        atomic_write_text(mpath, _manifest_text(manifest))
    return PerturbResult(manifest, errors, skipped)


# ---------------------------------------------------------------------------
# mock detection


def load_ground_truth(root: Path, frames: Sequence[str] | None = None) -> dict[str, list[GroundTruthObject]]:
    root = Path(root)
    if not frames:
        frames = sorted(p.stem for p in (root / "label_2").glob("*.txt"))
    out = {}
    for f in frames:
        _, label, calib = _frame_paths(root, f)
        out[f] = ground_truth_objects(read_labels(label), read_calibration(calib), f)
    return out


def cmd_mock_detect(config: RunConfig, cloud_dir: Path, out_path: Path, min_points: int = 20, frames=None) -> int:
    """Run :class:`MockDetector` on every cloud in ``cloud_dir``; returns the record count."""
    gts = load_ground_truth(config.dataset_root, frames)
    det = MockDetector(min_points=min_points)
    records = []
    for f in sorted(gts):
        path = Path(cloud_dir) / f"{f}.bin"
        if path.exists():
            records += det.detect(read_pointcloud(path), gts[f])
    write_detections(records, out_path)
    return len(records)


# ---------------------------------------------------------------------------
# evaluate


def _group_by_frame(dets, known: set, source) -> dict:
    out = {}
    for d in dets:
        if d.frame_id not in known:
            raise FrameMismatch(f"{source}: frame {d.frame_id!r} has no ground truth")
        out.setdefault(d.frame_id, []).append(d)
    return out


def variant_name(path) -> str:
    name = Path(path).name
    for suffix in (".jsonl", ".json", ".csv"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


def evaluate(
    gts: dict[str, list[GroundTruthObject]],
    baseline_dets,
    perturbed: dict[str, list],
    thresholds: Thresholds = Thresholds(),
):
    """Reports and plot rows for every perturbed variant against the baseline.

    ``perturbed`` maps variant name to its detection records.
    """
    known = set(gts)
    detect = thresholds.detect_map()

    def match_all(dets, source):
        by_frame = _group_by_frame(dets, known, source)
        out = []
        for f in sorted(gts):
            out += match_to_ground_truth(gts[f], by_frame.get(f, []), thresholds.match_iou, detect)
        return out

    base = match_all(baseline_dets, "baseline")
    reports, plot_rows = [], []
    for name in sorted(perturbed):
        pert = match_all(perturbed[name], name)
        rep, records = summarize(name, base, pert, thresholds.ldc)
        siou = signed_iou_deviation(base, pert)
        reports.append(rep)
        plot_rows += [(name, r, siou[(r.frame_id, r.gt_id)]) for r in records]
    return reports, plot_rows


def cmd_evaluate(
    config: RunConfig,
    baseline_path,
    perturbed_paths: Sequence,
    out_dir=None,
    frames=None,
) -> list[RobustnessReport]:
    out_dir = Path(out_dir or config.output_root)
    out_dir.mkdir(parents=True, exist_ok=True)
    gts = load_ground_truth(config.dataset_root, frames)
    perturbed = {}
    for p in sorted(perturbed_paths, key=str):
        name = variant_name(p)
        if name in perturbed:
            raise SchemaError(f"duplicate variant name {name!r}")
        perturbed[name] = read_detections(p)
    reports, plot_rows = evaluate(gts, read_detections(baseline_path), perturbed, config.thresholds)
    atomic_write_text(out_dir / "report.json", report_json(reports))
    atomic_write_text(out_dir / "report.csv", report_csv(reports))
    atomic_write_text(out_dir / "plot_data.csv", plot_data_csv(plot_rows))
    return reports


# ---------------------------------------------------------------------------
# cascade


def read_deviations(path, max_range: float, variant: str | None = None) -> tuple[list[float], list[float]]:
    """Signed (x, y) deviations from a plot-data CSV, within ``max_range`` of the ego."""
    fieldnames, rows = _csv_rows(_read_text(path))
    need = {"x_deviation", "y_deviation", "obstacle_range"}
    if fieldnames is None or need - set(fieldnames):
        raise SchemaError(f"{path}: deviation CSV needs columns {sorted(need)}")
    xs, ys = [], []
    for lineno, row in enumerate(rows, 2):
        if variant and row.get("variant") != variant:
            continue
        try:
            rng = float(row["obstacle_range"])
            x, y = float(row["x_deviation"]), float(row["y_deviation"])
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path} line {lineno}: {exc}") from exc
        if rng <= max_range:
            xs.append(x)
            ys.append(y)
    return xs, ys


def cmd_cascade(
    config_or_range,
    tracks_path,
    deviations_path,
    patterns: Sequence[PerturbationPattern],
    out_path=None,
    horizon: float = 1.0,
    dt: float = 0.1,
    variant: str | None = None,
) -> CascadeTable:
    max_range = config_or_range.range_filter if isinstance(config_or_range, RunConfig) else float(config_or_range)
    xs, ys = read_deviations(deviations_path, max_range, variant)
    if not xs:
        raise EmptyInput(f"no deviations within {max_range} m")
    stats, _ = stat_points(xs, ys)
    table = run_cascade(read_tracks(tracks_path), stats, patterns, predict_constant_velocity, horizon, dt)
    if out_path is not None:
        atomic_write_text(out_path, table.to_csv())
    return table


def cmd_report(report_path, fmt: str = "csv") -> str:
    reports = reports_from_json(_read_text(report_path))
    if fmt == "csv":
        return report_csv(reports)
    if fmt == "json":
        return report_json(reports)
    raise ValueError(f"unknown format {fmt!r}")
