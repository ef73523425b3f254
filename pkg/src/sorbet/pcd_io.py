"""Readers and writers for KITTI-style point clouds, calibration, labels,
detection results and track histories.

Point clouds are raw little-endian float32 quadruples (x, y, z, intensity)
without a header, exactly like KITTI's ``velodyne/*.bin``.
"""
from __future__ import annotations

import csv
import enum
import functools
import io
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, PcdIOError, SchemaError, ValidationError
from .geometry import Box3D

POINT_DTYPE = np.dtype("<f4")
BYTES_PER_POINT = 16
ORTHONORMAL_TOL = 1e-4


class ObjectClass(str, enum.Enum):
    CAR = "Car"
    PEDESTRIAN = "Pedestrian"
    CYCLIST = "Cyclist"
    MISC = "Misc"
    DONTCARE = "DontCare"

    @classmethod
    def parse(cls, name: str) -> "ObjectClass":
        try:
            return cls(name)
        except ValueError:
            pass
        if name in _KITTI_AS_MISC:
            return cls.MISC
        raise FormatError(f"unknown object class {name!r}")


# KITTI label types that have no class of their own here.
_KITTI_AS_MISC = {"Van", "Truck", "Tram", "Person_sitting"}


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points of (x, y, z, intensity) stored as an (N, 4) float32 array."""

    points: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValidationError(f"points must have shape (N, 4), got {pts.shape}")
        pts = np.array(pts, dtype=np.float32, order="C", copy=True)
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point coordinates must be finite")
        object.__setattr__(self, "points", _readonly(pts))

    def __len__(self) -> int:
        return len(self.points)

    @functools.cached_property
    def xyz(self) -> np.ndarray:
        """Coordinates as float64, computed once."""
        return _readonly(self.points[:, :3].astype(np.float64))

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def to_bytes(self) -> bytes:
        return self.points.astype(POINT_DTYPE, copy=False).tobytes()


def pointcloud_from_bytes(data: bytes, frame_id: str = "") -> PointCloud:
    if len(data) % BYTES_PER_POINT:
        raise FormatError(f"point cloud byte length {len(data)} is not a multiple of {BYTES_PER_POINT}")
    pts = np.frombuffer(data, dtype=POINT_DTYPE).reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        raise FormatError("point cloud contains non-finite values")
    return PointCloud(pts, frame_id)


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise PcdIOError(f"cannot read {path}: {exc}") from exc


def _read_text(path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path} is not UTF-8 text") from exc
    except OSError as exc:
        raise PcdIOError(f"cannot read {path}: {exc}") from exc


def read_pointcloud(path) -> PointCloud:
    """Read a KITTI velodyne ``.bin``; the frame id is the file stem."""
    return pointcloud_from_bytes(_read_bytes(path), Path(path).stem)


def write_pointcloud(cloud: PointCloud, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(cloud.to_bytes())
    except OSError as exc:
        raise PcdIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# calibration


def _check_orthonormal(rot: np.ndarray, name: str) -> None:
    err = np.abs(rot @ rot.T - np.eye(3)).max()
    if not err <= ORTHONORMAL_TOL:
        raise ValidationError(f"{name} is not orthonormal (max deviation {err:.3g})")


@dataclass(frozen=True, eq=False)
class Calibration:
    cam_projection: np.ndarray  # P2, 3x4
    rect_rotation: np.ndarray  # R0_rect, 3x3
    velo_to_cam: np.ndarray  # Tr_velo_to_cam, 3x4

    def __post_init__(self):
        for name, shape in (("cam_projection", (3, 4)), ("rect_rotation", (3, 3)), ("velo_to_cam", (3, 4))):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise FormatError(f"{name} must be {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"{name} has non-finite entries")
            object.__setattr__(self, name, _readonly(arr))
        _check_orthonormal(self.rect_rotation, "R0_rect")
        _check_orthonormal(self.velo_to_cam[:, :3], "Tr_velo_to_cam rotation")

    @classmethod
    def canonical(cls, translation=(0.0, 0.0, 0.0)) -> "Calibration":
        """Calibration whose only content is the LiDAR->camera axis permutation.

        cam x = -lidar y, cam y = -lidar z, cam z = lidar x.
        """
        tr = np.zeros((3, 4))
        tr[:, :3] = [[0, -1, 0], [0, 0, -1], [1, 0, 0]]
        tr[:, 3] = translation
        p2 = np.hstack([np.eye(3), np.zeros((3, 1))])
        return cls(p2, np.eye(3), tr)

    def to_text(self) -> str:
        def fmt(arr):
            return " ".join(repr(float(v)) for v in np.asarray(arr).ravel())

        return (
            f"P2: {fmt(self.cam_projection)}\n"
            f"R0_rect: {fmt(self.rect_rotation)}\n"
            f"Tr_velo_to_cam: {fmt(self.velo_to_cam)}\n"
        )


_CALIB_KEYS = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def parse_calibration(text: str) -> Calibration:
    entries: dict[str, list[float]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise FormatError(f"calibration line {lineno} has no 'KEY:' prefix")
        try:
            entries[key.strip()] = [float(tok) for tok in rest.split()]
        except ValueError as exc:
            raise FormatError(f"calibration line {lineno}: {exc}") from exc
    mats = {}
    for key, shape in _CALIB_KEYS.items():
        if key not in entries:
            raise FormatError(f"calibration is missing key {key}")
        vals = entries[key]
        if len(vals) != shape[0] * shape[1]:
            raise FormatError(f"{key} needs {shape[0] * shape[1]} values, got {len(vals)}")
        mats[key] = np.array(vals).reshape(shape)
    return Calibration(mats["P2"], mats["R0_rect"], mats["Tr_velo_to_cam"])


def read_calibration(path) -> Calibration:
    return parse_calibration(_read_text(path))


# ---------------------------------------------------------------------------
# labels


@dataclass(frozen=True)
class GroundTruthLabel:
    """One KITTI object label.  ``gt_id`` is the zero-based line index."""

    gt_id: int
    cls: ObjectClass
    h: float
    w: float
    l: float
    location: tuple[float, float, float]
    rotation_y: float
    truncation: float = 0.0
    occlusion: int = 0
    alpha: float = 0.0
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    type_name: str = ""

    def __post_init__(self):
        if self.cls is not ObjectClass.DONTCARE and not (self.h > 0 and self.w > 0 and self.l > 0):
            raise ValidationError(f"label {self.gt_id}: dimensions must be positive")
        if not self.type_name:
            object.__setattr__(self, "type_name", self.cls.value)

    @property
    def is_target(self) -> bool:
        """True for labels that may be perturbed and matched."""
        return self.cls is not ObjectClass.DONTCARE


def parse_label_line(line: str, gt_id: int) -> GroundTruthLabel:
    fields = line.split()
    if len(fields) != 15:
        raise FormatError(f"label line {gt_id} has {len(fields)} fields, expected 15")
    try:
        nums = [float(tok) for tok in fields[1:]]
    except ValueError as exc:
        raise FormatError(f"label line {gt_id}: {exc}") from exc
    if not all(math.isfinite(v) for v in nums):
        raise FormatError(f"label line {gt_id} has non-finite numbers")
    trunc, occ, alpha = nums[0], nums[1], nums[2]
    bbox = tuple(nums[3:7])
    h, w, l = nums[7:10]
    loc = tuple(nums[10:13])
    ry = nums[13]
    return GroundTruthLabel(
        gt_id=gt_id,
        cls=ObjectClass.parse(fields[0]),
        h=h,
        w=w,
        l=l,
        location=loc,
        rotation_y=ry,
        truncation=trunc,
        occlusion=int(occ),
        alpha=alpha,
        bbox=bbox,
        type_name=fields[0],
    )


def parse_labels(text: str) -> list[GroundTruthLabel]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    return [parse_label_line(ln, i) for i, ln in enumerate(lines)]


def read_labels(path) -> list[GroundTruthLabel]:
    return parse_labels(_read_text(path))


def format_label(label: GroundTruthLabel) -> str:
    vals = [
        label.truncation,
        label.occlusion,
        label.alpha,
        *label.bbox,
        label.h,
        label.w,
        label.l,
        *label.location,
        label.rotation_y,
    ]
    return " ".join([label.type_name] + [repr(float(v)) if i != 1 else str(int(v)) for i, v in enumerate(vals)])


# ---------------------------------------------------------------------------
# detections


@dataclass(frozen=True)
class DetectionRecord:
    frame_id: str
    box: Box3D
    cls: ObjectClass
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"detection score {self.score} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(
            {"frame": self.frame_id, "class": self.cls.value, "score": self.score, "box": self.box.to_dict()},
            sort_keys=True,
        )


_BOX_KEYS = ("cx", "cy", "cz", "l", "w", "h", "yaw")


def _detection_from_mapping(rec: dict, where: str) -> DetectionRecord:
    try:
        frame = rec["frame"]
        cls_name = rec["class"]
        score = rec["score"]
        box = rec["box"]
        coords = [box[k] for k in _BOX_KEYS]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{where}: missing field {exc}") from exc
    if not isinstance(frame, str) or not isinstance(cls_name, str):
        raise SchemaError(f"{where}: 'frame' and 'class' must be strings")
    try:
        score = float(score)
        coords = [float(v) for v in coords]
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}") from exc
    return DetectionRecord(frame, Box3D(*coords), ObjectClass.parse(cls_name), score)


def _csv_rows(text: str) -> tuple[list[str] | None, list[dict]]:
    reader = csv.DictReader(io.StringIO(text, newline=""))
    try:
        return reader.fieldnames, list(reader)
    except csv.Error as exc:
        raise FormatError(f"malformed CSV: {exc}") from exc


def parse_detections(text: str, fmt: str | None = None) -> list[DetectionRecord]:
    """Parse line-delimited JSON (default) or CSV detection records."""
    if fmt is None:
        stripped = text.lstrip()
        fmt = "jsonl" if not stripped or stripped.startswith("{") else "csv"
    out = []
    if fmt == "jsonl":
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {lineno}: {exc}") from exc
            if not isinstance(rec, dict):
                raise SchemaError(f"line {lineno}: expected a JSON object")
            out.append(_detection_from_mapping(rec, f"line {lineno}"))
    elif fmt == "csv":
        for lineno, row in enumerate(_csv_rows(text)[1], 2):
            rec = {"frame": row.get("frame"), "class": row.get("class"), "score": row.get("score"),
                   "box": {k: row.get(k) for k in _BOX_KEYS}}
            if any(v is None for v in (rec["frame"], rec["class"], rec["score"], *rec["box"].values())):
                raise SchemaError(f"line {lineno}: missing column")
            out.append(_detection_from_mapping(rec, f"line {lineno}"))
    else:
        raise ValueError(f"unknown detection format {fmt!r}")
    return out


def read_detections(path) -> list[DetectionRecord]:
    fmt = "csv" if str(path).endswith(".csv") else None
    return parse_detections(_read_text(path), fmt)


def write_detections(records: Iterable[DetectionRecord], path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(rec.to_json() + "\n")
    except OSError as exc:
        raise PcdIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# tracks


@dataclass(frozen=True, eq=False)
class Track:
    """Position history of one obstacle; ``samples`` is an (n, 3) array of t, x, y."""

    obstacle_id: int
    samples: np.ndarray
    cls: ObjectClass | None = None

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(s)):
            raise ValidationError(f"track {self.obstacle_id} has non-finite samples")
        if np.any(np.diff(s[:, 0]) <= 0):
            raise ValidationError(f"track {self.obstacle_id} timestamps are not strictly increasing")
        object.__setattr__(self, "samples", _readonly(s))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def t(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def xy(self) -> np.ndarray:
        return self.samples[:, 1:]


def parse_tracks(text: str) -> list[Track]:
    fieldnames, records = _csv_rows(text)
    if fieldnames is None:
        return []
    missing = {"obstacle_id", "t", "x", "y"} - set(fieldnames)
    if missing:
        raise SchemaError(f"track CSV is missing columns {sorted(missing)}")
    rows: dict[int, list] = {}
    classes: dict[int, ObjectClass | None] = {}
    for lineno, row in enumerate(records, 2):
        try:
            oid = int(row["obstacle_id"])
            sample = (float(row["t"]), float(row["x"]), float(row["y"]))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"track CSV line {lineno}: {exc}") from exc
        rows.setdefault(oid, []).append(sample)
        cls_name = row.get("class")
        classes.setdefault(oid, ObjectClass.parse(cls_name) if cls_name else None)
    return [Track(oid, samples, classes[oid]) for oid, samples in rows.items()]


def read_tracks(path) -> list[Track]:
    return parse_tracks(_read_text(path))


def format_tracks(tracks: Sequence[Track]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["obstacle_id", "t", "x", "y"])
    for tr in tracks:
        for t, x, y in tr.samples:
            writer.writerow([tr.obstacle_id, repr(float(t)), repr(float(x)), repr(float(y))])
    return buf.getvalue()


def write_tracks(tracks: Sequence[Track], path) -> None:
    try:
        Path(path).write_text(format_tracks(tracks), encoding="utf-8")
    except OSError as exc:
        raise PcdIOError(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise PcdIOError(f"cannot write {path}: {exc}") from exc
