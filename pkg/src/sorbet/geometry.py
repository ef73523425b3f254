"""Oriented 3D boxes, camera/LiDAR frame conversion, point membership and 3D IoU.

Boxes live in the LiDAR frame: x forward, y left, z up.  ``yaw`` rotates the
box's length axis about +z.  Camera-frame boxes follow the KITTI object-label
convention: ``location`` is the bottom-face center in rectified camera
coordinates (y points down) and ``rotation_y`` rotates about camera y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import SingularTransform, ValidationError

if TYPE_CHECKING:
    from .pcd_io import Calibration, GroundTruthLabel

#: Intersections with a smaller footprint area (m^2) count as empty.
AREA_EPS = 1e-12

#: Local-frame corner signs.  Bottom face (z = -h/2) first, counter-clockwise
#: seen from above starting at the front-left corner; the top face repeats the
#: same order.
_CORNER_SIGNS = np.array(
    [
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, 1],
        [-1, 1, 1],
        [-1, -1, 1],
        [1, -1, 1],
    ],
    dtype=np.float64,
)


def normalize_angle(angle: float) -> float:
    """Wrap ``angle`` into (-pi, pi]."""
    wrapped = math.pi - math.fmod(math.pi - angle, 2 * math.pi)
    if wrapped > math.pi:
        wrapped -= 2 * math.pi
    elif wrapped <= -math.pi:
        wrapped += 2 * math.pi
    return wrapped


@dataclass(frozen=True)
class Box3D:
    """Oriented box in the LiDAR frame, centered at its geometric center."""

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw)
        for name, v in zip(("cx", "cy", "cz", "l", "w", "h", "yaw"), vals):
            if not math.isfinite(v):
                raise ValidationError(f"Box3D.{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValidationError(f"Box3D dims must be positive, got {(self.l, self.w, self.h)}")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.l, self.w, self.h])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def planar_range(self) -> float:
        """Distance of the center from the sensor origin in the ground plane."""
        return math.hypot(self.cx, self.cy)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw)

    def to_dict(self) -> dict[str, float]:
        return dict(zip(("cx", "cy", "cz", "l", "w", "h", "yaw"), self.as_tuple()))


def box_corners(box: Box3D) -> np.ndarray:
    """Return the 8 corners of ``box`` as an (8, 3) array.

    Order: bottom face counter-clockwise from the (+l/2, +w/2) corner, then
    the top face in the same order.
    """
    local = _CORNER_SIGNS * (0.5 * box.dims)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def footprint(box: Box3D) -> np.ndarray:
    """Counter-clockwise (4, 2) ground-plane polygon of ``box``."""
    return box_corners(box)[:4, :2]


def _as_xyz(points) -> np.ndarray:
    xyz = getattr(points, "xyz", None)
    if xyz is None:
        xyz = np.asarray(points, dtype=np.float64)[:, :3]
    return xyz


def points_in_box_mask(points, box: Box3D) -> np.ndarray:
    """Boolean membership mask of ``points`` (cloud or (N, >=3) array) in ``box``.

    The box is closed: points exactly on a face are inside.
    """
    xyz = _as_xyz(points)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = xyz[:, 0] - box.cx
    dy = xyz[:, 1] - box.cy
    dz = xyz[:, 2] - box.cz
    mask = np.abs(dz) <= 0.5 * box.h
    # local coords after rotating by -yaw
    mask &= np.abs(c * dx + s * dy) <= 0.5 * box.l
    mask &= np.abs(-s * dx + c * dy) <= 0.5 * box.w
    return mask


def points_in_box(cloud, box: Box3D) -> np.ndarray:
    """Sorted indices of the points of ``cloud`` inside ``box``."""
    return np.flatnonzero(points_in_box_mask(cloud, box))


# ---------------------------------------------------------------------------
# camera <-> LiDAR


def _homogeneous(mat: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[: mat.shape[0], : mat.shape[1]] = mat
    return out


def velo_to_rect(calib: Calibration) -> np.ndarray:
    """4x4 transform taking LiDAR points to rectified camera coordinates."""
    return _homogeneous(calib.rect_rotation) @ _homogeneous(calib.velo_to_cam)


def rect_to_velo(calib: Calibration) -> np.ndarray:
    fwd = velo_to_rect(calib)
    if not np.all(np.isfinite(fwd)) or np.linalg.cond(fwd[:3, :3]) > 1e8:
        raise SingularTransform("camera-to-LiDAR transform is not invertible")
    # invert the rotation numerically: printed calibrations are only orthonormal to ~1e-6
    rot, trans = fwd[:3, :3], fwd[:3, 3]
    inv = np.eye(4)
    inv[:3, :3] = np.linalg.inv(rot)
    inv[:3, 3] = -inv[:3, :3] @ trans
    return inv


def camera_box_corners(dims_hwl, location, rotation_y: float) -> np.ndarray:
    """Corners of a KITTI camera-frame box, (8, 3) in rectified camera coords.

    The order matches :func:`box_corners` once the box is expressed in the
    LiDAR frame with the canonical axis permutation.
    """
    h, w, l = dims_hwl
    # box-local axes: length -> cam x, left (up x length) -> cam +z, up -> cam -y;
    # bottom face sits at cam y = 0
    signs = _CORNER_SIGNS
    x = signs[:, 0] * l / 2
    z = signs[:, 1] * w / 2
    y = -(signs[:, 2] + 1) * h / 2
    c, s = math.cos(rotation_y), math.sin(rotation_y)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.stack([x, y, z], axis=1) @ rot.T + np.asarray(location, dtype=np.float64)


def camera_to_lidar_box(dims_hwl, location, rotation_y: float, calib: Calibration) -> Box3D:
    """Convert raw KITTI camera-frame box parameters to a LiDAR :class:`Box3D`.

    The geometric center is mapped through the full inverse transform.  Yaw is
    the heading of the box's length axis projected onto the LiDAR ground
    plane, so the result is exact whenever the calibration maps camera "up"
    onto LiDAR +z.
    """
    h, w, l = (float(v) for v in dims_hwl)
    inv = rect_to_velo(calib)
    center_cam = np.asarray(location, dtype=np.float64) + np.array([0.0, -h / 2, 0.0])
    center = inv[:3, :3] @ center_cam + inv[:3, 3]
    heading_cam = np.array([math.cos(rotation_y), 0.0, -math.sin(rotation_y)])
    heading = inv[:3, :3] @ heading_cam
    yaw = math.atan2(heading[1], heading[0])
    return Box3D(center[0], center[1], center[2], l, w, h, yaw)


def camera_box_to_lidar(label: GroundTruthLabel, calib: Calibration) -> Box3D:
    """LiDAR-frame box of a ground-truth label, via the calibration."""
    return camera_to_lidar_box((label.h, label.w, label.l), label.location, label.rotation_y, calib)


def lidar_box_to_camera(box: Box3D, calib: Calibration) -> tuple[tuple[float, float, float], tuple[float, float, float], float]:
    """Inverse of :func:`camera_to_lidar_box`.

    Returns ``((h, w, l), location, rotation_y)`` in KITTI camera convention.
    """
    fwd = velo_to_rect(calib)
    center_cam = fwd[:3, :3] @ box.center + fwd[:3, 3]
    location = center_cam + np.array([0.0, box.h / 2, 0.0])
    heading = fwd[:3, :3] @ np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0])
    rotation_y = normalize_angle(math.atan2(-heading[2], heading[0]))
    return (box.h, box.w, box.l), tuple(float(v) for v in location), rotation_y


# ---------------------------------------------------------------------------
# IoU


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon given as (n, 2); sign dropped."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by the convex CCW polygon ``clip``.

    Returns the (possibly empty) intersection polygon as an (m, 2) array.
    """
    output = [tuple(p) for p in subject]
    scale = max(1.0, float(np.abs(clip).max()), float(np.abs(subject).max()))
    tol = 1e-12 * scale * scale
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i - 1]
        bx, by = clip[i]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        prev_side = side(prev)
        for cur in inputs:
            cur_side = side(cur)
            if cur_side >= -tol:
                if prev_side < -tol:
                    output.append(_intersect(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= -tol:
                output.append(_intersect(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_volume(a: Box3D, b: Box3D) -> float:
    bottom = max(a.cz - a.h / 2, b.cz - b.h / 2)
    top = min(a.cz + a.h / 2, b.cz + b.h / 2)
    height = top - bottom
    if height <= 0:
        return 0.0
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb:
        return 0.0
    area = polygon_area(clip_convex(footprint(a), footprint(b)))
    if area < AREA_EPS:
        return 0.0
    return area * height


def iou_3d(a: Box3D, b: Box3D) -> float:
    """3D intersection-over-union of two oriented boxes, in [0, 1].

    Symmetric bit-for-bit: the pair is put in a canonical order before
    clipping.
    """
    ta, tb = a.as_tuple(), b.as_tuple()
    if ta == tb:
        return 1.0
    if tb < ta:
        a, b = b, a
    inter = intersection_volume(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union))


def iou_matrix(boxes_a: Sequence[Box3D], boxes_b: Sequence[Box3D]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou_3d(a, b)
    return out
