"""Deterministic stand-in detector for exercising the pipeline without a DNN.

For every ground-truth obstacle the detector collects the points inside the
obstacle's box, fits the tightest box with the obstacle's heading around
them, and reports it when at least ``min_points`` points were found.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Box3D, points_in_box_mask
from .metrics import GroundTruthObject
from .pcd_io import DetectionRecord, PointCloud

MIN_EXTENT = 1e-3


@dataclass(frozen=True)
class MockDetector:
    min_points: int = 20
    # score saturates at this many points
    full_score_points: int = 200

    def fit_box(self, xyz: np.ndarray, heading: float) -> Box3D:
        c, s = math.cos(heading), math.sin(heading)
        local_x = xyz[:, 0] * c + xyz[:, 1] * s
        local_y = -xyz[:, 0] * s + xyz[:, 1] * c
        lo = np.array([local_x.min(), local_y.min(), xyz[:, 2].min()])
        hi = np.array([local_x.max(), local_y.max(), xyz[:, 2].max()])
        mid = (lo + hi) / 2
        ext = np.maximum(hi - lo, MIN_EXTENT)
        cx = mid[0] * c - mid[1] * s
        cy = mid[0] * s + mid[1] * c
        return Box3D(cx, cy, mid[2], ext[0], ext[1], ext[2], heading)

    def detect(self, cloud: PointCloud, gts: Sequence[GroundTruthObject]) -> list[DetectionRecord]:
        out = []
        for g in gts:
            mask = points_in_box_mask(cloud, g.box)
            n = int(mask.sum())
            if n < self.min_points:
                continue
            box = self.fit_box(cloud.xyz[mask], g.box.yaw)
            score = min(1.0, n / self.full_score_points)
            out.append(DetectionRecord(cloud.frame_id, box, g.cls, score))
        return out
