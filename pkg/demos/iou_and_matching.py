"""Rotated 3D IoU and greedy ground-truth matching, step by step.

Run with ``python3 demos/iou_and_matching.py``.
"""
import math

from sorbet.geometry import Box3D, iou_3d
from sorbet.metrics import GroundTruthObject, match_to_ground_truth
from sorbet.pcd_io import DetectionRecord, ObjectClass

car = Box3D(10.0, 0.0, -0.8, 4.0, 1.8, 1.5, 0.0)

# Sliding a copy along its length: IoU falls linearly in the overlap.
print("shift along x   IoU")
for dx in (0.0, 0.5, 1.0, 2.0, 4.0):
    shifted = Box3D(car.cx + dx, car.cy, car.cz, car.l, car.w, car.h, car.yaw)
    print(f"{dx:11.1f}   {iou_3d(car, shifted):.4f}")

# Spinning it in place: the footprints stop coinciding.
print("\nyaw (deg)   IoU")
for deg in (0, 10, 30, 60, 90):
    spun = Box3D(car.cx, car.cy, car.cz, car.l, car.w, car.h, math.radians(deg))
    print(f"{deg:9d}   {iou_3d(car, spun):.4f}")

# Two cars side by side and three detections.  The tight detection of the
# first car wins it; the duplicate falls to the second car only if it
# overlaps it by at least 0.25.
gts = [
    GroundTruthObject(0, ObjectClass.CAR, car, "demo"),
    GroundTruthObject(1, ObjectClass.CAR, Box3D(10.0, 2.2, -0.8, 4.0, 1.8, 1.5, 0.0), "demo"),
]
dets = [
    DetectionRecord("demo", Box3D(10.1, 0.05, -0.8, 4.0, 1.8, 1.5, 0.02), ObjectClass.CAR, 0.9),
    DetectionRecord("demo", Box3D(10.3, 1.0, -0.8, 4.0, 1.8, 1.5, 0.0), ObjectClass.CAR, 0.6),
    DetectionRecord("demo", Box3D(30.0, 5.0, -0.8, 4.0, 1.8, 1.5, 0.0), ObjectClass.CAR, 0.8),
]
print("\nIoU matrix (rows: ground truth, columns: detections)")
for g in gts:
    print("  " + "  ".join(f"{iou_3d(g.box, d.box):.3f}" for d in dets))

print("\nmatches")
for m in match_to_ground_truth(gts, dets):
    print(f"  gt {m.gt_id} <- det {m.det_index}  IoU {m.iou_with_gt:.3f}  detected={m.detected}")
# The car at x=30 overlaps nothing and stays unmatched.
