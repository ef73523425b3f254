"""Subtle LiDAR perturbations, detection robustness metrics and their
cascade into trajectory prediction."""

from .errors import (
    EmptyInput,
    FormatError,
    FrameMismatch,
    InsufficientHistory,
    LengthMismatch,
    PatternOutOfRange,
    PcdIOError,
    SchemaError,
    SingularTransform,
    SorbetError,
    ValidationError,
)
from .geometry import Box3D, box_corners, camera_box_to_lidar, iou_3d, lidar_box_to_camera, points_in_box
from .pcd_io import (
    Calibration,
    DetectionRecord,
    GroundTruthLabel,
    ObjectClass,
    PointCloud,
    Track,
    read_calibration,
    read_detections,
    read_labels,
    read_pointcloud,
    read_tracks,
    write_detections,
    write_pointcloud,
    write_tracks,
)
from .perturb import (
    DEFAULT_PROFILE,
    Direction,
    DistancePrecisionProfile,
    Distribution,
    Kind,
    PerturbationOutcome,
    PerturbationSpec,
    Scope,
    SuiteConfig,
    apply_perturbation,
    build_suite,
    default_suite,
    perturb_distance_amplified,
    perturb_false_positive,
    perturb_range_directional,
    perturb_range_global,
    perturb_range_local,
    perturb_reflectivity,
    sample_offset,
)
from .metrics import (
    DeviationRecord,
    MatchedDetection,
    RobustnessReport,
    compute_deviations,
    count_diff,
    deviation_quartiles,
    large_deviation_count,
    match_to_ground_truth,
    median_of_large,
)
from .cascade import (
    DisplacementScores,
    PerturbationPattern,
    PredictedTrajectory,
    apply_pattern,
    displacement_scores,
    predict_constant_velocity,
    run_cascade,
)
from .mock_detector import MockDetector

__version__ = "0.1.0"
