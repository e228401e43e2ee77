"""Stereo-video fish measurement: geometry, calibration, pairing, measurement,
tracking, and fusion, with a synthetic ground-truth harness and a CLI."""

from .assignment import Matching, WeightMatrix, solve_max_weight
from .calibration import (
    CalibrationResult,
    CornerObservationSet,
    RectificationPair,
    calibrate,
    compute_rectification,
    rectified_cameras,
    rectify_point,
    refine_calibration,
)
from .errors import StereoFishError
from .geometry import (
    CameraModel,
    DistortionCoefficients,
    Intrinsics,
    PixelPoint,
    RigidTransform,
    StereoRig,
    WorldPoint,
    epipolar_gate,
    project,
    triangulate,
    undistort_point,
)
from .fusion import FusedFishRecord, SpeciesBelief, StereoTrack, accumulate_belief, associate_tracks, finalize
from .measurement import (
    BinaryMask,
    ExtremePointSet,
    FishMeasurement,
    correspond_extremes,
    mask_pca,
    measure_pair,
)
from .pairing import (
    BoundingBox,
    DetectionRecord,
    FramePairing,
    PairedDetection,
    cosine_similarity,
    pair_frame,
)
from .pipeline import PipelineConfig, run_pipeline, simulate_to_files
from .synthetic import (
    ScenarioConfig,
    SyntheticFish,
    brute_force_assignment,
    generate_checkerboard_observations,
    generate_scenario,
    render_fish_frame,
)
from .tracking import KalmanState, Tracker, TrackerConfig, TrackHypothesis, iou

__version__ = "0.1.0"
