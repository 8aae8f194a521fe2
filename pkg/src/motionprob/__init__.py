"""Per-pixel motion probability for RGB-D sequences with static-background
counterparts, plus probability-weighted pose optimization and trajectory
evaluation."""

from .ba import (
    BAProblem,
    DegenerateProblemError,
    SelectionParams,
    SolverConfig,
    TrackedPoint,
    cull_map_points,
    residual_jacobians,
    select_map_points,
    solve_weighted_ba,
    weighted_residuals,
)
from .evaluation import (
    EvalReport,
    Trajectory,
    align_umeyama,
    associate_trajectories,
    ate_rmse,
    evaluate,
    tracking_rate,
)
from .geometry import (
    BehindCameraError,
    DepthMap,
    FrameBundle,
    GeometryError,
    ImageBuffer,
    Intrinsics,
    InvalidDepthError,
    Point3,
    PoseSE3,
    ProbabilityMap,
    backproject,
    project,
    se3_exp,
    se3_log,
    transform,
)
from .motion import (
    BlockMatchingFlow,
    FlowField,
    FusionParams,
    MotionGrid,
    PrecomputedFlow,
    block_matching_flow,
    differenced_motion,
    final_probability,
    flow_magnitude,
    temporal_average,
)
from .movable import (
    DiffChannels,
    MovableParams,
    background_difference,
    blend_weight,
    clip_normalize,
    minmax_normalize,
    movable_probability,
)
from .pipeline import PipelineParams, estimate_frame, estimate_sequence, relative_pose
from .splatting import (
    SplattedFrame,
    homography_warp,
    plane_induced_homography,
    reproject_coords,
    softmax_splat,
    splat_frame,
)
from .synthetic import SyntheticScene, desk_scene, render_synthetic_sequence

__version__ = "0.1.0"
