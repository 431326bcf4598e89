"""Learning coordinated two-arm motions from demonstrations.

The library represents each arm's skill as a task-parameterized Gaussian
mixture whose frames include the partner arm as a dynamic observation
perspective, fuses frame-local experts by Gaussian products for new task
parameters, and turns time-conditioned references into smooth trajectories
with batch linear quadratic tracking (optionally coupled across arms).

All public types are immutable after construction and safe to share between
threads; fitting and generation are deterministic for fixed seeds.
"""

from .dataset import DemoSet, Pose, Trajectory
from .em import EmConfig, em_fit
from .frames import (
    Frame,
    RelativeFrameTrack,
    TPGMM,
    build_relative_frames,
    fit_tpgmm,
    reconstruct_gmm,
    rotation_from_quaternion,
    transform_to_frame,
)
from .gaussians import (
    GMM,
    Diagnostics,
    Gaussian,
    gaussian_log_density,
    gmr_condition,
    gmr_weights,
    product_of_gaussians,
    scale_precision,
)
from .lqt import (
    CoordinatedLQTProblem,
    CoordinationMatrix,
    LinearSystem,
    LQTProblem,
    build_transfer_matrices,
    extract_arm_commands,
    rollout,
    solve_coordinated_lqt,
    solve_lqt,
    solve_tracking_terms,
)
from .pipelines import (
    GenerationConfig,
    SynergisticResult,
    TaskInstance,
    generate_follower,
    generate_independent,
    generate_synergistic,
    time_references,
)
from .synth import MeetingTaskSpec, bezier_curve, make_meeting_demos

__version__ = "0.1.0"

__all__ = [
    "DemoSet",
    "Pose",
    "Trajectory",
    "EmConfig",
    "em_fit",
    "Frame",
    "RelativeFrameTrack",
    "TPGMM",
    "build_relative_frames",
    "fit_tpgmm",
    "reconstruct_gmm",
    "rotation_from_quaternion",
    "transform_to_frame",
    "GMM",
    "Diagnostics",
    "Gaussian",
    "gaussian_log_density",
    "gmr_condition",
    "gmr_weights",
    "product_of_gaussians",
    "scale_precision",
    "CoordinatedLQTProblem",
    "CoordinationMatrix",
    "LinearSystem",
    "LQTProblem",
    "build_transfer_matrices",
    "extract_arm_commands",
    "rollout",
    "solve_coordinated_lqt",
    "solve_lqt",
    "solve_tracking_terms",
    "GenerationConfig",
    "SynergisticResult",
    "TaskInstance",
    "generate_follower",
    "generate_independent",
    "generate_synergistic",
    "time_references",
    "MeetingTaskSpec",
    "bezier_curve",
    "make_meeting_demos",
    "__version__",
]
