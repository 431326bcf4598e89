"""End-to-end trajectory generation: leader-follower and synergistic modes.

Both modes share one single-arm step: reconstruct the task-specific GMM for
the new frames (optionally including the partner-relative expert), regress
per-timestep references over time, and track them with batch LQT. The
synergistic mode bootstraps from independent generations and then refines
each arm against the partner's latest trajectory with a damped update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dataset import Trajectory
from .frames import Frame, RelativeFrameTrack, TPGMM, build_relative_frames, reconstruct_gmm
from .gaussians import GMM, Diagnostics, gmr_condition
from .lqt import LinearSystem, solve_tracking_terms

_SITES = ("representation", "control", "both")


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs of the generation pipelines.

    ``coordination_site`` picks where the relative expert enters: the GMM
    reconstruction ("representation"), the tracking cost ("control"), or
    both. ``damping`` scales each synergistic refinement step; 1 replays the
    raw regeneration, smaller values trade speed for stability.
    """

    T_out: int = 200
    sigma: float = 1.0
    coordination_site: str = "representation"
    synergy_iters: int = 3
    synergy_tol: float = 1e-3
    damping: float = 0.5

    def __post_init__(self) -> None:
        if self.T_out < 2:
            raise ValueError("T_out must be at least 2")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError("sigma must be finite and non-negative")
        if self.coordination_site not in _SITES:
            raise ValueError(f"coordination_site must be one of {_SITES}")
        if self.synergy_iters < 1:
            raise ValueError("synergy_iters must be at least 1")
        if not np.isfinite(self.synergy_tol) or self.synergy_tol < 0:
            raise ValueError("synergy_tol must be non-negative")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class TaskInstance:
    """Static frames and initial positions per arm for a new situation."""

    frames: Mapping[str, tuple[Frame, ...]]
    x1: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        frames = {str(a): tuple(fs) for a, fs in self.frames.items()}
        x1 = {str(a): np.atleast_1d(np.asarray(v, dtype=float)).copy() for a, v in self.x1.items()}
        if set(frames) != set(x1):
            raise ValueError("frames and x1 must cover the same arms")
        for a, v in x1.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"x1 for arm {a!r} must be finite")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "x1", x1)


@dataclass(frozen=True, eq=False)
class SynergisticResult:
    """Final pair of trajectories plus the refinement log."""

    trajectories: dict[str, Trajectory]
    displacement_log: tuple[float, ...]
    iterations: int
    diagnostics: Diagnostics = field(repr=False, default_factory=Diagnostics)


def time_references(
    gmm: GMM, times: np.ndarray, diagnostics: Diagnostics | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-timestep reference means/covariances by conditioning on time."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    d = gmm.dim - 1
    out_dims = tuple(range(1, gmm.dim))
    means = np.empty((times.size, d))
    covs = np.empty((times.size, d, d))
    for i, t in enumerate(times):
        g = gmr_condition(gmm, (0,), out_dims, np.array([t]), diagnostics)
        means[i] = g.mean
        covs[i] = g.cov
    return means, covs


def _stacked_position_precision(covs: np.ndarray, order: int, weight: float = 1.0) -> np.ndarray:
    t, d = covs.shape[0], covs.shape[1]
    ds = d * order
    q = np.zeros((t * ds, t * ds))
    eye = np.eye(d)
    for i in range(t):
        chol = np.linalg.cholesky(0.5 * (covs[i] + covs[i].T))
        prec = np.linalg.solve(chol.T, np.linalg.solve(chol, eye))
        q[i * ds : i * ds + d, i * ds : i * ds + d] = weight * 0.5 * (prec + prec.T)
    return q


def _pad_positions(values: np.ndarray, order: int) -> np.ndarray:
    if order == 1:
        return values.copy()
    t, d = values.shape
    out = np.zeros((t, d * order))
    out[:, :d] = values
    return out


def _generate_arm(
    model: TPGMM,
    static_frames: tuple[Frame, ...],
    track: RelativeFrameTrack | None,
    sigma: float,
    site: str,
    x1_position: np.ndarray,
    times: np.ndarray,
    order: int,
    control_cost: float,
    diagnostics: Diagnostics | None,
) -> Trajectory:
    sigma_repr = sigma if site in ("representation", "both") else 0.0
    gmm = reconstruct_gmm(model, static_frames, track, sigma_repr, diagnostics)
    means, covs = time_references(gmm, times, diagnostics)
    d = means.shape[1]
    dt = float(times[-1] - times[0]) / (times.size - 1)
    sys = LinearSystem.integrator(d, dt, order)
    terms = [(_pad_positions(means, order).ravel(), _stacked_position_precision(covs, order))]
    if site in ("control", "both") and sigma > 0.0 and track is not None:
        rel_means, rel_covs = time_references(model.relative_gmm(), times, diagnostics)
        rel_ref = track.offsets() + rel_means
        terms.append(
            (
                _pad_positions(rel_ref, order).ravel(),
                _stacked_position_precision(rel_covs, order, weight=sigma),
            )
        )
    r_mat = control_cost * np.eye(d * (times.size - 1))
    _, _, x = solve_tracking_terms(sys, sys.pad_state(x1_position), terms, r_mat)
    return Trajectory(times, x[:, :d])


def _model_times(model: TPGMM, n: int) -> np.ndarray:
    t0, t1 = model.time_span
    if t1 <= t0:
        raise ValueError("model time span is degenerate")
    return np.linspace(t0, t1, n)


def generate_independent(
    model: TPGMM,
    task: TaskInstance,
    cfg: GenerationConfig,
    *,
    arm: str,
    order: int = 2,
    control_cost: float = 1e-6,
    diagnostics: Diagnostics | None = None,
) -> Trajectory:
    """Static-frames-only generation (the no-coordination baseline)."""
    times = _model_times(model, cfg.T_out)
    return _generate_arm(
        model, task.frames[arm], None, 0.0, cfg.coordination_site,
        task.x1[arm], times, order, control_cost, diagnostics,
    )


def generate_follower(
    model_follower: TPGMM,
    leader_traj: Trajectory | np.ndarray,
    task: TaskInstance,
    cfg: GenerationConfig,
    *,
    arm: str,
    order: int = 2,
    control_cost: float = 1e-6,
    diagnostics: Diagnostics | None = None,
) -> Trajectory:
    """Generate one arm conditioned on a given partner trajectory.

    The leader supplies the dynamic relative frames (and the shared time
    grid, resampled to ``cfg.T_out`` when needed); with
    ``coordination_site == "control"`` the relative expert instead enters the
    tracking cost with the leader held fixed.
    """
    if not model_follower.has_relative_frame:
        raise ValueError("follower model has no relative frame")
    if isinstance(leader_traj, Trajectory):
        leader = leader_traj
    else:
        leader = Trajectory.from_augmented(np.asarray(leader_traj, dtype=float))
    leader = leader.resample(cfg.T_out)
    track = build_relative_frames(leader.as_augmented())
    return _generate_arm(
        model_follower, task.frames[arm], track, cfg.sigma, cfg.coordination_site,
        task.x1[arm], leader.times, order, control_cost, diagnostics,
    )


def generate_synergistic(
    models: Mapping[str, TPGMM],
    task: TaskInstance,
    cfg: GenerationConfig,
    *,
    order: int = 2,
    control_cost: float = 1e-6,
    diagnostics: Diagnostics | None = None,
) -> SynergisticResult:
    """Generate both arms jointly by iterated mutual relative parameterization.

    Iteration 0 generates each arm from its static frames alone; every later
    iteration rebuilds each arm's relative frames from the partner's latest
    trajectory, regenerates, and applies the damped update. Stops after
    ``cfg.synergy_iters`` iterations or once both arms move less than
    ``cfg.synergy_tol``; a displacement sequence rising twice in a row aborts
    refinement and returns the best iterate with a warning.
    """
    arms = list(models)
    if len(arms) != 2:
        raise ValueError("synergistic generation needs exactly two arms")
    for a in arms:
        if not models[a].has_relative_frame:
            raise ValueError(f"model for arm {a!r} has no relative frame")
    diag = diagnostics if diagnostics is not None else Diagnostics()
    times = _model_times(models[arms[0]], cfg.T_out)

    current = {
        a: _generate_arm(
            models[a], task.frames[a], None, 0.0, cfg.coordination_site,
            task.x1[a], times, order, control_cost, diag,
        )
        for a in arms
    }
    snapshots = [current]
    disp_log: list[float] = []
    for _ in range(1, cfg.synergy_iters):
        new = {}
        for a in arms:
            partner = arms[1] if a == arms[0] else arms[0]
            track = build_relative_frames(current[partner].as_augmented())
            regen = _generate_arm(
                models[a], task.frames[a], track, cfg.sigma, cfg.coordination_site,
                task.x1[a], times, order, control_cost, diag,
            )
            values = current[a].values + cfg.damping * (regen.values - current[a].values)
            new[a] = Trajectory(times, values)
        disp = max(
            float(np.max(np.linalg.norm(new[a].values - current[a].values, axis=1))) for a in arms
        )
        disp_log.append(disp)
        current = new
        snapshots.append(current)
        if disp < cfg.synergy_tol:
            break
        if len(disp_log) >= 3 and disp_log[-1] > disp_log[-2] > disp_log[-3]:
            diag.warn("synergistic refinement oscillating; returning the best iterate")
            diag.count("synergy_oscillation")
            best = int(np.argmin(disp_log))
            current = snapshots[best + 1]
            break
    return SynergisticResult(
        trajectories=current,
        displacement_log=tuple(disp_log),
        iterations=len(snapshots),
        diagnostics=diag,
    )
