"""Observation frames and task-parameterized mixture models.

A frame is an affine observation perspective (A, b) over the augmented state
[time, state...]. Frames never warp time: A acts as identity on the time
channel and b carries no time offset. Dynamic frames (one per timestep,
derived from the partner arm) encode the inter-arm relationship.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .dataset import DemoSet
from .em import EmConfig, fit_em_views
from .gaussians import (
    GMM,
    Diagnostics,
    Gaussian,
    _readonly,
    product_of_gaussians,
    scale_precision,
)

_MAX_CONDITION = 1e12
_TIME_STRUCTURE_TOL = 1e-9


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix from a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True, eq=False)
class Frame:
    """Affine observation perspective over the augmented [time, state] space."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).copy()
        d = A.shape[0]
        if A.shape != (d, d) or b.shape != (d,) or d < 2:
            raise ValueError("frame needs a square A and matching b over time + state")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("frame parameters must be finite")
        time_err = max(
            abs(A[0, 0] - 1.0),
            float(np.max(np.abs(A[0, 1:]))) if d > 1 else 0.0,
            float(np.max(np.abs(A[1:, 0]))) if d > 1 else 0.0,
            abs(b[0]),
        )
        if time_err > _TIME_STRUCTURE_TOL:
            raise ValueError("frames must not transform the time channel")
        A[0, :] = 0.0
        A[:, 0] = 0.0
        A[0, 0] = 1.0
        b[0] = 0.0
        if np.linalg.cond(A) >= _MAX_CONDITION:
            raise ValueError("frame matrix A is singular or near-singular")
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "b", _readonly(b))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def is_translation(self) -> bool:
        return bool(np.array_equal(self.A, np.eye(self.dim)))

    @classmethod
    def identity(cls, state_dim: int) -> "Frame":
        return cls(np.eye(state_dim + 1), np.zeros(state_dim + 1))

    @classmethod
    def translation(cls, state_offset: np.ndarray) -> "Frame":
        off = np.atleast_1d(np.asarray(state_offset, dtype=float))
        return cls(np.eye(off.shape[0] + 1), np.concatenate([[0.0], off]))

    @classmethod
    def from_rotation_translation(cls, rotation: np.ndarray, translation: np.ndarray) -> "Frame":
        rot = np.atleast_2d(np.asarray(rotation, dtype=float))
        t = np.atleast_1d(np.asarray(translation, dtype=float))
        d = t.shape[0]
        if rot.shape != (d, d):
            raise ValueError("rotation block must match the translation length")
        A = np.eye(d + 1)
        A[1:, 1:] = rot
        return cls(A, np.concatenate([[0.0], t]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map frame-local rows to world coordinates: A x + b."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.A.T + self.b

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map world rows into the frame: A^{-1} (x - b)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.solve(self.A, (pts - self.b).T).T

    def transform_gaussian(self, g: Gaussian) -> Gaussian:
        """Transport a frame-local Gaussian into world coordinates."""
        mean = self.A @ g.mean + self.b
        cov = self.A @ g.cov @ self.A.T
        return Gaussian(mean, 0.5 * (cov + cov.T))


def transform_to_frame(traj: np.ndarray, frame: Frame) -> np.ndarray:
    """Rowwise A^{-1}(x - b) of an augmented T x (1+D) trajectory."""
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    if traj.shape[1] != frame.dim:
        raise ValueError(f"trajectory width {traj.shape[1]} does not match frame dim {frame.dim}")
    if not np.all(np.isfinite(traj)):
        raise ValueError("trajectory must be finite")
    return frame.apply_inverse(traj)


@dataclass(frozen=True, eq=False)
class RelativeFrameTrack:
    """One frame per timestep, derived from the partner arm's trajectory."""

    frames: tuple[Frame, ...]
    times: np.ndarray

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        times = np.atleast_1d(np.asarray(self.times, dtype=float)).copy()
        if len(frames) < 2 or times.shape != (len(frames),):
            raise ValueError("track needs one frame per timestep, at least two")
        dim = frames[0].dim
        for f in frames:
            if f.dim != dim:
                raise ValueError("all frames in a track must share one dimension")
        if not np.all(np.isfinite(times)):
            raise ValueError("track times must be finite")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "times", _readonly(times))

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def all_translations(self) -> bool:
        return all(f.is_translation for f in self.frames)

    def offsets(self) -> np.ndarray:
        """T x D matrix of the frames' state translations."""
        return np.stack([f.b[1:] for f in self.frames])

    def transform_rowwise(self, traj: np.ndarray) -> np.ndarray:
        """Apply frame t's inverse map to row t of an augmented trajectory."""
        traj = np.atleast_2d(np.asarray(traj, dtype=float))
        if traj.shape[0] != len(self.frames):
            raise ValueError("trajectory length must match the track horizon")
        if self.all_translations:
            out = traj.copy()
            out[:, 1:] -= self.offsets()
            return out
        return np.vstack([self.frames[t].apply_inverse(traj[t : t + 1]) for t in range(traj.shape[0])])


def build_relative_frames(partner_traj: np.ndarray) -> RelativeFrameTrack:
    """Dynamic frames translating by the partner's state at each timestep.

    ``partner_traj`` is augmented (T x (1+D), time channel first); the
    resulting frames leave time untouched and use an identity A, so the
    frame-local view of a trajectory is its offset from the partner.
    """
    traj = np.atleast_2d(np.asarray(partner_traj, dtype=float))
    if traj.ndim != 2 or traj.shape[0] < 2 or traj.shape[1] < 2:
        raise ValueError("partner trajectory must be T x (1+D) with T >= 2")
    if not np.all(np.isfinite(traj)):
        raise ValueError("partner trajectory must be finite")
    frames = tuple(Frame.translation(traj[t, 1:]) for t in range(traj.shape[0]))
    return RelativeFrameTrack(frames, traj[:, 0])


FrameOrTrack = Union[Frame, RelativeFrameTrack]


@dataclass(frozen=True, eq=False)
class TPGMM:
    """Per-frame Gaussian component sets sharing mixture priors.

    ``frame_components[j][k]`` is component k observed in frame j; when
    ``has_relative_frame`` is set, the last frame list holds the components of
    the dynamic partner-relative view. ``time_span`` records the training time
    range so time-conditioned queries can be formed without the data.
    """

    priors: np.ndarray
    frame_components: tuple[tuple[Gaussian, ...], ...]
    has_relative_frame: bool = False
    time_span: tuple[float, float] = (0.0, 1.0)
    loglik_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        priors = np.atleast_1d(np.asarray(self.priors, dtype=float)).copy()
        frames = tuple(tuple(comps) for comps in self.frame_components)
        if len(frames) < 1:
            raise ValueError("need at least one frame")
        k = len(frames[0])
        if any(len(comps) != k for comps in frames):
            raise ValueError("all frames must hold the same number of components")
        GMM(priors, frames[0])  # validates the simplex and dimensions
        dim = frames[0][0].dim
        for comps in frames:
            for g in comps:
                if g.dim != dim:
                    raise ValueError("components must share one dimensionality across frames")
        for kk in range(k):
            t0 = frames[0][kk].mean[0]
            for comps in frames:
                if abs(comps[kk].mean[0] - t0) > 1e-6:
                    raise ValueError("component time-means must agree across frames")
        span = (float(self.time_span[0]), float(self.time_span[1]))
        if not (np.isfinite(span[0]) and np.isfinite(span[1])) or span[1] < span[0]:
            raise ValueError("time_span must be a finite, ordered pair")
        object.__setattr__(self, "priors", _readonly(priors))
        object.__setattr__(self, "frame_components", frames)
        object.__setattr__(self, "has_relative_frame", bool(self.has_relative_frame))
        object.__setattr__(self, "time_span", span)
        object.__setattr__(self, "loglik_history", tuple(float(x) for x in self.loglik_history))

    @property
    def n_frames(self) -> int:
        return len(self.frame_components)

    @property
    def n_static_frames(self) -> int:
        return self.n_frames - (1 if self.has_relative_frame else 0)

    @property
    def n_components(self) -> int:
        return len(self.frame_components[0])

    @property
    def dim(self) -> int:
        return self.frame_components[0][0].dim

    def static_components(self, j: int) -> tuple[Gaussian, ...]:
        if not 0 <= j < self.n_static_frames:
            raise IndexError("static frame index out of range")
        return self.frame_components[j]

    def relative_components(self) -> tuple[Gaussian, ...]:
        if not self.has_relative_frame:
            raise ValueError("model has no relative frame")
        return self.frame_components[-1]

    def relative_gmm(self) -> GMM:
        return GMM(self.priors, self.relative_components())


def fit_tpgmm(
    demos: DemoSet,
    arm: str,
    frames_per_demo: Sequence[Sequence[FrameOrTrack]],
    cfg: EmConfig,
) -> TPGMM:
    """Joint EM over frame-local views of one arm's demonstrations.

    Each demonstration supplies its own frames; a ``RelativeFrameTrack`` may
    appear once, as the last entry, and marks the dynamic partner-relative
    frame. Responsibilities are shared across frames, so the returned
    component sets are index-aligned.
    """
    if arm not in demos.arms:
        raise KeyError(f"unknown arm {arm!r}")
    if len(frames_per_demo) != demos.n_demos:
        raise ValueError("need one frame list per demonstration")
    p = len(frames_per_demo[0])
    if p < 1:
        raise ValueError("need at least one frame")
    if any(len(entry) != p for entry in frames_per_demo):
        raise ValueError("inconsistent frame count across demonstrations")
    track_slots = set()
    for entry in frames_per_demo:
        for j, item in enumerate(entry):
            if isinstance(item, RelativeFrameTrack):
                track_slots.add(j)
            elif not isinstance(item, Frame):
                raise ValueError("frame entries must be Frame or RelativeFrameTrack")
    if track_slots and track_slots != {p - 1}:
        raise ValueError("a relative frame track is only supported as the last frame slot")
    has_relative = bool(track_slots)

    augmented = [demos.augmented(arm, d) for d in range(demos.n_demos)]
    views = []
    for j in range(p):
        rows = []
        for d, aug in enumerate(augmented):
            item = frames_per_demo[d][j]
            if isinstance(item, RelativeFrameTrack):
                if len(item) != aug.shape[0]:
                    raise ValueError(f"relative track length mismatches demo {d}")
                rows.append(item.transform_rowwise(aug))
            else:
                rows.append(transform_to_frame(aug, item))
        views.append(np.vstack(rows))

    priors, comps, history = fit_em_views(views, cfg)
    all_times = np.concatenate([aug[:, 0] for aug in augmented])
    return TPGMM(
        priors,
        tuple(tuple(c) for c in comps),
        has_relative_frame=has_relative,
        time_span=(float(all_times.min()), float(all_times.max())),
        loglik_history=history,
    )


def reconstruct_gmm(
    model: TPGMM,
    new_frames: Sequence[Frame],
    relative_track: RelativeFrameTrack | None = None,
    sigma: float = 0.0,
    diagnostics: Diagnostics | None = None,
) -> GMM:
    """Task-specific GMM for new task parameters by product of experts.

    Every static frame transports its components with nu = A mu + b and
    Gamma = A Sigma A^T; a relative track additionally contributes each
    component transported by the frame at the component's time-center, with
    its precision scaled by ``sigma``. ``sigma == 0`` (or an absent track)
    reduces to the static-only reconstruction exactly.
    """
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma < 0.0:
        raise ValueError("sigma must be finite and non-negative")
    if len(new_frames) != model.n_static_frames:
        raise ValueError(
            f"expected {model.n_static_frames} static frames, got {len(new_frames)}"
        )
    if relative_track is not None and not model.has_relative_frame:
        raise ValueError("model has no relative frame to parameterize")
    use_relative = model.has_relative_frame and relative_track is not None and sigma > 0.0

    components = []
    for k in range(model.n_components):
        factors = [
            frame.transform_gaussian(model.frame_components[j][k])
            for j, frame in enumerate(new_frames)
        ]
        if use_relative:
            t_k = float(model.frame_components[0][k].mean[0])
            times = relative_track.times
            if t_k < times[0] or t_k > times[-1]:
                if diagnostics is not None:
                    diagnostics.count("relative_time_clamped")
            idx = int(np.argmin(np.abs(times - t_k)))
            g = relative_track.frames[idx].transform_gaussian(model.relative_components()[k])
            factors.append(scale_precision(g, sigma) if sigma != 1.0 else g)
        components.append(factors[0] if len(factors) == 1 else product_of_gaussians(factors))
    return GMM(model.priors, tuple(components))
