"""Demonstration containers: timed trajectories, poses, and multi-arm sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .gaussians import _readonly

IDENTITY_QUATERNION = (1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-indexed state samples for one arm."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.atleast_1d(np.asarray(self.times, dtype=float)).copy()
        values = np.atleast_2d(np.asarray(self.values, dtype=float)).copy()
        if times.ndim != 1 or values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise ValueError("times must be (T,) and values (T, D)")
        if times.shape[0] < 2:
            raise ValueError("trajectory needs at least two samples")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("trajectory entries must be finite")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def horizon(self) -> int:
        return self.times.shape[0]

    @property
    def state_dim(self) -> int:
        return self.values.shape[1]

    def as_augmented(self) -> np.ndarray:
        """T x (1 + D) matrix with the time channel as column 0."""
        return np.hstack([self.times[:, None], self.values])

    @classmethod
    def from_augmented(cls, arr: np.ndarray) -> "Trajectory":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:, 0], arr[:, 1:])

    def resample(self, n_samples: int) -> "Trajectory":
        """Linear time-resampling onto ``n_samples`` uniform instants."""
        if n_samples == self.horizon:
            return self
        if n_samples < 2:
            raise ValueError("need at least two output samples")
        new_times = np.linspace(self.times[0], self.times[-1], n_samples)
        new_values = np.stack(
            [np.interp(new_times, self.times, self.values[:, c]) for c in range(self.state_dim)],
            axis=1,
        )
        return Trajectory(new_times, new_values)


@dataclass(frozen=True, eq=False)
class Pose:
    """Position plus unit quaternion (w, x, y, z)."""

    position: np.ndarray
    quaternion: np.ndarray = field(default=IDENTITY_QUATERNION)

    def __post_init__(self) -> None:
        pos = np.atleast_1d(np.asarray(self.position, dtype=float)).copy()
        quat = np.atleast_1d(np.asarray(self.quaternion, dtype=float)).copy()
        if pos.ndim != 1 or quat.shape != (4,):
            raise ValueError("pose needs a position vector and a 4-entry quaternion")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(quat))):
            raise ValueError("pose entries must be finite")
        if abs(float(np.linalg.norm(quat)) - 1.0) > 1e-6:
            raise ValueError("quaternion is not unit-norm within 1e-6")
        object.__setattr__(self, "position", _readonly(pos))
        object.__setattr__(self, "quaternion", _readonly(quat))

    @property
    def is_identity_rotation(self) -> bool:
        return bool(np.allclose(self.quaternion, IDENTITY_QUATERNION, atol=1e-12))


@dataclass(frozen=True, eq=False)
class DemoSet:
    """Named per-arm demonstration matrices sharing one sampling period.

    Arms map to equal-length tuples of T x D state matrices; demo ``i`` of
    every arm shares the same horizon so one arm can serve as the other's
    dynamic observation frame. ``poses`` carries optional named static poses
    per demonstration (start/end annotations, object poses).
    """

    dt: float
    arms: Mapping[str, Sequence[np.ndarray]]
    poses: Sequence[Mapping[str, Pose]] = ()
    channel_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        dt = float(self.dt)
        if not np.isfinite(dt) or dt <= 0:
            raise ValueError("dt must be positive and finite")
        arms = {str(name): tuple(np.asarray(m, dtype=float).copy() for m in demos)
                for name, demos in self.arms.items()}
        if not 1 <= len(arms) <= 2:
            raise ValueError("supported arm counts are 1 and 2")
        counts = {len(demos) for demos in arms.values()}
        if len(counts) != 1:
            raise ValueError("all arms must have the same number of demonstrations")
        n_demos = counts.pop()
        if n_demos < 1:
            raise ValueError("need at least one demonstration")
        dims = set()
        for name, demos in arms.items():
            for i, m in enumerate(demos):
                if m.ndim != 2 or m.shape[0] < 2:
                    raise ValueError(f"arm {name!r} demo {i} must be a T x D matrix with T >= 2")
                if not np.all(np.isfinite(m)):
                    raise ValueError(f"arm {name!r} demo {i} contains non-finite values")
                dims.add(m.shape[1])
                m.setflags(write=False)
        if len(dims) != 1:
            raise ValueError("all demonstrations must share one state dimension")
        state_dim = dims.pop()
        names = list(arms)
        for i in range(n_demos):
            horizons = {arms[a][i].shape[0] for a in names}
            if len(horizons) != 1:
                raise ValueError(f"demo {i} has mismatched horizons across arms")
        poses = tuple(dict(p) for p in self.poses) if self.poses else tuple({} for _ in range(n_demos))
        if len(poses) != n_demos:
            raise ValueError("poses must be given per demonstration")
        for i, table in enumerate(poses):
            for key, pose in table.items():
                if not isinstance(pose, Pose):
                    raise ValueError(f"pose {key!r} in demo {i} is not a Pose")
                if pose.position.shape[0] != state_dim:
                    raise ValueError(f"pose {key!r} in demo {i} has wrong position length")
        channels = self.channel_names
        if channels is not None:
            channels = tuple(str(c) for c in channels)
            if len(channels) != state_dim:
                raise ValueError("channel name count must match the state dimension")
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "channel_names", channels)

    @property
    def arm_names(self) -> tuple[str, ...]:
        return tuple(self.arms)

    @property
    def n_demos(self) -> int:
        return len(next(iter(self.arms.values())))

    @property
    def state_dim(self) -> int:
        return next(iter(self.arms.values()))[0].shape[1]

    def horizon(self, demo: int) -> int:
        return next(iter(self.arms.values()))[demo].shape[0]

    def partner(self, arm: str) -> str:
        names = self.arm_names
        if len(names) != 2:
            raise ValueError("partner arm is only defined for two-arm sets")
        if arm not in names:
            raise KeyError(f"unknown arm {arm!r}")
        return names[1] if arm == names[0] else names[0]

    def augmented(self, arm: str, demo: int) -> np.ndarray:
        """T x (1 + D) demo matrix with the time channel (seconds) prepended."""
        states = self.arms[arm][demo]
        times = np.arange(states.shape[0]) * self.dt
        return np.hstack([times[:, None], states])

    def trajectory(self, arm: str, demo: int) -> Trajectory:
        return Trajectory.from_augmented(self.augmented(arm, demo))
