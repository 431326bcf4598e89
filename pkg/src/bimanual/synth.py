"""Deterministic synthetic two-arm "meeting" demonstrations from Bezier arcs.

Both arms depart from separate start regions, land on one shared meeting
point per demonstration, and hold it together for the tail of the horizon, so
the demonstrated relative relationship is exact throughout the final phase.
Besides the exact start poses, each demo carries a jittered end annotation per
arm: the meeting point is only approximately known to the static task
parameters, while the arms' relative motion encodes the exact meeting. That
separation is what makes the coordination term earn its keep when
generalizing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import DemoSet, Pose
from .gaussians import _readonly

ARM_NAMES = ("left", "right")

_DEFAULT_REGIONS = {
    2: {
        "meeting": [[4.0, 6.0], [4.0, 6.0]],
        "starts": ([[0.0, 1.0], [0.0, 2.0]], [[7.0, 8.0], [0.0, 2.0]]),
    },
    3: {
        "meeting": [[4.0, 6.0], [7.0, 9.0], [4.0, 6.0]],
        "starts": (
            [[0.0, 1.0], [0.0, 2.0], [0.0, 1.5]],
            [[7.0, 8.0], [0.0, 2.0], [0.5, 2.0]],
        ),
    },
}


def _check_box(box: np.ndarray, dims: int, name: str) -> np.ndarray:
    box = np.atleast_2d(np.asarray(box, dtype=float)).copy()
    if box.shape != (dims, 2):
        raise ValueError(f"{name} must be a {dims} x 2 array of (low, high) rows")
    if not np.all(np.isfinite(box)) or np.any(box[:, 1] < box[:, 0]):
        raise ValueError(f"{name} must have finite rows with high >= low")
    return box


@dataclass(frozen=True, eq=False)
class MeetingTaskSpec:
    """Parameters of the synthetic meeting task."""

    dims: int = 2
    n_demos: int = 3
    T: int = 200
    meeting_region: np.ndarray = field(default=None)
    start_regions: tuple[np.ndarray, np.ndarray] = field(default=None)
    seed: int = 0
    dt: float = 0.01
    end_annotation_jitter: float = 0.5
    arc_style: float = 0.35
    hold_fraction: float = 0.15

    def __post_init__(self) -> None:
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        if self.n_demos < 1:
            raise ValueError("n_demos must be at least 1")
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError("dt must be positive")
        if not np.isfinite(self.end_annotation_jitter) or self.end_annotation_jitter < 0:
            raise ValueError("end_annotation_jitter must be non-negative")
        if not np.isfinite(self.arc_style):
            raise ValueError("arc_style must be finite")
        if not 0.0 <= self.hold_fraction < 0.5:
            raise ValueError("hold_fraction must be in [0, 0.5)")
        meeting = self.meeting_region
        if meeting is None:
            meeting = _DEFAULT_REGIONS[self.dims]["meeting"]
        starts = self.start_regions
        if starts is None:
            starts = _DEFAULT_REGIONS[self.dims]["starts"]
        if len(starts) != 2:
            raise ValueError("start_regions needs one box per arm")
        object.__setattr__(self, "meeting_region", _readonly(_check_box(meeting, self.dims, "meeting_region")))
        object.__setattr__(
            self,
            "start_regions",
            tuple(_readonly(_check_box(b, self.dims, f"start_regions[{i}]")) for i, b in enumerate(starts)),
        )


def bezier_curve(control_points: np.ndarray, T: int) -> np.ndarray:
    """De Casteljau evaluation at T uniform parameters on [0, 1].

    The first and last output samples are the first and last control points
    exactly.
    """
    pts = np.atleast_2d(np.asarray(control_points, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("need at least two control points")
    if T < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(pts)):
        raise ValueError("control points must be finite")
    t = np.linspace(0.0, 1.0, T)[:, None, None]
    work = np.broadcast_to(pts, (T,) + pts.shape).copy()
    for level in range(pts.shape[0] - 1, 0, -1):
        work = work[:, :level, :] + t * (work[:, 1 : level + 1, :] - work[:, :level, :])
    out = work[:, 0, :]
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def _perpendicular(chord: np.ndarray) -> np.ndarray:
    """Unit vector perpendicular to the chord (a fixed, deterministic choice).

    In 3-D the direction mixes a horizontal and a vertical perpendicular so
    the arcs bend out of the chord line in every channel.
    """
    norm = float(np.linalg.norm(chord))
    if norm == 0.0:
        out = np.zeros_like(chord)
        out[-1] = 1.0
        return out
    u = chord / norm
    if chord.shape[0] == 2:
        return np.array([-u[1], u[0]])
    axis = np.zeros(3)
    axis[2] = 1.0
    flat = np.cross(u, axis)
    if np.linalg.norm(flat) < 1e-9:
        flat = np.cross(u, np.array([1.0, 0.0, 0.0]))
    flat /= np.linalg.norm(flat)
    up = np.cross(flat, u)
    mix = flat + 0.5 * up
    return mix / np.linalg.norm(mix)


def _arm_curve(
    start: np.ndarray, meeting: np.ndarray, style: float, side: float, T: int, hold: int
) -> np.ndarray:
    chord = meeting - start
    lift = style * float(np.linalg.norm(chord)) * side * _perpendicular(chord)
    p1 = start + chord / 3.0 + lift
    p2 = start + 2.0 * chord / 3.0 + 0.5 * lift
    approach = bezier_curve(np.stack([start, p1, p2, meeting]), T - hold)
    if hold == 0:
        return approach
    return np.vstack([approach, np.tile(meeting, (hold, 1))])


def make_meeting_demos(spec: MeetingTaskSpec) -> DemoSet:
    """Seeded meeting-task demonstrations with exact final coincidence.

    Per demo the draw order is: meeting point, per-arm starts, per-arm end
    annotations. Each arm's demo is a cubic arc whose samples equal the shared
    meeting point bitwise over the hold phase; the stored ``<arm>:end`` pose
    is the meeting point plus seeded annotation noise, while ``<arm>:start``
    is exact.
    """
    rng = np.random.default_rng(spec.seed)
    arms: dict[str, list[np.ndarray]] = {name: [] for name in ARM_NAMES}
    poses: list[dict[str, Pose]] = []
    sides = (1.0, -1.0)
    hold = min(int(round(spec.hold_fraction * spec.T)), spec.T - 2)
    for _ in range(spec.n_demos):
        meeting = rng.uniform(spec.meeting_region[:, 0], spec.meeting_region[:, 1])
        starts = [rng.uniform(box[:, 0], box[:, 1]) for box in spec.start_regions]
        jitters = [rng.normal(0.0, spec.end_annotation_jitter, spec.dims) for _ in ARM_NAMES]
        table: dict[str, Pose] = {}
        for name, start, jitter, side in zip(ARM_NAMES, starts, jitters, sides):
            arms[name].append(_arm_curve(start, meeting, spec.arc_style, side, spec.T, hold))
            table[f"{name}:start"] = Pose(start)
            table[f"{name}:end"] = Pose(meeting + jitter)
        table["meeting"] = Pose(meeting)
        poses.append(table)
    channel_names = ("x", "y", "z")[: spec.dims]
    return DemoSet(spec.dt, arms, tuple(poses), channel_names)
