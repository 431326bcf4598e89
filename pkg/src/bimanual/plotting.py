"""Headless matplotlib rendering of runs to PNG bytes.

Figures are returned as bytes so the CLI can emit them atomically next to the
delimited outputs. PNG metadata is stripped for reproducible files.
"""

from __future__ import annotations

import io
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .dataset import DemoSet, Trajectory  # noqa: E402

_PNG_METADATA = {"Software": None}
_ARM_COLORS = ("tab:blue", "tab:red")


def _save(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)
    return buf.getvalue()


def render_overview(
    generated: Mapping[str, Trajectory],
    baseline: Mapping[str, Trajectory] | None = None,
    demos: DemoSet | None = None,
    meeting=None,
    title: str = "generated motion",
) -> bytes:
    """Spatial overview: demonstrations, generated arms, and the
    no-coordination baseline in light colors."""
    dims = next(iter(generated.values())).state_dim
    fig = plt.figure(figsize=(6.4, 5.4))
    if dims >= 3:
        ax = fig.add_subplot(projection="3d")
    else:
        ax = fig.add_subplot()
        ax.set_aspect("equal", adjustable="datalim")

    def draw(values, **kwargs):
        coords = values.T[: (3 if dims >= 3 else 2)]
        ax.plot(*coords, **kwargs)

    if demos is not None:
        for arm in demos.arm_names:
            for i, block in enumerate(demos.arms[arm]):
                draw(block, color="0.65", lw=0.8,
                     label="demonstrations" if (arm == demos.arm_names[0] and i == 0) else None)
    if baseline is not None:
        for (arm, traj), color in zip(baseline.items(), _ARM_COLORS):
            draw(traj.values, color=color, lw=1.2, alpha=0.3, label=f"{arm} (no coordination)")
    for (arm, traj), color in zip(generated.items(), _ARM_COLORS):
        draw(traj.values, color=color, lw=1.8, label=arm)
        start = traj.values[0]
        ax.scatter(*start[: (3 if dims >= 3 else 2)], color=color, s=18)
    if meeting is not None:
        ax.scatter(*meeting[: (3 if dims >= 3 else 2)], marker="*", s=140, color="k",
                   label="target meeting point")
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if dims >= 3:
        ax.set_zlabel("z")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return _save(fig)


def render_gap_curve(times, gap, baseline_gap=None, title: str = "inter-arm gap") -> bytes:
    """Norm of the inter-arm offset over time, with the baseline for contrast."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    if baseline_gap is not None:
        ax.plot(times, baseline_gap, color="0.6", lw=1.2, label="no coordination")
    ax.plot(times, gap, color="tab:purple", lw=1.8, label="coordinated")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("|arm1 - arm2|")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig)
