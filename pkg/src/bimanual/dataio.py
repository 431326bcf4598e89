"""Text serialization: demonstration files, trajectories, model bundles,
plot-ready series, and the run configuration document.

All formats are plain text with 17-significant-digit floats, so files diff
cleanly and round-trip bitwise. Parsers raise ``DataFormatError`` with a
machine-readable code and, for line-oriented formats, the offending line.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .dataset import DemoSet, Pose, Trajectory
from .em import EmConfig
from .frames import Frame, TPGMM, rotation_from_quaternion
from .gaussians import Gaussian
from .pipelines import GenerationConfig

DEMOFILE_VERSION = 1
TRAJECTORY_VERSION = 1
BUNDLE_FORMAT = "tpgmm-bundle"
SERIES_FORMAT = "plot-series"

# error codes used by DataFormatError
E_VERSION = "unsupported-version"
E_SYNTAX = "syntax"
E_RAGGED = "ragged-block"
E_NONFINITE = "non-finite"
E_QUATERNION = "bad-quaternion"
E_INVALID = "invalid-content"
E_FRAME_REF = "unresolved-frame"
E_IO = "io-write"


class DataFormatError(ValueError):
    """Structured parse or validation failure."""

    def __init__(self, code: str, message: str, *, path: str | os.PathLike | None = None,
                 line: int | None = None):
        self.code = code
        self.path = str(path) if path is not None else None
        self.line = line
        loc = self.path or "<data>"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"[{code}] {loc}: {message}")


class OutputWriteError(RuntimeError):
    """Raised when an output set cannot be written; nothing is left behind."""

    code = E_IO


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(_fmt(v) for v in row)


# ---------------------------------------------------------------------------
# demonstration files


def format_demos(ds: DemoSet) -> str:
    lines = [f"demoset-version {DEMOFILE_VERSION}"]
    lines.append(f"dt {_fmt(ds.dt)}")
    lines.append(f"state-dim {ds.state_dim}")
    lines.append("arms " + " ".join(ds.arm_names))
    if ds.channel_names is not None:
        lines.append("channels " + " ".join(ds.channel_names))
    for d in range(ds.n_demos):
        lines.append(f"demo {d}")
        for arm in ds.arm_names:
            block = ds.arms[arm][d]
            lines.append(f"arm {arm} {block.shape[0]} {block.shape[1]}")
            lines.extend(_fmt_row(row) for row in block)
        for name, pose in ds.poses[d].items():
            lines.append(f"pose {name} {_fmt_row(pose.position)} {_fmt_row(pose.quaternion)}")
    return "\n".join(lines) + "\n"


def save_demos(ds: DemoSet, path: str | os.PathLike) -> None:
    write_output_files({Path(path).name: format_demos(ds)}, Path(path).parent)


class _LineReader:
    def __init__(self, text: str, path):
        self.path = path
        self.items: list[tuple[int, str]] = []
        for no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                self.items.append((no, line))
        self.pos = 0

    def peek(self) -> tuple[int, str] | None:
        return self.items[self.pos] if self.pos < len(self.items) else None

    def next(self, context: str) -> tuple[int, str]:
        item = self.peek()
        if item is None:
            raise DataFormatError(E_SYNTAX, f"unexpected end of file while reading {context}",
                                  path=self.path)
        self.pos += 1
        return item


def _parse_floats(tokens: Sequence[str], n: int, path, line_no: int, what: str) -> np.ndarray:
    if len(tokens) != n:
        raise DataFormatError(E_RAGGED, f"{what}: expected {n} values, got {len(tokens)}",
                              path=path, line=line_no)
    try:
        values = np.array([float(t) for t in tokens])
    except ValueError:
        raise DataFormatError(E_SYNTAX, f"{what}: unparsable number", path=path, line=line_no) from None
    if not np.all(np.isfinite(values)):
        raise DataFormatError(E_NONFINITE, f"{what}: non-finite value", path=path, line=line_no)
    return values


def parse_demos(text: str, path: str | os.PathLike | None = None) -> DemoSet:
    rd = _LineReader(text, path)

    def header(key: str) -> tuple[int, list[str]]:
        no, line = rd.next(f"'{key}' header")
        tokens = line.split()
        if tokens[0] != key:
            raise DataFormatError(E_SYNTAX, f"expected '{key}', found {tokens[0]!r}", path=path, line=no)
        return no, tokens[1:]

    no, rest = header("demoset-version")
    if len(rest) != 1 or not rest[0].isdigit() or int(rest[0]) != DEMOFILE_VERSION:
        raise DataFormatError(E_VERSION, f"unsupported demoset version {' '.join(rest)!r}",
                              path=path, line=no)
    no, rest = header("dt")
    dt = float(_parse_floats(rest, 1, path, no, "dt")[0])
    no, rest = header("state-dim")
    try:
        state_dim = int(rest[0]) if len(rest) == 1 else -1
    except ValueError:
        state_dim = -1
    if state_dim < 1:
        raise DataFormatError(E_SYNTAX, "state-dim must be a positive integer", path=path, line=no)
    no, arm_names = header("arms")
    if not 1 <= len(arm_names) <= 2 or len(set(arm_names)) != len(arm_names):
        raise DataFormatError(E_SYNTAX, "need one or two distinct arm names", path=path, line=no)

    channels = None
    item = rd.peek()
    if item is not None and item[1].split()[0] == "channels":
        no, rest = header("channels")
        if len(rest) != state_dim:
            raise DataFormatError(E_RAGGED, f"expected {state_dim} channel names, got {len(rest)}",
                                  path=path, line=no)
        channels = tuple(rest)

    arms: dict[str, list[np.ndarray]] = {a: [] for a in arm_names}
    poses: list[dict[str, Pose]] = []
    demo_index = -1
    while rd.peek() is not None:
        no, line = rd.next("demo block")
        tokens = line.split()
        if tokens[0] == "demo":
            if len(tokens) != 2 or not tokens[1].isdigit() or int(tokens[1]) != demo_index + 1:
                raise DataFormatError(E_SYNTAX, f"expected 'demo {demo_index + 1}'", path=path, line=no)
            demo_index += 1
            poses.append({})
        elif tokens[0] == "arm":
            if demo_index < 0:
                raise DataFormatError(E_SYNTAX, "arm block before any demo", path=path, line=no)
            if len(tokens) != 4 or tokens[1] not in arm_names:
                raise DataFormatError(E_SYNTAX, "arm header needs a known name, T, and D",
                                      path=path, line=no)
            name = tokens[1]
            try:
                horizon, width = int(tokens[2]), int(tokens[3])
            except ValueError:
                raise DataFormatError(E_SYNTAX, "arm header T and D must be integers",
                                      path=path, line=no) from None
            if width != state_dim:
                raise DataFormatError(E_RAGGED, f"arm block width {width} != state-dim {state_dim}",
                                      path=path, line=no)
            rows = np.empty((horizon, width))
            for r in range(horizon):
                rno, rline = rd.next(f"row {r} of arm {name!r}")
                rows[r] = _parse_floats(rline.split(), width, path, rno, f"arm {name!r} row {r}")
            if len(arms[name]) != demo_index:
                raise DataFormatError(E_SYNTAX, f"duplicate arm {name!r} block in demo {demo_index}",
                                      path=path, line=no)
            arms[name].append(rows)
        elif tokens[0] == "pose":
            if demo_index < 0:
                raise DataFormatError(E_SYNTAX, "pose line before any demo", path=path, line=no)
            if len(tokens) < 2:
                raise DataFormatError(E_SYNTAX, "pose line needs a name", path=path, line=no)
            name = tokens[1]
            values = _parse_floats(tokens[2:], state_dim + 4, path, no, f"pose {name!r}")
            quat = values[state_dim:]
            if abs(float(np.linalg.norm(quat)) - 1.0) > 1e-6:
                raise DataFormatError(
                    E_QUATERNION,
                    f"pose {name!r} in demo {demo_index} has a non-unit quaternion "
                    f"(|q| = {np.linalg.norm(quat):.6f})",
                    path=path, line=no,
                )
            poses[demo_index][name] = Pose(values[:state_dim], quat)
        else:
            raise DataFormatError(E_SYNTAX, f"unrecognized line {tokens[0]!r}", path=path, line=no)

    if demo_index < 0:
        raise DataFormatError(E_SYNTAX, "file contains no demonstrations", path=path)
    for name in arm_names:
        if len(arms[name]) != demo_index + 1:
            raise DataFormatError(E_SYNTAX, f"arm {name!r} is missing blocks", path=path)
    try:
        return DemoSet(dt, {a: tuple(v) for a, v in arms.items()}, tuple(poses), channels)
    except ValueError as e:
        raise DataFormatError(E_INVALID, str(e), path=path) from None


def load_demos(path: str | os.PathLike) -> DemoSet:
    return parse_demos(Path(path).read_text(), path)


# ---------------------------------------------------------------------------
# trajectory files


def format_trajectory(traj: Trajectory, channel_names: Sequence[str] | None = None) -> str:
    names = list(channel_names) if channel_names else [f"c{i}" for i in range(traj.state_dim)]
    lines = [f"# trajectory-version {TRAJECTORY_VERSION}",
             "# columns: time " + " ".join(names)]
    for t, row in zip(traj.times, traj.values):
        lines.append("\t".join([_fmt(t)] + [_fmt(v) for v in row]))
    return "\n".join(lines) + "\n"


def save_trajectory(traj: Trajectory, path: str | os.PathLike,
                    channel_names: Sequence[str] | None = None) -> None:
    write_output_files({Path(path).name: format_trajectory(traj, channel_names)},
                       Path(path).parent)


def load_trajectory(path: str | os.PathLike) -> Trajectory:
    rows = []
    width = None
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if width is None:
            width = len(tokens)
            if width < 2:
                raise DataFormatError(E_SYNTAX, "trajectory rows need time plus channels",
                                      path=path, line=no)
        rows.append(_parse_floats(tokens, width, path, no, "trajectory row"))
    if len(rows) < 2:
        raise DataFormatError(E_SYNTAX, "trajectory needs at least two rows", path=path)
    data = np.vstack(rows)
    try:
        return Trajectory(data[:, 0], data[:, 1:])
    except ValueError as e:
        raise DataFormatError(E_INVALID, str(e), path=path) from None


# ---------------------------------------------------------------------------
# model bundles


def _gaussian_to_json(g: Gaussian) -> dict:
    return {"mean": g.mean.tolist(), "cov": g.cov.tolist()}


def _gaussian_from_json(obj: dict) -> Gaussian:
    return Gaussian(np.array(obj["mean"]), np.array(obj["cov"]))


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """Fitted per-arm models plus the provenance needed to reuse them."""

    models: dict[str, TPGMM]
    dt: float
    channel_names: tuple[str, ...]
    em: EmConfig
    horizon: int
    start_means: dict[str, np.ndarray]
    frame_defs: tuple["FrameDef", ...]

    @property
    def arm_names(self) -> tuple[str, ...]:
        return tuple(self.models)

    @property
    def state_dim(self) -> int:
        return len(self.channel_names)


def format_models(bundle: ModelBundle) -> str:
    doc = {
        "format": BUNDLE_FORMAT,
        "version": 1,
        "dt": bundle.dt,
        "channels": list(bundle.channel_names),
        "horizon": bundle.horizon,
        "em": {
            "K": bundle.em.K,
            "max_iters": bundle.em.max_iters,
            "loglik_tol": bundle.em.loglik_tol,
            "cov_regularization": bundle.em.cov_regularization,
            "seed": bundle.em.seed,
        },
        "frame_defs": [{"origin": fd.origin, "use_rotation": fd.use_rotation}
                       for fd in bundle.frame_defs],
        "start_means": {a: v.tolist() for a, v in bundle.start_means.items()},
        "arms": {},
    }
    for arm, model in bundle.models.items():
        doc["arms"][arm] = {
            "priors": model.priors.tolist(),
            "has_relative_frame": model.has_relative_frame,
            "time_span": list(model.time_span),
            "loglik_history": list(model.loglik_history),
            "frames": [[_gaussian_to_json(g) for g in comps] for comps in model.frame_components],
        }
    return json.dumps(doc, indent=1) + "\n"


def save_models(bundle: ModelBundle, path: str | os.PathLike) -> None:
    write_output_files({Path(path).name: format_models(bundle)}, Path(path).parent)


def load_models(path: str | os.PathLike) -> ModelBundle:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(E_SYNTAX, f"invalid JSON: {e}", path=path) from None
    if doc.get("format") != BUNDLE_FORMAT or doc.get("version") != 1:
        raise DataFormatError(E_VERSION, "not a version-1 model bundle", path=path)
    try:
        em = EmConfig(**doc["em"])
        models = {}
        for arm, entry in doc["arms"].items():
            models[arm] = TPGMM(
                np.array(entry["priors"]),
                tuple(tuple(_gaussian_from_json(g) for g in comps) for comps in entry["frames"]),
                has_relative_frame=bool(entry["has_relative_frame"]),
                time_span=tuple(entry["time_span"]),
                loglik_history=tuple(entry.get("loglik_history", ())),
            )
        bundle = ModelBundle(
            models=models,
            dt=float(doc["dt"]),
            channel_names=tuple(doc["channels"]),
            em=em,
            horizon=int(doc["horizon"]),
            start_means={a: np.array(v, dtype=float) for a, v in doc["start_means"].items()},
            frame_defs=tuple(FrameDef(fd["origin"], bool(fd.get("use_rotation", False)))
                             for fd in doc["frame_defs"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(E_INVALID, f"malformed model bundle: {e}", path=path) from None
    return bundle


# ---------------------------------------------------------------------------
# plot series


def format_plot_series(
    series: Mapping[str, tuple[np.ndarray, np.ndarray]],
    gmm_summaries: Mapping[str, list[dict]] | None = None,
    metadata: Mapping[str, object] | None = None,
) -> str:
    doc = {
        "format": SERIES_FORMAT,
        "version": 1,
        "metadata": dict(metadata or {}),
        "series": {
            name: {
                "times": np.asarray(times, dtype=float).tolist(),
                "values": np.atleast_2d(np.asarray(values, dtype=float).T).T.tolist(),
            }
            for name, (times, values) in series.items()
        },
        "gmm_components": {k: list(v) for k, v in (gmm_summaries or {}).items()},
    }
    return json.dumps(doc, indent=1) + "\n"


def load_plot_series(path: str | os.PathLike) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(E_SYNTAX, f"invalid JSON: {e}", path=path) from None
    if doc.get("format") != SERIES_FORMAT or doc.get("version") != 1:
        raise DataFormatError(E_VERSION, "not a version-1 plot-series document", path=path)
    return doc


def gmm_summaries(gmm, time_dim: int = 0) -> list[dict]:
    """Compact per-component description for plotting: prior, time center,
    state mean, state covariance."""
    out = []
    state = [i for i in range(gmm.dim) if i != time_dim]
    for prior, g in zip(gmm.priors, gmm.components):
        out.append(
            {
                "prior": float(prior),
                "time_mean": float(g.mean[time_dim]),
                "mean": g.mean[state].tolist(),
                "cov": g.cov[np.ix_(state, state)].tolist(),
            }
        )
    return out


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class FrameDef:
    """Where a static observation frame comes from.

    ``origin`` is ``self:start``, ``self:end``, or ``pose:<name>``; the
    placeholder ``{arm}`` in pose names resolves to the arm being fitted.
    ``use_rotation`` additionally applies the pose quaternion (3-D only).
    """

    origin: str
    use_rotation: bool = False


DEFAULT_FRAME_DEFS = (FrameDef("pose:{arm}:start"), FrameDef("pose:{arm}:end"))


@dataclass(frozen=True)
class RunConfig:
    """Everything the fit and generate commands need beyond the data files."""

    em: EmConfig = field(default_factory=EmConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    frame_defs: tuple[FrameDef, ...] = DEFAULT_FRAME_DEFS
    order: int = 2
    control_cost: float = 1e-6
    output_dir: str | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if not np.isfinite(self.control_cost) or self.control_cost <= 0:
            raise ValueError("control_cost must be positive")
        if not self.frame_defs:
            raise ValueError("need at least one static frame definition")


def load_run_config(path: str | os.PathLike) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(E_SYNTAX, f"invalid JSON: {e}", path=path) from None
    try:
        return RunConfig(
            em=EmConfig(**doc.get("em", {})),
            generation=GenerationConfig(**doc.get("generation", {})),
            frame_defs=tuple(
                FrameDef(fd["origin"], bool(fd.get("use_rotation", False)))
                for fd in doc.get("frames", [dict(origin=f.origin, use_rotation=f.use_rotation)
                                             for f in DEFAULT_FRAME_DEFS])
            ),
            order=int(doc.get("order", 2)),
            control_cost=float(doc.get("control_cost", 1e-6)),
            output_dir=doc.get("output_dir"),
            extras=dict(doc.get("example", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(E_INVALID, f"malformed run config: {e}", path=path) from None


def resolve_frames(ds: DemoSet, arm: str, frame_defs: Sequence[FrameDef]) -> list[list[Frame]]:
    """Static frames per demonstration for one arm, from the configured origins."""
    out = []
    for d in range(ds.n_demos):
        frames = []
        for fd in frame_defs:
            origin = fd.origin.replace("{arm}", arm)
            rotation = None
            if origin == "self:start":
                position = ds.arms[arm][d][0]
            elif origin == "self:end":
                position = ds.arms[arm][d][-1]
            elif origin.startswith("pose:"):
                name = origin[len("pose:"):]
                pose = ds.poses[d].get(name)
                if pose is None:
                    raise DataFormatError(
                        E_FRAME_REF, f"demo {d} has no pose named {name!r} for frame {fd.origin!r}"
                    )
                position = pose.position
                if fd.use_rotation and not pose.is_identity_rotation:
                    if position.shape[0] != 3:
                        raise DataFormatError(
                            E_FRAME_REF, "rotating frames need 3-D state channels"
                        )
                    rotation = rotation_from_quaternion(pose.quaternion)
            else:
                raise DataFormatError(E_FRAME_REF, f"unknown frame origin {fd.origin!r}")
            if rotation is None:
                frames.append(Frame.translation(position))
            else:
                frames.append(Frame.from_rotation_translation(rotation, position))
        out.append(frames)
    return out


# ---------------------------------------------------------------------------
# atomic output emission


def write_output_files(outputs: Mapping[str, str | bytes], base_dir: str | os.PathLike) -> list[Path]:
    """Write a set of files under ``base_dir``; on failure remove everything
    written by this call before re-raising, so output sets are all-or-nothing."""
    base = Path(base_dir) if str(base_dir) else Path(".")
    written: list[Path] = []
    try:
        base.mkdir(parents=True, exist_ok=True)
        for rel, data in outputs.items():
            target = base / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            payload = data.encode() if isinstance(data, str) else data
            with open(target, "wb") as fh:
                fh.write(payload)
            written.append(target)
    except OSError as e:
        for p in written:
            try:
                p.unlink()
            except OSError:
                pass
        raise OutputWriteError(f"failed to write outputs under {base}: {e}") from e
    return written
