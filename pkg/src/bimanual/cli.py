"""Command-line pipeline: synthesize demos, fit models, generate, evaluate.

Every command is deterministic given its input files and seeds, exits 0 on
success, and reports failures as one JSON object on stderr. Output sets are
written all-or-nothing.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, plotting
from .dataset import Trajectory
from .em import EmConfig
from .frames import Frame, build_relative_frames, fit_tpgmm, reconstruct_gmm
from .gaussians import Diagnostics
from .pipelines import (
    GenerationConfig,
    TaskInstance,
    generate_follower,
    generate_independent,
    generate_synergistic,
)
from .synth import MeetingTaskSpec, make_meeting_demos

ENV_OUT_DIR = "BIMANUAL_OUT_DIR"


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = 1):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def _print_error(code: str, message: str) -> None:
    print(json.dumps({"error": {"code": code, "message": message}}), file=sys.stderr)


def _out_dir(args, default: str = ".") -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get(ENV_OUT_DIR)
    return Path(env) if env else Path(default)


def _parse_vector(text: str, name: str) -> np.ndarray:
    try:
        vec = np.array([float(t) for t in text.split(",") if t.strip() != ""])
    except ValueError:
        raise CliError("bad-argument", f"{name} must be comma-separated numbers", exit_code=2) from None
    if vec.size == 0:
        raise CliError("bad-argument", f"{name} is empty", exit_code=2)
    return vec


def _load_config(args) -> dataio.RunConfig:
    if getattr(args, "config", None):
        return dataio.load_run_config(args.config)
    return dataio.RunConfig()


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    spec = MeetingTaskSpec(
        dims=args.dims,
        n_demos=args.n_demos,
        T=args.horizon,
        seed=args.seed,
        dt=args.dt,
        end_annotation_jitter=args.end_jitter,
        arc_style=args.style,
    )
    ds = make_meeting_demos(spec)
    out = _out_dir(args)
    name = args.name or f"meeting{args.dims}d.demos.txt"
    dataio.write_output_files({name: dataio.format_demos(ds)}, out)
    print(json.dumps({"demos": str(out / name), "n_demos": ds.n_demos, "dims": ds.state_dim}))
    return 0


# ---------------------------------------------------------------------------
# fit


def _cmd_fit(args) -> int:
    cfg = _load_config(args)
    em = cfg.em
    overrides = {}
    if args.components is not None:
        overrides["K"] = args.components
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_iters is not None:
        overrides["max_iters"] = args.max_iters
    if args.reg is not None:
        overrides["cov_regularization"] = args.reg
    if overrides:
        em = EmConfig(
            K=overrides.get("K", em.K),
            max_iters=overrides.get("max_iters", em.max_iters),
            loglik_tol=em.loglik_tol,
            cov_regularization=overrides.get("cov_regularization", em.cov_regularization),
            seed=overrides.get("seed", em.seed),
        )
    ds = dataio.load_demos(args.demos)
    if len(ds.arm_names) != 2:
        raise CliError("bad-input", "fitting coordination models needs a two-arm demo file")
    models = {}
    start_means = {}
    logliks = {}
    for arm in ds.arm_names:
        partner = ds.partner(arm)
        static = dataio.resolve_frames(ds, arm, cfg.frame_defs)
        frames_per_demo = []
        for d in range(ds.n_demos):
            track = build_relative_frames(ds.augmented(partner, d))
            frames_per_demo.append(list(static[d]) + [track])
        model = fit_tpgmm(ds, arm, frames_per_demo, em)
        models[arm] = model
        start_means[arm] = np.mean([ds.arms[arm][d][0] for d in range(ds.n_demos)], axis=0)
        logliks[arm] = model.loglik_history[-1]
    channels = ds.channel_names or tuple(f"c{i}" for i in range(ds.state_dim))
    bundle = dataio.ModelBundle(
        models=models,
        dt=ds.dt,
        channel_names=channels,
        em=em,
        horizon=ds.horizon(0),
        start_means=start_means,
        frame_defs=cfg.frame_defs,
    )
    out = _out_dir(args)
    name = args.name or "models.json"
    dataio.write_output_files({name: dataio.format_models(bundle)}, out)
    print(json.dumps({"models": str(out / name), "K": em.K, "final_loglik": logliks}))
    return 0


# ---------------------------------------------------------------------------
# generate


def _build_task(bundle: dataio.ModelBundle, args) -> tuple[TaskInstance, np.ndarray | None]:
    arms = bundle.arm_names
    d = bundle.state_dim
    if args.task:
        doc = json.loads(Path(args.task).read_text())
        frames = {}
        x1 = {}
        for arm in arms:
            entry = doc["frames"][arm]
            frames[arm] = tuple(
                Frame.translation(np.array(f["b"], dtype=float)) if "A" not in f
                else Frame(np.array(f["A"], dtype=float), np.array(f["b"], dtype=float))
                for f in entry
            )
            x1[arm] = np.array(doc["x1"][arm], dtype=float)
        meeting = np.array(doc["meeting"], dtype=float) if "meeting" in doc else None
        return TaskInstance(frames, x1), meeting
    if not args.meeting:
        raise CliError("bad-argument", "generate needs --meeting or --task", exit_code=2)
    meeting = _parse_vector(args.meeting, "--meeting")
    if meeting.size != d:
        raise CliError("bad-argument", f"--meeting needs {d} coordinates", exit_code=2)
    if args.starts:
        parts = args.starts.split(";")
        if len(parts) != len(arms):
            raise CliError("bad-argument", f"--starts needs {len(arms)} groups separated by ';'",
                           exit_code=2)
        starts = {arm: _parse_vector(p, "--starts") for arm, p in zip(arms, parts)}
    else:
        starts = {arm: bundle.start_means[arm].copy() for arm in arms}
    for arm, s in starts.items():
        if s.size != d:
            raise CliError("bad-argument", f"start for {arm!r} needs {d} coordinates", exit_code=2)
    axis = starts[arms[0]] - starts[arms[1]]
    norm = float(np.linalg.norm(axis))
    axis = axis / norm if norm > 0 else np.eye(d)[0]
    if len(bundle.frame_defs) != 2:
        raise CliError(
            "bad-argument",
            "--meeting task construction expects the two-frame (start, end) layout; "
            "use --task for custom frame sets",
            exit_code=2,
        )
    frames = {}
    x1 = {}
    for arm, side in zip(arms, (1.0, -1.0)):
        end = meeting + side * args.end_spread * axis
        frames[arm] = (Frame.translation(starts[arm]), Frame.translation(end))
        x1[arm] = starts[arm]
    return TaskInstance(frames, x1), meeting


def _trajectory_outputs(bundle, trajectories, baseline, meeting, summary, demos=None):
    channels = bundle.channel_names
    outputs = {}
    for arm, traj in trajectories.items():
        outputs[f"{arm}_trajectory.txt"] = dataio.format_trajectory(traj, channels)
    for arm, traj in baseline.items():
        outputs[f"{arm}_baseline_trajectory.txt"] = dataio.format_trajectory(traj, channels)
    arms = list(trajectories)
    times = trajectories[arms[0]].times
    gap = np.linalg.norm(trajectories[arms[0]].values - trajectories[arms[1]].values, axis=1)
    base_gap = np.linalg.norm(baseline[arms[0]].values - baseline[arms[1]].values, axis=1)
    rel = trajectories[arms[0]].values - trajectories[arms[1]].values

    series = {}
    for arm in arms:
        series[f"{arm}_generated"] = (times, trajectories[arm].values)
        series[f"{arm}_baseline"] = (times, baseline[arm].values)
    series["relative_gap"] = (times, gap[:, None])
    series["baseline_relative_gap"] = (times, base_gap[:, None])
    series["relative_offset"] = (times, rel)

    summaries = {}
    for arm in arms:
        model = bundle.models[arm]
        task_gmm = reconstruct_gmm(model, summary["_task_frames"][arm], None, 0.0)
        summaries[arm] = dataio.gmm_summaries(task_gmm)
        rel_gmm = model.relative_gmm() if model.has_relative_frame else None
        if rel_gmm is not None and f"relative_reference_{arm}" not in series:
            from .pipelines import time_references

            rel_means, _ = time_references(rel_gmm, times)
            series[f"relative_reference_{arm}"] = (times, rel_means)

    meta = {k: v for k, v in summary.items() if not k.startswith("_")}
    outputs["plot_series.json"] = dataio.format_plot_series(series, summaries, meta)
    outputs["summary.json"] = json.dumps(meta, indent=1) + "\n"
    outputs["overview.png"] = plotting.render_overview(
        trajectories, baseline, demos, meeting,
        title=f"{meta['mode']} generation (sigma={meta['sigma']:g})",
    )
    outputs["relative_gap.png"] = plotting.render_gap_curve(times, gap, base_gap)
    return outputs, float(gap[-1]), float(base_gap[-1])


def _cmd_generate(args) -> int:
    bundle = dataio.load_models(args.models)
    cfg_base = _load_config(args).generation
    sigma = 0.0 if args.no_coordination else (args.sigma if args.sigma is not None else cfg_base.sigma)
    cfg = GenerationConfig(
        T_out=args.t_out or bundle.horizon,
        sigma=sigma,
        coordination_site=args.site or cfg_base.coordination_site,
        synergy_iters=args.synergy_iters or cfg_base.synergy_iters,
        synergy_tol=args.synergy_tol if args.synergy_tol is not None else cfg_base.synergy_tol,
        damping=cfg_base.damping,
    )
    task, meeting = _build_task(bundle, args)
    arms = list(bundle.arm_names)
    diag = Diagnostics()
    order, r = args.order, args.r

    if args.mode == "synergistic":
        result = generate_synergistic(
            bundle.models, task, cfg, order=order, control_cost=r, diagnostics=diag
        )
        trajectories = result.trajectories
        baseline = {
            a: generate_independent(bundle.models[a], task, cfg, arm=a, order=order, control_cost=r)
            for a in arms
        }
        extra = {
            "iterations": result.iterations,
            "displacement_log": list(result.displacement_log),
        }
    else:
        if not args.leader:
            raise CliError("bad-argument", "leader-follower mode needs --leader FILE", exit_code=2)
        leader_arm = args.leader_arm or arms[0]
        if leader_arm not in arms:
            raise CliError("bad-argument", f"unknown leader arm {leader_arm!r}", exit_code=2)
        follower_arm = arms[1] if leader_arm == arms[0] else arms[0]
        leader = dataio.load_trajectory(args.leader).resample(cfg.T_out)
        follower = generate_follower(
            bundle.models[follower_arm], leader, task, cfg,
            arm=follower_arm, order=order, control_cost=r, diagnostics=diag,
        )
        base_cfg = GenerationConfig(
            T_out=cfg.T_out, sigma=0.0, coordination_site=cfg.coordination_site,
            synergy_iters=cfg.synergy_iters, synergy_tol=cfg.synergy_tol, damping=cfg.damping,
        )
        follower_base = generate_follower(
            bundle.models[follower_arm], leader, task, base_cfg,
            arm=follower_arm, order=order, control_cost=r,
        )
        trajectories = {leader_arm: leader, follower_arm: follower}
        baseline = {leader_arm: leader, follower_arm: follower_base}
        # keep the bundle's arm order in the outputs
        trajectories = {a: trajectories[a] for a in arms}
        baseline = {a: baseline[a] for a in arms}
        extra = {"leader_arm": leader_arm, "follower_arm": follower_arm}

    summary = {
        "mode": args.mode,
        "sigma": cfg.sigma,
        "coordination_site": cfg.coordination_site,
        "T_out": cfg.T_out,
        "order": order,
        "control_cost": r,
        "meeting": meeting.tolist() if meeting is not None else None,
        "diagnostics": dict(diag.counters),
        "warnings": list(diag.warnings),
        "_task_frames": task.frames,
    }
    summary.update(extra)
    demos = dataio.load_demos(args.demos) if args.demos else None
    outputs, gap, base_gap = _trajectory_outputs(bundle, trajectories, baseline, meeting, summary, demos)
    out = _out_dir(args)
    dataio.write_output_files(outputs, out)
    print(json.dumps({
        "out_dir": str(out),
        "endpoint_gap": gap,
        "baseline_endpoint_gap": base_gap,
    }))
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    traj_a = dataio.load_trajectory(args.trajectories[0])
    traj_b = dataio.load_trajectory(args.trajectories[1])
    if traj_b.horizon != traj_a.horizon:
        traj_b = traj_b.resample(traj_a.horizon)
    times = traj_a.times
    rel = traj_a.values - traj_b.values
    endpoint_gap = float(np.linalg.norm(rel[-1]))

    rel_ref = np.zeros_like(rel)
    if args.series:
        doc = dataio.load_plot_series(args.series)
        for key in doc["series"]:
            if key.startswith("relative_reference"):
                entry = doc["series"][key]
                ref_tr = Trajectory(np.array(entry["times"]), np.array(entry["values"]))
                rel_ref = ref_tr.resample(traj_a.horizon).values
                break
    relative_error = float(np.sqrt(np.mean(np.sum((rel - rel_ref) ** 2, axis=1))))

    metrics = {
        "endpoint_gap": endpoint_gap,
        "relative_tracking_error": relative_error,
        "horizon": traj_a.horizon,
    }
    for label, ref_path, traj in (("a", args.ref_a, traj_a), ("b", args.ref_b, traj_b)):
        if ref_path:
            ref = dataio.load_trajectory(ref_path).resample(traj.horizon)
            rmse = float(np.sqrt(np.mean(np.sum((traj.values - ref.values) ** 2, axis=1))))
            metrics[f"rmse_vs_reference_{label}"] = rmse

    outputs = {
        "metrics.json": json.dumps(metrics, indent=1) + "\n",
        "eval_gap.png": plotting.render_gap_curve(
            times, np.linalg.norm(rel, axis=1), title="evaluated inter-arm gap"
        ),
    }
    out = _out_dir(args)
    dataio.write_output_files(outputs, out)
    print(json.dumps(metrics))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bimanual",
        description="Learn coordinated two-arm motions from demonstrations and "
                    "generate them for new task parameters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit a synthetic meeting-task demo file")
    p.add_argument("--dims", type=int, choices=(2, 3), default=2)
    p.add_argument("--n-demos", type=int, default=3)
    p.add_argument("--horizon", "-T", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--end-jitter", type=float, default=0.5,
                   help="stddev of the end-annotation noise (state units)")
    p.add_argument("--style", type=float, default=0.35, help="arc lift, fraction of the chord")
    p.add_argument("--name", help="output file name (default meeting<dims>d.demos.txt)")
    p.add_argument("-o", "--out", help=f"output directory (default ${ENV_OUT_DIR} or .)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="fit per-arm coordination models from a demo file")
    p.add_argument("demos", help="demo file (see the synth command)")
    p.add_argument("-K", "--components", type=int, help="mixture size (default 6)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--reg", type=float, help="covariance regularization")
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("--name", help="output file name (default models.json)")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("generate", help="generate coordinated trajectories for a new task")
    p.add_argument("--models", required=True, help="model bundle from the fit command")
    p.add_argument("--mode", choices=("leader-follower", "synergistic"), default="synergistic")
    p.add_argument("--meeting", help="new meeting point, e.g. 5,5")
    p.add_argument("--starts", help="per-arm start points, e.g. '0.5,1;7.5,1'")
    p.add_argument("--end-spread", type=float, default=0.75,
                   help="per-arm offset of the end annotations around the meeting point")
    p.add_argument("--task", help="task-instance JSON (alternative to --meeting)")
    p.add_argument("--sigma", type=float, help="coordination weight (default from config)")
    p.add_argument("--site", choices=("representation", "control", "both"))
    p.add_argument("--no-coordination", action="store_true",
                   help="drop the relative expert (equivalent to --sigma 0)")
    p.add_argument("--t-out", type=int, help="output horizon (default: training horizon)")
    p.add_argument("--synergy-iters", type=int)
    p.add_argument("--synergy-tol", type=float)
    p.add_argument("--order", type=int, choices=(1, 2), default=2)
    p.add_argument("--r", type=float, default=1e-6, help="control cost weight")
    p.add_argument("--leader", help="leader trajectory file (leader-follower mode)")
    p.add_argument("--leader-arm", help="which arm the leader file drives")
    p.add_argument("--demos", help="demo file to overlay in the figures")
    p.add_argument("--config", help="run-config JSON")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("eval", help="metrics for a generated trajectory pair")
    p.add_argument("trajectories", nargs=2, help="two trajectory files")
    p.add_argument("--series", help="plot-series JSON with the relative reference")
    p.add_argument("--ref-a", help="reference trajectory for the first file")
    p.add_argument("--ref-b", help="reference trajectory for the second file")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except CliError as e:
        _print_error(e.code, str(e))
        return e.exit_code
    except dataio.DataFormatError as e:
        _print_error(e.code, str(e))
        return 2 if e.code == dataio.E_FRAME_REF else 1
    except dataio.OutputWriteError as e:
        _print_error(e.code, str(e))
        return 1
    except (ValueError, KeyError, OSError) as e:
        _print_error("error", str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
