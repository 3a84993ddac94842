"""Experiment orchestrator: stage subcommands, manifests, artifacts.

Every stage writes one self-contained run directory:

    runs/<id>/
        manifest.json    resolved config, seeds, artifact paths, timings
        checkpoints/     policy / critic weights
        eval/            deterministic CSV and JSON artifacts
        logs/            wall-clock measurements (solve times, bench),
                         excluded from the bit-exact reproducibility
                         contract

Run directories are write-once; a stage never touches another stage's
directory. Exit codes: 2 for configuration problems, 3 for a missing or
unreadable dependency artifact, 1 for runtime faults. Failures print a
single structured JSON line on stderr.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from .backend import backend_name
from .env import LocomotionEnv, sample_command, should_terminate
from .imitation import (IMITATION_COLUMNS, DaggerTrainer,
                        encode_expert_action)
from .metrics import REPORT_COLUMNS, EvalReport, evaluate_log
from .model import RobotModel
from .mpc.expert import write_diagnostics
from .policy import (ACTOR_WIDTHS, CRITIC_WIDTHS, CheckpointError, MlpPolicy,
                     load_policy, save_policy)
from .rl import FINETUNE_COLUMNS, PpoTrainer
from .sim import (CONTROL_DT, SUBSTEPS_PER_TICK, SimFault, Simulator,
                  default_state)
from .trajlog import TrajectoryBuffer


class MissingArtifactError(FileNotFoundError):
    """A dependent stage's artifact is absent or unreadable (exit 3)."""


@dataclass
class StageOutput:
    """What a stage hands back to the shared runner."""

    artifacts: dict = field(default_factory=dict)
    consumed: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    payload: object = None  # in-process results, never serialized


# ---------------------------------------------------------------------------
# shared plumbing


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, columns, rows) -> None:
    """Stats CSV with shortest round-trip float formatting, so equal
    runs produce byte-identical files."""
    with open(path, "w", newline="") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv_columns(path) -> dict:
    """{column: float ndarray} for any stats CSV written by write_csv."""
    import csv as _csv

    with open(path, newline="") as f:
        reader = _csv.reader(f)
        header = next(reader)
        rows = [r for r in reader if r]
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(header)))
    return {name: data[:, i] for i, name in enumerate(header)}


def code_version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=10,
            cwd=Path(__file__).resolve().parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def prepare_run_dir(cfg: dict, stage: str, preset: str | None) -> Path:
    run_id = cfg["run"]["id"] or (
        f"{stage}-{preset}-s{cfg['run']['seed']}" if preset
        else f"{stage}-s{cfg['run']['seed']}")
    cfg["run"]["id"] = run_id
    run_dir = Path(cfg["run"]["out"]) / run_id
    if run_dir.exists():
        raise cfgmod.ConfigError(
            f"run directory {run_dir} already exists (runs are write-once; "
            f"pick a different --run-id or --out)")
    for sub in ("checkpoints", "eval", "logs"):
        (run_dir / sub).mkdir(parents=True)
    return run_dir


def write_manifest(run_dir: Path, stage: str, preset: str | None,
                   cfg: dict, out: StageOutput, total_s: float) -> None:
    manifest = {
        "run_id": cfg["run"]["id"],
        "stage": stage,
        "preset": preset or "",
        "code_version": code_version(),
        "seeds": {"root": cfg["run"]["seed"]},
        "config": cfg,
        "artifacts": out.artifacts,
        "consumed": out.consumed,
        "timings_s": {"total": round(total_s, 3), **out.timings},
    }
    with open(run_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest_config(path) -> dict:
    try:
        with open(path) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise cfgmod.ConfigError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise cfgmod.ConfigError(f"{path}: not valid JSON ({exc})")
    if "config" not in manifest:
        raise cfgmod.ConfigError(f"{path}: no config snapshot")
    return manifest


def _load_checkpoint_policy(path_str: str, what: str) -> MlpPolicy:
    if not path_str:
        raise MissingArtifactError(
            f"no {what} checkpoint given (set finetune.init_checkpoint, "
            f"pass --from, or use --from-scratch)")
    path = Path(path_str)
    if not path.exists():
        raise MissingArtifactError(f"{what} checkpoint missing: {path}")
    try:
        return load_policy(path)
    except CheckpointError as exc:
        raise MissingArtifactError(f"{path}: {exc}")


def _episode_rng(seed: int, episode: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, episode, stream])


def _deterministic_report_row(episode: int, report: EvalReport) -> list:
    """Solve-time fields are wall clock; they stay out of the
    deterministic CSVs (real values land under logs/)."""
    row = report.as_row()
    row[-2] = float("nan")
    row[-1] = float("nan")
    return [episode] + row


# ---------------------------------------------------------------------------
# stages


def run_expert_rollout(cfg: dict, run_dir: Path) -> StageOutput:
    model = RobotModel()
    schedule = cfgmod.gait_from(cfg)
    terrain = cfgmod.terrain_from(cfg)
    expert = cfgmod.expert_from(cfg, model, schedule, terrain)
    sim = Simulator(model, terrain, state=default_state(model, terrain))
    rng = np.random.default_rng([cfg["run"]["seed"], 11])

    ticks = cfg["rollout"]["ticks"]
    switch_every = cfg["rollout"]["switch_every"]
    switch_ticks = int(round(switch_every / CONTROL_DT)) if switch_every else 0
    ranges = cfgmod.imitation_command_ranges(cfg)
    command = np.asarray(cfg["rollout"]["command"], dtype=float)

    buffer = TrajectoryBuffer()
    terminated = False
    for k in range(ticks):
        if switch_ticks and k > 0 and k % switch_ticks == 0:
            command = sample_command(rng, ranges)
        t = k * CONTROL_DT
        targets, _info = expert.act(sim.state, t, command)
        tau_sum = np.zeros(12)
        contact = None
        try:
            for _ in range(SUBSTEPS_PER_TICK):
                tau, contact = sim.step(targets)
                tau_sum += tau
        except SimFault:
            terminated = True
            break
        buffer.append(sim.state.time, sim.state, tau_sum / SUBSTEPS_PER_TICK,
                      contact, command)
        if should_terminate(sim.state, model, terrain):
            terminated = True
            break

    traj_path = run_dir / "eval" / "trajectory.csv"
    buffer.save(traj_path)
    diag_path = run_dir / "logs" / "diagnostics.csv"
    write_diagnostics(diag_path, expert.diagnostics)

    solve_us = np.array([d.solve_us for d in expert.diagnostics])
    report = evaluate_log(buffer.as_dict(), model, terrain, solve_us=solve_us)
    write_csv(run_dir / "eval" / "report.csv", ["episode"] + REPORT_COLUMNS,
              [_deterministic_report_row(0, report)])
    with open(run_dir / "logs" / "solve_stats.json", "w") as f:
        json.dump({"solve_us_mean": report.solve_us_mean,
                   "solve_us_p99": report.solve_us_p99,
                   "calls": len(solve_us),
                   "degraded": int(expert.degraded_count)}, f, indent=2)

    return StageOutput(
        artifacts={"trajectory": "eval/trajectory.csv",
                   "report": "eval/report.csv",
                   "diagnostics": "logs/diagnostics.csv"},
        timings={"terminated_early": float(terminated)},
        payload={"report": report, "log": buffer.as_dict()})


def run_imitate(cfg: dict, run_dir: Path) -> StageOutput:
    if cfg["terrain"]["kind"] != "flat":
        raise cfgmod.ConfigError(
            "the imitation stage trains on flat ground; set terrain.kind "
            "= 'flat'")
    model = RobotModel()
    seed = cfg["run"]["seed"]
    im = cfg["imitation"]
    policy = MlpPolicy(ACTOR_WIDTHS, rng=np.random.default_rng(seed))
    trainer = DaggerTrainer(
        model, policy, seed=seed,
        num_envs=im["num_envs"], ticks_per_env=im["ticks_per_env"],
        epochs=im["epochs"], batch_size=im["batch_size"], lr=im["lr"],
        capacity=im["capacity"],
        command_ranges=cfgmod.imitation_command_ranges(cfg),
        holdout_envs=im["holdout_envs"], holdout_ticks=im["holdout_ticks"],
        schedule=cfgmod.gait_from(cfg),
        expert_factory=lambda sched, terr: cfgmod.expert_from(
            cfg, model, sched, terr),
        terrain=cfgmod.terrain_from(cfg))

    rows = []
    t_train0 = time.perf_counter()
    for _ in range(im["iterations"]):
        stats = trainer.iterate()
        rows.append(stats.as_row())
        click.echo(f"  iter {stats.iteration:3d} "
                   f"holdout={stats.holdout_mse:.4f} "
                   f"ep_len={stats.mean_episode_length:.0f}")
    train_s = time.perf_counter() - t_train0

    write_csv(run_dir / "eval" / "imitation.csv", IMITATION_COLUMNS, rows)
    ckpt = run_dir / "checkpoints" / "policy.lfnn"
    save_policy(ckpt, trainer.policy)
    summary = {
        "initial_holdout_mse": trainer.initial_holdout_mse,
        "final_holdout_mse": rows[-1][3] if rows else float("nan"),
        "iterations": len(rows),
        "dataset_size": trainer.dataset.n,
    }
    with open(run_dir / "eval" / "imitation_summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")

    return StageOutput(
        artifacts={"checkpoint": "checkpoints/policy.lfnn",
                   "stats": "eval/imitation.csv",
                   "summary": "eval/imitation_summary.json"},
        timings={"training": round(train_s, 3)},
        payload={"trainer": trainer, "summary": summary})


def run_finetune(cfg: dict, run_dir: Path) -> StageOutput:
    model = RobotModel()
    seed = cfg["run"]["seed"]
    ft = cfg["finetune"]
    consumed = {}
    if ft["from_scratch"]:
        policy = MlpPolicy(ACTOR_WIDTHS, rng=np.random.default_rng([seed, 0]))
    else:
        policy = _load_checkpoint_policy(ft["init_checkpoint"], "stage-1")
        if list(policy.widths) != list(ACTOR_WIDTHS):
            raise MissingArtifactError(
                f"checkpoint widths {policy.widths} do not match the actor "
                f"architecture {ACTOR_WIDTHS}")
        consumed["init_checkpoint"] = ft["init_checkpoint"]
    critic = MlpPolicy(CRITIC_WIDTHS, rng=np.random.default_rng([seed, 1]))

    trainer = PpoTrainer(
        model, policy, critic, cfgmod.ppo_config_from(cfg), seed=seed,
        randomization=cfgmod.randomization_from(cfg),
        curriculum=cfgmod.curriculum_from(cfg),
        schedule=cfgmod.gait_from(cfg))

    rows = []
    t0 = time.perf_counter()
    for _ in range(ft["iterations"]):
        stats = trainer.iterate()
        rows.append(stats.as_row())
        if stats.iteration % 20 == 0:
            click.echo(f"  iter {stats.iteration:4d} "
                       f"reward={stats.mean_reward:.3f} "
                       f"factor={stats.terrain_factor:.3f} "
                       f"ep_len={stats.episode_length:.0f}")
    train_s = time.perf_counter() - t0

    write_csv(run_dir / "eval" / "finetune.csv", FINETUNE_COLUMNS, rows)
    save_policy(run_dir / "checkpoints" / "policy.lfnn", trainer.policy)
    save_policy(run_dir / "checkpoints" / "critic.lfnn", trainer.critic)

    return StageOutput(
        artifacts={"checkpoint": "checkpoints/policy.lfnn",
                   "critic": "checkpoints/critic.lfnn",
                   "stats": "eval/finetune.csv"},
        consumed=consumed,
        timings={"training": round(train_s, 3)},
        payload={"trainer": trainer})


def evaluate_episode(cfg: dict, model: RobotModel, episode: int,
                     policy: MlpPolicy | None):
    """One eval episode; returns (EvalReport, TrajectoryBuffer, expert)."""
    seed = cfg["run"]["seed"]
    ev = cfg["evaluate"]
    terrain_seed = int(_episode_rng(seed, episode, 0).integers(2 ** 31))
    terrain = cfgmod.terrain_from(cfg, seed=terrain_seed)
    schedule = cfgmod.gait_from(cfg)
    env = LocomotionEnv(
        model, terrain, rng=_episode_rng(seed, episode, 1),
        randomization=(cfgmod.randomization_from(cfg) if ev["randomize"]
                       else None),
        schedule=schedule, init_noise=ev["init_noise"],
        max_episode_ticks=ev["ticks"])
    obs = env.reset(command=np.asarray(ev["command"], dtype=float))
    expert = None
    if policy is None:
        expert = cfgmod.expert_from(cfg, model, env.schedule, env.terrain)

    buffer = TrajectoryBuffer()
    for _ in range(ev["ticks"]):
        if policy is not None:
            action = policy.forward(obs)
        else:
            targets, _ = expert.act(env.state, env.state.time, env.command)
            action = encode_expert_action(targets, env.q_init,
                                          model.joint_limits)
        result = env.step(np.asarray(action, dtype=np.float64))
        obs = result.obs
        if result.fault:
            break
        buffer.append(result.time, env.state, result.tau_mean,
                      result.contact, env.command)
        if result.done:
            break

    solve_us = (np.array([d.solve_us for d in expert.diagnostics])
                if expert is not None else None)
    if len(buffer) == 0:  # faulted on the very first tick
        report = EvalReport(float("nan"), float("nan"), 0.0, False,
                            float("nan"), float("nan"))
    else:
        report = evaluate_log(buffer.as_dict(), model, env.terrain,
                              solve_us=solve_us)
    return report, buffer, expert


def run_evaluate(cfg: dict, run_dir: Path) -> StageOutput:
    model = RobotModel()
    ev = cfg["evaluate"]
    consumed = {}
    if ev["source"] == "expert":
        policy = None
    else:
        policy = _load_checkpoint_policy(ev["checkpoint"], "evaluation")
        consumed["checkpoint"] = ev["checkpoint"]

    rows = []
    reports = []
    solve_stats = []
    for episode in range(ev["episodes"]):
        report, buffer, expert = evaluate_episode(cfg, model, episode, policy)
        reports.append(report)
        rows.append(_deterministic_report_row(episode, report))
        if ev["save_trajectories"]:
            buffer.save(run_dir / "eval" / f"traj_ep{episode:03d}.csv")
        if expert is not None:
            solve_stats.append({"episode": episode,
                                "solve_us_mean": report.solve_us_mean,
                                "solve_us_p99": report.solve_us_p99})
        click.echo(f"  episode {episode:3d} "
                   f"survival={report.survival_time:.2f}s "
                   f"rms={report.tracking_error_linear:.3f}")

    write_csv(run_dir / "eval" / "episodes.csv",
              ["episode"] + REPORT_COLUMNS, rows)
    if solve_stats:
        with open(run_dir / "logs" / "solve_stats.json", "w") as f:
            json.dump(solve_stats, f, indent=2)

    return StageOutput(
        artifacts={"episodes": "eval/episodes.csv"},
        consumed=consumed,
        payload={"reports": reports})


def _time_calls(fn, calls: int, warmup: int) -> dict:
    for _ in range(warmup):
        fn()
    samples = np.empty(calls)
    for i in range(calls):
        t0 = time.perf_counter()
        fn()
        samples[i] = time.perf_counter() - t0
    return {"mean_us": float(samples.mean() * 1e6),
            "p50_us": float(np.percentile(samples, 50) * 1e6),
            "p99_us": float(np.percentile(samples, 99) * 1e6),
            "calls": calls}


def _bench_sim_backend(flag: str, substeps: int = 4000) -> dict:
    """Time raw simulator substeps in a subprocess pinned to one backend."""
    snippet = (
        "import json, time\n"
        "import numpy as np\n"
        "from quadlab.model import RobotModel\n"
        "from quadlab.sim import Simulator, default_state\n"
        "from quadlab.terrain import generate\n"
        "from quadlab.backend import backend_name\n"
        "model = RobotModel()\n"
        "terrain = generate('rough', 0.3, seed=0)\n"
        "sim = Simulator(model, terrain, state=default_state(model, terrain))\n"
        "targets = model.stand_pose.copy()\n"
        "for _ in range(200):\n"
        "    sim.step(targets)\n"
        f"n = {substeps}\n"
        "t0 = time.perf_counter()\n"
        "for _ in range(n):\n"
        "    sim.step(targets)\n"
        "dt = time.perf_counter() - t0\n"
        "print(json.dumps({'backend': backend_name(), "
        "'us_per_substep': dt / n * 1e6}))\n")
    env = dict(os.environ, QUADLAB_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", snippet],
                         capture_output=True, text=True, env=env,
                         timeout=600)
    if out.returncode != 0:
        return {"backend": f"QUADLAB_NUMBA={flag}",
                "error": out.stderr.strip()[-500:]}
    return json.loads(out.stdout.strip().splitlines()[-1])


def run_bench(cfg: dict, run_dir: Path, backends: bool = False) -> StageOutput:
    model = RobotModel()
    seed = cfg["run"]["seed"]
    calls = cfg["bench"]["calls"]
    warmup = cfg["bench"]["warmup"]
    terrain = cfgmod.terrain_from(cfg)
    schedule = cfgmod.gait_from(cfg)

    policy = MlpPolicy(ACTOR_WIDTHS, rng=np.random.default_rng(seed))
    obs = np.zeros(ACTOR_WIDTHS[0], dtype=np.float32)
    policy_stats = _time_calls(lambda: policy.forward(obs), calls, warmup)

    # the expert walks while being timed so the solver sees the realistic
    # mix of contact configurations and warm starts
    sim = Simulator(model, terrain, state=default_state(model, terrain))
    expert = cfgmod.expert_from(cfg, model, schedule, terrain)
    command = np.array([0.5, 0.0, 0.0])
    state_box = {"t": 0.0}

    def one_tick():
        targets, _ = expert.act(sim.state, state_box["t"], command)
        for _ in range(SUBSTEPS_PER_TICK):
            sim.step(targets)
        state_box["t"] += CONTROL_DT

    expert_stats = _time_calls(one_tick, calls, warmup)
    # subtract the sim stepping share measured separately
    sim_only = _time_calls(
        lambda: [sim.step(model.stand_pose) for _ in
                 range(SUBSTEPS_PER_TICK)], 200, 20)
    solve_us = expert_stats["mean_us"] - sim_only["mean_us"]

    result = {
        "backend": backend_name(),
        "policy_forward": policy_stats,
        "expert_tick_with_sim": expert_stats,
        "sim_tick_only": sim_only,
        "ddp_solve_us_estimate": solve_us,
        "speedup_policy_vs_solve": solve_us / policy_stats["mean_us"],
    }
    if backends:
        result["sim_backends"] = [_bench_sim_backend("1"),
                                  _bench_sim_backend("0")]

    with open(run_dir / "logs" / "bench.json", "w") as f:
        json.dump(result, f, indent=2)
    click.echo(f"  policy forward: {policy_stats['mean_us']:.1f} us")
    click.echo(f"  DDP solve:      {solve_us:.1f} us")
    click.echo(f"  speedup:        {result['speedup_policy_vs_solve']:.1f}x")

    return StageOutput(artifacts={"bench": "logs/bench.json"},
                       payload=result)


def run_export_plots(run_dirs: list, run_dir: Path) -> StageOutput:
    """Collect plot-ready CSVs from finished runs.

    Emits learning_curves.csv, robustness.csv, tracking.csv, and
    phase_portraits.csv under eval/, labeled by source run id.
    """
    from .metrics import heading_velocities, knee_cycle_curves
    from .trajlog import read_trajectory

    curves = []
    robustness = []
    tracking = []
    portraits = []
    for raw in run_dirs:
        src = Path(raw)
        manifest_path = src / "manifest.json"
        if not manifest_path.exists():
            raise MissingArtifactError(f"{src}: no manifest.json")
        with open(manifest_path) as f:
            manifest = json.load(f)
        label = manifest["run_id"]
        seed = manifest["seeds"]["root"]
        stage = manifest["stage"]
        if stage == "finetune":
            cols = read_csv_columns(src / "eval" / "finetune.csv")
            for i in range(len(cols["iter"])):
                curves.append([label, seed, int(cols["iter"][i]),
                               cols["mean_reward"][i],
                               cols["terrain_factor"][i]])
        elif stage in ("evaluate", "expert-rollout"):
            name = "episodes.csv" if stage == "evaluate" else "report.csv"
            cols = read_csv_columns(src / "eval" / name)
            for i in range(len(cols["episode"])):
                robustness.append([label, seed, int(cols["episode"][i]),
                                   cols["survival_time"][i],
                                   int(cols["success"][i]),
                                   cols["cot"][i], cols["ppi"][i],
                                   cols["tracking_error_linear"][i]])
            trajs = sorted(src.glob("eval/traj_ep*.csv"))
            if stage == "expert-rollout":
                trajs = [src / "eval" / "trajectory.csv"]
            if trajs:
                log = read_trajectory(trajs[0])
                hvx, hvy = heading_velocities(log)
                for i in range(len(log["time"])):
                    tracking.append([label, log["time"][i],
                                     hvx[i], hvy[i], log["wz"][i],
                                     log["cmd_vx"][i], log["cmd_vy"][i],
                                     log["cmd_wz"][i]])
                try:
                    for pair, side, angle, vel in knee_cycle_curves(log):
                        for i in range(len(angle)):
                            portraits.append([label, pair, side, i,
                                              angle[i], vel[i]])
                except ValueError:
                    pass  # too short for a full gait cycle

    def _write(name, columns, rows):
        write_csv(run_dir / "eval" / name, columns, rows)

    _write("learning_curves.csv",
           ["method", "seed", "iter", "mean_reward", "terrain_factor"],
           curves)
    _write("robustness.csv",
           ["method", "seed", "episode", "survival_time", "success",
            "cot", "ppi", "tracking_error_linear"], robustness)
    with open(run_dir / "eval" / "tracking.csv", "w", newline="") as f:
        f.write("method,time,vx,vy,wz,cmd_vx,cmd_vy,cmd_wz\n")
        for row in tracking:
            f.write(row[0] + "," + ",".join(_fmt(v) for v in row[1:]) + "\n")
    with open(run_dir / "eval" / "phase_portraits.csv", "w",
              newline="") as f:
        f.write("method,pair,side,point,angle,velocity\n")
        for row in portraits:
            f.write(",".join(str(v) for v in row[:4]) + ","
                    + ",".join(_fmt(v) for v in row[4:]) + "\n")

    return StageOutput(
        artifacts={name: f"eval/{name}" for name in
                   ("learning_curves.csv", "robustness.csv", "tracking.csv",
                    "phase_portraits.csv")},
        consumed={"runs": [str(r) for r in run_dirs]})


# ---------------------------------------------------------------------------
# click wiring


def _die(code: int, stage: str, kind: str, detail: str):
    click.echo(json.dumps({"error": {"stage": stage, "kind": kind,
                                     "detail": detail}}), err=True)
    sys.exit(code)


def _run_stage(stage: str, run_fn, preset, config_path, manifest_path,
               overrides):
    try:
        if manifest_path:
            manifest = load_manifest_config(manifest_path)
            cfg = cfgmod.resolve(overrides=manifest["config"])
            if overrides:
                cfgmod._merge(cfg, overrides)
            if not overrides.get("run", {}).get("id"):
                cfg["run"]["id"] = manifest["run_id"] + "-rerun"
            preset = manifest.get("preset") or None
        else:
            cfg = cfgmod.resolve(preset, config_path, overrides)
        run_dir = prepare_run_dir(cfg, stage, preset)
    except cfgmod.ConfigError as exc:
        _die(2, stage, "config", str(exc))

    t0 = time.perf_counter()
    try:
        out = run_fn(cfg, run_dir)
    except cfgmod.ConfigError as exc:
        _die(2, stage, "config", str(exc))
    except MissingArtifactError as exc:
        _die(3, stage, "missing-artifact", str(exc))
    except Exception as exc:  # noqa: BLE001 - boundary fault report
        _die(1, stage, "runtime", f"{type(exc).__name__}: {exc}")
    write_manifest(run_dir, stage, preset, cfg, out,
                   time.perf_counter() - t0)
    click.echo(f"{stage}: {run_dir}")
    return out


def _common_options(fn):
    for opt in reversed([
        click.option("--config", "config_path", type=click.Path(),
                     default=None, help="TOML config file."),
        click.option("--manifest", "manifest_path", type=click.Path(),
                     default=None,
                     help="Re-run from a manifest's config snapshot."),
        click.option("--preset", type=click.Choice(cfgmod.PRESET_NAMES),
                     default=None),
        click.option("--seed", type=int, default=None),
        click.option("--out", type=click.Path(), default=None),
        click.option("--run-id", type=str, default=None),
        click.option("--terrain", "terrain_kind", default=None,
                     help="flat|rough|discrete|step|cliff|slippery|conveyor"),
        click.option("--terrain-factor", type=float, default=None),
        click.option("--iters", type=int, default=None),
    ]):
        fn = opt(fn)
    return fn


def _overrides(seed, out, run_id, terrain_kind, terrain_factor,
               iters_key=None, iters=None, extra=None) -> dict:
    tree: dict = {}

    def put(path, value):
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value

    if seed is not None:
        put(("run", "seed"), seed)
    if out is not None:
        put(("run", "out"), out)
    if run_id is not None:
        put(("run", "id"), run_id)
    if terrain_kind is not None:
        put(("terrain", "kind"), terrain_kind)
    if terrain_factor is not None:
        put(("terrain", "factor"), terrain_factor)
    if iters is not None and iters_key is not None:
        put(iters_key, iters)
    for path, value in (extra or {}).items():
        if value is not None:
            put(path, value)
    return tree


@click.group()
def main():
    """Locomotion pipeline: expert demos, cloning, finetuning, metrics."""


@main.command("expert-rollout")
@_common_options
@click.option("--ticks", type=int, default=None)
@click.option("--command", type=float, nargs=3, default=None)
@click.option("--switch-every", type=float, default=None,
              help="Resample the command every N seconds (0 = never).")
def expert_rollout_cmd(config_path, manifest_path, preset, seed, out, run_id,
                       terrain_kind, terrain_factor, iters, ticks, command,
                       switch_every):
    """Run the MPC expert closed-loop and log trajectory + metrics."""
    overrides = _overrides(
        seed, out, run_id, terrain_kind, terrain_factor,
        iters_key=("rollout", "ticks"), iters=iters,
        extra={("rollout", "ticks"): ticks,
               ("rollout", "command"): list(command) if command else None,
               ("rollout", "switch_every"): switch_every})
    _run_stage("expert-rollout", run_expert_rollout, preset, config_path,
               manifest_path, overrides)


@main.command("imitate")
@_common_options
def imitate_cmd(config_path, manifest_path, preset, seed, out, run_id,
                terrain_kind, terrain_factor, iters):
    """Clone the expert with aggregated relabeling (stage 1)."""
    overrides = _overrides(seed, out, run_id, terrain_kind, terrain_factor,
                           iters_key=("imitation", "iterations"), iters=iters)
    _run_stage("imitate", run_imitate, preset, config_path, manifest_path,
               overrides)


@main.command("finetune")
@_common_options
@click.option("--from", "init_checkpoint", type=click.Path(), default=None,
              help="Stage-1 policy checkpoint to start from.")
@click.option("--from-scratch", is_flag=True, default=False,
              help="Random init (vanilla baselines).")
def finetune_cmd(config_path, manifest_path, preset, seed, out, run_id,
                 terrain_kind, terrain_factor, iters, init_checkpoint,
                 from_scratch):
    """Constrained PPO finetuning on procedural terrains (stage 2)."""
    overrides = _overrides(
        seed, out, run_id, terrain_kind, terrain_factor,
        iters_key=("finetune", "iterations"), iters=iters,
        extra={("finetune", "init_checkpoint"): init_checkpoint,
               ("finetune", "from_scratch"): True if from_scratch else None})
    _run_stage("finetune", run_finetune, preset, config_path, manifest_path,
               overrides)


@main.command("evaluate")
@_common_options
@click.option("--from", "checkpoint", type=click.Path(), default=None,
              help="Policy checkpoint; omit with --preset expert.")
@click.option("--episodes", type=int, default=None)
@click.option("--command", type=float, nargs=3, default=None)
@click.option("--save-trajectories", is_flag=True, default=False)
def evaluate_cmd(config_path, manifest_path, preset, seed, out, run_id,
                 terrain_kind, terrain_factor, iters, checkpoint, episodes,
                 command, save_trajectories):
    """Metrics battery over a checkpoint or the expert."""
    overrides = _overrides(
        seed, out, run_id, terrain_kind, terrain_factor,
        iters_key=("evaluate", "episodes"), iters=iters,
        extra={("evaluate", "checkpoint"): checkpoint,
               ("evaluate", "episodes"): episodes,
               ("evaluate", "command"): list(command) if command else None,
               ("evaluate", "save_trajectories"):
                   True if save_trajectories else None})
    _run_stage("evaluate", run_evaluate, preset, config_path, manifest_path,
               overrides)


@main.command("bench")
@_common_options
@click.option("--backends", is_flag=True, default=False,
              help="Also compare numba vs numpy simulator kernels.")
def bench_cmd(config_path, manifest_path, preset, seed, out, run_id,
              terrain_kind, terrain_factor, iters, backends):
    """Wall-clock comparison: policy forward vs one DDP solve."""
    overrides = _overrides(seed, out, run_id, terrain_kind, terrain_factor,
                           iters_key=("bench", "calls"), iters=iters)
    _run_stage("bench",
               lambda cfg, rd: run_bench(cfg, rd, backends=backends),
               preset, config_path, manifest_path, overrides)


@main.command("export-plots")
@_common_options
@click.argument("runs", nargs=-1, type=click.Path())
def export_plots_cmd(config_path, manifest_path, preset, seed, out, run_id,
                     terrain_kind, terrain_factor, iters, runs):
    """Bundle finished runs into plot-ready CSVs."""
    if not runs:
        _die(2, "export-plots", "config", "no input run directories given")
    overrides = _overrides(seed, out, run_id, terrain_kind, terrain_factor)
    _run_stage("export-plots",
               lambda cfg, rd: run_export_plots(list(runs), rd),
               preset, config_path, manifest_path, overrides)


if __name__ == "__main__":
    main()
