"""Run configuration: defaults, presets, TOML files, and flag overrides.

Resolution is total. `resolve` starts from the complete default tree,
folds in the chosen preset, then the config file, then explicit
overrides, and returns a snapshot in which every key is present. The
snapshot is what the run manifest records, so a manifest never hides a
default. Unknown keys and type mismatches are rejected rather than
silently dropped.

The `*_from` factories build the domain objects from a snapshot; the
CLI stages and the acceptance fixtures share them so both run the same
code path.
"""

from __future__ import annotations

import copy
import sys

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .env import RandomizationSpec
from .gait import GaitSchedule
from .model import RobotModel
from .mpc.expert import MpcExpert
from .policy import ObservationNoise
from .rl import Curriculum, PpoConfig, RewardWeights
from .terrain import TERRAIN_KINDS, Terrain, generate


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this to exit code 2."""


PRESET_NAMES = ("ifm-sr", "ifm-cr", "vanilla-sr", "vanilla-cr",
                "dagger-only", "expert")

# --terrain spells discrete_rough without the underscore
TERRAIN_ALIASES = {"discrete": "discrete_rough"}


def default_config() -> dict:
    """The complete default tree; every tunable appears here."""
    return {
        "run": {
            "seed": 0,
            "out": "runs",
            "id": "",
        },
        "gait": {
            "swing_duration": 0.13,
            "stance_duration": 0.13,
        },
        "terrain": {
            "kind": "flat",
            "factor": 0.0,
            "length": 24.0,
            "width": 8.0,
            "cell_size": 0.05,
            "friction": 0.8,
            "x_start": -4.0,
            "base_frequency": 1.4,
        },
        "expert": {
            "horizon": 26,
            "dt": 0.01,
            "k_raibert": 0.15,
            "h_apex": 0.06,
            "f_max": 120.0,
            "swing_kp": 250.0,
            "swing_kd": 12.0,
            "cmd_slew_lin": 3.0,
            "cmd_slew_ang": 6.0,
            "friction_fallback": 0.6,
            "q_diag": [10.0, 10.0, 10.0, 0.0, 0.0, 50.0,
                       1.0, 1.0, 1.0, 5.0, 5.0, 5.0],
            # per-foot (tangential x, tangential y, normal) force prices
            "r_diag_foot": [3e-4, 3e-4, 1e-5],
        },
        "imitation": {
            "iterations": 40,
            "num_envs": 10,
            "ticks_per_env": 400,
            "epochs": 10,
            "batch_size": 512,
            "lr": 1e-3,
            "capacity": 400_000,
            "holdout_envs": 6,
            "holdout_ticks": 250,
            "command_low": [-0.3, -0.5, -0.6],
            "command_high": [1.0, 0.5, 0.6],
        },
        "finetune": {
            "mode": "SR",
            "vanilla": False,
            "from_scratch": False,
            "init_checkpoint": "",
            "iterations": 500,
            "num_envs": 32,
            "horizon": 100,
            "epochs": 4,
            "minibatch": 4096,
            "actor_lr": 1e-5,
            "critic_lr": 1e-3,
            "gamma": 0.99,
            "lam": 0.95,
            "init_std": 1.0,
            "clip": 0.05,
        },
        "reward": {
            "tracking": 1.0,
            "tracking_scale": 0.25,
            "movement": 0.2,
            "torque": 2e-4,
            "contact": 0.3,
        },
        "curriculum": {
            "factor": 0.01,
            "growth": 0.96,
            "interval": 5,
            "cap": 1.0,
            "flat_probability": 0.05,
        },
        "randomization": {
            "enabled": True,
            "friction": [0.3, 1.0],
            "latency_ms": [0.0, 10.0],
            "pd_scale": [0.9, 1.1],
            "motor_coulomb": [0.0, 0.2],
            "motor_viscous": [0.0, 0.05],
        },
        "noise": {
            "enabled": True,
            "orientation": 0.03,
            "angular_velocity": 0.2,
            "joint_angle": 0.01,
            "joint_velocity": 0.5,
        },
        "evaluate": {
            "source": "checkpoint",  # or "expert"
            "checkpoint": "",
            "episodes": 20,
            "ticks": 2000,
            "command": [0.5, 0.0, 0.0],
            "save_trajectories": False,
            "randomize": False,
            "init_noise": True,
        },
        "rollout": {
            "ticks": 2000,
            "command": [0.5, 0.0, 0.0],
            "switch_every": 0.0,  # s between command resamples, 0 = never
        },
        "bench": {
            "calls": 1000,
            "warmup": 20,
        },
    }


PRESETS: dict[str, dict] = {
    # finetune variants; (init_std, clip) pairs are the exploration modes
    "ifm-sr": {
        "finetune": {"mode": "SR", "vanilla": False, "from_scratch": False,
                     "init_std": 1.0, "clip": 0.05},
    },
    "ifm-cr": {
        "finetune": {"mode": "CR", "vanilla": False, "from_scratch": False,
                     "init_std": 2.0, "clip": 0.1},
    },
    "vanilla-sr": {
        "finetune": {"mode": "SR", "vanilla": True, "from_scratch": True,
                     "init_std": 3.0, "clip": 0.2},
    },
    "vanilla-cr": {
        "finetune": {"mode": "CR", "vanilla": True, "from_scratch": True,
                     "init_std": 3.0, "clip": 0.2},
    },
    # stage presets
    "dagger-only": {},
    "expert": {"evaluate": {"source": "expert"}},
}


def _merge(base: dict, update: dict, path: str = "") -> None:
    """Fold `update` into `base` in place, validating against the
    default tree's shape."""
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        current = base[key]
        if isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a table")
            _merge(current, value, where)
            continue
        if isinstance(current, bool) != isinstance(value, bool):
            raise ConfigError(f"{where!r} must be a boolean")
        if isinstance(current, bool):
            base[key] = value
        elif isinstance(current, (int, float)):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where!r} must be a number")
            base[key] = type(current)(value)
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ConfigError(f"{where!r} must be a string")
            base[key] = value
        elif isinstance(current, list):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where!r} must be a list")
            base[key] = [float(v) for v in value]
        else:
            raise ConfigError(f"{where!r} has unsupported type")


def resolve(preset: str | None = None, config_path: str | None = None,
            overrides: dict | None = None) -> dict:
    """Defaults <- preset <- file <- overrides, returning the full tree."""
    cfg = default_config()
    if preset is not None:
        if preset not in PRESET_NAMES:
            raise ConfigError(
                f"unknown preset {preset!r}; expected one of {PRESET_NAMES}")
        _merge(cfg, copy.deepcopy(PRESETS[preset]))
    if config_path is not None:
        try:
            with open(config_path, "rb") as f:
                loaded = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{config_path}: {exc}")
        _merge(cfg, loaded)
    if overrides:
        _merge(cfg, overrides)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    kind = cfg["terrain"]["kind"]
    cfg["terrain"]["kind"] = TERRAIN_ALIASES.get(kind, kind)
    if cfg["terrain"]["kind"] not in TERRAIN_KINDS:
        raise ConfigError(
            f"terrain.kind {kind!r}; expected one of {TERRAIN_KINDS}"
            f" (or 'discrete')")
    if cfg["finetune"]["mode"] not in ("SR", "CR"):
        raise ConfigError("finetune.mode must be 'SR' or 'CR'")
    if cfg["evaluate"]["source"] not in ("checkpoint", "expert"):
        raise ConfigError("evaluate.source must be 'checkpoint' or 'expert'")
    if len(cfg["expert"]["q_diag"]) != 12:
        raise ConfigError("expert.q_diag must have 12 entries")
    if len(cfg["expert"]["r_diag_foot"]) != 3:
        raise ConfigError("expert.r_diag_foot must have 3 entries")
    for key in ("command_low", "command_high"):
        if len(cfg["imitation"][key]) != 3:
            raise ConfigError(f"imitation.{key} must have 3 entries")
    for key in ("evaluate", "rollout"):
        if len(cfg[key]["command"]) != 3:
            raise ConfigError(f"{key}.command must have 3 entries")
    if not (0 < cfg["gait"]["swing_duration"]
            and 0 < cfg["gait"]["stance_duration"]):
        raise ConfigError("gait durations must be positive")


# ---------------------------------------------------------------------------
# factories: snapshot -> domain objects


def gait_from(cfg: dict) -> GaitSchedule:
    return GaitSchedule(swing_duration=cfg["gait"]["swing_duration"],
                        stance_duration=cfg["gait"]["stance_duration"])


def terrain_from(cfg: dict, seed: int | None = None) -> Terrain:
    t = cfg["terrain"]
    if seed is None:
        seed = cfg["run"]["seed"]
    return generate(t["kind"], t["factor"], seed=seed,
                    cell_size=t["cell_size"], length=t["length"],
                    width=t["width"], x_start=t["x_start"],
                    friction=t["friction"],
                    base_frequency=t["base_frequency"])


def expert_from(cfg: dict, model: RobotModel,
                schedule: GaitSchedule | None = None,
                terrain: Terrain | None = None) -> MpcExpert:
    e = cfg["expert"]
    return MpcExpert(model, schedule=schedule, terrain=terrain,
                     horizon=e["horizon"], dt=e["dt"],
                     k_raibert=e["k_raibert"], h_apex=e["h_apex"],
                     f_max=e["f_max"], swing_kp=e["swing_kp"],
                     swing_kd=e["swing_kd"],
                     Q=np.diag(e["q_diag"]),
                     R=np.diag(np.tile(e["r_diag_foot"], 4)),
                     friction_fallback=e["friction_fallback"],
                     cmd_slew_lin=e["cmd_slew_lin"],
                     cmd_slew_ang=e["cmd_slew_ang"])


def noise_from(cfg: dict) -> ObservationNoise | None:
    n = cfg["noise"]
    if not n["enabled"]:
        return None
    return ObservationNoise(orientation=n["orientation"],
                            angular_velocity=n["angular_velocity"],
                            joint_angle=n["joint_angle"],
                            joint_velocity=n["joint_velocity"])


def randomization_from(cfg: dict) -> RandomizationSpec | None:
    r = cfg["randomization"]
    if not r["enabled"]:
        return None
    return RandomizationSpec(friction=tuple(r["friction"]),
                             latency_ms=tuple(r["latency_ms"]),
                             pd_scale=tuple(r["pd_scale"]),
                             motor_coulomb=tuple(r["motor_coulomb"]),
                             motor_viscous=tuple(r["motor_viscous"]),
                             noise=noise_from(cfg))


def reward_weights_from(cfg: dict) -> RewardWeights:
    r = cfg["reward"]
    return RewardWeights(tracking=r["tracking"],
                         tracking_scale=r["tracking_scale"],
                         movement=r["movement"], torque=r["torque"],
                         contact=r["contact"])


def ppo_config_from(cfg: dict) -> PpoConfig:
    f = cfg["finetune"]
    return PpoConfig(mode=f["mode"], init_std=f["init_std"],
                     clip=f["clip"], actor_lr=f["actor_lr"],
                     critic_lr=f["critic_lr"], gamma=f["gamma"],
                     lam=f["lam"], epochs=f["epochs"],
                     minibatch=f["minibatch"],
                     iterations=f["iterations"],
                     num_envs=f["num_envs"], horizon=f["horizon"],
                     weights=reward_weights_from(cfg))


def curriculum_from(cfg: dict) -> Curriculum:
    c = cfg["curriculum"]
    return Curriculum(factor=c["factor"], growth=c["growth"],
                      interval=c["interval"], cap=c["cap"],
                      flat_probability=c["flat_probability"])


def imitation_command_ranges(cfg: dict) -> tuple:
    lo = cfg["imitation"]["command_low"]
    hi = cfg["imitation"]["command_high"]
    return tuple((float(a), float(b)) for a, b in zip(lo, hi))
