"""Experiment configuration: one key-value file format across all modules.

Sections [env], [physics], [object], [learner], [sweep]; every key has a
default and unknown keys are rejected. Environment variables override
nothing except TPL_WORKERS (worker-pool width). A resolved config
serializes to a canonical snapshot whose hash identifies runs in manifests
and checkpoints.
"""

import hashlib
import os
from dataclasses import dataclass

from .env import NoiseParams, RandomizationParams, RewardParams
from .kvfile import load_kv
from .learner import LearnerConfig
from .objects import ObjectSpec
from .sim import PhysicsParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSettings:
    reward: RewardParams
    randomization: RandomizationParams
    noise: NoiseParams
    action_delta: float = 0.1
    hand_file: str | None = None  # packaged default when None


@dataclass(frozen=True)
class SweepSettings:
    seeds_per_config: int = 3
    workers: int = 1
    count: int | None = None  # sweep-size override for sampled experiments
    sweep_seed: int = 20240


@dataclass(frozen=True)
class Config:
    env: EnvSettings
    physics: PhysicsParams
    object: ObjectSpec
    learner: LearnerConfig
    sweep: SweepSettings

    def snapshot_text(self) -> str:
        return _snapshot_text(self)

    def hash(self) -> str:
        return hashlib.sha256(self.snapshot_text().encode()).hexdigest()[:16]


_DEFAULTS = {
    "env": {
        "action_delta": 0.1,
        "alpha": 10.0,
        "beta": 1.0,
        "gamma": 0.002,
        "success_bonus": 25.0,
        "failure_penalty": 50.0,
        "penalize_timeout": False,
        "pos_tolerance": 0.01,
        "rot_tolerance": 0.1,
        "drop_height": -0.05,
        "episode_limit": 400,
        "goals_cap": 50,
        "noise_pos": 0.001,
        "noise_force": 0.05,
        "noise_torque": 0.002,
        "joint_jitter": 0.05,
        "spawn_clearance_lo": 0.03,
        "spawn_clearance_hi": 0.06,
        "spawn_radius": 0.03,
        "mass_jitter": 0.10,
        "com_offset_frac": 0.25,
        "goal_center": (0.0, 0.047, 0.055),
        "goal_half": (0.02, 0.02, 0.01),
        "goal_rot_max": 3.14159265358979,
        "hand_file": "",
    },
    "physics": {
        "dt": 0.002,
        "substeps": 10,
        "contact_kn": 5000.0,
        "contact_cn": 50.0,
        "contact_ct": 50.0,
        "joint_kp": 900.0,
        "joint_kd": 60.0,
        "gravity": 9.81,
    },
    "object": {
        "shape": "sphere",
        "diameter": 0.07,
        "semi_axes": (0.045, 0.035, 0.02722),
        "edge": 0.05642,
        "mass": 0.0,  # 0 = derive from density
        "density": 330.0,
        "friction": 1.0,
    },
    "learner": {
        "envs": 128,
        "horizon": 64,
        "epochs": 300,
        "hidden_in": 512,
        "hidden_rec": 256,
        "lr": 3e-4,
        "discount": 0.998,
        "gae_lambda": 0.95,
        "clip_eps": 0.2,
        "update_epochs": 3,
        "minibatches": 4,
        "entropy_coef": 0.01,
        "value_coef": 0.5,
        "max_grad_norm": 0.5,
        "kl_stop": 0.2,
        "init_log_std": -0.7,
        "checkpoint_every": 50,
        "dtype": "float32",
    },
    "sweep": {
        "seeds_per_config": 3,
        "workers": 1,
        "count": 0,  # 0 = experiment default
        "sweep_seed": 20240,
    },
}

_VECTOR_KEYS = {"goal_center", "goal_half", "semi_axes"}
_STR_KEYS = {"hand_file", "shape", "dtype"}
_BOOL_KEYS = {"penalize_timeout"}


def default_config() -> Config:
    return _resolve({k: dict(v) for k, v in _DEFAULTS.items()})


def load_config(path=None, overrides=None) -> Config:
    """Load a config file over the defaults; `overrides` maps
    "section.key" -> value (already typed) and wins over the file."""
    values = {k: dict(v) for k, v in _DEFAULTS.items()}
    if path is not None:
        kv = load_kv(path)
        for sec in kv.sections:
            if sec.name not in values:
                raise ConfigError(
                    f"{path}: unknown section [{sec.name}] "
                    f"(expected one of {', '.join(values)})"
                )
            for key in sec.keys():
                if key not in values[sec.name]:
                    raise ConfigError(
                        f"{path}:{sec.line_of(key)}: unknown key {key!r} in [{sec.name}]"
                    )
                values[sec.name][key] = _coerce(sec, key, values[sec.name][key])
    for dotted, val in (overrides or {}).items():
        sec, _, key = dotted.partition(".")
        if sec not in values or key not in values[sec]:
            raise ConfigError(f"unknown override {dotted!r}")
        values[sec][key] = val
    try:
        return _resolve(values)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None


def _coerce(sec, key, default):
    if key in _VECTOR_KEYS:
        return tuple(sec.get_vec(key, len(default)))
    if key in _STR_KEYS:
        return sec.get_str(key)
    if key in _BOOL_KEYS:
        return sec.get_bool(key)
    if isinstance(default, bool):
        return sec.get_bool(key)
    if isinstance(default, int):
        return sec.get_int(key)
    return sec.get_float(key)


def _resolve(v) -> Config:
    e, p, o, l, s = v["env"], v["physics"], v["object"], v["learner"], v["sweep"]
    reward = RewardParams(
        alpha=e["alpha"], beta=e["beta"], gamma=e["gamma"],
        success_bonus=e["success_bonus"], failure_penalty=e["failure_penalty"],
        rot_tolerance=e["rot_tolerance"], pos_tolerance=e["pos_tolerance"],
        drop_height=e["drop_height"], episode_limit=int(e["episode_limit"]),
        goals_per_episode_cap=int(e["goals_cap"]), penalize_timeout=e["penalize_timeout"],
    )
    rand = RandomizationParams(
        joint_jitter=e["joint_jitter"],
        spawn_clearance=(e["spawn_clearance_lo"], e["spawn_clearance_hi"]),
        spawn_radius=e["spawn_radius"], mass_jitter=e["mass_jitter"],
        com_offset_frac=e["com_offset_frac"],
        goal_center=tuple(e["goal_center"]), goal_half=tuple(e["goal_half"]),
        goal_rot_max=e["goal_rot_max"],
    )
    noise = NoiseParams(pos_std=e["noise_pos"], force_std=e["noise_force"],
                        torque_std=e["noise_torque"])
    env = EnvSettings(reward, rand, noise, action_delta=e["action_delta"],
                      hand_file=e["hand_file"] or None)
    physics = PhysicsParams(
        dt=p["dt"], substeps=int(p["substeps"]), contact_kn=p["contact_kn"],
        contact_cn=p["contact_cn"], contact_ct=p["contact_ct"],
        joint_kp=p["joint_kp"], joint_kd=p["joint_kd"], gravity=p["gravity"],
    )
    obj = _object_spec(o)
    learner = LearnerConfig(
        n_envs=int(l["envs"]), horizon=int(l["horizon"]), epochs=int(l["epochs"]),
        hidden_in=int(l["hidden_in"]), hidden_rec=int(l["hidden_rec"]), lr=l["lr"],
        discount=l["discount"], gae_lambda=l["gae_lambda"], clip_eps=l["clip_eps"],
        update_epochs=int(l["update_epochs"]), minibatches=int(l["minibatches"]),
        entropy_coef=l["entropy_coef"], value_coef=l["value_coef"],
        max_grad_norm=l["max_grad_norm"], kl_stop=l["kl_stop"],
        init_log_std=l["init_log_std"], checkpoint_every=int(l["checkpoint_every"]),
        dtype=l["dtype"],
    )
    sweep = SweepSettings(
        seeds_per_config=int(s["seeds_per_config"]), workers=int(s["workers"]),
        count=int(s["count"]) or None, sweep_seed=int(s["sweep_seed"]),
    )
    return Config(env, physics, obj, learner, sweep)


def _object_spec(o) -> ObjectSpec:
    shape = o["shape"]
    if shape == "sphere":
        dims = (o["diameter"],)
    elif shape == "ellipsoid":
        dims = tuple(o["semi_axes"])
    elif shape == "cube":
        dims = (o["edge"],)
    else:
        raise ConfigError(f"unknown object shape {shape!r}")
    if o["mass"] > 0:
        return ObjectSpec(shape, dims, o["mass"], friction=o["friction"])
    return ObjectSpec.from_density(shape, dims, o["density"], friction=o["friction"])


def _snapshot_text(cfg: Config) -> str:
    env, rw, rd, nz = cfg.env, cfg.env.reward, cfg.env.randomization, cfg.env.noise
    ph, ob, ln, sw = cfg.physics, cfg.object, cfg.learner, cfg.sweep
    sections = {
        "env": {
            "action_delta": env.action_delta,
            "alpha": rw.alpha, "beta": rw.beta, "gamma": rw.gamma,
            "success_bonus": rw.success_bonus, "failure_penalty": rw.failure_penalty,
            "penalize_timeout": rw.penalize_timeout,
            "pos_tolerance": rw.pos_tolerance, "rot_tolerance": rw.rot_tolerance,
            "drop_height": rw.drop_height, "episode_limit": rw.episode_limit,
            "goals_cap": rw.goals_per_episode_cap,
            "noise_pos": nz.pos_std, "noise_force": nz.force_std,
            "noise_torque": nz.torque_std,
            "joint_jitter": rd.joint_jitter,
            "spawn_clearance_lo": rd.spawn_clearance[0],
            "spawn_clearance_hi": rd.spawn_clearance[1],
            "spawn_radius": rd.spawn_radius, "mass_jitter": rd.mass_jitter,
            "com_offset_frac": rd.com_offset_frac,
            "goal_center": " ".join(f"{x:g}" for x in rd.goal_center),
            "goal_half": " ".join(f"{x:g}" for x in rd.goal_half),
            "goal_rot_max": rd.goal_rot_max,
            "hand_file": env.hand_file or "",
        },
        "physics": {
            "dt": ph.dt, "substeps": ph.substeps, "contact_kn": ph.contact_kn,
            "contact_cn": ph.contact_cn, "contact_ct": ph.contact_ct,
            "joint_kp": ph.joint_kp, "joint_kd": ph.joint_kd, "gravity": ph.gravity,
        },
        "object": {
            "shape": ob.shape,
            "dimensions": " ".join(f"{x:g}" for x in ob.principal_dimensions),
            "mass": f"{ob.mass:.10g}", "friction": ob.friction,
        },
        "learner": {
            "envs": ln.n_envs, "horizon": ln.horizon, "epochs": ln.epochs,
            "hidden_in": ln.hidden_in, "hidden_rec": ln.hidden_rec, "lr": ln.lr,
            "discount": ln.discount, "gae_lambda": ln.gae_lambda,
            "clip_eps": ln.clip_eps, "update_epochs": ln.update_epochs,
            "minibatches": ln.minibatches, "entropy_coef": ln.entropy_coef,
            "value_coef": ln.value_coef, "max_grad_norm": ln.max_grad_norm,
            "kl_stop": ln.kl_stop, "init_log_std": ln.init_log_std,
            "checkpoint_every": ln.checkpoint_every, "dtype": ln.dtype,
        },
        "sweep": {
            "seeds_per_config": sw.seeds_per_config, "workers": sw.workers,
            "count": sw.count or 0, "sweep_seed": sw.sweep_seed,
        },
    }
    lines = ["# resolved configuration snapshot"]
    for sec in sorted(sections):
        lines.append(f"[{sec}]")
        for key in sorted(sections[sec]):
            val = sections[sec][key]
            if isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def resolve_workers(cli_value, cfg: Config) -> int:
    """--workers flag > TPL_WORKERS env > [sweep] workers."""
    if cli_value is not None:
        return max(1, int(cli_value))
    env_val = os.environ.get("TPL_WORKERS", "").strip()
    if env_val:
        try:
            return max(1, int(env_val))
        except ValueError:
            raise ConfigError(f"TPL_WORKERS={env_val!r} is not an integer") from None
    return max(1, cfg.sweep.workers)
