"""Clipped-surrogate policy optimization over vectorized rollouts.

Rollouts are collected across N environments for a fixed horizon, advantages
come from generalized advantage estimation with a bootstrapped tail value,
and updates run several epochs of sequence-wise minibatches with full
backprop through time. All math is numpy in the configured dtype (float32
by default; float64 for the gradient-check fixtures).
"""

import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .env import TACTILE, VectorEnv
from .nets import PolicyParams, policy_forward, sequence_backward, sequence_forward

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, checkpoint_path):
        super().__init__(f"non-finite policy output at epoch {epoch}")
        self.epoch = epoch
        self.checkpoint_path = checkpoint_path


class CheckpointMismatch(RuntimeError):
    pass


@dataclass(frozen=True)
class LearnerConfig:
    n_envs: int = 128
    horizon: int = 64
    epochs: int = 300
    hidden_in: int = 512
    hidden_rec: int = 256
    lr: float = 3e-4
    discount: float = 0.998
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    update_epochs: int = 3
    minibatches: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    kl_stop: float = 0.2
    init_log_std: float = -0.7
    checkpoint_every: int = 50
    dtype: str = "float32"
    normalize_obs: bool = True
    normalize_rewards: bool = True


class RunningMeanStd:
    """Streaming mean/variance (parallel-merge form), float64 state."""

    def __init__(self, shape=()):
        self.mean = np.zeros(shape)
        self.var = np.ones(shape)
        self.count = 1e-4

    def update(self, batch):
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, *self.mean.shape)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        delta = b_mean - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * n / tot
        m_a = self.var * self.count
        m_b = b_var * n
        self.var = (m_a + m_b + delta * delta * self.count * n / tot) / tot
        self.count = tot

    def normalize(self, x, clip=10.0):
        out = (np.asarray(x, dtype=np.float64) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(out, -clip, clip)

    def state(self, prefix):
        return {
            f"{prefix}_mean": self.mean,
            f"{prefix}_var": self.var,
            f"{prefix}_count": np.array([self.count]),
        }

    @classmethod
    def from_state(cls, data, prefix):
        rms = cls(np.asarray(data[f"{prefix}_mean"]).shape)
        rms.mean = np.asarray(data[f"{prefix}_mean"], dtype=np.float64)
        rms.var = np.asarray(data[f"{prefix}_var"], dtype=np.float64)
        rms.count = float(data[f"{prefix}_count"][0])
        return rms


def compute_gae(rewards, values, dones, discount, gae_lambda):
    """GAE over a (T, ...) batch; values carries T+1 rows with the
    bootstrap value last. Returns (advantages, returns) in float64."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    if values.shape[0] != T + 1 or dones.shape[0] != T:
        raise ValueError("expected values with T+1 rows and dones with T rows")
    if not (0.0 <= discount <= 1.0 and 0.0 <= gae_lambda <= 1.0):
        raise ValueError("discount and gae_lambda must lie in [0, 1]")
    adv = np.zeros_like(rewards)
    carry = np.zeros_like(rewards[0] if rewards.ndim > 1 else np.zeros(()))
    for t in range(T - 1, -1, -1):
        mask = 1.0 - dones[t]
        delta = rewards[t] + discount * values[t + 1] * mask - values[t]
        carry = delta + discount * gae_lambda * mask * carry
        adv[t] = carry
    return adv, adv + values[:-1]


def normalize_advantages(adv):
    """Batch-normalize to zero mean, unit std (float64)."""
    adv = np.asarray(adv, dtype=np.float64)
    std = adv.std()
    if std < 1e-12:
        return adv - adv.mean()
    return (adv - adv.mean()) / std


class Adam:
    def __init__(self, params: PolicyParams, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: PolicyParams, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params.tensors[k] -= (
                self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            ).astype(params.dtype)


def clip_grad_norm(grads, max_norm):
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def ppo_loss_and_grads(params: PolicyParams, batch, cfg: LearnerConfig):
    """Clipped-surrogate + value + entropy loss over one minibatch of
    sequences, with analytic gradients through the recurrent policy."""
    dt = params.dtype
    obs = batch["obs"]
    u = batch["u"].astype(dt)
    logp_old = batch["logp"].astype(np.float64)
    adv = batch["adv"].astype(np.float64)
    ret = batch["ret"].astype(np.float64)
    done = batch["done"]
    h0 = batch["h0"]

    mu, value, _, cache = sequence_forward(params, obs, h0, done)
    log_std = params["log_std"].astype(np.float64)
    std = np.exp(log_std)
    mu64 = mu.astype(np.float64)
    u64 = u.astype(np.float64)
    zn = (u64 - mu64) / std
    logp_gauss = -0.5 * np.sum(zn * zn, axis=-1) - np.sum(log_std) - 0.5 * u.shape[-1] * nets.LOG_2PI
    logp = logp_gauss - batch["squash"]

    M = logp.size
    ratio = np.exp(logp - logp_old)
    s_un = ratio * adv
    s_cl = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    surrogate = np.minimum(s_un, s_cl)
    policy_loss = -surrogate.mean()

    v64 = value.astype(np.float64)
    v_err = v64 - ret
    value_loss = 0.5 * np.mean(v_err * v_err)

    entropy = float(np.sum(log_std + 0.5 * (1.0 + nets.LOG_2PI)))
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    # d loss / d logp: only where the unclipped branch is active
    active = (s_un <= s_cl).astype(np.float64)
    d_logp = -(adv * active * ratio) / M
    d_mu = (d_logp[..., None] * (u64 - mu64) / (std * std)).astype(dt)
    d_value = (cfg.value_coef * v_err / M).astype(dt)

    grads = sequence_backward(params, cache, d_mu, d_value)
    d_log_std = np.sum(d_logp[..., None] * (zn * zn - 1.0), axis=(0, 1))
    d_log_std -= cfg.entropy_coef  # entropy bonus, per action dim
    grads["log_std"] += d_log_std.astype(dt)

    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "approx_kl": float(np.mean(logp_old - logp)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
    }
    return grads, stats


def ppo_update(params: PolicyParams, adam: Adam, batch, cfg: LearnerConfig, rng):
    """Run update_epochs x minibatches over the rollout batch. Advantages
    are normalized once across the whole batch before any surrogate is
    formed; a KL estimate above kl_stop ends the update early (logged)."""
    T, N = batch["reward"].shape
    adv, ret = compute_gae(
        batch["reward"], batch["values_tp1"], batch["done"], cfg.discount, cfg.gae_lambda
    )
    adv = normalize_advantages(adv)
    assert abs(adv.mean()) < 1e-9 and (abs(adv.std() - 1.0) < 1e-9 or adv.std() == 0.0)

    n_mb = min(cfg.minibatches, N)
    stats = {}
    kl_stopped = False
    updates = 0
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(N)
        for mb in range(n_mb):
            idx = np.sort(perm[mb::n_mb])
            sub = {
                "obs": batch["obs"][:, idx],
                "u": batch["u"][:, idx],
                "logp": batch["logp"][:, idx],
                "adv": adv[:, idx],
                "ret": ret[:, idx],
                "done": batch["done"][:, idx],
                "h0": batch["h0"][idx],
                "squash": batch["squash"][:, idx],
            }
            grads, stats = ppo_loss_and_grads(params, sub, cfg)
            stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            adam.step(params, grads)
            updates += 1
            if stats["approx_kl"] > cfg.kl_stop:
                kl_stopped = True
                break
        if kl_stopped:
            break
    stats["kl_stopped"] = kl_stopped
    stats["updates"] = updates
    return stats


@dataclass
class TrainingCurve:
    mean_return: list = field(default_factory=list)
    consecutive_successes: list = field(default_factory=list)
    success_rate: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)

    def __len__(self):
        return len(self.mean_return)

    def append(self, mean_return, consecutive_successes, success_rate, wall_clock):
        self.mean_return.append(float(mean_return))
        self.consecutive_successes.append(float(consecutive_successes))
        self.success_rate.append(float(success_rate))
        self.wall_clock.append(float(wall_clock))

    def to_csv(self, path):
        """Seed-deterministic columns only; wall clock goes to timing_csv."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,mean_return,consecutive_successes,success_rate\n")
            for i in range(len(self)):
                fh.write(
                    f"{i + 1},{self.mean_return[i]:.9g},"
                    f"{self.consecutive_successes[i]:.9g},{self.success_rate[i]:.9g}\n"
                )

    def timing_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,wall_clock_s\n")
            for i in range(len(self)):
                fh.write(f"{i + 1},{self.wall_clock[i]:.6f}\n")

    @classmethod
    def from_csv(cls, path):
        curve = cls()
        with open(path, "r", encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                _, ret, streak, rate = line.strip().split(",")
                curve.append(float(ret), float(streak), float(rate), 0.0)
        return curve


def save_checkpoint(path, params: PolicyParams, adam: Adam, meta: dict,
                    obs_rms: RunningMeanStd = None, ret_rms: RunningMeanStd = None):
    arrays = {f"param_{k}": v for k, v in params.tensors.items()}
    arrays.update({f"adam_m_{k}": v for k, v in adam.m.items()})
    arrays.update({f"adam_v_{k}": v for k, v in adam.v.items()})
    if obs_rms is not None:
        arrays.update(obs_rms.state("obs_rms"))
    if ret_rms is not None:
        arrays.update(ret_rms.state("ret_rms"))
    header = dict(
        meta,
        version=CHECKPOINT_VERSION,
        obs_dim=params.obs_dim,
        hidden_in=params.hidden_in,
        hidden_rec=params.hidden_rec,
        act_dim=params.act_dim,
        delta=params.delta,
        dtype=str(params.dtype),
        adam_t=adam.t,
        adam_lr=adam.lr,
    )
    np.savez_compressed(path, meta=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path, expected_config_hash=None, force=False):
    """Returns (params, adam, meta, obs_rms). Refuses a config-hash mismatch
    unless forced."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointMismatch(f"checkpoint version {meta.get('version')} unsupported")
        if (
            expected_config_hash is not None
            and meta.get("config_hash") not in (None, expected_config_hash)
            and not force
        ):
            raise CheckpointMismatch(
                f"checkpoint config hash {meta.get('config_hash')!r} does not match "
                f"{expected_config_hash!r} (pass force=True to override)"
            )
        dtype = np.dtype(meta["dtype"])
        tensors = {k[6:]: data[k].astype(dtype) for k in data.files if k.startswith("param_")}
        params = PolicyParams(
            meta["obs_dim"], meta["hidden_in"], meta["hidden_rec"], meta["act_dim"],
            meta["delta"], dtype, tensors,
        )
        adam = Adam(params, meta["adam_lr"])
        adam.t = meta["adam_t"]
        adam.m = {k[7:]: data[k].astype(dtype) for k in data.files if k.startswith("adam_m_")}
        adam.v = {k[7:]: data[k].astype(dtype) for k in data.files if k.startswith("adam_v_")}
        obs_rms = (
            RunningMeanStd.from_state(data, "obs_rms")
            if "obs_rms_mean" in data.files else None
        )
    return params, adam, meta, obs_rms


@dataclass
class TrainResult:
    curve: TrainingCurve
    params: PolicyParams
    checkpoint_path: str | None
    summary: dict


def train(
    make_env,
    cfg: LearnerConfig,
    master_seed: int,
    out_dir=None,
    config_hash="",
    obs_dim=None,
    progress=None,
) -> TrainResult:
    """Train one run: collect -> update for cfg.epochs, fully reproducible
    per master seed. make_env(seed) must build a fresh ReorientEnv.

    Writes curve.csv / timing.csv / episodes.jsonl / events.jsonl /
    checkpoint.npz / summary.json under out_dir when given.
    """
    ss = np.random.SeedSequence(master_seed)
    init_seed, sample_seed, env_seed = (
        int(c.generate_state(1, np.uint64)[0]) % 2**62 for c in ss.spawn(3)
    )
    venv = VectorEnv(make_env, cfg.n_envs, env_seed)
    act_dim = venv.envs[0].model.actuated_count
    delta = venv.envs[0].action_delta
    obs = venv.reset_all()
    if obs_dim is None:
        obs_dim = obs.shape[1]

    dtype = np.dtype(cfg.dtype)
    params = nets.init_policy(
        obs_dim, cfg.hidden_in, cfg.hidden_rec, act_dim, delta,
        seed=init_seed, init_log_std=cfg.init_log_std, dtype=dtype,
    )
    adam = Adam(params, cfg.lr)
    sample_rng = np.random.default_rng(sample_seed)
    update_rng = np.random.default_rng(sample_seed + 1)

    N, T = cfg.n_envs, cfg.horizon
    h = np.zeros((N, cfg.hidden_rec), dtype=dtype)
    obs_rms = RunningMeanStd((obs_dim,)) if cfg.normalize_obs else None
    ret_rms = RunningMeanStd(()) if cfg.normalize_rewards else None
    ret_acc = np.zeros(N)

    def _net_obs(raw):
        if obs_rms is None:
            return raw.astype(dtype)
        obs_rms.update(raw)
        return obs_rms.normalize(raw).astype(dtype)

    obs_f = _net_obs(obs)
    curve = TrainingCurve()
    max_tactile = 0.0
    last = {"mean_return": 0.0, "consecutive_successes": 0.0, "success_rate": 0.0}

    writers = _RunWriters(out_dir) if out_dir else None
    ckpt_path = os.path.join(out_dir, "checkpoint.npz") if out_dir else None

    def _checkpoint(epoch):
        if ckpt_path:
            save_checkpoint(
                ckpt_path, params, adam,
                {"config_hash": config_hash, "master_seed": master_seed, "epoch": epoch},
                obs_rms=obs_rms, ret_rms=ret_rms,
            )

    _checkpoint(0)
    diverged_at = None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            buf_obs = np.empty((T, N, obs_dim), dtype=dtype)
            buf_u = np.empty((T, N, act_dim), dtype=dtype)
            buf_logp = np.empty((T, N))
            buf_val = np.empty((T + 1, N))
            buf_rew = np.empty((T, N))
            buf_done = np.empty((T, N), dtype=dtype)
            h0 = h.copy()
            for t in range(T):
                dist, value, h_new = policy_forward(params, obs_f, h)
                action, u = dist.sample(sample_rng)
                buf_obs[t] = obs_f
                buf_u[t] = u
                buf_logp[t] = dist.log_prob(u)
                buf_val[t] = value
                obs, rewards, dones, _ = venv.step(np.asarray(action, dtype=np.float64))
                if ret_rms is not None:
                    ret_acc = cfg.discount * ret_acc + rewards
                    ret_rms.update(ret_acc)
                    rewards = rewards / np.sqrt(ret_rms.var + 1e-8)
                    ret_acc = ret_acc * (1.0 - dones)
                buf_rew[t] = rewards
                buf_done[t] = dones
                h = h_new * (1.0 - buf_done[t])[:, None]
                mt = float(np.abs(obs[:, TACTILE]).max())
                if mt > max_tactile:
                    max_tactile = mt
                obs_f = _net_obs(obs)
            _, v_boot, _ = policy_forward(params, obs_f, h)
            buf_val[T] = v_boot

            batch = {
                "obs": buf_obs,
                "u": buf_u,
                "logp": buf_logp,
                "values_tp1": buf_val,
                "reward": buf_rew,
                "done": buf_done,
                "h0": h0,
                "squash": nets.squash_correction(buf_u.astype(np.float64), delta),
            }
            stats = ppo_update(params, adam, batch, cfg, update_rng)

            episodes = venv.drain_records()
            if episodes:
                last["mean_return"] = float(np.mean([e["return"] for e in episodes]))
                last["consecutive_successes"] = float(
                    np.mean([e["goals_completed"] for e in episodes])
                )
                last["success_rate"] = float(
                    np.mean([1.0 if e["goals_completed"] > 0 else 0.0 for e in episodes])
                )
            curve.append(
                last["mean_return"], last["consecutive_successes"], last["success_rate"],
                time.perf_counter() - t0,
            )
            if writers:
                writers.episodes([dict(e, epoch=epoch) for e in episodes])
                writers.events(venv.drain_events())
            if progress:
                progress(epoch, curve, stats)
            if cfg.checkpoint_every > 0 and epoch % cfg.checkpoint_every == 0:
                _checkpoint(epoch)
    except nets.PolicyDiverged:
        diverged_at = len(curve) + 1
    _checkpoint(len(curve))

    summary = {
        "epochs": len(curve),
        "master_seed": master_seed,
        "config_hash": config_hash,
        "max_tactile_abs": max_tactile,
        "final_return": curve.mean_return[-1] if len(curve) else None,
        "final_consecutive_successes": (
            curve.consecutive_successes[-1] if len(curve) else None
        ),
        "diverged_at": diverged_at,
    }
    if writers:
        curve.to_csv(writers.path("curve.csv"))
        curve.timing_csv(writers.path("timing.csv"))
        writers.summary(summary)
        writers.close()
    if diverged_at is not None:
        raise TrainingDiverged(diverged_at, ckpt_path)
    return TrainResult(curve, params, ckpt_path, summary)


class _RunWriters:
    def __init__(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self._episodes = open(self.path("episodes.jsonl"), "w", encoding="utf-8")
        self._events = open(self.path("events.jsonl"), "w", encoding="utf-8")

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def episodes(self, records):
        for r in records:
            self._episodes.write(json.dumps(r, sort_keys=True) + "\n")
        self._episodes.flush()

    def events(self, records):
        for r in records:
            self._events.write(json.dumps(r, sort_keys=True) + "\n")
        self._events.flush()

    def summary(self, summary):
        with open(self.path("summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)

    def close(self):
        self._episodes.close()
        self._events.close()
