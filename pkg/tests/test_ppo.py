import numpy as np
import pytest

from tactile_placement import nets
from tactile_placement.learner import (
    Adam,
    LearnerConfig,
    clip_grad_norm,
    ppo_loss_and_grads,
    ppo_update,
)
from tactile_placement.nets import init_policy, sequence_forward

T, B, D, L1, H, A = 6, 8, 7, 6, 5, 3
DELTA = 0.1


def rollout_batch(params, seed=0, logp_offset=None):
    """A self-consistent batch: u sampled from the current policy so that
    logp_old equals the current log-prob (ratio = 1) unless offset."""
    rng = np.random.default_rng(seed)
    obs = rng.standard_normal((T, B, D))
    done = (rng.random((T, B)) < 0.2).astype(np.float64)
    h0 = np.zeros((B, H))
    mu, value, _, _ = sequence_forward(params, obs, h0, done)
    u = mu + np.exp(params["log_std"]) * rng.standard_normal((T, B, A))
    squash = nets.squash_correction(u, DELTA)
    logp = nets.gaussian_log_prob(u, mu, params["log_std"]) - squash
    if logp_offset is not None:
        logp = logp + logp_offset
    return {
        "obs": obs,
        "u": u,
        "logp": logp,
        "adv": rng.standard_normal((T, B)),
        "ret": rng.standard_normal((T, B)),
        "done": done,
        "h0": h0,
        "squash": squash,
        "reward": rng.standard_normal((T, B)),
        "values_tp1": np.concatenate([value, value[-1:]], axis=0),
    }


def test_ratio_one_clip_inactive():
    # with ratio = 1 everywhere the clipped surrogate equals the plain
    # policy-gradient estimator: widening the clip window changes nothing
    params = init_policy(D, L1, H, A, delta=DELTA, seed=1, dtype=np.float64)
    batch = rollout_batch(params, seed=2)
    g_clip, s1 = ppo_loss_and_grads(params, batch, LearnerConfig(clip_eps=0.2))
    g_wide, s2 = ppo_loss_and_grads(params, batch, LearnerConfig(clip_eps=1e9))
    for k in g_clip:
        np.testing.assert_array_equal(g_clip[k], g_wide[k])
    assert s1["clip_fraction"] == 0.0
    assert abs(s1["approx_kl"]) < 1e-12


def test_clipped_positive_advantage_contributes_no_gradient():
    # one sample with A > 0 at ratio = 1 + 2*eps sits on the clipped
    # constant branch: zero policy gradient
    params = init_policy(D, L1, H, A, delta=DELTA, seed=3, dtype=np.float64)
    eps = 0.2
    offset = np.full((T, B), -np.log(1 + 2 * eps))  # ratio = exp(logp-old) = 1+2eps
    batch = rollout_batch(params, seed=4, logp_offset=offset)
    batch["adv"] = np.ones((T, B))  # positive advantages everywhere
    cfg = LearnerConfig(clip_eps=eps, value_coef=0.0, entropy_coef=0.0)
    grads, stats = ppo_loss_and_grads(params, batch, cfg)
    for k, g in grads.items():
        assert np.all(g == 0.0), k
    assert stats["clip_fraction"] == 1.0


def test_negative_advantage_outside_clip_still_flows():
    params = init_policy(D, L1, H, A, delta=DELTA, seed=3, dtype=np.float64)
    offset = np.full((T, B), -np.log(1 + 0.4))
    batch = rollout_batch(params, seed=4, logp_offset=offset)
    batch["adv"] = -np.ones((T, B))  # min() picks the unclipped branch
    cfg = LearnerConfig(clip_eps=0.2, value_coef=0.0, entropy_coef=0.0)
    grads, _ = ppo_loss_and_grads(params, batch, cfg)
    total = sum(float(np.abs(g).sum()) for g in grads.values())
    assert total > 0.0


def test_ppo_update_deterministic_and_normalizes():
    params1 = init_policy(D, L1, H, A, delta=DELTA, seed=7, dtype=np.float64)
    params2 = params1.copy()
    batch = rollout_batch(params1, seed=8)
    cfg = LearnerConfig(update_epochs=2, minibatches=2)
    a1, a2 = Adam(params1, cfg.lr), Adam(params2, cfg.lr)
    s1 = ppo_update(params1, a1, batch, cfg, np.random.default_rng(5))
    s2 = ppo_update(params2, a2, batch, cfg, np.random.default_rng(5))
    for k in params1.tensors:
        np.testing.assert_array_equal(params1[k], params2[k])
    assert s1["updates"] == s2["updates"] == 4


def test_kl_early_stop_logged_not_fatal():
    params = init_policy(D, L1, H, A, delta=DELTA, seed=9, dtype=np.float64)
    # fake an extremely off-policy batch: huge positive logp_old
    batch = rollout_batch(params, seed=10, logp_offset=np.full((T, B), 5.0))
    cfg = LearnerConfig(update_epochs=3, minibatches=2, kl_stop=0.5)
    stats = ppo_update(params, Adam(params, cfg.lr), batch, cfg, np.random.default_rng(0))
    assert stats["kl_stopped"]
    assert stats["updates"] < 6


def test_grad_clipping_scales_to_max_norm():
    g = {"a": np.array([3.0, 4.0]), "b": np.array([0.0])}
    norm = clip_grad_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(g["a"]) == pytest.approx(1.0)
