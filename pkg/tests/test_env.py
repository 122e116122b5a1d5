import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tactile_placement.env import (
    DROPPED,
    RUNNING,
    SUCCESS,
    TACTILE,
    TIMEOUT,
    OBS_DIM,
    NoiseParams,
    RandomizationParams,
    ReorientEnv,
    RewardParams,
    TaskGoal,
    VectorEnv,
    build_observation,
    compute_reward,
    is_success,
    orientation_error,
    random_quat,
)
from tactile_placement.experiments import TENNIS, fingertip_mask
from tactile_placement.regions import N_REGIONS


def make_env(hand, mask=0, reward=None, noise=None, rand=None, seed=0):
    return ReorientEnv(
        hand, TENNIS, sensor_mask=mask, reward=reward, noise=noise,
        randomization=rand, seed=seed,
    )


# --- orientation error --------------------------------------------------------


def test_orientation_error_identity():
    q = np.array([1.0, 0, 0, 0])
    assert orientation_error(q, q) == 0.0


def test_orientation_error_90deg_about_z():
    # oracle: dot(q_z90, identity) = cos(pi/4) -> r = 2 arccos = pi/2
    q90 = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
    qi = np.array([1.0, 0, 0, 0])
    assert orientation_error(q90, qi) == pytest.approx(np.pi / 2, abs=1e-12)


def test_orientation_error_double_cover():
    rng = np.random.default_rng(0)
    q = random_quat(rng)
    assert orientation_error(q, -q) == pytest.approx(0.0, abs=1e-6)


def test_orientation_error_rejects_far_from_unit():
    with pytest.raises(ValueError):
        orientation_error([2.0, 0, 0, 0], [1.0, 0, 0, 0])
    # within 1e-3 of unit: normalized internally
    assert orientation_error([1.0005, 0, 0, 0], [1.0, 0, 0, 0]) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=10**9))
def test_double_cover_property(seed):
    rng = np.random.default_rng(seed)
    qa, qb = random_quat(rng), random_quat(rng)
    assert orientation_error(qa, qb) == pytest.approx(orientation_error(qa, -qb), abs=1e-9)
    assert 0.0 <= orientation_error(qa, qb) <= np.pi + 1e-12


# --- reward -------------------------------------------------------------------


def test_reward_success_only_bonus():
    p = RewardParams()
    assert compute_reward(0.0, 0.0, np.zeros(20), SUCCESS, p) == pytest.approx(p.success_bonus)


def test_reward_direct_substitution():
    p = RewardParams(alpha=10, beta=1, gamma=0.002)
    a = np.zeros(20)
    a[0] = 2.0  # |a|^2 = 4
    r = compute_reward(0.05, 0.3, a, RUNNING, p)
    assert r == pytest.approx(-0.5 - 0.3 - 0.008, abs=1e-12)


def test_reward_isolated_drop_penalty():
    p = RewardParams(alpha=0, beta=0, gamma=0, failure_penalty=50)
    assert compute_reward(0.1, 0.1, np.zeros(20), DROPPED, p) == pytest.approx(-50.0)


def test_reward_timeout_not_penalized_by_default():
    p = RewardParams(alpha=0, beta=0, gamma=0)
    assert compute_reward(0.1, 0.1, np.zeros(20), TIMEOUT, p) == 0.0
    p2 = RewardParams(alpha=0, beta=0, gamma=0, penalize_timeout=True, failure_penalty=7)
    assert compute_reward(0.1, 0.1, np.zeros(20), TIMEOUT, p2) == -7.0


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 0.5), st.floats(0, 3.14), st.floats(1e-6, 0.2),
    st.floats(1e-6, 0.5), st.floats(1e-6, 0.09),
)
def test_reward_strictly_decreasing_in_each_penalty(d, r, dd, dr, da):
    p = RewardParams(alpha=10, beta=1, gamma=0.002)
    a = np.full(20, 0.01)
    base = compute_reward(d, r, a, RUNNING, p)
    assert compute_reward(d + dd, r, a, RUNNING, p) < base
    assert compute_reward(d, r + dr, a, RUNNING, p) < base
    assert compute_reward(d, r, a + da, RUNNING, p) < base


def test_success_requires_both_tolerances():
    p = RewardParams()
    assert is_success(0.005, 0.05, p)
    assert not is_success(0.005, 0.15, p)  # rotation out
    assert not is_success(0.02, 0.05, p)  # position out
    assert is_success(p.pos_tolerance, p.rot_tolerance, p)  # boundary inclusive


# --- observation --------------------------------------------------------------


def _obs_kwargs(mask_active):
    goal = TaskGoal(np.array([0.0, 0.05, 0.05]), np.array([1.0, 0, 0, 0]))
    return dict(
        fingertips=np.arange(15, dtype=float).reshape(5, 3) / 100,
        object_pos=np.array([0.01, 0.02, 0.03]),
        object_quat=np.array([1.0, 0, 0, 0]),
        object_linvel=np.array([0.1, 0.2, 0.3]),
        object_angvel=np.array([-0.1, 0.0, 0.1]),
        goal=goal,
        prev_action=np.linspace(-0.1, 0.1, 20),
        tactile=np.ones((19, 6)),
        active=mask_active,
    )


def test_observation_layout_and_zero_noise_exactness():
    active = np.zeros(19, dtype=bool)
    active[:3] = True
    kw = _obs_kwargs(active)
    obs = build_observation(**kw, noise=None, rng=None)
    assert obs.shape == (OBS_DIM,) and OBS_DIM == 173
    np.testing.assert_array_equal(obs[0:15], kw["fingertips"].ravel())
    np.testing.assert_array_equal(obs[15:18], kw["object_pos"])
    tac = obs[TACTILE].reshape(19, 6)
    assert np.all(tac[:3] == 1.0) and np.all(tac[3:] == 0.0)


def test_inactive_slots_exact_zero_after_noise():
    rng = np.random.default_rng(1)
    active = np.zeros(19, dtype=bool)
    active[[0, 4, 7]] = True
    obs = build_observation(**_obs_kwargs(active), noise=NoiseParams(), rng=rng)
    tac = obs[TACTILE].reshape(19, 6)
    inactive = [i for i in range(19) if not active[i]]
    assert np.all(tac[inactive] == 0.0)
    assert np.all(tac[[0, 4, 7]] != 1.0)  # noise applied to active slots


def test_fingertip_config_has_exactly_84_zero_slots():
    active = np.zeros(19, dtype=bool)
    for i in np.where(np.array([1 if fingertip_mask() >> i & 1 else 0 for i in range(19)]))[0]:
        active[i] = True
    rng = np.random.default_rng(2)
    obs = build_observation(**_obs_kwargs(active), noise=NoiseParams(), rng=rng)
    tac = obs[TACTILE]
    assert int(np.sum(tac == 0.0)) == (19 - 5) * 6


def test_tactile_noise_statistics():
    # statistical oracle: all regions active, zero wrench input -> the
    # tactile block is pure Gaussian noise with the configured stds
    rng = np.random.default_rng(3)
    noise = NoiseParams(pos_std=0.0, force_std=0.05, torque_std=0.002)
    active = np.ones(19, dtype=bool)
    kw = _obs_kwargs(active)
    kw["tactile"] = np.zeros((19, 6))
    n_obs = 10**5 // (19 * 3) + 1
    forces, torques = [], []
    for _ in range(n_obs):
        tac = build_observation(**kw, noise=noise, rng=rng)[TACTILE].reshape(19, 6)
        forces.append(tac[:, :3])
        torques.append(tac[:, 3:])
    f = np.concatenate([x.ravel() for x in forces])
    t = np.concatenate([x.ravel() for x in torques])
    assert f.size >= 10**5 and t.size >= 10**5
    assert abs(f.std() - 0.05) / 0.05 < 0.05
    assert abs(t.std() - 0.002) / 0.002 < 0.05


# --- reset --------------------------------------------------------------------


def test_reset_same_seed_identical(hand):
    env = make_env(hand, mask=fingertip_mask())
    a = env.reset(seed=99)
    b = env.reset(seed=99)
    assert np.array_equal(a, b)


def test_reset_empty_config_tactile_all_zero(hand):
    env = make_env(hand, mask=0)
    obs = env.reset(seed=5)
    for _ in range(20):
        res = env.step(np.full(20, 0.05))
        assert np.all(res.observation[TACTILE] == 0.0)


@pytest.mark.slow
def test_reset_sampling_distribution(hand):
    # oracle over 1000 resets: XY within the 3 cm palm disc; orientations
    # spread over the quaternion sign octants (no octant above 25%)
    env = make_env(hand)
    center = np.array(env.rand.goal_center[:2])
    octants = np.zeros(8, dtype=int)
    for i in range(1000):
        env.reset(seed=10_000 + i)
        xy = env.state.object_pos[:2]
        assert np.linalg.norm(xy - center) <= env.rand.spawn_radius + 1e-9
        q = env.state.object_quat
        if q[0] < 0:
            q = -q
        octants[int(q[1] > 0) * 4 + int(q[2] > 0) * 2 + int(q[3] > 0)] += 1
    assert octants.sum() == 1000
    assert octants.max() <= 250


# --- env_step -----------------------------------------------------------------


def test_static_hold_zero_action(hand):
    # resting stably: level palm (no joint jitter), uniform mass, centered
    # drop; zero action must hold the ball for at least 200 control steps
    rand = RandomizationParams(
        joint_jitter=0.0, spawn_radius=0.0, com_offset_frac=0.0,
        spawn_clearance=(0.03, 0.03),
    )
    env = make_env(hand, rand=rand)
    env.reset(seed=3)
    for i in range(200):
        res = env.step(np.zeros(20))
        assert res.terminated != DROPPED, f"dropped at step {i}"
        assert not res.episode_over


def test_teleport_to_goal_forces_success(hand):
    env = make_env(hand, reward=RewardParams(goals_per_episode_cap=50))
    env.reset(seed=4)
    old_goal = env.goal
    env.teleport_object(old_goal.target_position, old_goal.target_orientation)
    res = env.step(np.zeros(20))
    assert res.terminated == SUCCESS
    assert res.info["goals_completed"] == 1
    assert not res.episode_over  # goal chaining continues the episode
    new_goal = env.goal
    assert not np.allclose(new_goal.target_position, old_goal.target_position) or \
        not np.allclose(new_goal.target_orientation, old_goal.target_orientation)
    assert res.reward > 0  # bonus dominates the tiny penalties


def test_teleport_below_palm_forces_drop(hand):
    p = RewardParams(alpha=0, beta=0, gamma=0, failure_penalty=50)
    env = make_env(hand, reward=p)
    env.reset(seed=4)
    env.teleport_object([0.0, 0.047, -0.2])
    res = env.step(np.zeros(20))
    assert res.terminated == DROPPED
    assert res.episode_over
    assert res.reward == pytest.approx(-50.0)
    with pytest.raises(RuntimeError):
        env.step(np.zeros(20))


def test_goal_chaining_counts_every_bonus(hand):
    p = RewardParams(alpha=0, beta=0, gamma=0, success_bonus=25, goals_per_episode_cap=3)
    env = make_env(hand, reward=p)
    env.reset(seed=8)
    bonuses = 0
    for _ in range(3):
        env.teleport_object(env.goal.target_position, env.goal.target_orientation)
        res = env.step(np.zeros(20))
        assert res.terminated == SUCCESS
        bonuses += 1
    assert res.info["goals_completed"] == 3 == bonuses
    assert res.episode_over  # cap reached


def test_timeout_ends_episode_without_penalty(hand):
    p = RewardParams(alpha=0, beta=0, gamma=0, episode_limit=5)
    env = make_env(hand, reward=p, rand=RandomizationParams(joint_jitter=0.0))
    env.reset(seed=1)
    for i in range(5):
        res = env.step(np.zeros(20))
    assert res.terminated == TIMEOUT
    assert res.episode_over
    assert res.reward == 0.0


def test_action_clamped_to_delta(hand):
    env = make_env(hand)
    env.reset(seed=2)
    res = env.step(np.full(20, 10.0))
    np.testing.assert_array_equal(res.observation[39:59], np.full(20, env.action_delta))


def test_observation_constant_length_across_configs(hand):
    for mask in (0, fingertip_mask(), (1 << 19) - 1):
        env = make_env(hand, mask=mask)
        obs = env.reset(seed=0)
        assert obs.shape == (173,)


def test_vector_env_deterministic_and_ordered(hand):
    def factory(seed):
        return make_env(hand, seed=seed)

    v1 = VectorEnv(factory, 3, master_seed=7)
    v2 = VectorEnv(factory, 3, master_seed=7)
    o1, o2 = v1.reset_all(), v2.reset_all()
    assert np.array_equal(o1, o2)
    acts = np.tile(np.linspace(-0.05, 0.05, 20), (3, 1))
    for _ in range(5):
        r1 = v1.step(acts)
        r2 = v2.step(acts)
        assert np.array_equal(r1[0], r2[0])
        assert np.array_equal(r1[1], r2[1])
