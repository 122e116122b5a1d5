"""Goal-conditioned in-hand reorientation environment.

Observations are a fixed 173-value vector regardless of which tactile
regions are live: a 59-value base block (fingertips, object pose/twist,
goal, relative orientation, previous action) followed by 19 x 6 wrench
slots in canonical region order, zero-padded for inactive regions. Success
requires position and orientation tolerances simultaneously; each success
pays the bonus once and chains a freshly sampled goal until the episode
drops, times out, or hits the goal cap.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .hand import HandModel, JointState, apply_coupling, forward_kinematics
from .objects import ObjectSpec, make_object
from .regions import N_REGIONS
from .sim import PhysicsParams, SimState, Simulation

# termination codes
RUNNING = "running"
SUCCESS = "success_goal_reached"
DROPPED = "dropped"
TIMEOUT = "timeout"

# observation layout
FINGERTIPS = slice(0, 15)
OBJ_POS = slice(15, 18)
OBJ_QUAT = slice(18, 22)
OBJ_LINVEL = slice(22, 25)
OBJ_ANGVEL = slice(25, 28)
TARGET_POS = slice(28, 31)
TARGET_QUAT = slice(31, 35)
REL_QUAT = slice(35, 39)
PREV_ACTION = slice(39, 59)
TACTILE = slice(59, 173)
BASE_DIM = 59
TACTILE_DIM = N_REGIONS * 6
OBS_DIM = BASE_DIM + TACTILE_DIM


@dataclass(frozen=True)
class RewardParams:
    """All scales of the step reward R = -a*d - b*r - g*|act|^2 + S - F,
    plus the success tolerances and episode bookkeeping limits."""

    alpha: float = 10.0  # 1/m
    beta: float = 1.0  # 1/rad
    gamma: float = 0.002
    success_bonus: float = 25.0
    failure_penalty: float = 50.0
    rot_tolerance: float = 0.1  # rad
    pos_tolerance: float = 0.01  # m
    drop_height: float = -0.05  # world z of the object center
    episode_limit: int = 400  # control steps
    goals_per_episode_cap: int = 50
    penalize_timeout: bool = False

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("reward scales must be >= 0")
        if self.rot_tolerance <= 0 or self.pos_tolerance <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass(frozen=True)
class TaskGoal:
    target_position: np.ndarray
    target_orientation: np.ndarray  # unit quaternion (w, x, y, z)


@dataclass(frozen=True)
class NoiseParams:
    pos_std: float = 0.001  # m, fingertip + object position
    force_std: float = 0.05  # N, active tactile slots
    torque_std: float = 0.002  # N*m, active tactile slots


@dataclass(frozen=True)
class RandomizationParams:
    joint_jitter: float = 0.05  # rad, uniform on actuated joints
    spawn_clearance: tuple = (0.03, 0.06)  # m above the palm top
    spawn_radius: float = 0.03  # m, XY disc around the palm center
    mass_jitter: float = 0.10  # +-10%
    com_offset_frac: float = 0.25  # of the smallest semi-dimension
    goal_center: tuple = (0.0, 0.047, 0.055)
    goal_half: tuple = (0.02, 0.02, 0.01)
    # max target-orientation angle from the object's current orientation;
    # >= pi means uniform over SO(3). Desk-scale runs cap this so successes
    # are reachable within small sample budgets.
    goal_rot_max: float = np.pi


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: str  # RUNNING / SUCCESS / DROPPED / TIMEOUT
    info: dict
    episode_over: bool


class EpisodeOverError(RuntimeError):
    pass


def quat_mul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def random_quat(rng) -> np.ndarray:
    """Uniform random unit quaternion (Shoemake's subgroup method)."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    return np.array([
        a * np.sin(2 * np.pi * u2),
        a * np.cos(2 * np.pi * u2),
        b * np.sin(2 * np.pi * u3),
        b * np.cos(2 * np.pi * u3),
    ])


def orientation_error(q_object, q_target) -> float:
    """Rotation angle in [0, pi] between two orientations, invariant to the
    quaternion double cover. Inputs within 1e-3 of unit norm are normalized;
    anything further off is rejected."""
    qo = np.asarray(q_object, dtype=np.float64)
    qt = np.asarray(q_target, dtype=np.float64)
    for q in (qo, qt):
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-3:
            raise ValueError(f"quaternion norm {n:.6f} too far from 1")
    qo = qo / np.linalg.norm(qo)
    qt = qt / np.linalg.norm(qt)
    dot = abs(float(np.dot(qo, qt)))
    return 2.0 * np.arccos(min(dot, 1.0))


def compute_reward(d, r, action, outcome, params: RewardParams) -> float:
    """Step reward: distance/rotation/action penalties plus the one-shot
    success bonus or drop penalty."""
    if d < 0 or r < 0:
        raise ValueError("d and r must be non-negative")
    a = np.asarray(action, dtype=np.float64)
    reward = -params.alpha * d - params.beta * r - params.gamma * float(np.dot(a, a))
    if outcome == SUCCESS:
        reward += params.success_bonus
    elif outcome == DROPPED:
        reward -= params.failure_penalty
    elif outcome == TIMEOUT and params.penalize_timeout:
        reward -= params.failure_penalty
    return float(reward)


def is_success(d, r, params: RewardParams) -> bool:
    return d <= params.pos_tolerance and r <= params.rot_tolerance


def build_observation(
    fingertips,
    object_pos,
    object_quat,
    object_linvel,
    object_angvel,
    goal: TaskGoal,
    prev_action,
    tactile,
    active,
    noise: NoiseParams = None,
    rng=None,
) -> np.ndarray:
    """Assemble the fixed-width observation vector.

    Inactive tactile slots are exact zeros before and after noise: Gaussian
    noise is applied only to position entries and to active tactile slots.
    """
    obs = np.zeros(OBS_DIM)
    tips = np.asarray(fingertips, dtype=np.float64).reshape(5, 3).copy()
    opos = np.asarray(object_pos, dtype=np.float64).copy()
    if noise is not None and rng is not None and noise.pos_std > 0:
        tips += rng.normal(0.0, noise.pos_std, size=(5, 3))
        opos += rng.normal(0.0, noise.pos_std, size=3)
    obs[FINGERTIPS] = tips.ravel()
    obs[OBJ_POS] = opos
    obs[OBJ_QUAT] = object_quat
    obs[OBJ_LINVEL] = object_linvel
    obs[OBJ_ANGVEL] = object_angvel
    obs[TARGET_POS] = goal.target_position
    obs[TARGET_QUAT] = goal.target_orientation
    rel = quat_mul(goal.target_orientation, quat_conj(object_quat))
    if rel[0] < 0:
        rel = -rel
    obs[REL_QUAT] = rel / np.linalg.norm(rel)
    obs[PREV_ACTION] = prev_action

    tac = np.asarray(tactile, dtype=np.float64).reshape(N_REGIONS, 6) * np.asarray(
        active, dtype=np.float64
    ).reshape(N_REGIONS, 1)
    if noise is not None and rng is not None:
        act_idx = np.where(np.asarray(active, dtype=bool))[0]
        if act_idx.size:
            if noise.force_std > 0:
                tac[act_idx, :3] += rng.normal(0.0, noise.force_std, size=(act_idx.size, 3))
            if noise.torque_std > 0:
                tac[act_idx, 3:] += rng.normal(0.0, noise.torque_std, size=(act_idx.size, 3))
    obs[TACTILE] = tac.ravel()
    return obs


class ReorientEnv:
    """One hand + one object; reset/step protocol with goal chaining.

    sensor_mask is a 19-bit integer over canonical region order (see
    regions.mask_of). action_delta bounds the per-step joint target change.
    """

    def __init__(
        self,
        model: HandModel,
        object_spec: ObjectSpec,
        sensor_mask: int = 0,
        reward: RewardParams = None,
        physics: PhysicsParams = None,
        randomization: RandomizationParams = None,
        noise: NoiseParams = None,
        action_delta: float = 0.1,
        seed: int = 0,
    ):
        self.model = model
        self.object_spec = object_spec
        self.sensor_mask = int(sensor_mask)
        self.reward_params = reward or RewardParams()
        self.physics = physics or PhysicsParams()
        self.rand = randomization or RandomizationParams()
        self.noise = noise if noise is not None else NoiseParams()
        self.action_delta = float(action_delta)
        self.active = np.array(
            [bool(self.sensor_mask >> i & 1) for i in range(N_REGIONS)], dtype=bool
        )
        self._seed_rng = np.random.default_rng(seed)
        self.sim = None
        self.state = None
        self.goal = None
        self.events = []  # unstable-step events for the run log
        self._episode_over = True

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int = None) -> np.ndarray:
        """Start a fresh episode; deterministic per seed."""
        if seed is None:
            seed = int(self._seed_rng.integers(0, 2**62))
        self.episode_seed = int(seed)
        self.rng = np.random.default_rng(self.episode_seed)
        rng = self.rng

        # randomized object body
        scale = 1.0 + self.rand.mass_jitter * rng.uniform(-1.0, 1.0)
        direction = rng.normal(size=3)
        nrm = np.linalg.norm(direction)
        direction = direction / nrm if nrm > 1e-12 else np.array([1.0, 0, 0])
        radius = rng.uniform(0.0, self.rand.com_offset_frac) * self.object_spec.min_semi_dimension()
        spec = self.object_spec.with_randomization(scale, direction * radius)
        body = make_object(spec)
        self.sim = Simulation(self.model, body, self.physics)

        # hand rest pose + uniform jitter on the actuated joints
        q = np.zeros(self.model.n_joints)
        jit = rng.uniform(-self.rand.joint_jitter, self.rand.joint_jitter,
                          size=self.model.actuated_count)
        q[self.model.actuated] = np.clip(
            jit,
            self.model.lo[self.model.actuated],
            self.model.hi[self.model.actuated],
        )
        passive = np.where(self.model.coupled_src >= 0)[0]
        q[passive] = np.clip(
            q[self.model.coupled_src[passive]], self.model.lo[passive], self.model.hi[passive]
        )
        hand = JointState(q, np.zeros_like(q))

        palm_top = self.model.palm_top_z()
        for attempt in range(10):
            ang = rng.uniform(0.0, 2 * np.pi)
            rad = self.rand.spawn_radius * np.sqrt(rng.uniform())
            quat = random_quat(rng)
            clearance = rng.uniform(*self.rand.spawn_clearance)
            drop = _support_extent(body, quat)
            pos = np.array([
                rad * np.cos(ang) + self.rand.goal_center[0],
                rad * np.sin(ang) + self.rand.goal_center[1],
                palm_top + clearance + drop,
            ])
            state = self.sim.initial_state(pos, quat, hand)
            if not self.sim.detect_contacts(state):
                break
        else:
            raise RuntimeError("object spawn kept colliding with the hand after 10 tries")

        self.state = state
        self.goal = self._sample_goal()
        self.prev_action = np.zeros(self.model.actuated_count)
        self.steps = 0
        self.goals_completed = 0
        self.episode_return = 0.0
        self.last_tactile = np.zeros((N_REGIONS, 6))
        self._episode_over = False
        return self._observe()

    def _sample_goal(self) -> TaskGoal:
        center = np.asarray(self.rand.goal_center)
        half = np.asarray(self.rand.goal_half)
        pos = center + self.rng.uniform(-half, half)
        if self.rand.goal_rot_max >= np.pi:
            return TaskGoal(pos, random_quat(self.rng))
        # bounded reorientation: rotate the current pose by a random axis
        # and an angle safely above the success tolerance
        lo = min(1.5 * self.reward_params.rot_tolerance, 0.75 * self.rand.goal_rot_max)
        ang = self.rng.uniform(lo, self.rand.goal_rot_max)
        axis = self.rng.normal(size=3)
        axis /= max(np.linalg.norm(axis), 1e-12)
        dq = np.concatenate([[np.cos(ang / 2)], np.sin(ang / 2) * axis])
        quat = quat_mul(dq, self.state.object_quat)
        return TaskGoal(pos, quat / np.linalg.norm(quat))

    # -- stepping -----------------------------------------------------------

    def step(self, action) -> StepResult:
        if self._episode_over:
            raise EpisodeOverError("episode is over; call reset() first")
        action = np.clip(
            np.asarray(action, dtype=np.float64).reshape(self.model.actuated_count),
            -self.action_delta,
            self.action_delta,
        )
        q = self.state.hand.positions
        act_targets = np.clip(
            q[self.model.actuated] + action,
            self.model.lo[self.model.actuated],
            self.model.hi[self.model.actuated],
        )
        targets = apply_coupling(act_targets, self.model)

        self.state, wrenches, _, diag = self.sim.step(self.state, targets)
        if diag.unstable:
            self.events.append({
                "event": "unstable_step",
                "time": self.state.time,
                "max_depth_fraction": diag.max_depth_fraction,
            })
        self.last_tactile = self.sim._last_tactile
        self.prev_action = action
        self.steps += 1

        d = float(np.linalg.norm(self.state.object_pos - self.goal.target_position))
        r = orientation_error(self.state.object_quat, self.goal.target_orientation)

        outcome = RUNNING
        if self.state.object_pos[2] < self.reward_params.drop_height:
            outcome = DROPPED
        elif is_success(d, r, self.reward_params):
            outcome = SUCCESS
        elif self.steps >= self.reward_params.episode_limit:
            outcome = TIMEOUT

        reward = compute_reward(d, r, action, outcome, self.reward_params)
        self.episode_return += reward

        if outcome == SUCCESS:
            self.goals_completed += 1
            self.goal = self._sample_goal()
        over = (
            outcome in (DROPPED, TIMEOUT)
            or (outcome == SUCCESS and self.goals_completed >= self.reward_params.goals_per_episode_cap)
            or self.steps >= self.reward_params.episode_limit
        )
        self._episode_over = over

        return StepResult(
            observation=self._observe(),
            reward=reward,
            terminated=outcome,
            info={"d": d, "r": r, "goals_completed": self.goals_completed},
            episode_over=over,
        )

    def _observe(self) -> np.ndarray:
        _, _, tips, _, _ = forward_kinematics(self.model, self.state.hand)
        return build_observation(
            tips,
            self.state.object_pos,
            self.state.object_quat,
            self.state.object_linvel,
            self.state.object_angvel,
            self.goal,
            self.prev_action,
            self.last_tactile,
            self.active,
            self.noise,
            self.rng,
        )

    def episode_record(self, termination: str) -> dict:
        return {
            "seed": self.episode_seed,
            "config_bitmask": self.sensor_mask,
            "goals_completed": self.goals_completed,
            "termination": termination,
            "steps": self.steps,
            "return": round(self.episode_return, 6),
        }

    # test hook: teleport the object without touching anything else
    def teleport_object(self, position, quaternion=None):
        st = self.state
        self.state = SimState(
            st.hand,
            np.asarray(position, dtype=np.float64),
            np.asarray(quaternion, dtype=np.float64) if quaternion is not None else st.object_quat,
            st.object_linvel,
            st.object_angvel,
            st.time,
        )


def _support_extent(body, quat) -> float:
    """Distance from the object center to its lowest point for a pose."""
    rot = np.empty((3, 3))
    kernels._quat_to_mat(np.asarray(quat, dtype=np.float64), rot)
    d = rot.T @ np.array([0.0, 0.0, 1.0])
    if body.type_code == kernels.OBJ_SPHERE:
        return float(body.dims[0])
    if body.type_code == kernels.OBJ_ELLIPSOID:
        return float(np.linalg.norm(body.dims * d))
    return float(body.dims[0] * np.abs(d).sum())


class VectorEnv:
    """Fixed-width batch of environments with deterministic auto-reset.

    step() returns results in worker order; terminated workers are reset in
    place and their returned observation belongs to the fresh episode (the
    done flag marks the boundary for recurrent-state and advantage
    bookkeeping). Episode records accumulate until drained.
    """

    def __init__(self, make_env, n_envs: int, master_seed: int = 0):
        ss = np.random.SeedSequence(master_seed)
        children = ss.spawn(n_envs)
        self.envs = [make_env(int(c.generate_state(1, np.uint64)[0]) % 2**62) for c in children]
        self.n_envs = n_envs
        self._records = []

    def reset_all(self) -> np.ndarray:
        return np.stack([env.reset() for env in self.envs])

    def step(self, actions):
        actions = np.asarray(actions)
        obs = np.empty((self.n_envs, OBS_DIM))
        rewards = np.empty(self.n_envs)
        dones = np.zeros(self.n_envs, dtype=bool)
        infos = []
        for i, env in enumerate(self.envs):
            res = env.step(actions[i])
            rewards[i] = res.reward
            dones[i] = res.episode_over
            infos.append(res.info | {"terminated": res.terminated})
            if res.episode_over:
                self._records.append(env.episode_record(res.terminated))
                obs[i] = env.reset()
            else:
                obs[i] = res.observation
        return obs, rewards, dones, infos

    def drain_records(self) -> list:
        out = self._records
        self._records = []
        return out

    def drain_events(self) -> list:
        out = []
        for i, env in enumerate(self.envs):
            for ev in env.events:
                out.append(ev | {"env": i})
            env.events = []
        return out
