"""6-DOF zero-gravity rigid-body simulator with the 12-dim observation
interface, goal sampling, reward, and a vectorized rollout wrapper.

All state arrays may carry a leading batch axis; the physics broadcasts, so a
single environment is just the unbatched case. Linear velocity and position
are world-frame, angular velocity is body-frame, orientations map body to
world.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mathcore import (
    IDENTITY_QUAT,
    SeededRng,
    quat_conj,
    quat_error_rotvec,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_rotate,
    vec3,
)

OBS_DIM = 12
ACT_DIM = 6

TASKS = ("undock", "random")

UNDOCK_GOAL_POS = vec3(0.5, 0.0, 0.0)
RANDOM_POS_RANGE = 0.5   # goal position uniform in +/- this many meters per axis
RANDOM_QUAT_RANGE = 0.5  # vector part of the unnormalized goal quaternion


class SimulationFault(RuntimeError):
    """Raised when NaN/Inf propagates into the rigid-body state."""


@dataclass(frozen=True)
class FlyerParams:
    mass: float = 9.58
    inertia_diag: tuple[float, float, float] = (0.153, 0.143, 0.162)
    force_limit: float = 0.85
    torque_limit: float = 0.1
    dt: float = 0.1
    episode_len: int = 200

    def __post_init__(self) -> None:
        if min(self.mass, self.force_limit, self.torque_limit, self.dt) <= 0.0:
            raise ValueError("physical parameters must be positive")
        if min(self.inertia_diag) <= 0.0 or self.episode_len <= 0:
            raise ValueError("physical parameters must be positive")

    @property
    def inertia(self) -> np.ndarray:
        return np.asarray(self.inertia_diag, dtype=np.float64)


@dataclass
class FlyerState:
    position: np.ndarray
    orientation: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray

    @classmethod
    def zeros(cls, n: int | None = None) -> "FlyerState":
        """At origin, identity orientation, at rest; batched when n is given."""
        if n is None:
            return cls(np.zeros(3), IDENTITY_QUAT.copy(), np.zeros(3), np.zeros(3))
        q = np.tile(IDENTITY_QUAT, (n, 1))
        return cls(np.zeros((n, 3)), q, np.zeros((n, 3)), np.zeros((n, 3)))


@dataclass
class GoalPose:
    position: np.ndarray
    orientation: np.ndarray


@dataclass
class Action:
    """Body-frame force [N] and torque [N*m], already inside actuator limits."""

    force: np.ndarray
    torque: np.ndarray


@dataclass(frozen=True)
class RewardWeights:
    w_pos: float = 1.0
    w_ang: float = 0.5
    w_vel: float = 0.1
    w_angvel: float = 0.05
    w_act: float = 0.01


def action_from_raw(raw: np.ndarray, params: FlyerParams) -> Action:
    """Map unbounded policy outputs to actuator commands: tanh squash, scale by
    the per-axis limits, then clamp (the clamp is a no-op after tanh but keeps
    the actuation invariant explicit)."""
    raw = np.asarray(raw, dtype=np.float64)
    force = np.tanh(raw[..., 0:3]) * params.force_limit
    torque = np.tanh(raw[..., 3:6]) * params.torque_limit
    return clamp_action(Action(force, torque), params)


def clamp_action(action: Action, params: FlyerParams) -> Action:
    return Action(
        np.clip(action.force, -params.force_limit, params.force_limit),
        np.clip(action.torque, -params.torque_limit, params.torque_limit),
    )


def step(state: FlyerState, action: Action, params: FlyerParams) -> FlyerState:
    """Semi-implicit Euler: velocities first, then pose from the updated
    velocities, quaternion via exponential map.

    The angular update integrates Euler's equation I*dw = tau - w x Iw in its
    momentum-transport form: apply the torque impulse to the body momentum,
    advance the orientation at the resulting rate, and rotate the momentum by
    the inverse of that same incremental rotation. The w x Iw term is exactly
    this frame transport, so free drift conserves world angular momentum to
    round-off instead of drifting at O(dt) per step.
    """
    action = clamp_action(action, params)  # actuation never exceeds limits
    inertia = params.inertia
    f_world = quat_rotate(state.orientation, action.force)
    lin_vel = state.lin_vel + (params.dt / params.mass) * f_world
    momentum = inertia * state.ang_vel + params.dt * action.torque
    rate = momentum / inertia
    dq = quat_from_rotvec(rate * params.dt)
    ang_vel = quat_rotate(quat_conj(dq), momentum) / inertia
    position = state.position + params.dt * lin_vel
    orientation = quat_normalize(quat_mul(state.orientation, dq))
    if not (
        np.all(np.isfinite(position))
        and np.all(np.isfinite(orientation))
        and np.all(np.isfinite(lin_vel))
        and np.all(np.isfinite(ang_vel))
    ):
        raise SimulationFault("non-finite rigid-body state after integration step")
    return FlyerState(position, orientation, lin_vel, ang_vel)


def observe(state: FlyerState, goal: GoalPose) -> np.ndarray:
    """12-vector [lin_vel, ang_vel, pos_err, orient_err_rotvec]; position error
    is world-frame goal minus current, orientation error the shortest-path
    rotation vector."""
    pos_err = goal.position - state.position
    ang_err = quat_error_rotvec(state.orientation, goal.orientation)
    return np.concatenate([state.lin_vel, state.ang_vel, pos_err, ang_err], axis=-1)


def reward(
    obs: np.ndarray,
    action: Action,
    params: FlyerParams,
    weights: RewardWeights = RewardWeights(),
) -> np.ndarray | float:
    """Negative weighted cost of tracking error, speed, and normalized effort;
    exactly zero when parked at the goal with zero action."""
    obs = np.asarray(obs)
    lin_vel, ang_vel = obs[..., 0:3], obs[..., 3:6]
    pos_err, ang_err = obs[..., 6:9], obs[..., 9:12]
    a_norm = np.concatenate(
        [action.force / params.force_limit, action.torque / params.torque_limit], axis=-1
    )
    r = -(
        weights.w_pos * np.linalg.norm(pos_err, axis=-1)
        + weights.w_ang * np.linalg.norm(ang_err, axis=-1)
        + weights.w_vel * np.linalg.norm(lin_vel, axis=-1)
        + weights.w_angvel * np.linalg.norm(ang_vel, axis=-1)
        + weights.w_act * (a_norm * a_norm).sum(axis=-1)
    )
    return float(r) if r.ndim == 0 else r


def sample_goal(rng: SeededRng, task: str, n: int | None = None) -> GoalPose:
    """Undock: fixed +0.5 m along X, identity orientation. Random: position
    uniform per axis, orientation from a normalized quaternion with w=1 and
    uniform vector part (axis angles up to ~81.8 deg)."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    shape3 = (3,) if n is None else (n, 3)
    if task == "undock":
        pos = np.broadcast_to(UNDOCK_GOAL_POS, shape3).copy()
        q = FlyerState.zeros(n).orientation
        return GoalPose(pos, q)
    pos = rng.uniform(-RANDOM_POS_RANGE, RANDOM_POS_RANGE, shape3)
    vec_part = rng.uniform(-RANDOM_QUAT_RANGE, RANDOM_QUAT_RANGE, shape3)
    w = np.ones(vec_part.shape[:-1] + (1,))
    return GoalPose(pos, quat_normalize(np.concatenate([w, vec_part], axis=-1)))


def reset(rng: SeededRng, task: str, n: int | None = None) -> tuple[FlyerState, GoalPose]:
    return FlyerState.zeros(n), sample_goal(rng, task, n)


class VecFlyer:
    """N independent environments stepped in lockstep with synchronized
    fixed-horizon resets; rollout reduction order is by environment index.

    Training resets may randomize the initial state: pose perturbed within
    the random-goal envelope (``randomize_pose``), velocities uniform per
    axis (``init_lin_vel``, ``init_ang_vel``). Combined with random goals
    this doubles the relative-error envelope the policy trains on, so it
    stays in distribution when coarsened observation feedback pushes it off
    the nominal approach. Evaluation resets (the plain ``reset``) always
    start at the origin at rest.
    """

    def __init__(
        self,
        n_envs: int,
        params: FlyerParams,
        rng: SeededRng,
        task: str = "random",
        weights: RewardWeights = RewardWeights(),
        randomize_pose: bool = False,
        init_lin_vel: float = 0.0,
        init_ang_vel: float = 0.0,
    ):
        self.n_envs = n_envs
        self.params = params
        self.rng = rng
        self.task = task
        self.weights = weights
        self.randomize_pose = randomize_pose
        self.init_lin_vel = init_lin_vel
        self.init_ang_vel = init_ang_vel
        self.t = 0
        # Means over envs at the most recent episode end, for training logs.
        self.last_final_pos_err = float("nan")
        self.last_final_ang_err_deg = float("nan")
        self._reset_all()

    def _reset_all(self) -> None:
        self.state, self.goal = reset(self.rng, self.task, self.n_envs)
        if self.randomize_pose:
            start = sample_goal(self.rng, "random", self.n_envs)
            self.state.position = start.position
            self.state.orientation = start.orientation
        if self.init_lin_vel > 0.0:
            self.state.lin_vel = self.rng.uniform(
                -self.init_lin_vel, self.init_lin_vel, (self.n_envs, 3)
            )
        if self.init_ang_vel > 0.0:
            self.state.ang_vel = self.rng.uniform(
                -self.init_ang_vel, self.init_ang_vel, (self.n_envs, 3)
            )
        self.t = 0

    def observations(self) -> np.ndarray:
        return observe(self.state, self.goal)

    def step(self, raw_actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Apply raw policy outputs; returns (next_obs, rewards, dones). On the
        terminal step every env resets and next_obs is the fresh episode's."""
        action = action_from_raw(raw_actions, self.params)
        self.state = step(self.state, action, self.params)
        obs = observe(self.state, self.goal)
        rew = reward(obs, action, self.params, self.weights)
        self.t += 1
        done = np.full(self.n_envs, self.t >= self.params.episode_len)
        if self.t >= self.params.episode_len:
            self.last_final_pos_err = float(np.linalg.norm(obs[:, 6:9], axis=-1).mean())
            self.last_final_ang_err_deg = float(
                np.degrees(np.linalg.norm(obs[:, 9:12], axis=-1)).mean()
            )
            self._reset_all()
            obs = observe(self.state, self.goal)
        return obs, rew, done
