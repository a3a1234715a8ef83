"""Goal-conditioned sparse-reward control tasks.

Every task pays reward 1 (and terminates) on the step where the achieved goal
comes within ``goal_tolerance`` of the desired goal, and 0 otherwise. Episodes
are also cut at ``horizon`` steps; that cut is reported as ``truncated`` in
``info`` and is not a terminal state for bootstrapping.

State vectors:

* ``point_reach_{2,3}d``: position (d). Goal: target position.
* ``planar_arm_reach``: three joint angles then the effector (x, y). Goal: effector (x, y).
* ``lid_attractor``: lid angle from closed (rad), angular velocity. Goal: lid angle.
* ``grip_drawer``: drawer extension, grip flag (1 engaged, 0 released). Goal: extension.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, EnvStateError, ShapeError
from .her import DEFAULT_TOLERANCE, GoalMapping, is_success


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    goal_dim: int
    horizon: int = 200
    dt: float = 0.05

    def __post_init__(self):
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ShapeError("action bounds do not match action_dim")
        if not all(h > l for l, h in zip(self.action_low, self.action_high)):
            raise ValueError("action box must be nonempty")
        if not all(math.isfinite(v) for v in self.action_low + self.action_high):
            raise ValueError("action box must be finite")
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon and dt must be positive")

    @property
    def low(self) -> np.ndarray:
        return np.array(self.action_low, dtype=np.float64)

    @property
    def high(self) -> np.ndarray:
        return np.array(self.action_high, dtype=np.float64)


class GoalEnv:
    """Shared episode bookkeeping; subclasses supply dynamics, resets and phi."""

    task_id = ""

    def __init__(self, spec: EnvSpec, goal_mapping: GoalMapping):
        self.spec = spec
        self.goal_mapping = goal_mapping
        self.state: np.ndarray | None = None
        self.goal: np.ndarray | None = None
        self.steps = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        self.goal = self._sample_goal(rng)
        self.state = self._initial_state(rng)
        self.steps = 0
        self.done = False
        return self.state.copy(), self.goal.copy()

    def clamp(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.spec.action_dim,):
            raise ShapeError(f"expected action of length {self.spec.action_dim}, got {a.shape}")
        return np.clip(a, self.spec.low, self.spec.high)

    def step(self, action):
        if self.done:
            raise EnvStateError("step() called on a finished episode; call reset() first")
        a = self.clamp(action)
        self.state = self._dynamics(self.state, a)
        self.steps += 1
        success = is_success(self.state, self.goal, self.goal_mapping)
        truncated = not success and self.steps >= self.spec.horizon
        self.done = success or truncated
        info = {"success": success, "truncated": truncated, "steps": self.steps}
        return self.state.copy(), 1.0 if success else 0.0, self.done, info

    def achieved_goal(self, state) -> np.ndarray:
        return self.goal_mapping(state)

    def _sample_goal(self, rng) -> np.ndarray:
        raise NotImplementedError

    def _initial_state(self, rng) -> np.ndarray:
        raise NotImplementedError

    def _dynamics(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PointReach(GoalEnv):
    """Velocity-controlled point mass in the box [-extent, extent]^d."""

    def __init__(self, dim: int = 2, dt: float = 0.05, horizon: int = 200,
                 goal_tolerance: float = DEFAULT_TOLERANCE, extent: float = 1.0):
        if dim not in (2, 3):
            raise ConfigError("PointReach supports d = 2 or 3")
        self.dim = dim
        self.extent = extent
        spec = EnvSpec(dim, dim, (-1.0,) * dim, (1.0,) * dim, dim, horizon, dt)
        super().__init__(spec, GoalMapping(lambda s: s[:dim], dim, goal_tolerance))
        self.task_id = f"point_reach_{dim}d"

    def _sample_goal(self, rng):
        return rng.uniform(-self.extent, self.extent, size=self.dim)

    def _initial_state(self, rng):
        return np.zeros(self.dim)

    def _dynamics(self, state, action):
        return np.clip(state + self.spec.dt * action, -self.extent, self.extent)


def planar_fk(joints, lengths) -> np.ndarray:
    """End-effector (x, y) of a planar serial chain with relative joint angles."""
    angles = np.cumsum(np.asarray(joints, dtype=np.float64))
    lengths = np.asarray(lengths, dtype=np.float64)
    return np.array([np.sum(lengths * np.cos(angles)), np.sum(lengths * np.sin(angles))])


class PlanarArmReach(GoalEnv):
    """Three-link planar arm under joint-velocity control; the goal is an effector position."""

    task_id = "planar_arm_reach"
    LINKS = (0.5, 0.3, 0.2)
    START = (0.25 * math.pi, 0.5 * math.pi, 0.25 * math.pi)

    def __init__(self, dt: float = 0.05, horizon: int = 200, goal_tolerance: float = DEFAULT_TOLERANCE,
                 links=LINKS, joint_limit: float = math.pi):
        self.links = tuple(float(l) for l in links)
        self.joint_limit = joint_limit
        n = len(self.links)
        self.n_joints = n
        links_arr = np.array(self.links)
        spec = EnvSpec(n + 2, n, (-1.0,) * n, (1.0,) * n, 2, horizon, dt)
        super().__init__(spec, GoalMapping(lambda s: planar_fk(s[:n], links_arr), 2, goal_tolerance))

    def _pack(self, q):
        return np.concatenate([q, planar_fk(q, self.links)])

    def _sample_goal(self, rng):
        # effector position of a random configuration, so every goal is reachable
        return planar_fk(rng.uniform(-self.joint_limit, self.joint_limit, size=self.n_joints), self.links)

    def _initial_state(self, rng):
        return self._pack(np.array(self.START[: self.n_joints]))

    def _dynamics(self, state, action):
        q = np.clip(state[: self.n_joints] + self.spec.dt * action, -self.joint_limit, self.joint_limit)
        return self._pack(q)


class LidAttractor(GoalEnv):
    """Hinged lid with gravity and Coulomb hinge friction; the goal is the closed angle 0.

    Gravity torque is ``gravity * cos(angle)``; the friction torque equals the
    gravity torque at the tipping angle, so a lid at rest below the tipping
    angle falls shut on its own while a lid above it stays put until pushed.
    The episode starts with the lid fully open (vertical).
    """

    task_id = "lid_attractor"

    def __init__(self, dt: float = 0.05, horizon: int = 200, goal_tolerance: float = DEFAULT_TOLERANCE,
                 tipping_angle: float = math.radians(60.0), open_angle: float = 0.5 * math.pi,
                 gravity: float = 2.0, motor_gain: float = 2.0, damping: float = 0.5):
        self.tipping_angle = tipping_angle
        self.open_angle = open_angle
        self.gravity = gravity
        self.motor_gain = motor_gain
        self.damping = damping
        self.friction = gravity * math.cos(tipping_angle)
        spec = EnvSpec(2, 1, (-1.0,), (1.0,), 1, horizon, dt)
        super().__init__(spec, GoalMapping(lambda s: s[:1], 1, goal_tolerance))

    def _sample_goal(self, rng):
        return np.zeros(1)

    def _initial_state(self, rng):
        return np.array([self.open_angle, 0.0])

    def _dynamics(self, state, action):
        angle, omega = float(state[0]), float(state[1])
        applied = -self.gravity * math.cos(angle) + self.motor_gain * float(action[0])
        if omega == 0.0:
            if abs(applied) <= self.friction:
                return np.array([angle, 0.0])
            direction = math.copysign(1.0, applied)
        else:
            direction = math.copysign(1.0, omega)
        torque = applied - self.friction * direction - self.damping * omega
        new_omega = omega + self.spec.dt * torque
        if omega != 0.0 and new_omega * omega <= 0.0:
            new_omega = 0.0  # friction stops the lid, it cannot reverse within a step
        elif omega == 0.0 and new_omega * direction <= 0.0:
            new_omega = 0.0
        new_angle = angle + self.spec.dt * new_omega
        if new_angle <= 0.0 or new_angle >= self.open_angle:
            new_angle = min(max(new_angle, 0.0), self.open_angle)
            new_omega = 0.0
        return np.array([new_angle, new_omega])


class GripDrawer(GoalEnv):
    """Prismatic drawer moved by pull actions only while the grip holds.

    Action = (pull velocity, grip command). A grip command above the release
    threshold lets go of the handle for the rest of the episode (the release
    takes effect before that step's pull).
    """

    task_id = "grip_drawer"

    def __init__(self, dt: float = 0.05, horizon: int = 200, goal_tolerance: float = DEFAULT_TOLERANCE,
                 max_extension: float = 0.5, min_goal: float = 0.1, release_threshold: float = 0.5):
        self.max_extension = max_extension
        self.min_goal = min_goal
        self.release_threshold = release_threshold
        spec = EnvSpec(2, 2, (-1.0, -1.0), (1.0, 1.0), 1, horizon, dt)
        super().__init__(spec, GoalMapping(lambda s: s[:1], 1, goal_tolerance))

    def _sample_goal(self, rng):
        return rng.uniform(self.min_goal, self.max_extension, size=1)

    def _initial_state(self, rng):
        return np.array([0.0, 1.0])

    def _dynamics(self, state, action):
        extension, grip = float(state[0]), float(state[1])
        if action[1] > self.release_threshold:
            grip = 0.0
        if grip > 0.5:
            extension = min(max(extension + self.spec.dt * float(action[0]), 0.0), self.max_extension)
        return np.array([extension, grip])


TASKS: dict[str, Callable[..., GoalEnv]] = {
    "point_reach_2d": lambda **kw: PointReach(dim=2, **kw),
    "point_reach_3d": lambda **kw: PointReach(dim=3, **kw),
    "planar_arm_reach": PlanarArmReach,
    "lid_attractor": LidAttractor,
    "grip_drawer": GripDrawer,
}


def make_env(task_id: str, **kwargs) -> GoalEnv:
    if task_id not in TASKS:
        raise ConfigError(f"unknown task {task_id!r}; valid ids: {', '.join(sorted(TASKS))}")
    env = TASKS[task_id](**kwargs)
    env.task_id = task_id
    return env


def proportional_controller(env: GoalEnv, gain: float = 10.0):
    """Scripted a = clamp(gain * (g - x)) policy for PointReach."""

    def policy(state, goal):
        return env.clamp(gain * (np.asarray(goal) - env.achieved_goal(state)))

    return policy


def write_trajectory_csv(path, rows) -> None:
    """Rows of (step, state, action, reward, done); vectors are expanded into columns."""
    rows = list(rows)
    if not rows:
        raise ValueError("no trajectory rows to write")
    _, s0, a0, _, _ = rows[0]
    header = (["step"] + [f"s{i}" for i in range(len(s0))] + [f"a{i}" for i in range(len(a0))]
              + ["reward", "done"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for step, s, a, r, d in rows:
            w.writerow([step, *map(repr, map(float, s)), *map(repr, map(float, a)), repr(float(r)), int(d)])
