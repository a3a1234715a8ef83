"""Hindsight goal relabeling with the ``final`` and ``future`` goal-selection strategies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BufferStateError, ConfigError, ShapeError
from .replay import Transition

DEFAULT_TOLERANCE = 1e-2

STRATEGIES = ("final", "future", "final_future")


@dataclass(frozen=True)
class GoalMapping:
    phi: Callable[[np.ndarray], np.ndarray]
    goal_dim: int
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        if self.goal_dim < 1:
            raise ValueError("goal_dim must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")

    def __call__(self, state) -> np.ndarray:
        return np.asarray(self.phi(np.asarray(state, dtype=np.float64)), dtype=np.float64)


@dataclass(frozen=True)
class HERStrategy:
    kind: str = "final_future"
    k: int = 4
    replacement: bool = True

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown HER strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.kind != "final" and self.k < 1:
            raise ConfigError("k must be >= 1 for future-based strategies")

    @property
    def copies_per_step(self) -> int:
        return {"final": 1, "future": self.k, "final_future": self.k + 1}[self.kind]


def goal_distance(achieved, goal) -> float:
    return float(np.linalg.norm(np.asarray(achieved, dtype=np.float64) - np.asarray(goal, dtype=np.float64)))


def is_success(state, goal, gm: GoalMapping) -> bool:
    """True iff ``||phi(state) - goal|| <= tolerance`` (the boundary counts as success)."""
    goal = np.asarray(goal, dtype=np.float64)
    achieved = gm(state)
    if goal.shape != (gm.goal_dim,) or achieved.shape != (gm.goal_dim,):
        raise ShapeError(f"goal dim {gm.goal_dim} expected, got goal {goal.shape} / achieved {achieved.shape}")
    return goal_distance(achieved, goal) <= gm.tolerance


def _relabeled(t: Transition, goal: np.ndarray, gm: GoalMapping) -> Transition:
    hit = is_success(t.next_state, goal, gm)
    return Transition(
        state=np.array(t.state, dtype=np.float64),
        action=np.array(t.action, dtype=np.float64),
        reward=1.0 if hit else 0.0,
        next_state=np.array(t.next_state, dtype=np.float64),
        goal=goal.copy(),
        done=hit,
    )


def check_chained(traj: Sequence[Transition]) -> None:
    for t in range(len(traj) - 1):
        if not np.array_equal(traj[t].next_state, traj[t + 1].state):
            raise ValueError(f"trajectory breaks between steps {t} and {t + 1}")
        if traj[t].done:
            raise ValueError(f"done flag set on non-final step {t}")


def future_indices(T: int, strat: HERStrategy, rng: np.random.Generator) -> list[np.ndarray]:
    """For each step t, the k trajectory indices drawn from {t, ..., T-1}."""
    out = []
    for t in range(T):
        n = T - t
        if strat.replacement or strat.k > n:
            # without replacement is impossible when fewer than k later steps remain
            idx = t + rng.integers(0, n, size=strat.k)
        else:
            idx = t + rng.choice(n, size=strat.k, replace=False)
        out.append(idx)
    return out


def relabel(traj: Sequence[Transition], strat: HERStrategy, gm: GoalMapping,
            rng: np.random.Generator) -> list[Transition]:
    """New copies of the trajectory's transitions, pursuing goals that were actually reached.

    The input transitions are not modified. Output order: all ``final`` copies
    (in time order), then the ``future`` copies grouped by time step.
    """
    if len(traj) == 0:
        raise BufferStateError("cannot relabel an empty trajectory")
    T = len(traj)
    out: list[Transition] = []
    if strat.kind in ("final", "final_future"):
        final_goal = gm(traj[-1].next_state)
        out.extend(_relabeled(t, final_goal, gm) for t in traj)
    if strat.kind in ("future", "final_future"):
        achieved = [gm(t.next_state) for t in traj]
        for t, idx in enumerate(future_indices(T, strat, rng)):
            out.extend(_relabeled(traj[t], achieved[j], gm) for j in idx)
    return out


def make_goal_mapping(task_id: str, tolerance: float = DEFAULT_TOLERANCE) -> GoalMapping:
    """The canonical state-to-goal projection for a registered environment id."""
    from .envs import make_env

    return make_env(task_id, goal_tolerance=tolerance).goal_mapping
