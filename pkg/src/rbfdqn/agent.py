"""RBF-DQN learner: epsilon-greedy acting, target-network TD updates, HER/PER plumbing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn_core, rbf_q
from .envs import GoalEnv
from .errors import ConfigError, NumericalError
from .her import HERStrategy, relabel
from .replay import Batch, PERConfig, ReplayBuffer, Transition
from .rbf_q import RBFQNet

log = logging.getLogger(__name__)

VARIANTS = ("vanilla", "her", "per", "herper")


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int = 1200
    batch_size: int = 128
    target_update: str = "hard"
    target_sync_steps: int = 500
    polyak_tau: float = 0.005
    updates_per_episode: int = 50
    variant: str = "vanilla"
    clip_targets: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ConfigError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.lr <= 0 or self.batch_size < 1 or self.updates_per_episode < 0:
            raise ConfigError("lr and batch_size must be positive, updates_per_episode non-negative")
        if self.target_update not in ("hard", "polyak"):
            raise ConfigError(f"target_update must be 'hard' or 'polyak', got {self.target_update!r}")
        if self.target_sync_steps < 1 or not 0.0 < self.polyak_tau <= 1.0:
            raise ConfigError("target_sync_steps must be >= 1 and polyak_tau in (0, 1]")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def uses_her(self) -> bool:
        return self.variant in ("her", "herper")

    @property
    def uses_per(self) -> bool:
        return self.variant in ("per", "herper")


def epsilon_at(cfg: AgentConfig, episode: int) -> float:
    """Linear decay from epsilon_start to epsilon_end over epsilon_decay_episodes."""
    if cfg.epsilon_decay_episodes <= 0 or episode >= cfg.epsilon_decay_episodes:
        return cfg.epsilon_end
    frac = episode / cfg.epsilon_decay_episodes
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


def act(net: RBFQNet, s, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    # both draws happen every call so the stream position never depends on the branch
    explore = rng.random() < epsilon
    random_action = rng.uniform(net.action_low, net.action_high)
    if explore:
        return random_action
    action, _ = rbf_q.greedy_action(net, s)
    return action


def td_target(target: RBFQNet, t: Transition, gamma: float) -> float:
    if t.done:
        return float(t.reward)
    x = np.concatenate([t.next_state, t.goal])
    _, q = rbf_q.greedy_action(target, x)
    return float(t.reward + gamma * q)


def td_targets(target: RBFQNet, batch: Batch, gamma: float, clip: bool = False) -> np.ndarray:
    x_next = np.concatenate([batch.next_states, batch.goals], axis=1)
    bootstrap = rbf_q.centroid_max(target, x_next)
    y = batch.rewards + gamma * np.where(batch.dones, 0.0, bootstrap)
    # with 0/1 rewards that end the episode, every return lies in [0, 1]
    return np.clip(y, 0.0, 1.0) if clip else y


@dataclass
class TargetNet:
    net: RBFQNet
    steps_since_sync: int = 0


@dataclass
class Optimizer:
    lr: float
    location: nn_core.AdamState
    value: nn_core.AdamState

    @classmethod
    def for_net(cls, net: RBFQNet, lr: float) -> "Optimizer":
        return cls(lr, nn_core.AdamState.for_params(net.location_params),
                   nn_core.AdamState.for_params(net.value_params))


def loss_and_gradients(net: RBFQNet, batch: Batch, targets: np.ndarray):
    """Importance-weighted half mean squared TD error and its semi-gradient."""
    x = np.concatenate([batch.states, batch.goals], axis=1)
    weights = batch.weights
    n = len(batch)
    holder = {}

    def upstream(q):
        delta = targets - q
        holder["delta"] = delta
        return -weights * delta / n

    _, g_loc, g_val = rbf_q.q_and_gradient(net, x, batch.actions, upstream)
    delta = holder["delta"]
    loss = 0.5 * float(np.mean(weights * delta * delta))
    return loss, delta, g_loc, g_val


def train_step(net: RBFQNet, target: TargetNet, batch: Batch, opt: Optimizer, cfg: AgentConfig):
    """One semi-gradient step on both heads; returns (loss, td_errors)."""
    targets = td_targets(target.net, batch, cfg.gamma, cfg.clip_targets)
    loss, delta, g_loc, g_val = loss_and_gradients(net, batch, targets)
    if not np.isfinite(loss):
        log.error("non-finite loss; max |target| %.3g, max |delta| %.3g",
                  float(np.max(np.abs(targets))), float(np.max(np.abs(delta))))
        raise NumericalError("non-finite loss")
    nn_core.adam_step(net.location_params, g_loc, opt.location, opt.lr)
    nn_core.adam_step(net.value_params, g_val, opt.value, opt.lr)
    update_target(net, target, cfg)
    return loss, delta


def update_target(net: RBFQNet, target: TargetNet, cfg: AgentConfig) -> None:
    if cfg.target_update == "polyak":
        tau = cfg.polyak_tau
        for src, dst in ((net.location_params, target.net.location_params),
                         (net.value_params, target.net.value_params)):
            dst.values *= 1.0 - tau
            dst.values += tau * src.values
        return
    target.steps_since_sync += 1
    if target.steps_since_sync >= cfg.target_sync_steps:
        target.net.load_from(net)
        target.steps_since_sync = 0


@dataclass
class EpisodeResult:
    success: bool
    ret: float
    steps: int
    mean_loss: float = float("nan")
    epsilon: float = 0.0
    stored: int = 0


@dataclass
class Streams:
    """Independent generators for each consumer of randomness."""

    env: np.random.Generator
    explore: np.random.Generator
    replay: np.random.Generator
    per: np.random.Generator
    her: np.random.Generator


@dataclass
class Agent:
    net: RBFQNet
    target: TargetNet
    buffer: ReplayBuffer
    cfg: AgentConfig
    opt: Optimizer
    her: HERStrategy = field(default_factory=HERStrategy)
    per: PERConfig = field(default_factory=PERConfig)
    episodes_done: int = 0
    updates_done: int = 0

    @classmethod
    def create(cls, env: GoalEnv, cfg: AgentConfig, rng: np.random.Generator, *,
               num_centroids: int = 32, beta: float = 5.0, hidden=(128, 128), activation: str = "relu",
               norm: str = "l2", her: HERStrategy | None = None, per: PERConfig | None = None,
               buffer_capacity: int = 1_000_000) -> "Agent":
        spec = env.spec
        net = rbf_q.make_rbf_q(spec.state_dim + spec.goal_dim, spec.low, spec.high, rng,
                               num_centroids=num_centroids, beta=beta, hidden=hidden,
                               activation=activation, norm=norm)
        per = per or PERConfig()
        buffer = ReplayBuffer(buffer_capacity, spec.state_dim, spec.action_dim, spec.goal_dim, per)
        return cls(net, TargetNet(net.copy()), buffer, cfg, Optimizer.for_net(net, cfg.lr),
                   her or HERStrategy(), per)

    def epsilon(self) -> float:
        return epsilon_at(self.cfg, self.episodes_done)

    def sample(self, streams: Streams) -> Batch:
        if self.cfg.uses_per:
            return self.buffer.sample_prioritized(self.cfg.batch_size, streams.per, self.updates_done, self.per)
        return self.buffer.sample_uniform(self.cfg.batch_size, streams.replay)

    def learn(self, streams: Streams) -> list[float]:
        losses = []
        if len(self.buffer) < self.cfg.batch_size:
            return losses
        for _ in range(self.cfg.updates_per_episode):
            batch = self.sample(streams)
            loss, delta = train_step(self.net, self.target, batch, self.opt, self.cfg)
            if self.cfg.uses_per:
                self.buffer.update_priorities(batch.indices, delta, self.per)
            self.updates_done += 1
            losses.append(loss)
        return losses


def run_episode(env: GoalEnv, agent: Agent, streams: Streams, policy=None) -> EpisodeResult:
    """Roll out one episode, store (and relabel) its transitions, then train.

    `policy(state, goal) -> action` replaces epsilon-greedy acting when given.
    """
    eps = agent.epsilon()
    state, goal = env.reset(streams.env)
    traj: list[Transition] = []
    ret = 0.0
    info = {"success": False}
    done = False
    while not done:
        if policy is None:
            action = act(agent.net, np.concatenate([state, goal]), eps, streams.explore)
        else:
            action = policy(state, goal)
        action = env.clamp(action)
        next_state, reward, done, info = env.step(action)
        ret += reward
        traj.append(Transition(state, action, reward, next_state, goal, bool(info["success"])))
        state = next_state
    before_pushed = agent.buffer.pushed
    agent.buffer.extend(traj)
    if agent.cfg.uses_her:
        agent.buffer.extend(relabel(traj, agent.her, env.goal_mapping, streams.her))
    stored = agent.buffer.pushed - before_pushed
    losses = agent.learn(streams)
    agent.episodes_done += 1
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return EpisodeResult(bool(info["success"]), ret, len(traj), mean_loss, eps, stored)


def greedy_policy(net: RBFQNet):
    def policy(state, goal):
        action, _ = rbf_q.greedy_action(net, np.concatenate([state, goal]))
        return action

    return policy


def evaluate(env: GoalEnv, net: RBFQNet | None, episodes: int, rng: np.random.Generator,
             policy=None) -> float:
    """Fraction of greedy (epsilon = 0) episodes that reach the goal. No learning."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    policy = policy or greedy_policy(net)
    wins = 0
    for _ in range(episodes):
        state, goal = env.reset(rng)
        done = False
        info = {"success": False}
        while not done:
            state, _, done, info = env.step(policy(state, goal))
        wins += bool(info["success"])
    return wins / episodes
