"""Seeded training runs, multi-seed ablations and checkpoint evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rbf_q
from .agent import VARIANTS, Agent, AgentConfig, Streams, evaluate, run_episode
from .config import RunConfig, stream
from .envs import GoalEnv, make_env
from .errors import NumericalError, ShapeError
from .her import HERStrategy
from .replay import PERConfig

log = logging.getLogger(__name__)

RUN_FIELDS = ["episode", "steps", "success", "return", "rolling_success", "epsilon", "mean_loss", "wall_ms"]
SUMMARY_FIELDS = ["variant", "episode", "n", "mean_rolling_success", "sd", "ci_low", "ci_high", "ci_method"]
EVAL_FIELDS = ["checkpoint", "task", "seed", "episodes", "success_rate"]
ROLLING_WINDOW = 5
SUCCESS_THRESHOLD = 0.9


class RunFailure(RuntimeError):
    def __init__(self, episode: int, cause: Exception):
        super().__init__(f"numerical failure at episode {episode}: {cause}")
        self.episode = episode


@dataclass
class RunResult:
    output_dir: Path
    successes: list[int] = field(default_factory=list)
    rolling: list[float] = field(default_factory=list)
    final_eval: float = float("nan")

    def episodes_to_threshold(self, threshold: float = SUCCESS_THRESHOLD):
        return episodes_to_threshold(self.rolling, threshold)


def episodes_to_threshold(curve, threshold: float = SUCCESS_THRESHOLD):
    """First (1-based) episode whose rolling success reaches `threshold`, else None."""
    for i, v in enumerate(curve):
        if v >= threshold - 1e-12:
            return i + 1
    return None


def rolling_mean(values, window: int = ROLLING_WINDOW) -> list[float]:
    out, buf = [], deque(maxlen=window)
    for v in values:
        buf.append(v)
        out.append(sum(buf) / len(buf))
    return out


def fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def make_env_for(cfg: RunConfig, task: str | None = None) -> GoalEnv:
    return make_env(task or cfg.task, dt=cfg.env_dt, horizon=cfg.horizon, goal_tolerance=cfg.goal_tolerance)


def agent_config(cfg: RunConfig) -> AgentConfig:
    cfg = cfg.resolved()
    return AgentConfig(
        gamma=cfg.gamma, lr=cfg.lr, epsilon_start=cfg.epsilon_start, epsilon_end=cfg.epsilon_end,
        epsilon_decay_episodes=cfg.epsilon_decay_episodes, batch_size=cfg.batch_size,
        target_update=cfg.target_update, target_sync_steps=cfg.target_sync_steps,
        polyak_tau=cfg.polyak_tau, updates_per_episode=cfg.updates_per_episode, variant=cfg.variant,
        clip_targets=cfg.clip_targets,
    )


def build_agent(cfg: RunConfig, env: GoalEnv) -> Agent:
    cfg = cfg.resolved()
    per = PERConfig(alpha=cfg.per_alpha, epsilon_priority=cfg.per_epsilon, is_beta_start=cfg.per_beta_start,
                    is_beta_end=cfg.per_beta_end, anneal_steps=cfg.per_anneal_steps,
                    max_priority_init=cfg.per_max_priority_init, use_is_weights=cfg.per_is_weights)
    her = HERStrategy(cfg.her_strategy, cfg.her_k, cfg.her_replacement)
    return Agent.create(env, agent_config(cfg), stream(cfg.seed, "init"), num_centroids=cfg.num_centroids,
                        beta=cfg.beta, hidden=cfg.hidden_dims(), activation=cfg.activation, norm=cfg.rbf_norm,
                        her=her, per=per, buffer_capacity=cfg.buffer_capacity)


def make_streams(seed: int) -> Streams:
    return Streams(env=stream(seed, "env"), explore=stream(seed, "explore"), replay=stream(seed, "replay"),
                   per=stream(seed, "per"), her=stream(seed, "her"))


def checkpoint_extra(cfg: RunConfig, episode: int) -> dict:
    return {"task": cfg.task, "variant": cfg.variant, "seed": cfg.seed, "episode": episode}


def run_training(cfg: RunConfig) -> RunResult:
    """Train one (task, variant, seed) and write run.csv, config.resolved.txt, checkpoints, eval.csv."""
    cfg = cfg.resolved()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(cfg.to_text())
    env = make_env_for(cfg)
    agent = build_agent(cfg, env)
    streams = make_streams(cfg.seed)
    result = RunResult(out)
    window: deque[int] = deque(maxlen=ROLLING_WINDOW)
    with open(out / "run.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_FIELDS)
        for episode in range(1, cfg.episodes + 1):
            t0 = time.perf_counter()
            try:
                res = run_episode(env, agent, streams)
            except NumericalError as exc:
                raise RunFailure(episode, exc) from exc
            wall_ms = int(round((time.perf_counter() - t0) * 1000)) if cfg.log_wall_ms else 0
            window.append(int(res.success))
            rolling = sum(window) / len(window)
            result.successes.append(int(res.success))
            result.rolling.append(rolling)
            writer.writerow([episode, res.steps, int(res.success), fmt(res.ret), fmt(rolling),
                             fmt(res.epsilon), fmt(res.mean_loss), wall_ms])
            if cfg.checkpoint_every > 0 and episode % cfg.checkpoint_every == 0:
                rbf_q.save(agent.net, out / f"checkpoint_ep{episode}.rbfq", checkpoint_extra(cfg, episode))
            if episode % 100 == 0:
                log.info("%s/%s seed %d: episode %d rolling success %.2f", cfg.task, cfg.variant, cfg.seed,
                         episode, rolling)
    final = out / "checkpoint_final.rbfq"
    rbf_q.save(agent.net, final, checkpoint_extra(cfg, cfg.episodes))
    if cfg.eval_episodes > 0:
        result.final_eval = evaluate(make_env_for(cfg), agent.net, cfg.eval_episodes, stream(cfg.seed, "eval"))
        append_eval_row(out / "eval.csv", [str(final), cfg.task, cfg.seed, cfg.eval_episodes,
                                           fmt(result.final_eval)])
    return result


def append_eval_row(path: Path, row) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(EVAL_FIELDS)
        writer.writerow(row)


def evaluate_checkpoint(path, cfg: RunConfig, episodes: int) -> float:
    net, _ = rbf_q.load(path)
    env = make_env_for(cfg)
    spec = env.spec
    want_in, want_act = spec.state_dim + spec.goal_dim, spec.action_dim
    if net.input_dim != want_in or net.action_dim != want_act:
        raise ShapeError(
            f"checkpoint expects input {net.input_dim} / action {net.action_dim}; "
            f"task {cfg.task} has input {want_in} / action {want_act}"
        )
    return evaluate(env, net, episodes, stream(cfg.seed, "eval"))


def scripted_point_reach_net(dim: int = 2, gain: float = 40.0) -> rbf_q.RBFQNet:
    """Single-centroid net whose greedy action is ``tanh(gain * (g - x) / 2)``.

    The location head is linear in (state, goal) and the logistic squash into
    [-1, 1] is a tanh, so saving this net gives a checkpoint that encodes a
    saturating proportional controller for PointReach.
    """
    from .nn_core import ParamStore, linear_spec

    loc_spec, val_spec = linear_spec(2 * dim, dim), linear_spec(2 * dim, 1)
    loc = ParamStore.zeros(loc_spec.layout())
    loc["W0"][...] = gain * np.hstack([-np.eye(dim), np.eye(dim)])
    return rbf_q.RBFQNet(loc_spec, loc, val_spec, ParamStore.zeros(val_spec.layout()), 1, 1.0,
                         -np.ones(dim), np.ones(dim))


# --- ablation --------------------------------------------------------------

def summarize(curves: dict[str, list[list[float]]]) -> list[list]:
    """Per (variant, episode): mean rolling success with a normal-approximation 95% CI."""
    rows = []
    for variant, runs in curves.items():
        if not runs:
            continue
        length = min(len(r) for r in runs)
        table = np.array([r[:length] for r in runs])
        n = table.shape[0]
        mean = table.mean(axis=0)
        sd = table.std(axis=0, ddof=1) if n > 1 else np.zeros(length)
        half = 1.96 * sd / math.sqrt(n)
        for e in range(length):
            rows.append([variant, e + 1, n, fmt(mean[e]), fmt(sd[e]), fmt(mean[e] - half[e]),
                         fmt(mean[e] + half[e]), "normal"])
    return rows


def ranking_text(task: str, curves: dict[str, list[list[float]]], failures: dict[str, list[int]],
                 threshold: float = SUCCESS_THRESHOLD) -> str:
    entries = []
    for variant, runs in curves.items():
        if runs:
            length = min(len(r) for r in runs)
            mean_curve = np.mean([r[:length] for r in runs], axis=0)
            first = episodes_to_threshold(mean_curve, threshold)
            per_seed = [episodes_to_threshold(r, threshold) for r in runs]
            final = float(mean_curve[-1])
        else:
            first, per_seed, final = None, [], float("nan")
        entries.append((variant, first, per_seed, final))
    entries.sort(key=lambda e: (e[1] is None, e[1] or 0, -e[3] if not math.isnan(e[3]) else 0.0))
    lines = [f"task: {task}", f"metric: first episode with mean rolling success >= {threshold}", ""]
    for rank, (variant, first, per_seed, final) in enumerate(entries, 1):
        seeds = ", ".join("never" if s is None else str(s) for s in per_seed)
        lines.append(
            f"{rank}. {variant:8s} {'never' if first is None else first:>6}  "
            f"per-seed [{seeds}]  final mean rolling {final:.3f}"
            + (f"  failed seeds {failures[variant]}" if failures.get(variant) else "")
        )
    return "\n".join(lines) + "\n"


@dataclass
class AblationResult:
    curves: dict[str, list[list[float]]]
    failures: dict[str, list[int]]
    summary_path: Path
    ranking_path: Path

    @property
    def any_variant_failed_entirely(self) -> bool:
        return any(not runs for runs in self.curves.values())


def run_ablation(base: RunConfig, seeds, output_dir, variants=VARIANTS, workers: int = 1) -> AblationResult:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for variant in variants:
        for seed in seeds:
            cfg = RunConfig(**{**base.__dict__, "variant": variant, "seed": int(seed),
                               "output_dir": str(out / variant / f"seed{seed}")})
            jobs.append((variant, int(seed), cfg))

    def run(job):
        variant, seed, cfg = job
        try:
            return variant, seed, run_training(cfg), None
        except (RunFailure, NumericalError) as exc:
            log.error("%s seed %d failed: %s", variant, seed, exc)
            return variant, seed, None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    curves: dict[str, list[list[float]]] = {v: [] for v in variants}
    failures: dict[str, list[int]] = {v: [] for v in variants}
    for variant, seed, res, exc in results:
        if res is None:
            failures[variant].append(seed)
        else:
            curves[variant].append(res.rolling)
    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_FIELDS)
        writer.writerows(summarize(curves))
    ranking_path = out / "ranking.txt"
    ranking_path.write_text(ranking_text(base.task, curves, failures))
    return AblationResult(curves, failures, summary_path, ranking_path)
