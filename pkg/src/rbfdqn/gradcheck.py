"""Finite-difference checks of every hand-written gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn_core, rbf_q
from .agent import loss_and_gradients, td_targets
from .nn_core import numerical_gradient, relative_error
from .replay import Batch

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:40s} max rel err {self.error:.2e} (< {self.tolerance:.0e})"


def small_rbf(rng: np.random.Generator, input_dim: int = 3, action_dim: int = 2, num_centroids: int = 4,
              beta: float | None = None, hidden=(6, 5), activation: str = "tanh", norm: str = "l2"):
    beta = float(rng.uniform(0.5, 3.0)) if beta is None else beta
    low = -np.ones(action_dim)
    return rbf_q.make_rbf_q(input_dim, low, -low, rng, num_centroids=num_centroids, beta=beta,
                            hidden=hidden, activation=activation, norm=norm)


def random_batch(net: rbf_q.RBFQNet, rng: np.random.Generator, size: int = 1, state_dim: int = 2) -> Batch:
    goal_dim = net.input_dim - state_dim
    return Batch(
        states=rng.uniform(-1, 1, (size, state_dim)),
        actions=rng.uniform(net.action_low, net.action_high, (size, net.action_dim)),
        rewards=rng.integers(0, 2, size).astype(np.float64),
        next_states=rng.uniform(-1, 1, (size, state_dim)),
        goals=rng.uniform(-1, 1, (size, goal_dim)),
        dones=np.zeros(size, dtype=bool),
        indices=np.arange(size),
        weights=rng.uniform(0.2, 1.0, size),
    )


def loss_gradient_error(net: rbf_q.RBFQNet, target: rbf_q.RBFQNet, batch: Batch, gamma: float = 0.99,
                        step: float = STEP) -> float:
    """Worst relative error of the semi-gradient of the TD loss over both heads."""
    targets = td_targets(target, batch, gamma)
    _, _, g_loc, g_val = loss_and_gradients(net, batch, targets)
    analytic = np.concatenate([g_loc.values, g_val.values])

    x = np.concatenate([batch.states, batch.goals], axis=1)

    def loss():
        # forward only; the analytic side comes from loss_and_gradients
        delta = targets - rbf_q.q_value(net, x, batch.actions)
        return 0.5 * float(np.mean(batch.weights * delta * delta))

    numeric = np.concatenate([numerical_gradient(loss, net.location_params.values, step),
                              numerical_gradient(loss, net.value_params.values, step)])
    return float(np.max(relative_error(analytic, numeric)))


def q_gradient_error(net: rbf_q.RBFQNet, s, a, upstream: float = 1.0, step: float = STEP) -> float:
    g_loc, g_val = rbf_q.q_gradient(net, s, a, upstream)
    analytic = np.concatenate([g_loc.values, g_val.values])

    def f():
        return upstream * rbf_q.q_value(net, s, a)

    numeric = np.concatenate([numerical_gradient(f, net.location_params.values, step),
                              numerical_gradient(f, net.value_params.values, step)])
    return float(np.max(relative_error(analytic, numeric)))


def run_all(seed: int = 0, cases: int = 20) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    spec = nn_core.linear_spec(3, 2)
    params = nn_core.init_params(spec, rng)
    results.append(CheckResult("nn_core linear layer", nn_core.finite_diff_check(
        spec, params, rng.normal(size=3), rng.normal(size=2), STEP), 1e-8))

    worst = 0.0
    for _ in range(cases):
        spec = nn_core.make_spec(2, (4,), 3, "tanh")
        params = nn_core.init_params(spec, rng)
        worst = max(worst, nn_core.finite_diff_check(spec, params, rng.normal(size=2), rng.normal(size=3), STEP))
    results.append(CheckResult("nn_core 2-4-3 tanh net", worst, TOLERANCE))

    worst = 0.0
    for _ in range(cases):
        spec = nn_core.make_spec(2, (4,), 3, "relu")
        params = nn_core.init_params(spec, rng)
        x = rng.normal(size=2)
        pre = params["W0"] @ x + params["b0"]
        if np.min(np.abs(pre)) < 10 * STEP:
            continue  # too close to a ReLU kink for central differences
        worst = max(worst, nn_core.finite_diff_check(spec, params, x, rng.normal(size=3), STEP))
    results.append(CheckResult("nn_core 2-4-3 relu net", worst, TOLERANCE))

    for norm in ("l2", "l1"):
        worst = 0.0
        for _ in range(cases):
            net = small_rbf(rng, norm=norm)
            s = rng.uniform(-1, 1, net.input_dim)
            a = rng.uniform(-1, 1, net.action_dim)
            if norm == "l1":
                loc, _ = rbf_q.centroids(net, s)
                if np.min(np.abs(loc - a)) < 10 * STEP:
                    continue
            worst = max(worst, q_gradient_error(net, s, a, float(rng.normal())))
        results.append(CheckResult(f"rbf_q q_gradient ({norm})", worst, TOLERANCE))

    worst = 0.0
    for _ in range(cases):
        net = small_rbf(rng, input_dim=4)
        target = small_rbf(rng, input_dim=4, beta=net.beta)
        batch = random_batch(net, rng, size=int(rng.integers(1, 4)))
        worst = max(worst, loss_gradient_error(net, target, batch))
    results.append(CheckResult("agent TD-loss gradient (both heads)", worst, TOLERANCE))
    return results
