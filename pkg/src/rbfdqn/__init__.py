"""RBF-DQN for goal-conditioned sparse-reward continuous control, with HER and PER."""

from .agent import Agent, AgentConfig, act, evaluate, run_episode, td_target, train_step
from .envs import make_env
from .her import GoalMapping, HERStrategy, is_success, make_goal_mapping, relabel
from .rbf_q import RBFQNet, centroids, greedy_action, make_rbf_q, q_gradient, q_value
from .replay import PERConfig, ReplayBuffer, SumTree, Transition

__version__ = "0.1.0"
