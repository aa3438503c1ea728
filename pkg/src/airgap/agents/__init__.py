"""Reward, trainers (DQN and PPO), curriculum control, and evaluation."""

from .curriculum import CurriculumState, curriculum_advance
from .dqn import DqnConfig, dqn_targets, dqn_update, epsilon_at
from .evaluate import EVAL_EPISODE_BASE, evaluate, run_episode
from .ppo import PpoConfig, RolloutBuffer, compute_gae, ppo_update
from .replay import ReplayBuffer
from .reward import RewardParams, compute_reward
from .rollout import NavEpisode
from .train import ResumeMismatchError, TrainResult, train

__all__ = [
    "CurriculumState", "curriculum_advance",
    "DqnConfig", "dqn_targets", "dqn_update", "epsilon_at",
    "EVAL_EPISODE_BASE", "evaluate", "run_episode",
    "PpoConfig", "RolloutBuffer", "compute_gae", "ppo_update",
    "ReplayBuffer", "RewardParams", "compute_reward",
    "NavEpisode", "ResumeMismatchError", "TrainResult", "train",
]
