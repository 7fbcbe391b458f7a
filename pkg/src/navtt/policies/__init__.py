"""Trajectory sources: scripted human-like play and PPO agents."""

from .nets import ActorCritic, PolicyNetSpec, build_net, feature_scales
from .ppo import PPOConfig, PPOError, TrainResult, VecEnv, gae_advantages, ppo_train
from .rollout import evaluate_policy, rollout, sample_action
from .scripted import (
    DEFAULT_TRAITS,
    SYNTHETIC_PLAYERS,
    ZERO_TRAITS,
    HumanTraits,
    ScriptedController,
    line_of_sight,
    plan_waypoints,
    scripted_human_policy,
)
from .trajectory import (
    OUTCOMES,
    SOURCES,
    Trajectory,
    TrajectoryError,
    TrajectoryStep,
    collect_trajectory,
    load_trajectories,
    read_trajectories,
    replay_outcome,
    save_trajectories,
    trajectory_from_text,
    trajectory_to_text,
    write_trajectories,
)

__all__ = [
    "OUTCOMES",
    "SOURCES",
    "ActorCritic",
    "DEFAULT_TRAITS",
    "HumanTraits",
    "PPOConfig",
    "PPOError",
    "PolicyNetSpec",
    "SYNTHETIC_PLAYERS",
    "ScriptedController",
    "TrainResult",
    "Trajectory",
    "TrajectoryError",
    "TrajectoryStep",
    "VecEnv",
    "ZERO_TRAITS",
    "build_net",
    "collect_trajectory",
    "evaluate_policy",
    "feature_scales",
    "gae_advantages",
    "line_of_sight",
    "load_trajectories",
    "plan_waypoints",
    "ppo_train",
    "read_trajectories",
    "replay_outcome",
    "rollout",
    "sample_action",
    "save_trajectories",
    "scripted_human_policy",
    "trajectory_from_text",
    "trajectory_to_text",
    "write_trajectories",
]
