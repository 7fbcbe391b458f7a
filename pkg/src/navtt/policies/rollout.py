"""Rollout harness: trajectories from trained (or untrained) checkpoints.

Actions are sampled from the policy distribution, never argmax, so two
rollouts of one checkpoint under different seeds diverge. Evaluation
spawns (island) are the default, matching how agents are judged.
"""

from typing import List, Optional

import numpy as np

from ..navsim.env import NavEnv
from ..nnkit import log_softmax
from .nets import ActorCritic, PolicyNetSpec
from .trajectory import Trajectory, collect_trajectory

_SOURCE_BY_KIND = {"symbolic": "symbolic_agent", "hybrid": "hybrid_agent"}


def sample_action(model: ActorCritic, obs, rng) -> int:
    batch = {"features": obs.symbolic_features()[None, :]}
    if model.needs_depth:
        batch["depth"] = obs.depth_buffer[None, :, :]
    logits = model.action_logits(batch)
    probs = np.exp(log_softmax(logits.astype(np.float64), axis=1))[0]
    probs /= probs.sum()
    return int(rng.choice(len(probs), p=probs))


def rollout(checkpoint, spec, n_episodes: int, seed: int = 0,
            goal_sweep: bool = False, spawn_mode: str = "evaluation",
            generator_id: Optional[str] = None,
            max_steps: Optional[int] = None) -> List[Trajectory]:
    """Sample n_episodes trajectories from a checkpoint.

    checkpoint may be an ActorCritic, a path to a saved .npz, or an
    in-memory snapshot dict from TrainResult.checkpoints. goal_sweep
    forces goal_index = episode index (n_episodes must then be a multiple
    of the goal count); otherwise goals are drawn by the environment.
    """
    model, meta = _resolve_checkpoint(checkpoint)
    if generator_id is None:
        steps = meta.get("train_steps", "untrained")
        generator_id = f"{model.net_spec.kind}-ckpt-{steps}"
    source = _SOURCE_BY_KIND[model.net_spec.kind]
    n_goals = len(spec.goal_locations)
    if goal_sweep and n_episodes % n_goals:
        raise ValueError(
            f"goal sweep needs a multiple of {n_goals} episodes, got {n_episodes}")

    seq = np.random.SeedSequence([seed, 0x6e617674])
    env_seed, act_seed = seq.spawn(2)
    kwargs = {} if max_steps is None else {"max_steps": max_steps}
    env = NavEnv(spec, spawn_mode=spawn_mode, seed=env_seed, **kwargs)
    rng = np.random.default_rng(act_seed)

    out = []
    for episode in range(n_episodes):
        goal_index = episode % n_goals if goal_sweep else None
        env.reset(goal_index=goal_index)
        traj = collect_trajectory(
            env, lambda obs: sample_action(model, obs, rng),
            f"{generator_id}-e{episode}-s{seed}", source, generator_id)
        traj.meta.update({
            "seed": seed, "episode": episode,
            "checkpoint": str(meta.get("train_steps", "untrained")),
        })
        out.append(traj)
    return out


def evaluate_policy(checkpoint, spec, n_episodes: int = 50, seed: int = 0,
                    spawn_mode: str = "evaluation") -> dict:
    """Goal success rate and episode-length stats over sampled rollouts."""
    trajs = rollout(checkpoint, spec, n_episodes, seed=seed,
                    spawn_mode=spawn_mode)
    lengths = [len(t.steps) for t in trajs]
    wins = [t for t in trajs if t.outcome == "goal"]
    return {
        "n_episodes": n_episodes,
        "success_rate": len(wins) / n_episodes,
        "mean_length": float(np.mean(lengths)),
        "mean_time_to_goal": (float(np.mean([len(t.steps) for t in wins]))
                              if wins else float("nan")),
        "outcomes": {r: sum(1 for t in trajs if t.outcome == r)
                     for r in ("goal", "death", "timeout")},
    }


def _resolve_checkpoint(checkpoint):
    if isinstance(checkpoint, ActorCritic):
        return checkpoint, {}
    if isinstance(checkpoint, dict):        # TrainResult in-memory snapshot
        spec_meta = checkpoint.get("net_spec")
        if spec_meta is None:
            raise ValueError("snapshot dict lacks net_spec metadata")
        model = ActorCritic(PolicyNetSpec.from_meta(spec_meta))
        model.policy.set_params(checkpoint["params"])
        return model, {"train_steps": checkpoint.get("steps", "unknown")}
    model, meta = ActorCritic.load(checkpoint)
    return model, meta
