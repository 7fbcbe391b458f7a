"""PPO trainer (clipped surrogate + GAE) over vectorized NavEnv instances.

The vector wrapper batches the depth raycast across environments, which is
where nearly all the per-step cost lives; the nets themselves are small.
Episode end (goal, death, timeout) cuts the advantage bootstrap, mirroring
the environment's own termination semantics.
"""

import os
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..navsim import raycast
from ..navsim.env import DEPTH_SIZE, NavEnv
from ..nnkit import AdamState, adam_step, log_softmax
from .nets import ActorCritic, PolicyNetSpec


class PPOError(RuntimeError):
    """Training aborted (non-finite loss or invalid configuration)."""


@dataclass
class PPOConfig:
    clip_ratio: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    rollout_horizon: int = 256
    epochs_per_update: int = 4
    minibatch_size: int = 512
    lr_anneal: bool = False  # linear decay to zero over total_steps
    parallel_envs: int = 8
    total_steps: int = 2_000_000
    checkpoint_interval: int = 100_000
    seed: int = 0

    def validate(self):
        if not 0.0 < self.clip_ratio < 1.0:
            raise PPOError(f"clip_ratio {self.clip_ratio} outside (0, 1)")
        if not 0.0 < self.discount <= 1.0:
            raise PPOError(f"discount {self.discount} outside (0, 1]")
        if min(self.rollout_horizon, self.parallel_envs,
               self.epochs_per_update, self.minibatch_size) < 1:
            raise PPOError("horizon, envs, epochs, minibatch must be >= 1")


class VecEnv:
    """N independent NavEnv instances stepped in lockstep with auto-reset.

    Observations come back as a batch dict: "features" (N, 6) raw symbolic
    features and "depth" (N, 32, 32), produced by one vectorized raycast.
    """

    def __init__(self, env_factory: Callable[[], NavEnv], n_envs: int,
                 seed: int = 0):
        self.envs = [env_factory() for _ in range(n_envs)]
        for env, child_seed in zip(self.envs,
                                   np.random.SeedSequence(seed).spawn(n_envs)):
            env.rng = np.random.default_rng(child_seed)
        self.n_envs = n_envs
        self.spec = self.envs[0].spec

    def reset_all(self):
        for env in self.envs:
            env.reset()
        return self.observe()

    def observe(self):
        positions = np.stack([env.pose.position[:2] for env in self.envs])
        headings = np.array([env.pose.heading for env in self.envs])
        goals = np.stack([env.goal_xy for env in self.envs])
        depth = raycast.depth_buffers(self.spec, positions, headings, goals,
                                      size=DEPTH_SIZE)
        feats = np.empty((self.n_envs, 6), dtype=np.float64)
        for i, env in enumerate(self.envs):
            obs = env.observe(depth=depth[i])
            feats[i] = obs.symbolic_features()
        return {"features": feats, "depth": depth}

    def step(self, actions):
        """Apply one action per env; auto-reset finished episodes.

        Returns (obs_batch, rewards, dones, infos) where dones marks envs
        whose episode ended at this step (the returned obs is then the
        first of the new episode) and infos carries episode records.
        """
        rewards = np.zeros(self.n_envs)
        dones = np.zeros(self.n_envs, dtype=bool)
        infos = []
        for i, (env, action) in enumerate(zip(self.envs, actions)):
            _, outcome = env.step(int(action))
            rewards[i] = outcome.reward
            if outcome.terminated:
                dones[i] = True
                infos.append({
                    "env": i,
                    "length": outcome.step_index,
                    "outcome": outcome.reason,
                    "goal_distance": outcome.goal_distance,
                })
                env.reset()
        return self.observe(), rewards, dones, infos


def gae_advantages(rewards, values, dones, last_values, discount, lam):
    """Generalized advantage estimates over a (T, N) rollout.

    dones[t] true means the episode ended after step t, so nothing beyond
    t is bootstrapped. last_values are V(s_{T}) for the running episodes.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    horizon, n = rewards.shape
    adv = np.zeros((horizon, n))
    carry = np.zeros(n)
    next_values = np.asarray(last_values, dtype=np.float64)
    for t in range(horizon - 1, -1, -1):
        alive = ~dones[t]
        delta = rewards[t] + discount * next_values * alive - values[t]
        carry = delta + discount * lam * carry * alive
        adv[t] = carry
        next_values = values[t]
    return adv


def entropy_bonus_grad(probs, logp):
    """d(-entropy)/dlogits for each row (used to subtract the bonus)."""
    ent = -np.sum(probs * logp, axis=1, keepdims=True)
    return probs * (logp + ent)


def ppo_losses(logits, actions, logp_old, advantages, clip_ratio):
    """Clipped-surrogate loss pieces and the analytic dloss/dlogits.

    Returns (surrogate_loss, entropy, dlogits, clip_fraction). The gradient
    is zero for samples pushed outside the clip range in the favorable
    direction, which is the property the unit tests pin down.
    """
    n, k = logits.shape
    logp_all = log_softmax(logits.astype(np.float64), axis=1)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    surr = np.minimum(ratio * advantages, clipped * advantages)
    loss = -float(np.mean(surr))
    # gradient flows only where the unclipped branch is active
    active = ratio * advantages <= clipped * advantages
    coef = np.where(active, -advantages * ratio, 0.0) / n
    one_hot = np.zeros((n, k))
    one_hot[rows, actions] = 1.0
    dlogits = coef[:, None] * (one_hot - probs)
    entropy = float(np.mean(-np.sum(probs * logp_all, axis=1)))
    clip_fraction = float(np.mean(~active))
    return loss, entropy, dlogits, clip_fraction


@dataclass
class TrainResult:
    model: ActorCritic
    checkpoints: list
    episodes: list          # per-episode records: step, length, outcome
    updates: list           # per-update diagnostics
    total_steps: int

    def success_curve(self, window: int = 50):
        """Rolling goal-rate over the episode log."""
        flags = [1.0 if e["outcome"] == "goal" else 0.0 for e in self.episodes]
        out = []
        for i in range(len(flags)):
            lo = max(0, i - window + 1)
            out.append(float(np.mean(flags[lo:i + 1])))
        return out


def ppo_train(env_factory: Callable[[], NavEnv], net_spec: PolicyNetSpec,
              config: PPOConfig, checkpoint_dir: Optional[str] = None,
              log_every: Optional[int] = None,
              stop_when: Optional[Callable[[TrainResult], bool]] = None):
    """Train an actor-critic with PPO; returns a TrainResult.

    Checkpoints (initial, every checkpoint_interval env steps, and final)
    are written to checkpoint_dir when given, else kept as in-memory
    parameter snapshots. stop_when, checked per update, allows early exit
    once a calibration target is met; the budget in config.total_steps is
    the hard cap either way.
    """
    config.validate()
    model = ActorCritic(net_spec, seed=config.seed)
    vec = VecEnv(env_factory, config.parallel_envs, seed=config.seed + 1)
    rng = np.random.default_rng(config.seed + 2)
    params = model.policy.params()
    vparams = model.value.params()
    popt = AdamState(params, learning_rate=config.learning_rate)
    vopt = AdamState(vparams, learning_rate=config.learning_rate)

    result = TrainResult(model=model, checkpoints=[], episodes=[],
                         updates=[], total_steps=0)

    def checkpoint(tag):
        if checkpoint_dir is None:
            snap = {k: v.copy() for k, v in model.policy.params().items()}
            result.checkpoints.append({"tag": tag, "steps": result.total_steps,
                                       "params": snap,
                                       "net_spec": net_spec.to_meta()})
            return
        os.makedirs(checkpoint_dir, exist_ok=True)
        path = os.path.join(checkpoint_dir, f"ckpt_{tag}.npz")
        model.save(path, meta={"train_steps": result.total_steps,
                               "config_seed": config.seed})
        result.checkpoints.append({"tag": tag, "steps": result.total_steps,
                                   "path": path})

    checkpoint("init")
    if config.total_steps <= 0:
        return result

    obs = vec.reset_all()
    needs_depth = model.needs_depth
    horizon = config.rollout_horizon
    n_envs = config.parallel_envs
    next_checkpoint = config.checkpoint_interval
    t_start = time.time()

    while result.total_steps < config.total_steps:
        feats_buf = np.empty((horizon, n_envs, 6))
        depth_buf = (np.empty((horizon, n_envs, DEPTH_SIZE, DEPTH_SIZE),
                              dtype=np.float32) if needs_depth else None)
        act_buf = np.empty((horizon, n_envs), dtype=np.int64)
        logp_buf = np.empty((horizon, n_envs))
        rew_buf = np.empty((horizon, n_envs))
        done_buf = np.empty((horizon, n_envs), dtype=bool)
        val_buf = np.empty((horizon, n_envs))

        for t in range(horizon):
            logits = model.action_logits(obs)
            logp_all = log_softmax(logits.astype(np.float64), axis=1)
            probs = np.exp(logp_all)
            probs /= probs.sum(axis=1, keepdims=True)
            actions = np.array([rng.choice(len(p), p=p) for p in probs])
            feats_buf[t] = obs["features"]
            if needs_depth:
                depth_buf[t] = obs["depth"]
            act_buf[t] = actions
            logp_buf[t] = logp_all[np.arange(n_envs), actions]
            val_buf[t] = model.state_values(obs)
            obs, rewards, dones, infos = vec.step(actions)
            rew_buf[t] = rewards
            done_buf[t] = dones
            step_base = result.total_steps
            result.total_steps += n_envs
            for info in infos:
                info["step"] = step_base + info["env"]
                result.episodes.append(info)

        last_values = model.state_values(obs)
        adv = gae_advantages(rew_buf, val_buf, done_buf, last_values,
                             config.discount, config.gae_lambda)
        returns = adv + val_buf

        flat_feats = feats_buf.reshape(horizon * n_envs, 6)
        flat_depth = (depth_buf.reshape(horizon * n_envs, DEPTH_SIZE, DEPTH_SIZE)
                      if needs_depth else None)
        flat_act = act_buf.reshape(-1)
        flat_logp = logp_buf.reshape(-1)
        flat_adv = adv.reshape(-1)
        flat_ret = returns.reshape(-1)
        norm_adv = (flat_adv - flat_adv.mean()) / (flat_adv.std() + 1e-8)

        if config.lr_anneal:
            frac = max(0.0, 1.0 - result.total_steps / config.total_steps)
            popt.learning_rate = config.learning_rate * frac
            vopt.learning_rate = config.learning_rate * frac

        diag = {"step": result.total_steps, "policy_loss": 0.0,
                "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0}
        n_batches = 0
        total = horizon * n_envs
        for _ in range(config.epochs_per_update):
            order = rng.permutation(total)
            for lo in range(0, total, config.minibatch_size):
                idx = order[lo:lo + config.minibatch_size]
                batch = {"features": flat_feats[idx]}
                if needs_depth:
                    batch["depth"] = flat_depth[idx]
                logits, caches = model.policy.forward(batch)
                ploss, entropy, dlogits, clip_frac = ppo_losses(
                    logits, flat_act[idx], flat_logp[idx], norm_adv[idx],
                    config.clip_ratio)
                probs = np.exp(log_softmax(logits.astype(np.float64), axis=1))
                dlogits += config.entropy_coef * entropy_bonus_grad(
                    probs, np.log(np.maximum(probs, 1e-12))) / len(idx)
                grads = model.policy.backward(dlogits, caches)
                adam_step(params, grads, popt)

                values, vcaches = model.value.forward(batch)
                verr = values[:, 0].astype(np.float64) - flat_ret[idx]
                vloss = 0.5 * float(np.mean(verr ** 2))
                dvalues = (config.value_coef * verr / len(idx))[:, None]
                vgrads = model.value.backward(dvalues, vcaches)
                adam_step(vparams, vgrads, vopt)

                if not (np.isfinite(ploss) and np.isfinite(vloss)):
                    raise PPOError(
                        f"non-finite loss at step {result.total_steps}: "
                        f"policy={ploss} value={vloss} entropy={entropy}")
                diag["policy_loss"] += ploss
                diag["value_loss"] += vloss
                diag["entropy"] += entropy
                diag["clip_fraction"] += clip_frac
                n_batches += 1

        for key in ("policy_loss", "value_loss", "entropy", "clip_fraction"):
            diag[key] /= max(1, n_batches)
        recent = [e for e in result.episodes[-50:]]
        diag["recent_goal_rate"] = (
            float(np.mean([e["outcome"] == "goal" for e in recent]))
            if recent else 0.0)
        diag["elapsed"] = time.time() - t_start
        result.updates.append(diag)
        if log_every and len(result.updates) % log_every == 0:
            print(f"  step {diag['step']}: goal_rate {diag['recent_goal_rate']:.2f} "
                  f"entropy {diag['entropy']:.2f} vloss {diag['value_loss']:.3f}")

        if result.total_steps >= next_checkpoint:
            checkpoint(str(result.total_steps))
            next_checkpoint += config.checkpoint_interval
        if stop_when is not None and stop_when(result):
            break

    checkpoint("final")
    return result
