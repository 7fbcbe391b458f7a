"""Acceptance gate for the navigation Turing test laboratory.

Each test here checks one release criterion end to end and records a
[PASS]/[FAIL] line through the conftest scoreboard, which pytest replays
after the run. Tolerances are pinned in the assertions; the heavy
criteria (agent training, classifier pipeline, service contract) share
session fixtures so the two PPO agents are trained exactly once.

The suite is slow by design: expect roughly half an hour on one core,
dominated by PPO training and first-person frame rendering.
"""

import itertools
import json
import time
from math import comb

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import record_criterion
from navtt import classifiers, corpus, encoders, evalkit
from navtt.navsim import AgentPose, N_ACTIONS, NavEnv, default_map
from navtt.navsim.env import (DEATH_REWARD, GOAL_REWARD, ISLAND_SPAWN_PROB,
                              MAX_EPISODE_STEPS, STEP_PENALTY)
from navtt.nnkit import (Conv2D, Dense, Flatten, GRULayer, MaxPool2D,
                         Network, grad_check)
from navtt.policies import (PPOConfig, PolicyNetSpec, SYNTHETIC_PLAYERS,
                            Trajectory, TrajectoryStep, evaluate_policy,
                            ppo_train, rollout, scripted_human_policy)
from navtt.service import QUESTION, StudyService, create_app

# Training recipes frozen by calibration runs; see notes on checkpoint
# selection in the agent fixtures below.
RECIPES = {
    "symbolic": {
        "hidden": (256, 256),
        "entropy_coef": 0.0,
        "epochs_per_update": 6,
        "seed": 4,
        "checkpoint_interval": 400_000,
        "stop_rate": 0.96,
    },
    "hybrid": {
        "hidden": (128, 128),
        "entropy_coef": 0.001,
        "epochs_per_update": 4,
        "seed": 3,
        "checkpoint_interval": 100_000,
        "stop_rate": 0.95,
    },
}
STEP_BUDGET = 2_000_000
WALL_BUDGET_S = 30 * 60.0
EVAL_EVERY_UPDATES = 25
TTG_SLACK = 2.0                 # smoothing noise allowance, in ticks


# ---------------------------------------------------------------- helpers


def _run_episode(env, rng):
    """Random-action episode; returns (spawn_xy, steps, reward_sum, reason,
    final_xy)."""
    env.reset()
    spawn = env.pose.position[:2].copy()
    total = 0.0
    steps = 0
    reason = None
    while not env.terminated:
        _, out = env.step(int(rng.integers(N_ACTIONS)))
        total += out.reward
        steps += 1
        reason = out.reason
    return spawn, steps, total, reason, env.pose.position[:2].copy()


def _pairwise_u(x, y):
    """U statistic by direct pair counting (greater=1, tie=1/2)."""
    u = 0.0
    for xi in x:
        for yj in y:
            if xi > yj:
                u += 1.0
            elif xi == yj:
                u += 0.5
    return u


def _enumerated_p(x, y):
    """Two-sided exact p: doubled smaller tail over all group assignments."""
    pooled = np.concatenate([x, y])
    n1 = len(x)
    u_obs = _pairwise_u(x, y)
    low = high = 0
    total = 0
    for idx in itertools.combinations(range(len(pooled)), n1):
        mask = np.zeros(len(pooled), dtype=bool)
        mask[list(idx)] = True
        u = _pairwise_u(pooled[mask], pooled[~mask])
        low += u <= u_obs + 1e-12
        high += u >= u_obs - 1e-12
        total += 1
    return min(1.0, 2.0 * min(low, high) / total)


def _average_ranks(values):
    """Average ranks (1-based) with ties sharing their midpoint."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _td_expected(line_pixels, start_uv, end_uv, shape=(200, 320)):
    img = np.zeros(shape, dtype=np.uint8)
    for u, v in line_pixels:
        img[v, u] = 255
    img[start_uv[1], start_uv[0]] = 128
    img[end_uv[1], end_uv[0]] = 200
    return img


def _tiny_trajectory(traj_id, source, generator_id, goal_index=0):
    steps = [TrajectoryStep(t, AgentPose(np.array([75.0 + t, 245.0, 0.0]), 0.0),
                            1, 0.0) for t in range(3)]
    return Trajectory(
        id=traj_id, source=source, generator_id=generator_id,
        goal_index=goal_index, steps=steps, outcome="goal",
        spawn_pose=AgentPose(np.array([75.0, 245.0, 0.0]), 0.0),
        goal_xy=(75.0, 245.0))


def _ttg_milestones(episodes, total_steps, window=50, points=10):
    """Window-smoothed time-to-goal sampled at training-progress deciles."""
    succ = [(e["step"], e["length"]) for e in episodes
            if e["outcome"] == "goal"]
    if not succ:
        return []
    lengths = np.array([l for _, l in succ], dtype=np.float64)
    steps_at = np.array([s for s, _ in succ], dtype=np.float64)
    smooth = np.array([lengths[max(0, i - window + 1):i + 1].mean()
                       for i in range(len(lengths))])
    milestones = []
    for frac in np.linspace(0.1, 1.0, points):
        idx = np.searchsorted(steps_at, frac * total_steps, side="right") - 1
        milestones.append(smooth[max(idx, 0)])
    return milestones


# ------------------------------------------------- session-scoped fixtures


@pytest.fixture(scope="session")
def spec():
    return default_map()


def _train_agent(kind: str, spec):
    """Train one PPO agent with periodic held-out probes.

    Every EVAL_EVERY_UPDATES updates the current policy is scored on 48
    evaluation-spawn episodes; the best-scoring parameters are kept and
    restored at the end (plain validation-based model selection), then
    verified on a fresh 100-episode evaluation seed. Training stops early
    once the probe clears the recipe's stop rate twice in a row; the step
    budget is the hard cap either way.
    """
    recipe = RECIPES[kind]
    net_spec = PolicyNetSpec.for_map(spec, kind, hidden=recipe["hidden"])
    config = PPOConfig(
        total_steps=STEP_BUDGET,
        minibatch_size=512,
        epochs_per_update=recipe["epochs_per_update"],
        entropy_coef=recipe["entropy_coef"],
        checkpoint_interval=recipe["checkpoint_interval"],
        seed=recipe["seed"],
    )
    probe = {"best": -1.0, "best_params": None, "best_steps": 0,
             "updates": 0, "hits": 0}

    def stop_when(result):
        probe["updates"] += 1
        if probe["updates"] % EVAL_EVERY_UPDATES:
            return False
        stats = evaluate_policy(result.model, spec, n_episodes=48,
                                seed=1000 + probe["updates"])
        rate = stats["success_rate"]
        if rate > probe["best"]:
            probe["best"] = rate
            probe["best_params"] = {
                "policy": {k: v.copy() for k, v
                           in result.model.policy.params().items()},
                "value": {k: v.copy() for k, v
                          in result.model.value.params().items()},
            }
            probe["best_steps"] = result.total_steps
        probe["hits"] = probe["hits"] + 1 if rate >= recipe["stop_rate"] else 0
        return probe["hits"] >= 2

    t0 = time.time()
    result = ppo_train(lambda: NavEnv(spec, spawn_mode="train"), net_spec,
                       config, stop_when=stop_when)
    if probe["best_params"] is not None:
        result.model.policy.set_params(probe["best_params"]["policy"])
        result.model.value.set_params(probe["best_params"]["value"])
    wall = time.time() - t0
    final_eval = evaluate_policy(result.model, spec, n_episodes=100, seed=777)

    snapshots = [c for c in result.checkpoints if c["tag"] != "init"]
    by_steps = {c["steps"]: c for c in snapshots}
    late = [by_steps[s] for s in sorted(by_steps)[-2:]]
    generators = [(f"{kind}-ckpt-best", result.model)]
    generators += [(f"{kind}-ckpt-{c['steps']}", c) for c in late]
    return {
        "kind": kind,
        "result": result,
        "model": result.model,
        "wall": wall,
        "eval": final_eval,
        "best_steps": probe["best_steps"] or result.total_steps,
        "generators": generators,
    }


@pytest.fixture(scope="session")
def symbolic_run(spec):
    return _train_agent("symbolic", spec)


@pytest.fixture(scope="session")
def hybrid_run(spec):
    return _train_agent("hybrid", spec)


@pytest.fixture(scope="session")
def study_corpus(spec, symbolic_run, hybrid_run):
    """Scripted-human plus rolled-out-agent corpus with a generator split.

    Seven synthetic players cover every goal four times each; each agent
    kind contributes three checkpoint generators (best plus the two latest
    snapshots), each sweeping every goal three times. The split policy
    holds three human players and one checkpoint per agent kind out as
    the test set. Repetition matters: per-step classifiers estimate a
    spatial density boundary, and one pass per goal leaves it badly
    undersampled.
    """
    trajectories = []
    for p, (player, traits) in enumerate(SYNTHETIC_PLAYERS.items()):
        for rep in range(4):
            for goal in range(len(spec.goal_locations)):
                trajectories.append(scripted_human_policy(
                    spec, goal, traits=traits,
                    seed=1000 * p + 100 * rep + goal, player_id=player,
                    traj_id=f"{player}-r{rep}-e{goal:02d}"))
    for run in (symbolic_run, hybrid_run):
        for i, (gen_id, ckpt) in enumerate(run["generators"]):
            for rep in range(3):
                trajectories.extend(rollout(
                    ckpt, spec, n_episodes=len(spec.goal_locations),
                    seed=500 + 10 * i + rep, goal_sweep=True,
                    generator_id=gen_id))
    policy = corpus.SplitPolicy(
        generator_split={"human": (4, 3),
                         "symbolic_agent": (2, 1),
                         "hybrid_agent": (2, 1)},
        val_fraction=0.2)
    manifest = corpus.build_manifest(trajectories, policy, seed=0)
    return {"manifest": manifest, "trajectories": trajectories,
            "by_id": {t.id: t for t in trajectories}}


@pytest.fixture(scope="session")
def encoded_sets(spec, study_corpus):
    """The four input spaces encoded once, keyed by manifest split."""
    manifest = study_corpus["manifest"]
    by_id = study_corpus["by_id"]
    dev_ids = [e.trajectory_id for e in manifest.entries
               if e.split in ("train", "val")]
    test_ids = [e.trajectory_id for e in manifest.by_split("test")]
    out = {}
    for space, stride in (("symbolic", 1), ("topdown", 1),
                          ("barcode", 1), ("visual", 4)):
        dev = classifiers.build_dataset(
            space, [by_id[i] for i in dev_ids], spec, frame_stride=stride)
        test = classifiers.build_dataset(
            space, [by_id[i] for i in test_ids], spec, frame_stride=stride)
        out[space] = {"dev": dev, "test": test}
    out["test_sources"] = {e.trajectory_id: e.source
                           for e in manifest.by_split("test")}
    return out


# ------------------------------------------------------------ criterion 1


def test_gradient_suite():
    """Every layer kind passes central finite-difference checks.

    Central differences are only meaningful where the loss is locally
    smooth, so the conv stack runs under tanh and the max-pool case gets
    an input of distinct values spaced far beyond the probe step, which
    pins the argmax selection during the probe.
    """
    t0 = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pool_x = (rng.permutation(72).astype(np.float64) * 0.5
                  ).reshape(2, 1, 6, 6)
        nets = [
            (Network([Dense(5, 8, "tanh", rng=rng), Dense(8, 1, rng=rng)]),
             rng.normal(size=(4, 5)), None),
            (Network([Conv2D(1, 2, kernel=3, stride=1, activation="tanh",
                             rng=rng),
                      Flatten(), Dense(2 * 6 * 6, 1, rng=rng)]),
             rng.normal(size=(2, 1, 8, 8)), None),
            (Network([MaxPool2D(2), Flatten(), Dense(9, 1, rng=rng)]),
             pool_x, None),
            (Network([GRULayer(3, 4, rng=rng), Dense(4, 1, rng=rng)]),
             rng.normal(size=(2, 5, 3)), None),
        ]
        if seed % 2:
            mask = np.ones((2, 6))
            mask[0, 4:] = 0.0
            mask[1, 2:] = 0.0
            nets.append(
                (Network([GRULayer(2, 3, rng=rng), Dense(3, 1, rng=rng)]),
                 rng.normal(size=(2, 6, 2)), mask))
        for net, x, mask in nets:
            label = np.array(float(seed % 2))
            worst = max(worst, grad_check(net, x, label, mask=mask))
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 60.0
    record_criterion(
        "gradient-suite", ok,
        f"max rel err {worst:.2e} (tol 1e-4), 20 seeds in {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ criterion 2


def test_encoder_exactness():
    """Bar-code is bit-exact; top-down matches hand-computed rasters."""
    rng = np.random.default_rng(42)
    frames = rng.integers(0, 256, size=(600, 200, 320), dtype=np.uint8)
    bc = encoders.encode_barcode(frames)
    shape_ok = bc.shape == (600, 320)
    # integer half-up rounding oracle: floor(s/h + 1/2) == (2s + h) // 2h
    sums = frames.astype(np.int64).sum(axis=1)
    oracle = ((2 * sums + 200) // 400).astype(np.uint8)
    bc_ok = np.array_equal(bc, oracle)
    probe = np.zeros((1, 200, 4), dtype=np.uint8)
    probe[0, 100:, 0] = 1       # mean 0.500 -> rounds up to 1
    probe[0, :, 1] = 3
    probe[0, 99:, 2] = 1        # mean 0.505 -> 1
    probe[0, 101:, 3] = 1       # mean 0.495 -> 0
    probe_ok = encoders.encode_barcode(probe)[0].tolist() == [1, 3, 1, 0]

    bounds = (0.0, 0.0, 319.0, 199.0)
    cases = [
        # single point: end marker wins over start on the same pixel
        ([(10, 10)], [], (10, 10), (10, 10), bounds),
        # horizontal segment
        ([(5, 7), (20, 7)], [(u, 7) for u in range(5, 21)],
         (5, 7), (20, 7), bounds),
        # vertical segment
        ([(100, 20), (100, 35)], [(100, v) for v in range(20, 36)],
         (100, 20), (100, 35), bounds),
        # unit diagonal
        ([(0, 0), (9, 9)], [(i, i) for i in range(10)],
         (0, 0), (9, 9), bounds),
        # 2:1 slope, rounding per pixel computed by hand
        ([(0, 0), (10, 5)],
         [(0, 0), (1, 1), (2, 1), (3, 2), (4, 2), (5, 3), (6, 3), (7, 4),
          (8, 4), (9, 5), (10, 5)],
         (0, 0), (10, 5), bounds),
        # L-shaped path
        ([(2, 2), (8, 2), (8, 6)],
         [(u, 2) for u in range(2, 9)] + [(8, v) for v in range(2, 7)],
         (2, 2), (8, 6), bounds),
        # backtracking: start and end share a pixel, end marker wins
        ([(0, 0), (4, 0), (0, 0)], [(u, 0) for u in range(5)],
         (0, 0), (0, 0), bounds),
        # fractional point: (1.4, 2.6) -> pixel (1, 3)
        ([(1.4, 2.6)], [], (1, 3), (1, 3), bounds),
        # elevation is ignored by the projection
        ([(5, 7, 55.0), (20, 7, -3.0)], [(u, 7) for u in range(5, 21)],
         (5, 7), (20, 7), bounds),
        # non-unit bounds scale: (319, 199) of (0,0,638,398) -> (160, 100)
        ([(319, 199)], [], (160, 100), (160, 100), (0.0, 0.0, 638.0, 398.0)),
    ]
    td_failures = []
    for i, (points, line, start, end, case_bounds) in enumerate(cases):
        pos = np.array([(p + (0.0,))[:3] if len(p) < 3 else p
                        for p in points], dtype=np.float64)
        got = encoders.encode_topdown(pos, case_bounds)
        want = _td_expected(line, start, end)
        if not np.array_equal(got, want):
            td_failures.append(i)
    ok = shape_ok and bc_ok and probe_ok and not td_failures
    record_criterion(
        "encoder-exactness", ok,
        f"bar-code shape {bc.shape}, bit-exact={bc_ok}, "
        f"half-up probe={probe_ok}, top-down oracle failures={td_failures}")
    assert ok


# ------------------------------------------------------------ criterion 3


def test_metric_oracles():
    """Rank metrics agree with naive formulas and exact enumeration."""
    t0 = time.time()
    rng = np.random.default_rng(7)
    spearman_err = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 41))
        x = rng.permutation(n).astype(np.float64)
        y = rng.permutation(n).astype(np.float64)
        rho = evalkit.spearman_rank(x, y)
        rx = np.empty(n)
        rx[np.argsort(x)] = np.arange(1, n + 1)
        ry = np.empty(n)
        ry[np.argsort(y)] = np.arange(1, n + 1)
        naive = 1.0 - 6.0 * ((rx - ry) ** 2).sum() / (n * (n * n - 1))
        spearman_err = max(spearman_err, abs(rho - naive))
    spearman_ok = spearman_err <= 1e-12

    x = [1.0, 2.0, 2.0, 3.0]
    y = [10.0, 30.0, 30.0, 20.0]
    tie_oracle = float(np.corrcoef(_average_ranks(x), _average_ranks(y))[0, 1])
    tie_ok = abs(evalkit.spearman_rank(x, y) - tie_oracle) <= 1e-12

    mw_err = 0.0
    u_sum_ok = True
    for n1 in range(1, 10):
        for n2 in range(1, 11 - n1):
            for tie_draw in (False, True):
                if tie_draw:
                    xs = rng.integers(0, 3, size=n1).astype(np.float64)
                    ys = rng.integers(0, 3, size=n2).astype(np.float64)
                else:
                    xs = rng.normal(size=n1)
                    ys = rng.normal(size=n2)
                u1, p = evalkit.mann_whitney_u(xs, ys)
                u2, _ = evalkit.mann_whitney_u(ys, xs)
                u_sum_ok &= abs(u1 + u2 - n1 * n2) < 1e-12
                mw_err = max(mw_err, abs(u1 - _pairwise_u(xs, ys)),
                             abs(p - _enumerated_p(xs, ys)))
    mw_ok = mw_err <= 1e-9
    elapsed = time.time() - t0
    ok = spearman_ok and tie_ok and mw_ok and u_sum_ok and elapsed < 60.0
    record_criterion(
        "metric-oracles", ok,
        f"spearman err {spearman_err:.1e} (tol 1e-12), tie case ok={tie_ok}, "
        f"mann-whitney err {mw_err:.1e} (tol 1e-9), U1+U2 ok={u_sum_ok}, "
        f"{elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------ criterion 4


def test_environment_invariants(spec):
    """Reward telescoping, island spawn mass, and the step cap."""
    rng = np.random.default_rng(3)
    env = NavEnv(spec, spawn_mode="train", seed=5)
    worst_gap = 0.0
    max_len = 0
    outcomes = set()
    for _ in range(1000):
        spawn, steps, total, reason, final = _run_episode(env, rng)
        d0 = float(np.hypot(*(spawn - env.goal_xy)))
        d_final = float(np.hypot(*(final - env.goal_xy)))
        c = 1.0 / max(d0, spec.goal_radius)
        expected = c * (d0 - d_final) - steps * STEP_PENALTY
        if reason == "goal":
            expected += GOAL_REWARD
        elif reason == "death":
            expected += DEATH_REWARD
        worst_gap = max(worst_gap, abs(total - expected))
        max_len = max(max_len, steps)
        outcomes.add(reason)
    telescope_ok = worst_gap <= 1e-9
    cap_ok = max_len <= MAX_EPISODE_STEPS

    env = NavEnv(spec, spawn_mode="train", seed=11)
    island = 0
    for _ in range(10_000):
        env.reset()
        x, y = env.pose.position[:2]
        island += bool(spec.is_island_like(x, y))
    frac = island / 10_000.0
    island_ok = abs(frac - ISLAND_SPAWN_PROB) <= 0.02
    ok = telescope_ok and island_ok and cap_ok
    record_criterion(
        "environment-invariants", ok,
        f"telescoping gap {worst_gap:.1e} (tol 1e-9) over 1000 episodes "
        f"({sorted(outcomes)}), island fraction {frac:.3f} "
        f"(target 0.34 +/- 0.02), longest episode {max_len} <= "
        f"{MAX_EPISODE_STEPS}")
    assert ok


# ------------------------------------------------------------ criterion 7
# (cheap, so it runs before the training-backed criteria)


def test_leakage_and_aggregation():
    """Split leakage guard over random policies; aggregation invariances."""
    rng = np.random.default_rng(99)
    sources = ("human", "symbolic_agent", "hybrid_agent")
    leak_failures = 0
    for trial in range(200):
        trajs = []
        split = {}
        for source in sources:
            n_gens = int(rng.integers(2, 6))
            n_test = int(rng.integers(1, n_gens))
            n_train = int(rng.integers(1, n_gens - n_test + 1))
            split[source] = (n_train, n_test)
            for g in range(n_gens):
                gen = f"{source}-g{g}"
                for ep in range(int(rng.integers(1, 4))):
                    trajs.append(_tiny_trajectory(
                        f"{gen}-e{ep}-{trial}", source, gen,
                        goal_index=int(rng.integers(16))))
        policy = corpus.SplitPolicy(
            generator_split=split,
            val_fraction=float(rng.uniform(0.05, 0.45)))
        manifest = corpus.build_manifest(trajs, policy, seed=trial)
        gens = {"train": set(), "val": set(), "test": set()}
        for e in manifest.entries:
            gens[e.split].add(e.generator_id)
        if (gens["train"] | gens["val"]) & gens["test"]:
            leak_failures += 1
    leak_ok = leak_failures == 0

    agg_ok = True
    for _ in range(50):
        logits = rng.normal(size=int(rng.integers(3, 40))) * 3.0
        base = classifiers.verdict_from_logits("t", logits)
        for transform in (lambda z: 2.5 * z, np.tanh, lambda z: z ** 3):
            moved = classifiers.verdict_from_logits("t", transform(logits))
            agg_ok &= moved.majority_label == base.majority_label
        group = [rng.normal(size=int(rng.integers(3, 40))) + rng.normal()
                 for _ in range(8)]
        means = [classifiers.verdict_from_logits(f"t{i}", g).trajectory_logit
                 for i, g in enumerate(group)]
        a, b = float(rng.uniform(0.5, 3.0)), float(rng.normal())
        shifted = [classifiers.verdict_from_logits(
            f"t{i}", a * g + b).trajectory_logit for i, g in enumerate(group)]
        agg_ok &= np.array_equal(np.argsort(means), np.argsort(shifted))
    ok = leak_ok and agg_ok
    record_criterion(
        "leakage-and-aggregation", ok,
        f"0 generator leaks required over 200 random split policies "
        f"(got {leak_failures}); majority invariant under monotone "
        f"transforms and mean-logit ranking under affine shifts: {agg_ok}")
    assert ok


# ------------------------------------------------------------ criterion 5


def test_agent_training(symbolic_run, hybrid_run):
    """Both agents reach 90% success in budget; time-to-goal never regresses."""
    parts = []
    ok = True
    for run in (symbolic_run, hybrid_run):
        rate = run["eval"]["success_rate"]
        steps = run["result"].total_steps
        agent_ok = (rate >= 0.90 and steps <= STEP_BUDGET
                    and run["wall"] <= WALL_BUDGET_S)
        milestones = _ttg_milestones(run["result"].episodes, steps)
        mono_ok = bool(milestones) and all(
            milestones[i + 1] <= milestones[i] + TTG_SLACK
            for i in range(len(milestones) - 1))
        mono_ok = mono_ok and milestones[-1] <= milestones[0]
        ok &= agent_ok and mono_ok
        parts.append(
            f"{run['kind']}: success {rate:.2f} (>=0.90) at "
            f"{steps:,} steps (<=2M) in {run['wall']:.0f}s (<=1800), "
            f"time-to-goal deciles "
            f"{'->'.join(f'{m:.0f}' for m in milestones)} "
            f"(non-increasing +/-{TTG_SLACK}: {mono_ok})")
    record_criterion("agent-training", ok, "; ".join(parts))
    assert ok


# ------------------------------------------------------------ criterion 6


def test_classifier_end_to_end(encoded_sets):
    """Symbolic classifiers separate scripted humans from agents on
    held-out generators; all six kinds train cleanly and report
    mean (std) in the summary-table shape."""
    budgets = {
        "SYM-FF": classifiers.Hyperparams(),
        "SYM-GRU": classifiers.Hyperparams(epochs=20, patience=5,
                                           steps_per_epoch=60),
        "VIS-FF": classifiers.Hyperparams(hidden=32, epochs=6, patience=2,
                                          steps_per_epoch=40),
        "VIS-GRU": classifiers.Hyperparams(hidden=32, feature_dim=16,
                                           window=16, batch_size=24,
                                           epochs=6, patience=2,
                                           steps_per_epoch=20),
        "TD-CNN": classifiers.Hyperparams(batch_size=32, epochs=12,
                                          patience=4),
        "BC-CNN": classifiers.Hyperparams(batch_size=32, epochs=12,
                                          patience=4),
    }
    repeats = {"SYM-FF": 5, "SYM-GRU": 5, "VIS-FF": 1, "VIS-GRU": 1,
               "TD-CNN": 1, "BC-CNN": 1}
    true_sources = encoded_sets["test_sources"]
    report = evalkit.MetricsReport()
    identity = {}
    diverged = []
    for kind in classifiers.MODEL_KINDS:
        space = classifiers.INPUT_SPACE[kind]
        dev = encoded_sets[space]["dev"]
        test = encoded_sets[space]["test"]
        accs = []
        for r in range(repeats[kind]):
            train_set, val_set = classifiers.split_by_generator(
                dev, val_fraction=0.25, seed=r)
            run = classifiers.train_classifier(
                kind, train_set, val_set, hyperparams=budgets[kind], seed=r)
            finite = all(np.isfinite(e.loss) for e in run.history)
            if not finite:
                diverged.append(kind)
                break
            verdicts = classifiers.predict_dataset(run.model, test)
            accs.append(evalkit.identity_accuracy(
                {v.trajectory_id: v.majority_label for v in verdicts},
                true_sources))
        identity[kind] = accs
        if accs:
            report.add(kind, accs, [], [], [], [])
    table = report.render()
    print(table)
    sym_ff = float(np.mean(identity["SYM-FF"])) if identity["SYM-FF"] else 0.0
    sym_gru = (float(np.mean(identity["SYM-GRU"]))
               if identity["SYM-GRU"] else 0.0)
    sym_ok = sym_ff >= 0.85 and sym_gru >= 0.85
    table_ok = all(kind in table for kind in classifiers.MODEL_KINDS)
    ok = sym_ok and not diverged and table_ok
    record_criterion(
        "classifier-end-to-end", ok,
        f"SYM-FF {sym_ff:.3f}, SYM-GRU {sym_gru:.3f} (>=0.85 mean over 5 "
        f"held-out-generator repeats); diverged={diverged or 'none'}; "
        f"all six kinds in the report table: {table_ok}")
    assert ok


# ------------------------------------------------------------ criterion 8


def test_service_contract(spec, study_corpus, tmp_path_factory):
    """Full study lifecycle over HTTP with export equal to recomputation."""
    corpus_root = tmp_path_factory.mktemp("accept-corpus")
    data_dir = tmp_path_factory.mktemp("accept-data")
    corpus.write_corpus(str(corpus_root), study_corpus["manifest"],
                        study_corpus["trajectories"])
    service = StudyService(str(corpus_root), str(data_dir))
    client = TestClient(create_app(service))

    created = client.post("/studies", json={"study": 1, "seed": 2})
    study_ok = created.status_code == 200 and created.json()["n_trials"] == 10
    study_id = created.json()["study_id"]
    session = client.post(
        f"/studies/{study_id}/sessions",
        json={"consent": True, "familiarity": {"plays_3d": "weekly"}})
    session_ok = session.status_code == 200
    token = session.json()["session_id"]

    rng = np.random.default_rng(5)
    sent = []
    trial_views = []
    for k in range(created.json()["n_trials"]):
        view = client.get(f"/sessions/{token}/trials/{k}")
        session_ok &= view.status_code == 200
        trial = view.json()
        trial_views.append(trial)
        for video in (trial["video_a"], trial["video_b"]):
            replay = client.get(f"/replays/{video}")
            session_ok &= replay.status_code == 200
        choice = "A" if rng.random() < 0.5 else "B"
        uncertainty = int(rng.integers(1, 6))
        posted = client.post(f"/sessions/{token}/judgments", json={
            "trial_id": trial["trial_id"], "choice": choice,
            "uncertainty": uncertainty, "rationale": f"call {k}"})
        session_ok &= posted.status_code == 200
        sent.append((trial["trial_id"], choice))
    judged_ok = len(sent) == 10

    export = client.get(f"/studies/{study_id}/export")
    export_ok = export.status_code == 200
    truth = export.json()
    by_trial = {t["trial_id"]: t for t in truth["trials"]}
    recompute_ok = True
    with open(data_dir / "judgments.jsonl") as fh:
        raw = [json.loads(line) for line in fh if line.strip()]
    for trial_id, _ in sent:
        mine = [c for t, c in sent if t == trial_id]
        disk = [r["choice"] for r in raw if r["trial_id"] == trial_id]
        prop = mine.count("A") / len(mine)
        row = by_trial[trial_id]
        recompute_ok &= (abs(row["proportion_a"] - prop) < 1e-12
                         and row["judge_count"] == len(disk) == len(mine)
                         and sorted(disk) == sorted(mine))

    leak_ok = True
    forbidden = ("human", "symbolic", "hybrid", "player")
    traj_ids = set(study_corpus["by_id"])
    payloads = [created.json(), session.json()] + trial_views
    payloads.append(client.get(
        f"/replays/{trial_views[0]['video_a']}").json())
    for payload in payloads:
        blob = json.dumps(payload).replace(QUESTION, "").lower()
        leak_ok &= not any(word in blob for word in forbidden)
        leak_ok &= not any(tid.lower() in blob for tid in traj_ids)

    ok = (study_ok and session_ok and judged_ok and export_ok
          and recompute_ok and leak_ok)
    record_criterion(
        "service-contract", ok,
        f"lifecycle over HTTP (create={study_ok}, session+replays="
        f"{session_ok}, judgments={judged_ok}, export={export_ok}); "
        f"export equals recomputation: {recompute_ok}; "
        f"no source labels in payloads: {leak_ok}")
    assert ok
