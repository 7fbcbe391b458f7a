"""Trajectory records and their JSON Lines serialization.

A trajectory holds the spawn pose plus one step record per action taken;
steps[t].pose is the pose AFTER applying steps[t].action, so len(steps)
poses trace the path and the spawn is kept separately for replay.
"""

import io
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..navsim.env import AgentPose

FORMAT_VERSION = 1
SOURCES = ("human", "symbolic_agent", "hybrid_agent")
OUTCOMES = ("goal", "death", "timeout")


class TrajectoryError(ValueError):
    pass


@dataclass
class TrajectoryStep:
    t: int
    pose: AgentPose
    action: int
    reward: float


@dataclass
class Trajectory:
    id: str
    source: str                 # human | symbolic_agent | hybrid_agent
    generator_id: str           # synthetic player or agent checkpoint identity
    goal_index: int
    steps: List[TrajectoryStep]
    outcome: str                # goal | death | timeout
    spawn_pose: AgentPose
    goal_xy: tuple
    map_name: str = "default"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.steps)

    def positions(self):
        """(T, 3) float array, row t = pose after step t."""
        return np.array([s.pose.position for s in self.steps], dtype=np.float64)

    def actions(self):
        return [s.action for s in self.steps]

    def rewards(self):
        return np.array([s.reward for s in self.steps], dtype=np.float64)

    def total_reward(self):
        return float(sum(s.reward for s in self.steps))

    def validate(self):
        if not self.steps:
            raise TrajectoryError("trajectory has no steps")
        if self.source not in SOURCES:
            raise TrajectoryError(f"unknown source {self.source!r}")
        if self.outcome not in OUTCOMES:
            raise TrajectoryError(f"unknown outcome {self.outcome!r}")
        for i, s in enumerate(self.steps):
            if s.t != i:
                raise TrajectoryError(f"step {i} has t={s.t}; expected {i}")
        return self


def collect_trajectory(env, act_fn, traj_id: str, source: str,
                       generator_id: str) -> Trajectory:
    """Run a freshly reset env to termination under act_fn(obs) -> action."""
    if env.terminated or env.pose is None:
        raise TrajectoryError("env must be reset and not terminated")
    spawn = env.pose.copy()
    goal_xy = (float(env.goal_xy[0]), float(env.goal_xy[1]))
    goal_index = env.goal_index
    obs = env.observe()
    steps = []
    outcome = None
    while not env.terminated:
        action = int(act_fn(obs))
        obs, out = env.step(action)
        steps.append(TrajectoryStep(out.step_index - 1, out.next_pose,
                                    action, out.reward))
        if out.terminated:
            outcome = out.reason
    return Trajectory(
        id=traj_id, source=source, generator_id=generator_id,
        goal_index=goal_index, steps=steps, outcome=outcome,
        spawn_pose=spawn, goal_xy=goal_xy, map_name=env.spec.name,
    ).validate()


def _header_record(traj: Trajectory) -> dict:
    return {
        "record": "trajectory",
        "version": FORMAT_VERSION,
        "id": traj.id,
        "source": traj.source,
        "generator_id": traj.generator_id,
        "goal_index": traj.goal_index,
        "outcome": traj.outcome,
        "spawn": {
            "x": float(traj.spawn_pose.position[0]),
            "y": float(traj.spawn_pose.position[1]),
            "z": float(traj.spawn_pose.position[2]),
            "heading": float(traj.spawn_pose.heading),
        },
        "goal_xy": [float(traj.goal_xy[0]), float(traj.goal_xy[1])],
        "map_name": traj.map_name,
        "n_steps": len(traj.steps),
        "meta": traj.meta,
    }


def _step_record(s: TrajectoryStep) -> dict:
    x, y, z = (float(v) for v in s.pose.position)
    return {"t": s.t, "x": x, "y": y, "z": z,
            "heading": float(s.pose.heading), "action": int(s.action),
            "reward": float(s.reward)}


def write_trajectories(trajs, fp) -> None:
    """Append trajectories to a text file object as JSON Lines."""
    for traj in trajs:
        fp.write(json.dumps(_header_record(traj)) + "\n")
        for s in traj.steps:
            fp.write(json.dumps(_step_record(s)) + "\n")


def read_trajectories(fp) -> List[Trajectory]:
    """Parse every trajectory from a JSON Lines file object."""
    out = []
    header = None
    steps = []

    def flush():
        if header is None:
            return
        if len(steps) != header["n_steps"]:
            raise TrajectoryError(
                f"trajectory {header['id']}: expected {header['n_steps']} steps, "
                f"found {len(steps)}")
        spawn = AgentPose(
            np.array([header["spawn"]["x"], header["spawn"]["y"],
                      header["spawn"]["z"]]), header["spawn"]["heading"])
        out.append(Trajectory(
            id=header["id"], source=header["source"],
            generator_id=header["generator_id"],
            goal_index=int(header["goal_index"]), steps=list(steps),
            outcome=header["outcome"], spawn_pose=spawn,
            goal_xy=tuple(header["goal_xy"]), map_name=header["map_name"],
            meta=header.get("meta", {}),
        ).validate())

    for line in fp:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        if rec.get("record") == "trajectory":
            flush()
            if rec.get("version") != FORMAT_VERSION:
                raise TrajectoryError(f"unsupported version {rec.get('version')}")
            header, steps = rec, []
        else:
            pose = AgentPose(np.array([rec["x"], rec["y"], rec["z"]]),
                             rec["heading"])
            steps.append(TrajectoryStep(int(rec["t"]), pose,
                                        int(rec["action"]), float(rec["reward"])))
    flush()
    return out


def save_trajectories(trajs, path) -> None:
    with open(path, "w") as fp:
        write_trajectories(trajs, fp)


def load_trajectories(path) -> List[Trajectory]:
    with open(path) as fp:
        return read_trajectories(fp)


def trajectory_to_text(traj: Trajectory) -> str:
    buf = io.StringIO()
    write_trajectories([traj], buf)
    return buf.getvalue()


def trajectory_from_text(text: str) -> Trajectory:
    trajs = read_trajectories(io.StringIO(text))
    if len(trajs) != 1:
        raise TrajectoryError(f"expected one trajectory, found {len(trajs)}")
    return trajs[0]


def replay_outcome(traj: Trajectory, env) -> str:
    """Re-run the recorded actions through a fresh env; returns the reason.

    The env must be built over the same map the trajectory was recorded on.
    Used by consistency tests: outcome and rewards must match the record.
    """
    env.reset(goal_index=traj.goal_index,
              spawn_xy=(traj.spawn_pose.position[0], traj.spawn_pose.position[1]),
              heading=traj.spawn_pose.heading)
    reason = None
    for s in traj.steps:
        if env.terminated:
            raise TrajectoryError("recorded actions continue past termination")
        _, out = env.step(s.action)
        reason = out.reason
    return reason
