"""Goal-directed navigation environment over a MapSpec.

World coordinates are meters with y pointing down (matching grid rows),
headings in radians normalized to [0, 2pi) with 0 along +x and positive
angles turning toward +y. An episode ends on reaching the goal (+1),
stepping into void (-1), or hitting the step cap. Shaped reward each step:
c * (d_prev - d_next) - 0.01 with c = 1 / initial goal distance, so the
shaping telescopes to roughly +1 along any path that ends at the goal.
"""

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import raycast
from .mapspec import CELL_OBSTACLE, CELL_VOID, MapSpec

MAX_EPISODE_STEPS = 210
STEP_PENALTY = 0.01
GOAL_REWARD = 1.0
DEATH_REWARD = -1.0
MOVE_FRACTION = 0.5          # of a cell, per move action
TURN_STEP = np.deg2rad(30.0)
ISLAND_SPAWN_PROB = 0.34
N_ACTIONS = 9
DEPTH_SIZE = 32
FRAME_WIDTH = 320
FRAME_HEIGHT = 200


class Action(enum.IntEnum):
    FORWARD = 0
    MOVE_LEFT_30 = 1
    MOVE_LEFT_45 = 2
    MOVE_LEFT_90 = 3
    MOVE_RIGHT_30 = 4
    MOVE_RIGHT_45 = 5
    MOVE_RIGHT_90 = 6
    TURN_LEFT = 7
    TURN_RIGHT = 8


# movement actions translate at heading + offset without changing heading;
# left offsets are negative because y points down
_MOVE_OFFSETS = {
    Action.FORWARD: 0.0,
    Action.MOVE_LEFT_30: -np.deg2rad(30.0),
    Action.MOVE_LEFT_45: -np.deg2rad(45.0),
    Action.MOVE_LEFT_90: -np.deg2rad(90.0),
    Action.MOVE_RIGHT_30: np.deg2rad(30.0),
    Action.MOVE_RIGHT_45: np.deg2rad(45.0),
    Action.MOVE_RIGHT_90: np.deg2rad(90.0),
}


class EpisodeDone(RuntimeError):
    """Raised when step() is called after the episode has terminated."""


def wrap_heading(a):
    """Normalize to [0, 2pi)."""
    return float(np.mod(a, 2.0 * np.pi))


def wrap_angle(a):
    """Wrap a relative angle to (-pi, pi]."""
    return float(np.pi - np.mod(np.pi - a, 2.0 * np.pi))


@dataclass
class AgentPose:
    position: np.ndarray      # (3,) x, y, z meters
    heading: float            # radians in [0, 2pi)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.heading = wrap_heading(self.heading)

    def copy(self):
        return AgentPose(self.position.copy(), self.heading)


@dataclass
class StepOutcome:
    reward: float
    terminated: bool
    reason: str               # "goal" | "death" | "timeout" | "running"
    next_pose: AgentPose
    blocked: bool = False
    step_index: int = 0
    goal_distance: float = 0.0


class Observation:
    """Everything a policy or encoder may consume at one timestep.

    frame and depth_buffer are rendered lazily from the captured pose, so
    policies that never touch pixels pay nothing for them. avg_frame_depth
    is by definition the mean of the depth buffer.
    """

    def __init__(self, spec: MapSpec, pose: AgentPose, goal_xy, step_index: int,
                 depth: Optional[np.ndarray] = None):
        self._spec = spec
        self._pose = pose.copy()
        self.goal_xy = np.asarray(goal_xy, dtype=np.float64).copy()
        self.position = self._pose.position.copy()
        self.heading = self._pose.heading
        self.step_index = int(step_index)
        dx = self.goal_xy[0] - self.position[0]
        dy = self.goal_xy[1] - self.position[1]
        self.rel_goal_distance = float(np.hypot(dx, dy))
        self.rel_goal_angle = wrap_angle(np.arctan2(dy, dx) - self.heading)
        self._depth = depth
        self._frame = None

    @property
    def depth_buffer(self):
        if self._depth is None:
            self._depth = raycast.depth_buffer(
                self._spec, self._pose, self.goal_xy, size=DEPTH_SIZE)
        return self._depth

    @property
    def avg_frame_depth(self):
        return float(self.depth_buffer.mean())

    @property
    def frame(self):
        if self._frame is None:
            self._frame = raycast.render_frame(
                self._spec, self._pose, self.goal_xy,
                width=FRAME_WIDTH, height=FRAME_HEIGHT)
        return self._frame

    def symbolic_features(self):
        """Compact feature vector: angle, distance, position, mean depth."""
        return np.array([
            self.rel_goal_angle, self.rel_goal_distance,
            self.position[0], self.position[1], self.position[2],
            self.avg_frame_depth,
        ], dtype=np.float64)


class NavEnv:
    """Single navigation episode generator.

    spawn_mode "train" draws the island spawn subset with total probability
    0.34 (uniform within each subset); "evaluation" always spawns on the
    island, the held-out start region.
    """

    def __init__(self, spec: MapSpec, spawn_mode: str = "train",
                 max_steps: int = MAX_EPISODE_STEPS, seed: Optional[int] = None):
        if spawn_mode not in ("train", "evaluation"):
            raise ValueError(f"unknown spawn_mode {spawn_mode!r}")
        spec.validate()
        self.spec = spec
        self.spawn_mode = spawn_mode
        self.max_steps = int(max_steps)
        self.rng = np.random.default_rng(seed)
        self._main_spawns = [(x, y) for x, y, flag in spec.spawn_points if not flag]
        self._island_spawns = [(x, y) for x, y, flag in spec.spawn_points if flag]
        self.pose: Optional[AgentPose] = None
        self.goal_xy: Optional[np.ndarray] = None
        self.goal_index: Optional[int] = None
        self.step_index = 0
        self.terminated = True
        self._shaping_c = 1.0
        self._prev_dist = 0.0

    def _draw_spawn(self):
        if self.spawn_mode == "evaluation" or self.rng.random() < ISLAND_SPAWN_PROB:
            pool = self._island_spawns
        else:
            pool = self._main_spawns
        return pool[int(self.rng.integers(len(pool)))]

    def reset(self, goal_index: Optional[int] = None,
              spawn_xy=None, heading: Optional[float] = None):
        """Start a new episode; returns the first Observation."""
        if goal_index is None:
            goal_index = int(self.rng.integers(len(self.spec.goal_locations)))
        gx, gy = self.spec.goal_locations[goal_index]
        self.goal_index = int(goal_index)
        self.goal_xy = np.array([gx, gy], dtype=np.float64)
        if spawn_xy is None:
            spawn_xy = self._draw_spawn()
        if heading is None:
            heading = float(self.rng.uniform(0.0, 2.0 * np.pi))
        x, y = float(spawn_xy[0]), float(spawn_xy[1])
        z = self.spec.elevation_at(x, y)
        self.pose = AgentPose(np.array([x, y, z]), heading)
        self.step_index = 0
        self.terminated = False
        d0 = self._goal_distance()
        self._shaping_c = 1.0 / max(d0, self.spec.goal_radius)
        self._prev_dist = d0
        return self.observe()

    @property
    def shaping_coefficient(self):
        return self._shaping_c

    def _goal_distance(self):
        dx = self.pose.position[0] - self.goal_xy[0]
        dy = self.pose.position[1] - self.goal_xy[1]
        return float(np.hypot(dx, dy))

    def observe(self, depth: Optional[np.ndarray] = None):
        return Observation(self.spec, self.pose, self.goal_xy,
                           self.step_index, depth=depth)

    def render_frame(self, width: int = FRAME_WIDTH, height: int = FRAME_HEIGHT):
        return raycast.render_frame(self.spec, self.pose, self.goal_xy,
                                    width=width, height=height)

    def _apply_action(self, action):
        """Candidate new pose and whether the move was blocked by an obstacle."""
        pose = self.pose.copy()
        a = Action(int(action))
        if a == Action.TURN_LEFT:
            pose.heading = wrap_heading(pose.heading - TURN_STEP)
            return pose, False
        if a == Action.TURN_RIGHT:
            pose.heading = wrap_heading(pose.heading + TURN_STEP)
            return pose, False
        ang = pose.heading + _MOVE_OFFSETS[a]
        step = MOVE_FRACTION * self.spec.cell_size
        nx = pose.position[0] + step * np.cos(ang)
        ny = pose.position[1] + step * np.sin(ang)
        if self.spec.cell_at(nx, ny) == CELL_OBSTACLE:
            return self.pose.copy(), True  # blocked: pose unchanged
        pose.position[0] = nx
        pose.position[1] = ny
        pose.position[2] = self.spec.elevation_at(nx, ny)
        return pose, False

    def step(self, action):
        """Advance one action; returns (Observation, StepOutcome)."""
        if self.terminated:
            raise EpisodeDone("episode already terminated; call reset()")
        self.pose, blocked = self._apply_action(action)
        self.step_index += 1

        d = self._goal_distance()
        reward = self._shaping_c * (self._prev_dist - d) - STEP_PENALTY
        self._prev_dist = d

        died = self.spec.cell_at(self.pose.position[0], self.pose.position[1]) == CELL_VOID
        reached = (not died) and d <= self.spec.goal_radius
        timed_out = (not died) and (not reached) and self.step_index >= self.max_steps
        if died:
            reward += DEATH_REWARD
            reason = "death"
        elif reached:
            reward += GOAL_REWARD
            reason = "goal"
        elif timed_out:
            reason = "timeout"
        else:
            reason = "running"
        self.terminated = died or reached or timed_out
        outcome = StepOutcome(
            reward=float(reward), terminated=self.terminated, reason=reason,
            next_pose=self.pose.copy(), blocked=blocked,
            step_index=self.step_index, goal_distance=d,
        )
        return self.observe(), outcome
