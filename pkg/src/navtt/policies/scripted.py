"""Scripted human-like navigation: shortest path, smoothed, then followed
with trait-controlled perturbations (pauses, overshoot, drift).

Stands in for human replay capture. Each synthetic "player" is a trait
preset; generator_id carries the player identity for leakage-free splits.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from ..navsim.env import Action, NavEnv, wrap_angle
from ..navsim.mapspec import CELL_OBSTACLE, CELL_VOID, MapSpec
from .trajectory import Trajectory, TrajectoryError, collect_trajectory


@dataclass(frozen=True)
class HumanTraits:
    """Perturbation knobs. Ranges: noise in meters [0, 4]; probabilities
    in [0, 0.5]. All-zero traits reduce to the pure shortest-path follower."""
    waypoint_noise: float = 2.0
    pause_prob: float = 0.03
    overshoot_prob: float = 0.15
    speed_jitter: float = 0.10


ZERO_TRAITS = HumanTraits(0.0, 0.0, 0.0, 0.0)
DEFAULT_TRAITS = HumanTraits()

# seven synthetic players with distinct movement textures
SYNTHETIC_PLAYERS = {
    "player-1": HumanTraits(1.0, 0.02, 0.10, 0.05),
    "player-2": HumanTraits(2.0, 0.03, 0.15, 0.10),
    "player-3": HumanTraits(3.0, 0.05, 0.25, 0.15),
    "player-4": HumanTraits(0.5, 0.01, 0.05, 0.02),
    "player-5": HumanTraits(2.5, 0.08, 0.20, 0.12),
    "player-6": HumanTraits(1.5, 0.02, 0.30, 0.20),
    "player-7": HumanTraits(3.5, 0.06, 0.10, 0.25),
}

# movement action per angular offset; the primary set keeps aim error
# under 15 degrees, the wide set is the evasion fallback
_MOVE_TABLE = [
    (0.0, Action.FORWARD),
    (-np.deg2rad(30.0), Action.MOVE_LEFT_30),
    (np.deg2rad(30.0), Action.MOVE_RIGHT_30),
    (-np.deg2rad(45.0), Action.MOVE_LEFT_45),
    (np.deg2rad(45.0), Action.MOVE_RIGHT_45),
    (-np.deg2rad(90.0), Action.MOVE_LEFT_90),
    (np.deg2rad(90.0), Action.MOVE_RIGHT_90),
]
_PRIMARY_MOVES = _MOVE_TABLE[:5]
_TURN_BEARING = np.deg2rad(52.5)   # beyond this, rotate before moving
_SEGMENT_CAP_CELLS = 4.0           # max string-pulled segment length


def line_of_sight(spec: MapSpec, a, b, clearance=0.3):
    """True when the segment a-b crosses only walkable cells, with lateral
    clearance (in cells) against obstacle and void alike."""
    ax, ay = a
    bx, by = b
    length = float(np.hypot(bx - ax, by - ay))
    n = max(2, int(length / (0.25 * spec.cell_size)) + 1)
    ts = np.linspace(0.0, 1.0, n)
    xs = ax + (bx - ax) * ts
    ys = ay + (by - ay) * ts
    if length > 0:
        px = -(by - ay) / length * clearance * spec.cell_size
        py = (bx - ax) / length * clearance * spec.cell_size
    else:
        px = py = 0.0
    for ox, oy in ((0.0, 0.0), (px, py), (-px, -py)):
        for x, y in zip(xs + ox, ys + oy):
            if not spec.is_walkable(x, y):
                return False
    return True


def plan_waypoints(spec: MapSpec, start_xy, goal_xy, dist=None,
                   cap_cells=_SEGMENT_CAP_CELLS):
    """Greedy-descent BFS path from start to goal, string-pulled, then
    subdivided so no segment exceeds cap_cells (keeps the follower close
    to the verified corridor)."""
    if dist is None:
        dist = spec.walk_distances(goal_xy)
    r = int(start_xy[1] // spec.cell_size)
    c = int(start_xy[0] // spec.cell_size)
    if not np.isfinite(dist[r, c]):
        raise TrajectoryError(f"goal {goal_xy} unreachable from {start_xy}")
    cells = [(r, c)]
    while dist[r, c] > 0:
        best = None
        for rr, cc in ((r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)):
            if 0 <= rr < spec.height and 0 <= cc < spec.width:
                if best is None or dist[rr, cc] < dist[best]:
                    best = (rr, cc)
        r, c = best
        cells.append(best)
    pts = [tuple(start_xy)] + [spec.cell_center(r, c) for r, c in cells[1:]]
    pts.append(tuple(goal_xy))
    pulled = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not line_of_sight(spec, pts[i], pts[j]):
            j -= 1
        pulled.append(pts[j])
        i = j
    cap = cap_cells * spec.cell_size
    out = []
    for (ax, ay), (bx, by) in zip(pulled, pulled[1:]):
        n = max(1, int(np.ceil(np.hypot(bx - ax, by - ay) / cap)))
        for s in range(1, n + 1):
            out.append((ax + (bx - ax) * s / n, ay + (by - ay) * s / n))
    return out


_STUCK_WINDOW = 10       # decisions with no net motion before replanning
_STUCK_RADIUS = 6.0      # meters


class ScriptedController:
    """Stateful act_fn: plans to the goal, follows waypoints with
    trait-controlled perturbations, replans in place when wedged."""

    def __init__(self, spec: MapSpec, goal_xy, traits: HumanTraits, rng,
                 start_xy=None):
        self.spec = spec
        self.goal_xy = tuple(goal_xy)
        self.traits = traits
        self.rng = rng
        self.dist = spec.walk_distances(goal_xy)
        self.pending = []
        self.recent = []
        self.waypoints = None
        if start_xy is not None:
            self._replan(start_xy, jitter=True)

    def _replan(self, from_xy, jitter):
        plan = plan_waypoints(self.spec, from_xy, self.goal_xy, dist=self.dist)
        if jitter:
            self.waypoints = [self._jitter(w) for w in plan[:-1]]
            self.waypoints.append(plan[-1])  # never jitter the goal
        else:
            self.waypoints = plan
        self.k = 0
        self.pending = []
        self.recent = []

    def _jitter(self, w):
        noise = self.traits.waypoint_noise
        if noise <= 0.0:
            return tuple(w)
        for _ in range(4):
            x = w[0] + self.rng.uniform(-noise, noise)
            y = w[1] + self.rng.uniform(-noise, noise)
            if self.spec.is_walkable(x, y):
                return (x, y)
        return tuple(w)

    def _landing_cell(self, obs, offset):
        ang = obs.heading + offset
        step = 0.5 * self.spec.cell_size
        return self.spec.cell_at(obs.position[0] + step * np.cos(ang),
                                 obs.position[1] + step * np.sin(ang))

    def _safe(self, obs, offset):
        return self._landing_cell(obs, offset) not in (CELL_VOID, CELL_OBSTACLE)

    def __call__(self, obs) -> int:
        x, y = float(obs.position[0]), float(obs.position[1])
        if self.waypoints is None:
            self._replan((x, y), jitter=True)
        if self.pending:
            return int(self.pending.pop(0))

        self.recent.append((x, y))
        if len(self.recent) > _STUCK_WINDOW:
            self.recent.pop(0)
            if all(np.hypot(px - x, py - y) < _STUCK_RADIUS
                   for px, py in self.recent):
                self._replan((x, y), jitter=False)
                self.recent.append((x, y))

        t = self.traits
        if t.pause_prob > 0.0 and self.rng.random() < t.pause_prob:
            # look around: paired turns, net heading unchanged
            if self.rng.random() < 0.5:
                self.pending = [Action.TURN_RIGHT, Action.TURN_LEFT]
            else:
                self.pending = [Action.TURN_LEFT, Action.TURN_RIGHT]
            return int(self.pending.pop(0))

        while (self.k < len(self.waypoints) - 1
               and np.hypot(self.waypoints[self.k][0] - x,
                            self.waypoints[self.k][1] - y) < 0.6 * self.spec.cell_size):
            self.k += 1
        tx, ty = self.waypoints[self.k]
        bearing = wrap_angle(np.arctan2(ty - y, tx - x) - obs.heading)

        if abs(bearing) <= _TURN_BEARING:
            candidates = sorted(_PRIMARY_MOVES,
                                key=lambda oa: abs(wrap_angle(bearing - oa[0])))
            if t.speed_jitter > 0.0 and self.rng.random() < t.speed_jitter:
                candidates[0], candidates[1] = candidates[1], candidates[0]
            for offset, action in candidates:
                if self._safe(obs, offset):
                    return int(action)
            # every aimed move lands somewhere lethal; sidestep if possible
            strafes = sorted(_MOVE_TABLE[5:],
                             key=lambda oa: abs(wrap_angle(bearing - oa[0])))
            for offset, action in strafes:
                if self._safe(obs, offset):
                    return int(action)

        turn = Action.TURN_RIGHT if bearing > 0 else Action.TURN_LEFT
        if t.overshoot_prob > 0.0 and self.rng.random() < t.overshoot_prob:
            self.pending.append(turn)  # overshoot, corrected on later steps
        return int(turn)


def scripted_human_policy(spec: MapSpec, goal_index: int,
                          traits: HumanTraits = DEFAULT_TRAITS,
                          seed: int = 0, player_id: str = "player-0",
                          traj_id: str = None,
                          spawn_xy=None, heading=None) -> Trajectory:
    """One human-like episode on the island spawn (evaluation mode)."""
    player_key = zlib.crc32(player_id.encode("utf-8"))
    seq = np.random.SeedSequence([player_key, seed])
    env_seed, ctl_seed = seq.spawn(2)
    env = NavEnv(spec, spawn_mode="evaluation", seed=env_seed)
    obs = env.reset(goal_index=goal_index, spawn_xy=spawn_xy, heading=heading)
    controller = ScriptedController(spec, tuple(env.goal_xy), traits,
                                    np.random.default_rng(ctl_seed),
                                    start_xy=(obs.position[0], obs.position[1]))
    if traj_id is None:
        traj_id = f"human-{player_id}-g{goal_index}-s{seed}"
    traj = collect_trajectory(env, controller, traj_id, "human", player_id)
    traj.meta["traits"] = {
        "waypoint_noise": traits.waypoint_noise,
        "pause_prob": traits.pause_prob,
        "overshoot_prob": traits.overshoot_prob,
        "speed_jitter": traits.speed_jitter,
    }
    traj.meta["seed"] = seed
    return traj
