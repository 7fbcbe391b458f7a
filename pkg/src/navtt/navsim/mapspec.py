"""Map definition, text serialization, and the default 500x320 m world.

Grid cells are indexed [row][col]; world coordinates put x along columns
and y along rows (y grows downward, matching image rows), so cell (r, c)
spans x in [c, c+1)*cell_size and y in [r, r+1)*cell_size. Out-of-grid
space behaves like void (agents fall and die there).
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

CELL_VOID = 0
CELL_WALK = 1
CELL_OBSTACLE = 2
CELL_ISLAND = 3
CELL_CONNECTOR = 4

_CHAR_TO_CELL = {"~": CELL_VOID, ".": CELL_WALK, "#": CELL_OBSTACLE,
                 "I": CELL_ISLAND, "C": CELL_CONNECTOR}
_CELL_TO_CHAR = {v: k for k, v in _CHAR_TO_CELL.items()}

WALKABLE = frozenset({CELL_WALK, CELL_ISLAND, CELL_CONNECTOR})
# island + connector cells are the pre-landing zone dropped by trajectory trimming
ISLAND_LIKE = frozenset({CELL_ISLAND, CELL_CONNECTOR})

N_GOALS = 16
N_SPAWNS = 26


class MapError(ValueError):
    """Raised for malformed or inconsistent map definitions."""


@dataclass
class MapSpec:
    grid: np.ndarray                      # (H, W) int8 cell codes
    cell_size: float                      # meters per cell
    goal_locations: list                  # 16 (x, y) world-space points
    spawn_points: list                    # 26 (x, y, island_flag) entries
    goal_radius: float                    # meters
    elevations: np.ndarray = None         # (H, W) float, default zeros
    name: str = "map"

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.int8)
        if self.elevations is None:
            self.elevations = np.zeros_like(self.grid, dtype=np.float64)

    @property
    def height(self):
        return self.grid.shape[0]

    @property
    def width(self):
        return self.grid.shape[1]

    @property
    def bounds(self):
        """World rectangle (x0, y0, x1, y1)."""
        return (0.0, 0.0, self.width * self.cell_size, self.height * self.cell_size)

    def cell_at(self, x, y):
        """Cell code at a world position; out-of-grid counts as void."""
        c = int(np.floor(x / self.cell_size))
        r = int(np.floor(y / self.cell_size))
        if 0 <= r < self.height and 0 <= c < self.width:
            return int(self.grid[r, c])
        return CELL_VOID

    def elevation_at(self, x, y):
        c = int(np.floor(x / self.cell_size))
        r = int(np.floor(y / self.cell_size))
        if 0 <= r < self.height and 0 <= c < self.width:
            return float(self.elevations[r, c])
        return 0.0

    def is_walkable(self, x, y):
        return self.cell_at(x, y) in WALKABLE

    def is_island_like(self, x, y):
        return self.cell_at(x, y) in ISLAND_LIKE

    def cell_center(self, r, c):
        return ((c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size)

    def solid_mask(self):
        """Boolean (H, W): cells that block rays and movement."""
        return self.grid == CELL_OBSTACLE

    def walkable_mask(self):
        return np.isin(self.grid, list(WALKABLE))

    def validate(self):
        """Checks the structural invariants; raises MapError on violation."""
        if len(self.goal_locations) != N_GOALS:
            raise MapError(f"expected {N_GOALS} goals, got {len(self.goal_locations)}")
        if len(self.spawn_points) != N_SPAWNS:
            raise MapError(f"expected {N_SPAWNS} spawn points, got {len(self.spawn_points)}")
        for gx, gy in self.goal_locations:
            if not self.is_walkable(gx, gy):
                raise MapError(f"goal at ({gx}, {gy}) is not on a walkable cell")
        island_flags = [bool(flag) for _, _, flag in self.spawn_points]
        if not any(island_flags):
            raise MapError("no spawn point is flagged as island")
        for x, y, flag in self.spawn_points:
            if not self.is_walkable(x, y):
                raise MapError(f"spawn at ({x}, {y}) is not on a walkable cell")
            if bool(flag) != self.is_island_like(x, y):
                raise MapError(
                    f"spawn at ({x}, {y}) island flag {flag} does not match its cell"
                )
        self._validate_reachability()
        return self

    def _validate_reachability(self):
        dist = self.walk_distances(self.goal_locations[0])
        walk = self.walkable_mask()
        # connectivity is symmetric, so one BFS covering all goals and spawns
        # proves every goal reachable from every spawn
        for gx, gy in self.goal_locations:
            r, c = int(gy / self.cell_size), int(gx / self.cell_size)
            if not np.isfinite(dist[r, c]):
                raise MapError(f"goal at ({gx}, {gy}) unreachable")
        for x, y, _ in self.spawn_points:
            r, c = int(y / self.cell_size), int(x / self.cell_size)
            if not walk[r, c] or not np.isfinite(dist[r, c]):
                raise MapError(f"spawn at ({x}, {y}) disconnected from goals")

    def walk_distances(self, origin_xy):
        """BFS distance (in cells) over walkable cells from a world point."""
        walk = self.walkable_mask()
        dist = np.full(self.grid.shape, np.inf)
        c0 = int(origin_xy[0] / self.cell_size)
        r0 = int(origin_xy[1] / self.cell_size)
        if not walk[r0, c0]:
            return dist
        dist[r0, c0] = 0.0
        queue = deque([(r0, c0)])
        h, w = self.grid.shape
        while queue:
            r, c = queue.popleft()
            d = dist[r, c] + 1.0
            for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= rr < h and 0 <= cc < w and walk[rr, cc] and d < dist[rr, cc]:
                    dist[rr, cc] = d
                    queue.append((rr, cc))
        return dist


def map_to_text(spec):
    lines = [f"navmap 1 {spec.name}"]
    lines.append(f"cell_size {spec.cell_size!r}")
    lines.append(f"goal_radius {spec.goal_radius!r}")
    for gx, gy in spec.goal_locations:
        lines.append(f"goal {gx!r} {gy!r}")
    for x, y, flag in spec.spawn_points:
        lines.append(f"spawn {x!r} {y!r} {'island' if flag else 'main'}")
    lines.append(f"grid {spec.width} {spec.height}")
    for row in spec.grid:
        lines.append("".join(_CELL_TO_CHAR[int(v)] for v in row))
    return "\n".join(lines) + "\n"


def parse_map_text(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("navmap 1"):
        raise MapError("not a navmap v1 file")
    name = lines[0].split(maxsplit=2)[2] if len(lines[0].split()) > 2 else "map"
    cell_size = goal_radius = None
    goals, spawns = [], []
    grid_rows = []
    expect = None
    for ln in lines[1:]:
        if expect is not None:
            grid_rows.append(ln)
            continue
        parts = ln.split()
        if parts[0] == "cell_size":
            cell_size = float(parts[1])
        elif parts[0] == "goal_radius":
            goal_radius = float(parts[1])
        elif parts[0] == "goal":
            goals.append((float(parts[1]), float(parts[2])))
        elif parts[0] == "spawn":
            spawns.append((float(parts[1]), float(parts[2]), parts[3] == "island"))
        elif parts[0] == "grid":
            expect = (int(parts[1]), int(parts[2]))
        else:
            raise MapError(f"unknown header line: {ln!r}")
    if cell_size is None or goal_radius is None or expect is None:
        raise MapError("missing cell_size, goal_radius, or grid header")
    w, h = expect
    if len(grid_rows) != h or any(len(r) != w for r in grid_rows):
        raise MapError(f"grid block does not match declared size {w}x{h}")
    try:
        grid = np.array(
            [[_CHAR_TO_CELL[ch] for ch in row] for row in grid_rows], dtype=np.int8
        )
    except KeyError as exc:
        raise MapError(f"unknown cell code {exc.args[0]!r}") from None
    return MapSpec(grid, cell_size, goals, spawns, goal_radius, name=name)


def load_map(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_map_text(fh.read()).validate()


def save_map(spec, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(map_to_text(spec))


# ---------------------------------------------------------------------------
# default world: 50x32 cells at 10 m/cell -> 500x320 m, matching the target
# aspect ratio. The spawn island hangs in a void pocket at the bottom,
# linked to the main map by three connector cells.

_DEFAULT_ROWS = [
    "..................................................",
    "....####......####......####......####......####..",
    "....####......####......####......####......####..",
    "....####......####......####......####......####..",
    "..................................................",
    "..................................................",
    "..##......####......####......####......####......",
    "..##......####......####......####......####......",
    "..##......####......####......####......####......",
    "..................................................",
    "..................................................",
    "....####......####......####......####......####..",
    "....####......####......####......####......####..",
    "....####......####......####......####......####..",
    "..................................................",
    "..................................................",
    "..##......####......####......####......####......",
    "..##......####......####......####......####......",
    "..##......####......####......####......####......",
    "..................................................",
    "..................................................",
    "....####......####..........####........####......",
    "....####......####..........####........####......",
    "..................................................",
    "..................................................",
    "..................................................",
    "~~~~~~~..C.C.C.~~~~~~~............................",
    "~~~~~~~.IIIIII.~~~~~~~...####......####...........",
    "~~~~~~~.IIIIII.~~~~~~~...####......####...........",
    "~~~~~~~.IIIIII.~~~~~~~...####......####...........",
    "~~~~~~~.IIIIII.~~~~~~~............................",
    "~~~~~~~~~~~~~~~~~~~~~~............................",
]

_DEFAULT_GOAL_CELLS = [
    (0, 2), (0, 24), (0, 47), (4, 12), (5, 36), (7, 7),
    (9, 20), (9, 44), (12, 2), (14, 30), (15, 10), (17, 48),
    (19, 21), (20, 41), (23, 6), (24, 33),
]

_DEFAULT_MAIN_SPAWN_CELLS = [
    (0, 10), (0, 32), (2, 21), (4, 2), (4, 42), (6, 28),
    (8, 16), (9, 9), (10, 38), (12, 30), (13, 42), (14, 5),
    (15, 18), (16, 34), (18, 9), (19, 28), (20, 47), (22, 2),
    (23, 23), (25, 40),
]

_DEFAULT_ISLAND_SPAWN_CELLS = [
    (27, 9), (27, 12), (28, 10), (29, 9), (29, 13), (30, 11),
]


def default_map(cell_size=10.0, goal_radius=None):
    """The built-in 500x320 m world with 16 goals and 26 spawn points."""
    grid = np.array(
        [[_CHAR_TO_CELL[ch] for ch in row] for row in _DEFAULT_ROWS], dtype=np.int8
    )
    if goal_radius is None:
        goal_radius = 2.0 * cell_size
    center = lambda rc: ((rc[1] + 0.5) * cell_size, (rc[0] + 0.5) * cell_size)
    goals = [center(rc) for rc in _DEFAULT_GOAL_CELLS]
    spawns = [center(rc) + (False,) for rc in _DEFAULT_MAIN_SPAWN_CELLS]
    spawns += [center(rc) + (True,) for rc in _DEFAULT_ISLAND_SPAWN_CELLS]
    spec = MapSpec(grid, cell_size, goals, spawns, goal_radius, name="default")
    return spec.validate()
