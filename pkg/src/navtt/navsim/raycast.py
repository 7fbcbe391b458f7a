"""Column raycaster: wall distances, grayscale frames, and depth buffers.

Rays are resolved against the obstacle grid with an analytic
grid-crossing sweep (exact DDA result, vectorized over rays): every
axis-boundary crossing along a ray is an arithmetic sequence in t, so the
first solid cell is the minimum t over crossings that enter solid cells.

Depth convention: floor and sky carry max-range depth (normalized 1.0);
only wall hits and the visible goal marker write closer values.
"""

import numpy as np

DEFAULT_FOV = np.pi / 2.0
DEFAULT_MAX_RANGE_CELLS = 64.0
WALL_SCALE = 2.0          # projection scale: walls span the frame at ~1 cell
GOAL_MARKER_SHADE = 240
GOAL_MARKER_RADIUS = 0.4  # cells
SKY_SHADE = 60
VOID_SHADE = 12


def _crossing_dists(pos, dirs, n_cross, axis, solid, max_range):
    """Min distance (cell units) to a solid cell entered via crossings of
    one axis family. pos: (R, 2) cell coords, dirs: (R, 2)."""
    h, w = solid.shape
    p = pos[:, axis]
    d = dirs[:, axis]
    q = pos[:, 1 - axis]
    e = dirs[:, 1 - axis]
    sgn = np.where(d >= 0.0, 1.0, -1.0)
    # first grid line ahead along this axis
    first = np.where(d >= 0.0, np.floor(p) + 1.0, np.ceil(p) - 1.0)
    k = np.arange(n_cross)
    lines = first[:, None] + sgn[:, None] * k[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (lines - p[:, None]) / d[:, None]
    t = np.where(np.abs(d)[:, None] < 1e-12, np.inf, t)
    t = np.where(t < 0.0, np.inf, t)
    # cell entered just past each crossing
    ahead = np.where(d[:, None] >= 0.0, lines, lines - 1.0)
    other = np.floor(q[:, None] + t * e[:, None])
    if axis == 0:  # crossing vertical lines: ahead is the column index
        cols, rows = ahead, other
    else:
        cols, rows = other, ahead
    finite = np.isfinite(t) & np.isfinite(cols) & np.isfinite(rows)
    ci = np.where(finite, cols, 0.0).astype(np.int64)
    ri = np.where(finite, rows, 0.0).astype(np.int64)
    inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w) & finite
    hit = np.zeros(t.shape, dtype=bool)
    hit[inside] = solid[ri[inside], ci[inside]]
    t = np.where(hit, t, np.inf)
    return t.min(axis=1)


def cast_rays(solid, origins, angles, max_range_cells=DEFAULT_MAX_RANGE_CELLS):
    """Ray distances (cell units, capped at max_range_cells) from origins
    (R, 2) in cell coordinates at the given angles (R,)."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    h, w = solid.shape
    nx = min(w + 2, int(max_range_cells) + 2)
    ny = min(h + 2, int(max_range_cells) + 2)
    dx = _crossing_dists(origins, dirs, nx, 0, solid, max_range_cells)
    dy = _crossing_dists(origins, dirs, ny, 1, solid, max_range_cells)
    return np.minimum(np.minimum(dx, dy), max_range_cells)


def column_geometry(n_cols, fov=DEFAULT_FOV):
    """Angular offsets of each pixel column on a flat projection plane."""
    focal = (n_cols / 2.0) / np.tan(fov / 2.0)
    u = np.arange(n_cols) + 0.5 - n_cols / 2.0
    return np.arctan2(u, focal), focal


def _column_depths(spec, positions, headings, n_cols, fov, max_range_cells):
    """Perpendicular wall depths (N, C) in cell units for a batch of poses."""
    offsets, _ = column_geometry(n_cols, fov)
    n = positions.shape[0]
    angles = (headings[:, None] + offsets[None, :]).reshape(-1)
    origins = np.repeat(positions / spec.cell_size, n_cols, axis=0)
    dist = cast_rays(spec.solid_mask(), origins, angles, max_range_cells)
    dist = dist.reshape(n, n_cols)
    return dist * np.cos(offsets)[None, :], dist


def _goal_columns(spec, positions, headings, goals_xy, n_cols, fov,
                  wall_z, max_range_cells):
    """Per-column goal-marker visibility: (visible mask, goal depth in cells)."""
    offsets, _ = column_geometry(n_cols, fov)
    rel = (goals_xy - positions) / spec.cell_size
    goal_dist = np.hypot(rel[:, 0], rel[:, 1])
    goal_angle = np.arctan2(rel[:, 1], rel[:, 0])
    col_angle = headings[:, None] + offsets[None, :]
    diff = np.angle(np.exp(1j * (col_angle - goal_angle[:, None])))
    half_width = np.arctan2(GOAL_MARKER_RADIUS, np.maximum(goal_dist, 1e-9))
    # visible where the column looks at the marker and no wall is closer
    wall_ray = wall_z / np.cos(offsets)[None, :]
    visible = (np.abs(diff) <= half_width[:, None]) & (goal_dist[:, None] < wall_ray + 1e-9)
    visible &= goal_dist[:, None] <= max_range_cells
    return visible, np.repeat(goal_dist[:, None], n_cols, axis=1)


def depth_buffers(spec, positions, headings, goals_xy=None, size=32,
                  fov=DEFAULT_FOV, max_range_cells=DEFAULT_MAX_RANGE_CELLS):
    """Normalized (N, size, size) depth buffers for a batch of poses."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    headings = np.atleast_1d(np.asarray(headings, dtype=np.float64))
    n = positions.shape[0]
    wall_z, ray_dist = _column_depths(spec, positions, headings, size, fov,
                                      max_range_cells)
    rows = np.arange(size, dtype=np.float64)[None, None, :]  # (1, 1, size)
    v_c = size / 2.0
    half = 0.5 * size * WALL_SCALE / np.maximum(wall_z, 1e-9)
    is_wall = (np.abs(rows - v_c) <= half[:, :, None]) & (ray_dist < max_range_cells)[:, :, None]
    depth = np.where(is_wall, (wall_z / max_range_cells)[:, :, None], 1.0)
    if goals_xy is not None:
        goals_xy = np.atleast_2d(np.asarray(goals_xy, dtype=np.float64))
        visible, goal_z = _goal_columns(spec, positions, headings, goals_xy,
                                        size, fov, wall_z, max_range_cells)
        ghalf = 0.25 * size * WALL_SCALE / np.maximum(goal_z, 1e-9)
        in_band = np.abs(rows - v_c) <= ghalf[:, :, None]
        gdepth = (goal_z / max_range_cells)[:, :, None]
        write = in_band & visible[:, :, None] & (gdepth < depth)
        depth = np.where(write, gdepth, depth)
    return np.clip(depth, 0.0, 1.0).transpose(0, 2, 1)  # (N, rows, cols)


def depth_buffer(spec, pose, goal_xy=None, size=32, fov=DEFAULT_FOV,
                 max_range_cells=DEFAULT_MAX_RANGE_CELLS):
    """Single-pose convenience wrapper around depth_buffers."""
    goals = None if goal_xy is None else np.asarray(goal_xy)[None, :]
    return depth_buffers(
        spec, np.asarray(pose.position[:2])[None, :], np.asarray([pose.heading]),
        goals, size=size, fov=fov, max_range_cells=max_range_cells,
    )[0]


def render_frame(spec, pose, goal_xy=None, width=320, height=200,
                 fov=DEFAULT_FOV, max_range_cells=DEFAULT_MAX_RANGE_CELLS):
    """Grayscale (height, width) uint8 frame from the pose.

    Walls brighten with proximity, the floor fades with distance and shows
    void pockets as near-black, the goal marker renders as a bright column
    band when visible. Deterministic given (map, pose, goal).
    """
    position = np.asarray(pose.position[:2], dtype=np.float64)[None, :]
    heading = np.asarray([pose.heading], dtype=np.float64)
    wall_z, ray_dist = _column_depths(spec, position, heading, width, fov,
                                      max_range_cells)
    wall_z, ray_dist = wall_z[0], ray_dist[0]
    offsets, _ = column_geometry(width, fov)

    v = np.arange(height, dtype=np.float64)[:, None]
    v_c = height / 2.0
    half = 0.5 * height * WALL_SCALE / np.maximum(wall_z, 1e-9)
    has_wall = ray_dist < max_range_cells

    frame = np.full((height, width), SKY_SHADE, dtype=np.float64)

    # floor: rows below the horizon, shaded by view depth, dark over void
    below = v >= v_c
    with np.errstate(divide="ignore"):
        floor_z = 0.5 * height * WALL_SCALE / np.maximum(v - v_c, 1e-9)
    floor_shade = 80.0 + 110.0 * np.clip(1.0 - floor_z / max_range_cells, 0.0, 1.0)
    floor_rows = np.where(below, floor_shade, frame[:, :1])
    frame = np.broadcast_to(floor_rows, (height, width)).copy()
    # world cell under each floor pixel (void pockets draw dark)
    ray_t = floor_z / np.cos(offsets)[None, :]
    px = position[0, 0] / spec.cell_size + np.cos(heading[0] + offsets)[None, :] * ray_t
    py = position[0, 1] / spec.cell_size + np.sin(heading[0] + offsets)[None, :] * ray_t
    ci = np.floor(px).astype(np.int64)
    ri = np.floor(py).astype(np.int64)
    inside = (ri >= 0) & (ri < spec.height) & (ci >= 0) & (ci < spec.width)
    void = np.full(ci.shape, True)
    void[inside] = spec.grid[ri[inside], ci[inside]] == 0  # CELL_VOID
    void_px = below & void & (floor_z < max_range_cells)
    frame[void_px] = VOID_SHADE

    # walls overwrite floor/sky inside their span
    span = (np.abs(v - v_c) <= half[None, :]) & has_wall[None, :]
    wall_shade = 40.0 + 215.0 * np.clip(1.0 - wall_z / max_range_cells, 0.0, 1.0)
    frame = np.where(span, wall_shade[None, :], frame)

    if goal_xy is not None:
        goals = np.asarray(goal_xy, dtype=np.float64)[None, :]
        visible, goal_z = _goal_columns(spec, position, heading, goals, width,
                                        fov, wall_z[None, :], max_range_cells)
        visible, goal_z = visible[0], goal_z[0]
        ghalf = 0.25 * height * WALL_SCALE / np.maximum(goal_z, 1e-9)
        band = (np.abs(v - v_c) <= ghalf[None, :]) & visible[None, :]
        frame = np.where(band, float(GOAL_MARKER_SHADE), frame)

    return np.clip(np.floor(frame + 0.5), 0, 255).astype(np.uint8)
