"""The four classifier input spaces: SYM, VIS, TD, and BC.

All encoders are pure and deterministic. No normalization or resizing
happens here; those are classifier-side transforms, so every encoding
stays bit-exact with respect to its trajectory.
"""

import warnings

import numpy as np

TD_WIDTH = 320
TD_HEIGHT = 200
TD_LINE = 255
TD_START = 128
TD_END = 200


class EncodingError(ValueError):
    pass


def _positions_of(trajectory):
    if hasattr(trajectory, "positions"):
        pos = trajectory.positions()
    else:
        pos = np.asarray(trajectory, dtype=np.float64)
        if pos.ndim == 1:
            pos = pos[None, :]
    if pos.size == 0:
        raise EncodingError("empty trajectory")
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise EncodingError(f"expected (T, 3) positions, got {pos.shape}")
    return pos


def encode_symbolic(trajectory):
    """SYM: (T, 3) array of raw world positions, row t = position at step t."""
    return _positions_of(trajectory).copy()


def _to_pixels(pos, bounds, width, height):
    x0, y0, x1, y1 = bounds
    nx = (pos[:, 0] - x0) / (x1 - x0)
    ny = (pos[:, 1] - y0) / (y1 - y0)
    if np.any((nx < 0) | (nx > 1) | (ny < 0) | (ny > 1)):
        warnings.warn("trajectory position outside map bounds; clamping")
        nx = np.clip(nx, 0.0, 1.0)
        ny = np.clip(ny, 0.0, 1.0)
    # round half up onto the pixel grid
    u = np.floor(nx * (width - 1) + 0.5).astype(np.int64)
    v = np.floor(ny * (height - 1) + 0.5).astype(np.int64)
    return u, v


def _draw_segment(img, u0, v0, u1, v1, value):
    n = int(max(abs(u1 - u0), abs(v1 - v0))) + 1
    us = np.floor(np.linspace(u0, u1, n) + 0.5).astype(np.int64)
    vs = np.floor(np.linspace(v0, v1, n) + 0.5).astype(np.int64)
    img[vs, us] = value


def encode_topdown(trajectory, bounds, width=TD_WIDTH, height=TD_HEIGHT):
    """TD: single top-down raster of the path.

    Visited positions are connected by line segments of intensity 255 on a
    zero background; the start pixel is then marked 128 and the end 200
    (a single-point trajectory therefore shows the end marker).
    """
    pos = _positions_of(trajectory)
    u, v = _to_pixels(pos, bounds, width, height)
    img = np.zeros((height, width), dtype=np.uint8)
    for i in range(len(u) - 1):
        _draw_segment(img, u[i], v[i], u[i + 1], v[i + 1], TD_LINE)
    if len(u) == 1:
        img[v[0], u[0]] = TD_LINE
    img[v[0], u[0]] = TD_START
    img[v[-1], u[-1]] = TD_END
    return img


def encode_barcode(frames):
    """BC: frame t averaged over its vertical axis becomes output row t.

    Output is (T, W): height equals frame count, width equals frame width
    (600 frames of 320x200 stack to a 320-wide, 600-tall bar code).
    Means are rounded half up to 8 bits.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise EncodingError(f"expected (T, H, W) frames, got {frames.shape}")
    means = frames.astype(np.float64).mean(axis=1)  # over the vertical axis
    return np.floor(means + 0.5).clip(0, 255).astype(np.uint8)


def barcode_from_trajectory(trajectory, spec, width=320, height=200):
    """Render each step's frame and stack the bar code in one pass."""
    from .navsim.raycast import render_frame

    rows = np.empty((len(trajectory.steps), width), dtype=np.uint8)
    goal = getattr(trajectory, "goal_xy", None)
    for t, step in enumerate(trajectory.steps):
        frame = render_frame(spec, step.pose, goal, width=width, height=height)
        rows[t] = encode_barcode(frame[None])[0]
    return rows


def prepare_visual(frames, stride=1):
    """VIS throughput control: keep every stride-th frame (stride=1 is all)."""
    if stride < 1:
        raise EncodingError(f"stride must be >= 1, got {stride}")
    frames = np.asarray(frames)
    return frames[::stride]


def render_frames(trajectory, spec, width=320, height=200, stride=1):
    """Materialize the VIS frame sequence for a trajectory."""
    from .navsim.raycast import render_frame

    goal = getattr(trajectory, "goal_xy", None)
    steps = trajectory.steps[::stride]
    out = np.empty((len(steps), height, width), dtype=np.uint8)
    for i, step in enumerate(steps):
        out[i] = render_frame(spec, step.pose, goal, width=width, height=height)
    return out
