"""Deterministic navigation environment: grid world with continuous poses,
spawn island, 16 goal locations, shaped reward, and a column raycaster."""

from .mapspec import (
    MapSpec,
    MapError,
    CELL_VOID,
    CELL_WALK,
    CELL_OBSTACLE,
    CELL_ISLAND,
    CELL_CONNECTOR,
    default_map,
    load_map,
    save_map,
    parse_map_text,
    map_to_text,
)
from .env import (
    Action,
    AgentPose,
    StepOutcome,
    Observation,
    NavEnv,
    EpisodeDone,
    N_ACTIONS,
)
from .raycast import (
    cast_rays,
    column_geometry,
    depth_buffer,
    depth_buffers,
    render_frame,
)

__all__ = [
    "MapSpec",
    "MapError",
    "CELL_VOID",
    "CELL_WALK",
    "CELL_OBSTACLE",
    "CELL_ISLAND",
    "CELL_CONNECTOR",
    "default_map",
    "load_map",
    "save_map",
    "parse_map_text",
    "map_to_text",
    "Action",
    "AgentPose",
    "StepOutcome",
    "Observation",
    "NavEnv",
    "EpisodeDone",
    "N_ACTIONS",
    "cast_rays",
    "column_geometry",
    "depth_buffer",
    "depth_buffers",
    "render_frame",
]
