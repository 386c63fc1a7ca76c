"""Synthetic driving world: scenes, rasterization, labels, dataset files."""

from dima.world.geometry import (
    OrientedBox,
    boxes_intersect,
    point_box_distance,
    polyline_distance,
)
from dima.world.types import Agent, EgoState, MapPolyline, Scene, agent_position_at, q9
from dima.world.behavior import BehaviorLabel, behavior_label, ego_behavior
from dima.world.corridor import agent_boxes_at_steps, agent_crosses_plan, sweep_boxes
from dima.world.raster import GridSpec, occupied_cells, rasterize_bev
from dima.world.generate import KINDS, advance, generate_scene
from dima.world.dataset import load_dataset, save_dataset, select_split

__all__ = [
    "Agent",
    "BehaviorLabel",
    "EgoState",
    "GridSpec",
    "KINDS",
    "MapPolyline",
    "OrientedBox",
    "Scene",
    "advance",
    "agent_boxes_at_steps",
    "agent_crosses_plan",
    "agent_position_at",
    "sweep_boxes",
    "behavior_label",
    "boxes_intersect",
    "ego_behavior",
    "generate_scene",
    "load_dataset",
    "occupied_cells",
    "point_box_distance",
    "polyline_distance",
    "q9",
    "rasterize_bev",
    "save_dataset",
    "select_split",
]
