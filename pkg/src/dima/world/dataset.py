"""Line-delimited scene files.

One JSON object per line with a fixed key order and floats printed at 9
significant digits.  Scene constructors quantize to the same precision, so
save -> load -> save is byte-identical and load(save(scenes)) compares equal
at zero tolerance.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from dima.errors import ConfigError, DatasetParseError, DimaError
from dima.world.behavior import ego_behavior
from dima.world.generate import KINDS
from dima.world.types import Agent, EgoState, MapPolyline, Scene


def _fmt(value) -> str:
    if isinstance(value, bool):
        raise DimaError("no boolean fields in scene records")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ",".join(_fmt(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{_fmt(v)}" for k, v in value.items()) + "}"
    raise DimaError(f"unserializable value {value!r}")


def _scene_record(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "kind": scene.kind,
        "horizon": scene.horizon,
        "dt": scene.dt,
        "ego": {
            "box": [scene.ego.length, scene.ego.width],
            "speeds": scene.ego.speeds,
            "gt_traj": scene.ego.gt_trajectory,
        },
        "agents": [
            {
                "id": a.id,
                "category": a.category,
                "box": [a.length, a.width],
                "heading": a.heading,
                "speed": a.speed,
                "traj": a.trajectory,
            }
            for a in scene.agents
        ],
        "map": [
            {"id": m.id, "kind": m.kind, "points": m.points}
            for m in scene.map_lines
        ],
    }


def save_dataset(scenes, path) -> None:
    lines = [_fmt(_scene_record(s)) for s in scenes]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _parse_scene(obj: dict, lineno: int) -> Scene:
    try:
        kind = obj["kind"]
        if kind not in KINDS:
            raise DatasetParseError(lineno, f"unknown scenario kind {kind!r}")
        ego = obj["ego"]
        scene = Scene(
            scene_id=str(obj["scene_id"]),
            kind=kind,
            ego=EgoState(
                length=float(ego["box"][0]),
                width=float(ego["box"][1]),
                speeds=np.asarray(ego["speeds"], dtype=np.float64),
                gt_trajectory=np.asarray(ego["gt_traj"], dtype=np.float64),
            ),
            agents=[
                Agent(
                    id=int(a["id"]),
                    category=str(a["category"]),
                    length=float(a["box"][0]),
                    width=float(a["box"][1]),
                    heading=float(a["heading"]),
                    speed=float(a["speed"]),
                    trajectory=np.asarray(a["traj"], dtype=np.float64),
                )
                for a in obj["agents"]
            ],
            map_lines=[
                MapPolyline(
                    id=int(m["id"]),
                    kind=str(m["kind"]),
                    points=np.asarray(m["points"], dtype=np.float64),
                )
                for m in obj["map"]
            ],
            horizon=int(obj["horizon"]),
            dt=float(obj["dt"]),
        )
    except DatasetParseError:
        raise
    except (KeyError, IndexError, TypeError, ValueError, DimaError) as exc:
        raise DatasetParseError(lineno, str(exc)) from exc
    return scene


def load_dataset(path) -> list[Scene]:
    scenes = []
    seen_ids = set()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(lineno, f"bad JSON: {exc.msg}") from exc
        scene = _parse_scene(obj, lineno)
        if scene.scene_id in seen_ids:
            raise DatasetParseError(lineno, f"duplicate scene_id {scene.scene_id!r}")
        seen_ids.add(scene.scene_id)
        scenes.append(scene)
    return scenes


def select_split(scenes, split: str) -> list[Scene]:
    """``full``, ``targeted`` (turning maneuvers), or ``longtail:<kind>``."""
    if split == "full":
        return list(scenes)
    if split == "targeted":
        out = []
        for s in scenes:
            if s.kind == "three-point-turn":
                out.append(s)
            elif ego_behavior(s).motion in ("steering left", "steering right"):
                out.append(s)
        return out
    if split.startswith("longtail:"):
        kind = split.split(":", 1)[1]
        if kind not in KINDS:
            raise ConfigError(f"unknown scenario kind in split {split!r}")
        return [s for s in scenes if s.kind == kind]
    raise ConfigError(f"unknown split {split!r}")
