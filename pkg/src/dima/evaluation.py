"""Open-loop planning metrics and fused two-branch inference.

Two reporting protocols coexist: the legacy one averages errors cumulatively
up to each horizon and checks collisions on a coarse grid; the standardized
one reads the error at the horizon timestep and uses a fine grid.  Both are
axes of one EvalProtocol so they can be mixed deliberately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dima.errors import ConfigError, DimensionError
from dima.encoder import encode
from dima.language import adapt, build_vocab, ego_decode, ego_feature, scene_hidden
from dima.nn import ModelDims
from dima.planner import decode_waypoints, plan, plan_features
from dima.world import (
    GridSpec,
    OrientedBox,
    Scene,
    agent_position_at,
    occupied_cells,
)

HORIZON = 6

AT_TIMESTEP = "at-timestep"
CUMULATIVE = "cumulative-average"


@dataclass(frozen=True)
class EvalProtocol:
    timestep_mode: str
    collision_resolution: float
    name: str = "custom"

    def __post_init__(self):
        if self.timestep_mode not in (AT_TIMESTEP, CUMULATIVE):
            raise ConfigError(f"unknown timestep mode {self.timestep_mode!r}")
        if self.collision_resolution <= 0:
            raise ConfigError("collision resolution must be positive")


VAD_PROTOCOL = EvalProtocol(CUMULATIVE, collision_resolution=0.5, name="vad")
STANDARDIZED_PROTOCOL = EvalProtocol(AT_TIMESTEP, collision_resolution=0.1,
                                     name="standardized")
PROTOCOLS = {"vad": VAD_PROTOCOL, "standardized": STANDARDIZED_PROTOCOL}


def waypoint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != (HORIZON, 2) or gt.shape != (HORIZON, 2):
        raise DimensionError(f"expected ({HORIZON}, 2) trajectories")
    return np.linalg.norm(pred - gt, axis=1)


def l2_profile(pred: np.ndarray, gt: np.ndarray,
               protocol: EvalProtocol) -> dict[str, float]:
    """Reported 1s/2s/3s values plus the two aggregates, per protocol."""
    e = waypoint_errors(pred, gt)
    if protocol.timestep_mode == AT_TIMESTEP:
        reported = [e[1], e[3], e[5]]
    else:
        reported = [e[:2].mean(), e[:4].mean(), e[:6].mean()]
    return {
        "l2_1s": float(reported[0]),
        "l2_2s": float(reported[1]),
        "l2_3s": float(reported[2]),
        "ave_123": float(np.mean(reported)),
        "ave_all": float(e.mean()),
    }


def _heading_along(pred: np.ndarray) -> np.ndarray:
    """Heading at each waypoint from finite differences; starts facing +x."""
    points = np.vstack([[0.0, 0.0], pred])
    headings = np.zeros(len(pred))
    heading = 0.0
    for i in range(1, len(points)):
        step = points[i] - points[i - 1]
        if np.linalg.norm(step) > 1e-9:
            heading = math.atan2(step[1], step[0])
        headings[i - 1] = heading
    return headings


def collision_flag(pred: np.ndarray, scene: Scene, protocol: EvalProtocol) -> bool:
    """Discretized footprint overlap at any shared timestep."""
    pred = np.asarray(pred, dtype=np.float64)
    headings = _heading_along(pred)
    res = protocol.collision_resolution
    for i in range(HORIZON):
        t = (i + 1) * scene.dt
        ego = OrientedBox(float(pred[i][0]), float(pred[i][1]), float(headings[i]),
                          scene.ego.length, scene.ego.width)
        ego_cells = occupied_cells(ego, res)
        if not len(ego_cells):
            continue
        for agent in scene.agents:
            p = agent_position_at(agent, t, scene.dt)
            box = OrientedBox(float(p[0]), float(p[1]), agent.heading,
                              agent.length, agent.width)
            if np.intersect1d(ego_cells, occupied_cells(box, res)).size:
                return True
    return False


@dataclass
class MetricsReport:
    split: str
    protocol: str
    count: int
    l2_1s: float
    l2_2s: float
    l2_3s: float
    ave_123: float
    ave_all: float
    collision_rate: float                      # percent
    errors: np.ndarray = field(repr=False)     # (count, 6) raw waypoint errors
    collisions: np.ndarray = field(repr=False)

    CSV_HEADER = "split,protocol,count,l2_1s,l2_2s,l2_3s,ave_123,ave_all,collision_rate"

    def csv_row(self) -> str:
        cells = [self.split, self.protocol, str(self.count)]
        for value in (self.l2_1s, self.l2_2s, self.l2_3s, self.ave_123,
                      self.ave_all, self.collision_rate):
            cells.append(repr(float(value)))
        return ",".join(cells)

    def summary(self) -> str:
        if self.count == 0:
            return f"{self.split} [{self.protocol}]: empty split"
        return (f"{self.split} [{self.protocol}] n={self.count}  "
                f"L2 1s {self.l2_1s:.3f}  2s {self.l2_2s:.3f}  3s {self.l2_3s:.3f}  "
                f"Ave123 {self.ave_123:.3f}  AveAll {self.ave_all:.3f}  "
                f"Coll {self.collision_rate:.2f}%")


def evaluate(plan_fn, scenes: list[Scene], protocol: EvalProtocol,
             split: str = "full") -> MetricsReport:
    """Run ``plan_fn(scene) -> (6, 2) waypoints`` over scenes and aggregate."""
    if not scenes:
        nan = float("nan")
        return MetricsReport(split, protocol.name, 0, nan, nan, nan, nan, nan, nan,
                             errors=np.zeros((0, HORIZON)),
                             collisions=np.zeros(0, dtype=bool))
    rows = []
    profiles = []
    hits = []
    for scene in scenes:
        pred = np.asarray(plan_fn(scene), dtype=np.float64)
        rows.append(waypoint_errors(pred, scene.ego.gt_trajectory))
        profiles.append(l2_profile(pred, scene.ego.gt_trajectory, protocol))
        hits.append(collision_flag(pred, scene, protocol))
    errors = np.vstack(rows)
    hits = np.asarray(hits, dtype=bool)
    mean = {k: float(np.mean([p[k] for p in profiles]))
            for k in ("l2_1s", "l2_2s", "l2_3s", "ave_123", "ave_all")}
    return MetricsReport(split, protocol.name, len(scenes), mean["l2_1s"],
                         mean["l2_2s"], mean["l2_3s"], mean["ave_123"],
                         mean["ave_all"], float(hits.mean() * 100.0),
                         errors=errors, collisions=hits)


def make_planner(params, grid: GridSpec, dims: ModelDims):
    """Vision-only inference closure for ``evaluate``."""
    def plan_fn(scene: Scene) -> np.ndarray:
        toks = encode(scene, params, grid, dims)
        wps, _ = plan(toks, params, dims)
        return wps.data
    return plan_fn


def dual_inference(params, scene: Scene, grid: GridSpec, dims: ModelDims,
                   vocab=None) -> np.ndarray:
    """Fuse both branches' penultimate features and decode with both heads.

    Elementwise max of the planner feature and the projected LM ego feature
    feeds the planner output head and the LM ego head; the result is the mean
    of the two decoded trajectories.
    """
    import dima.numerics as nm

    if vocab is None:
        vocab = build_vocab()
    toks = encode(scene, params, grid, dims)
    vis = plan_features(toks, params, dims)
    adapted = adapt(toks, params, dims)
    hidden = scene_hidden(adapted, params, dims, vocab)
    llm = ego_feature(hidden, adapted, params, dims)
    if vis.shape != llm.shape:
        raise DimensionError(f"feature widths differ: {vis.shape} vs {llm.shape}")
    fused = nm.constant(np.maximum(vis.data, llm.data))
    from_planner = decode_waypoints(fused, params).data
    from_lm = ego_decode(fused, params).data
    return (from_planner + from_lm) / 2.0
