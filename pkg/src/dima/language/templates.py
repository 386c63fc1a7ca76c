"""Template engine: turn a scene into question/answer word sequences.

Answers are computed from scene geometry, never sampled, so a QA pair is a
deterministic function of (scene, category, which question the rng picked).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dima.errors import ConfigError, NotFoundError
from dima.language.vocab import bucket_token, template_text
from dima.world import Scene, agent_crosses_plan, behavior_label, ego_behavior

CATEGORIES = ("perception", "prediction", "planning", "behavior")
EDIT_CATEGORIES = ("edit-add", "edit-remove")

_NEAR_RADIUS = 12.0
_AHEAD_RADIUS = 15.0
_CROSS_MARGIN = 0.5

_FUTURE_PHRASE = {
    "stopped": "stay stopped",
    "going straight": "keep going straight",
    "steering left": "steer left",
    "steering right": "steer right",
    "reversing": "reverse",
}
_ACTION_BY_KIND = {
    "straight": "keep going straight",
    "turn-left": "steer left",
    "turn-right": "steer right",
    "three-point-turn": "turn around",
    "resume-from-stop": "start moving",
    "overtake": "pass the vehicle ahead",
}


@dataclass(frozen=True)
class QaPair:
    category: str
    question: tuple[str, ...]
    answer: tuple[str, ...]


def _parse_templates(text: str) -> dict[str, list[tuple[list[str], list[list[str]]]]]:
    """section -> list of (question words, list of answer word patterns)."""
    out: dict[str, list[tuple[list[str], list[list[str]]]]] = {}
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            out[section] = []
            continue
        tag, *words = line.split()
        if section is None or tag not in ("Q", "A") or not words:
            raise ConfigError(f"malformed template line: {raw!r}")
        if tag == "Q":
            out[section].append((words, []))
        else:
            if not out[section]:
                raise ConfigError(f"answer before any question: {raw!r}")
            out[section][-1][1].append(words)
    return out


_TEMPLATES = _parse_templates(template_text())


def _fill(pattern: list[str], slots: dict[str, str]) -> tuple[str, ...]:
    out: list[str] = []
    for tok in pattern:
        if tok.startswith("{") and tok.endswith("}"):
            name = tok[1:-1]
            if name not in slots:
                raise NotFoundError(f"no filler for slot {name}")
            out.extend(slots[name].split())
        else:
            out.append(tok)
    return tuple(out)


def _agent_distance(agent) -> float:
    return float(np.linalg.norm(agent.trajectory[0]))


def _is_ahead(agent) -> bool:
    x, y = agent.trajectory[0]
    return x >= abs(y) and _agent_distance(agent) <= _AHEAD_RADIUS


def _agent_motion(agent, dt: float) -> str:
    traj = np.asarray(agent.trajectory)
    speeds = np.linalg.norm(np.diff(traj, axis=0), axis=1) / dt
    if agent.speed < 1e-9 and not speeds.size:
        return "stopped"
    return behavior_label(traj, speeds if speeds.size else [agent.speed]).motion


def qa_for(scene: Scene, category: str, rng: np.random.Generator) -> QaPair:
    """Build one QA pair; the rng only picks among a category's questions."""
    if category not in CATEGORIES:
        raise ConfigError(f"unknown qa category {category!r}")
    entries = _TEMPLATES[category]
    q_idx = int(rng.integers(len(entries)))
    question, answers = entries[q_idx]

    if category == "perception":
        if q_idx == 0:
            n = sum(_agent_distance(a) <= _NEAR_RADIUS for a in scene.agents)
            return QaPair(category, tuple(question),
                          _fill(answers[0], {"count": str(min(n, 9))}))
        ahead = any(_is_ahead(a) for a in scene.agents)
        return QaPair(category, tuple(question), _fill(answers[0 if ahead else 1], {}))

    if category == "prediction":
        if q_idx == 0:
            if not scene.agents:
                return QaPair(category, tuple(question), _fill(answers[1], {}))
            nearest = min(scene.agents, key=_agent_distance)
            phrase = _FUTURE_PHRASE[_agent_motion(nearest, scene.dt)]
            return QaPair(category, tuple(question), _fill(answers[0], {"future": phrase}))
        crossing = any(agent_crosses_plan(scene, a, scene.ego.gt_trajectory, _CROSS_MARGIN)
                       for a in scene.agents)
        return QaPair(category, tuple(question), _fill(answers[0 if crossing else 1], {}))

    if category == "planning":
        if q_idx == 0:
            final = scene.ego.gt_trajectory[-1]
            return QaPair(category, tuple(question),
                          _fill(answers[0], {"bx": bucket_token(final[0]),
                                             "by": bucket_token(final[1])}))
        label = ego_behavior(scene)
        action = "stay stopped" if label.motion == "stopped" else _ACTION_BY_KIND[scene.kind]
        return QaPair(category, tuple(question), _fill(answers[0], {"action": action}))

    label = ego_behavior(scene)
    if label.motion == "stopped":
        return QaPair(category, tuple(question), _fill(answers[1], {}))
    return QaPair(category, tuple(question),
                  _fill(answers[0], {"motion": label.motion, "speed": label.speed}))


def edit_qa_pair(kind: str, category: str, side: str, affects: bool) -> QaPair:
    """QA pair for a scene edit; ``affects`` comes from the corridor check."""
    if kind not in EDIT_CATEGORIES:
        raise ConfigError(f"unknown edit kind {kind!r}")
    question, answers = _TEMPLATES[kind][0]
    slots = {"category": category, "side": side}
    return QaPair(kind, _fill(question, slots), _fill(answers[0 if affects else 1], slots))
