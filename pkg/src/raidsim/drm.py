"""Deception reasoning: spot feints by scoring intent hypotheses.

For every red team and objective we weigh three generative stories against
the observed approach/fire/withdraw profile: a committed attack, a
demonstration (threaten, token fire, pull back), and plain repositioning.
Demonstration posteriors are tilted by value-to-red over cost-to-red, and an
alert fires only when the movement prediction puts the red main effort on a
different axis than the demonstrated one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import DrmConfig, TICKS_PER_MINUTE
from .history import TeamHistory
from .world import Position, TerrainGrid


class InsufficientHistory(ValueError):
    pass


@dataclass(frozen=True)
class FeintAlert:
    tick: int
    zone: int                     # apparent threat location (objective cell)
    implicated: tuple[str, ...]
    confidence: float
    rationale: str                # approach_then_withdraw | uncommitted_demonstration

    def to_payload(self) -> dict:
        return {
            "label": "feint", "tick": self.tick, "zone": self.zone,
            "teams": list(self.implicated), "confidence": self.confidence,
            "rationale": self.rationale, "source": "drm",
        }


def _logistic(x: float, k: float) -> float:
    if x * k > 40:
        return 1.0
    if x * k < -40:
        return 0.0
    return 1.0 / (1.0 + math.exp(-k * x))


@dataclass
class _Profile:
    d_min: float
    approach: float
    withdraw_after: float
    fire_minutes_near: float
    casualties_before_withdraw: int
    exposure_minutes: float


def _objective_profile(history: TeamHistory, team_id: str, obj_pos: Position,
                       end_minute: int, cfg: DrmConfig) -> _Profile:
    d = []
    for m in range(0, end_minute + 1):
        px, py = history.sample(m).positions[team_id]
        d.append(math.hypot(px - obj_pos.x_m, py - obj_pos.y_m))
    d_min = min(d)
    m_min = d.index(d_min)
    approach = max(d[m] for m in range(0, m_min + 1)) - d_min
    horizon = min(end_minute, m_min + int(cfg.withdraw_window_min))
    withdraw_after = max((d[m] - d_min for m in range(m_min, horizon + 1)), default=0.0)
    near_fire = 0.0
    exposure = 0.0
    for m in range(1, end_minute + 1):
        if d[m] <= cfg.threat_range_m + 150.0:
            shots = history.fired.get(m, {}).get(team_id, 0)
            near_fire += 1.0 if shots > 0 else 0.0
            exposure += 1.0
    s0 = history.sample(0).strengths.get(team_id, 0)
    s_min = history.sample(m_min).strengths.get(team_id, s0)
    return _Profile(d_min, approach, withdraw_after, near_fire,
                    s0 - s_min, exposure)


def score_intents(history: TeamHistory, team_id: str, objectives: tuple[int, ...],
                  terrain: TerrainGrid, end_minute: int | None = None,
                  blue_draw: dict[int, float] | None = None,
                  config: DrmConfig | None = None) -> dict[tuple[str, int | None], float]:
    """Posterior over {committed_attack(o), demonstration(o), reposition}."""
    cfg = config or DrmConfig()
    end_minute = history.last_minute if end_minute is None else end_minute
    if end_minute < cfg.min_history_min:
        raise InsufficientHistory(
            f"need {cfg.min_history_min} minutes of history, have {end_minute}")
    if team_id not in history.sides:
        raise KeyError(team_id)
    n_obj = max(1, len(objectives))
    scores: dict[tuple[str, int | None], float] = {}
    lo_clip, hi_clip = cfg.value_cost_clip
    for obj in objectives:
        pos = terrain.cell_center(obj)
        p = _objective_profile(history, team_id, pos, end_minute, cfg)
        reached = _logistic(cfg.threat_range_m - p.d_min, 0.02)
        l_committed = (
            _logistic(p.approach - 150.0, 0.02)
            * (1.0 - _logistic(p.withdraw_after - 200.0, 0.03))
            * (0.3 + 0.7 * reached)
        )
        token_fire = 1.0 - _logistic(p.fire_minutes_near - cfg.token_fire_minutes, 1.5)
        intact = 1.0 - _logistic(p.casualties_before_withdraw - 1.5, 2.0)
        l_demo = (
            reached
            * _logistic(p.approach - 150.0, 0.02)
            * _logistic(p.withdraw_after - cfg.withdraw_m, 0.03)
            * token_fire
            * intact
        )
        value = 1.0 if blue_draw is None else max(blue_draw.get(obj, 0.0), 0.25)
        cost = max(0.25, p.exposure_minutes / 10.0)
        ratio = min(hi_clip, max(lo_clip, value / cost))
        scores[("committed_attack", obj)] = 0.4 / n_obj * l_committed
        scores[("demonstration", obj)] = 0.2 / n_obj * l_demo * ratio
    scores[("reposition", None)] = 0.4 * 0.25
    total = sum(scores.values())
    return {k: v / total for k, v in scores.items()}


@dataclass
class FeintDetector:
    """Latched feint detection over a running game."""

    terrain: TerrainGrid
    objectives: tuple[int, ...]
    graph: object
    config: DrmConfig = field(default_factory=DrmConfig)
    latched: dict[int, float] = field(default_factory=dict)  # objective -> confidence

    def _blue_draw(self, prediction) -> dict[int, float] | None:
        """Blue strength whose recommended plan closes on each objective."""
        if prediction is None:
            return None
        from .arm_move import zone_distances

        draw: dict[int, float] = {}
        for obj in self.objectives:
            zone = self.graph.zone_of_cell(obj)
            dist = zone_distances(self.graph, zone, "fireteam")
            pulled = 0.0
            for tid, path in prediction.blue_recommendation.steps.items():
                d0 = dist.get(path[0][0], math.inf)
                d1 = dist.get(path[-1][0], math.inf)
                if d1 < d0 - 1e-9:
                    pulled += 1.0
            draw[obj] = pulled
        return draw

    def _main_effort(self, prediction, exclude: set[str]) -> int | None:
        """Objective drawing the most predicted red strength, ignoring some teams."""
        if prediction is None:
            return None
        from .arm_move import zone_distances

        best_obj, best_mass = None, -1.0
        for obj in self.objectives:
            zone = self.graph.zone_of_cell(obj)
            dist = zone_distances(self.graph, zone, "fireteam")
            mass = 0.0
            for tid, path in prediction.red_plan.steps.items():
                if tid in exclude:
                    continue
                d_end = dist.get(path[-1][0], math.inf)
                d_start = dist.get(path[0][0], math.inf)
                if d_end <= 60.0 or d_end < d_start - 1e-9:
                    mass += 1.0
            if mass > best_mass:
                best_obj, best_mass = obj, mass
        return best_obj if best_mass > 0.0 else None

    def detect(self, state, history: TeamHistory, prediction) -> list[FeintAlert]:
        cfg = self.config
        end_minute = history.last_minute
        if end_minute < cfg.min_history_min or not self.objectives:
            return []
        blue_draw = self._blue_draw(prediction)
        demo_by_obj: dict[int, list[tuple[str, float, float]]] = {}
        for tid in history.team_ids("red"):
            if history.sample(end_minute).strengths.get(tid, 0) <= 0:
                continue
            post = score_intents(history, tid, self.objectives, self.terrain,
                                 end_minute, blue_draw, cfg)
            for (label, obj), p in post.items():
                if label != "demonstration" or p < cfg.detection_threshold:
                    continue
                profile = _objective_profile(
                    history, tid, self.terrain.cell_center(obj), end_minute, cfg)
                demo_by_obj.setdefault(obj, []).append((tid, p, profile.withdraw_after))
        alerts: list[FeintAlert] = []
        for obj, entries in sorted(demo_by_obj.items()):
            implicated = tuple(sorted(t for t, _p, _w in entries))
            main = self._main_effort(prediction, exclude=set(implicated))
            if main is None or main == obj:
                continue
            confidence = sum(p for _t, p, _w in entries) / len(entries)
            if confidence <= self.latched.get(obj, 0.0) + 1e-9:
                continue
            self.latched[obj] = confidence
            withdrew = any(w >= cfg.withdraw_m for _t, _p, w in entries)
            alerts.append(FeintAlert(
                tick=state.tick if state is not None else end_minute * TICKS_PER_MINUTE,
                zone=obj,
                implicated=implicated,
                confidence=confidence,
                rationale="approach_then_withdraw" if withdrew else "uncommitted_demonstration",
            ))
        return alerts


def detect_feints(state, history: TeamHistory, prediction, objectives,
                  terrain: TerrainGrid, graph, detector: FeintDetector | None = None,
                  config: DrmConfig | None = None) -> list[FeintAlert]:
    det = detector or FeintDetector(terrain, tuple(objectives), graph,
                                    config or DrmConfig())
    return det.detect(state, history, prediction)
