"""Scenario generation, scripted bots, and the paired-run experiment harness.

The harness replaces the human cells: a red bot pursues its mission with
optional scripted feints and emotions (logging ground truth for both), a
baseline blue bot drives straight at the mission, and an advised blue bot
follows the movement predictor's recommendations.  Paired runs play the
identical scenario and seed once with advisories and once without.
"""
from __future__ import annotations

import copy
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .arm_mind import MindTracker, rollout_ghosts
from .arm_move import CommanderGuidance, abstract_map, predict
from .config import EngineConfig, MindConfig, DrmConfig, SearchConfig, TICKS_PER_MINUTE
from .drm import FeintDetector
from .engine import (
    GameResult,
    Task,
    attack_target,
    defend_area,
    move_to,
    run_game,
    withdraw_to,
)
from .history import TeamHistory
from .metrics import (
    ERROR_OFFSETS_MIN,
    PairedRunResult,
    RunRecord,
    dead_reckoning_error,
    detection_latency,
    prediction_error,
    results_csv,
    score,
    summary_table,
)
from .replay import scenario_digest
from .world import (
    BUILDING,
    IntelMode,
    Mission,
    Position,
    ROAD,
    Scenario,
    Team,
    TerrainGrid,
    default_speed,
    default_weapons,
    nearest_passable_cell,
)

CANONICAL_BLUE_FIRETEAMS = 18
CANONICAL_STRYKERS = 5
CANONICAL_RED_FIRETEAMS = 20


# ---------------------------------------------------------------------------
# Procedural city and scenario templates
# ---------------------------------------------------------------------------

def _build_city(rng: random.Random, size: int) -> tuple[np.ndarray, np.ndarray]:
    kind = np.zeros((size, size), dtype=np.uint8)
    floors = np.zeros((size, size), dtype=np.uint8)
    period_x = rng.randint(11, 15)
    period_y = rng.randint(11, 15)
    off_x = rng.randint(0, period_x - 1)
    off_y = rng.randint(0, period_y - 1)
    for x in range(size):
        if (x - off_x) % period_x in (0, 1):
            kind[:, x] = ROAD
    for y in range(size):
        if (y - off_y) % period_y in (0, 1):
            kind[y, :] = ROAD

    def block_ranges(period, off):
        edges = [x for x in range(size) if (x - off) % period in (0, 1)]
        ranges = []
        prev = 0
        for e in edges + [size]:
            if e - prev >= 4:
                ranges.append((prev, e))
            prev = e + 1 if e < size and (e - off) % period == 0 else prev
        # simpler: recompute contiguous non-road runs
        return ranges

    # contiguous non-road column/row runs
    def runs(axis_is_x: bool):
        out = []
        start = None
        for i in range(size):
            is_road = ((i - (off_x if axis_is_x else off_y))
                       % (period_x if axis_is_x else period_y) in (0, 1))
            if not is_road and start is None:
                start = i
            elif is_road and start is not None:
                out.append((start, i))
                start = None
        if start is not None:
            out.append((start, size))
        return out

    for y0, y1 in runs(False):
        for x0, x1 in runs(True):
            if x1 - x0 < 4 or y1 - y0 < 4:
                continue
            if rng.random() < 0.15:
                continue  # plaza
            fl = rng.randint(1, 5)
            kind[y0 + 1:y1 - 1, x0 + 1:x1 - 1] = BUILDING
            floors[y0 + 1:y1 - 1, x0 + 1:x1 - 1] = fl
            if x1 - x0 >= 8:  # alley
                ax = rng.randrange(x0 + 2, x1 - 2)
                kind[y0 + 1:y1 - 1, ax] = 0
                floors[y0 + 1:y1 - 1, ax] = 0
            if y1 - y0 >= 8 and rng.random() < 0.5:
                ay = rng.randrange(y0 + 2, y1 - 2)
                kind[ay, x0 + 1:x1 - 1] = 0
                floors[ay, x0 + 1:x1 - 1] = 0
    return kind, floors


def _pick_cells(grid: TerrainGrid, rng: random.Random, want, predicate, used: set):
    """Deterministically sample distinct cells matching a predicate."""
    out = []
    attempts = 0
    while len(out) < want and attempts < 20000:
        attempts += 1
        ix = rng.randrange(grid.width_cells)
        iy = rng.randrange(grid.height_cells)
        c = grid.cell_index(ix, iy)
        if c in used or not predicate(ix, iy):
            continue
        used.add(c)
        out.append(c)
    if len(out) < want:
        raise RuntimeError("could not place scenario entities on this map")
    return out


def _ring_cells(grid, rng, center_xy, r_lo, r_hi, count, passable_kind, used):
    cx, cy = center_xy
    out = []
    attempts = 0
    while len(out) < count and attempts < 40000:
        attempts += 1
        ang = rng.uniform(0, 2 * math.pi)
        r = rng.uniform(r_lo, r_hi)
        ix = int(cx + r * math.cos(ang))
        iy = int(cy + r * math.sin(ang))
        if not (0 <= ix < grid.width_cells and 0 <= iy < grid.height_cells):
            continue
        c = grid.cell_index(ix, iy)
        if c in used or not grid.passable(ix, iy, passable_kind) or grid.kind[iy, ix] == BUILDING:
            continue
        used.add(c)
        out.append(c)
    if len(out) < count:
        raise RuntimeError("ring placement failed")
    return out


def _team(grid, tid, side, kind, cell, emotion=None) -> Team:
    pos = grid.cell_center(cell)
    strength = 1 if kind == "stryker" else (4 if side == "blue" else 3)
    return Team(tid, side, kind, strength, pos, default_speed(side, kind),
                default_weapons(side, kind), scripted_emotion=emotion)


def generate_scenario(mission: str, seed: int, *, duration_min: int = 120,
                      cadence_min: int = 15, fearful: int = 0, zealous: int = 0,
                      section_cells: int = 100, city_cells: int = 200) -> Scenario:
    """Deterministic canonical laydown: 18+5 blue vs 20 red in a 1 km section
    cropped from a procedurally built 2 km urban map."""
    import zlib

    rng = random.Random(seed * 2654435761 % 2**32 ^ zlib.crc32(mission.encode()))
    kind_full, floors_full = _build_city(rng, city_cells)
    lo = (city_cells - section_cells) // 2
    hi = lo + section_cells
    grid = TerrainGrid(section_cells, section_cells, 10.0,
                       kind_full[lo:hi, lo:hi].copy(), floors_full[lo:hi, lo:hi].copy())
    center = (section_cells // 2, section_cells // 2)
    used: set[int] = set()

    def building_near_center(ix, iy):
        return (grid.kind[iy, ix] == BUILDING
                and math.hypot(ix - center[0], iy - center[1]) <= 18)

    if mission == "point-defense":
        objectives = []
        tries = 0
        while len(objectives) < 4 and tries < 40000:
            tries += 1
            cand = _pick_cells(grid, rng, 1, building_near_center, used)[0]
            x0, y0 = grid.cell_xy(cand)
            if all(math.hypot(x0 - grid.cell_xy(o)[0], y0 - grid.cell_xy(o)[1]) >= 8
                   for o in objectives):
                objectives.append(cand)
        if len(objectives) < 4:
            raise RuntimeError("map has too few central buildings for point defense")
    elif mission == "area-defense":
        cx, cy = center
        marks = [(cx, cy), (cx - 6, cy), (cx + 6, cy), (cx, cy - 6), (cx, cy + 6)]
        objectives = [nearest_passable_cell(grid, grid.cell_index(x, y), "fireteam")
                      for x, y in marks]
    elif mission == "point-attack":
        objectives = _pick_cells(grid, rng, 1, building_near_center, used)
    elif mission == "area-attack":
        objectives = _pick_cells(grid, rng, 3, building_near_center, used)
    elif mission == "withdrawal":
        corner = grid.cell_index(section_cells - 8, section_cells - 8)
        objectives = [nearest_passable_cell(grid, corner, "stryker")]
    else:
        raise ValueError(f"unknown mission template {mission!r}")

    teams: list[Team] = []
    road_ok = lambda ix, iy: grid.kind[iy, ix] == ROAD  # noqa: E731
    open_ok = lambda ix, iy: grid.kind[iy, ix] != BUILDING  # noqa: E731

    if mission == "withdrawal":
        blue_cells = _ring_cells(grid, rng, center, 2, 14, CANONICAL_BLUE_FIRETEAMS,
                                 "fireteam", used)
        stryker_cells = _pick_cells(
            grid, rng, CANONICAL_STRYKERS,
            lambda ix, iy: road_ok(ix, iy)
            and math.hypot(ix - center[0], iy - center[1]) <= 16, used)
        red_cells = _ring_cells(grid, rng, center, 20, 30, CANONICAL_RED_FIRETEAMS,
                                "fireteam", used)
    else:
        band = lambda ix, iy: open_ok(ix, iy) and 6 <= iy <= 16  # noqa: E731
        blue_cells = _pick_cells(grid, rng, CANONICAL_BLUE_FIRETEAMS, band, used)
        stryker_cells = _pick_cells(
            grid, rng, CANONICAL_STRYKERS,
            lambda ix, iy: road_ok(ix, iy) and 4 <= iy <= 20, used)
        if mission in ("point-defense", "area-defense"):
            red_cells = _ring_cells(grid, rng, center, 22, 32, CANONICAL_RED_FIRETEAMS,
                                    "fireteam", used)
        else:  # blue attacks, red defends close to the objectives
            ox, oy = grid.cell_xy(objectives[0])
            red_cells = _ring_cells(grid, rng, (ox, oy), 4, 12, CANONICAL_RED_FIRETEAMS,
                                    "fireteam", used)

    emotion_tags: list[str | None] = [None] * CANONICAL_RED_FIRETEAMS
    tagged = rng.sample(range(CANONICAL_RED_FIRETEAMS), min(fearful + zealous,
                                                            CANONICAL_RED_FIRETEAMS))
    for j, idx in enumerate(tagged):
        emotion_tags[idx] = "fearful" if j < fearful else "zealous"

    for i, c in enumerate(blue_cells):
        teams.append(_team(grid, f"B{i + 1:02d}", "blue", "fireteam", c))
    for i, c in enumerate(stryker_cells):
        teams.append(_team(grid, f"S{i + 1}", "blue", "stryker", c))
    for i, c in enumerate(red_cells):
        teams.append(_team(grid, f"R{i + 1:02d}", "red", "fireteam", c,
                           emotion=emotion_tags[i]))

    return Scenario(
        name=f"{mission}-{seed}",
        terrain=grid,
        teams=teams,
        mission=Mission(mission, tuple(objectives)),
        duration_ticks=duration_min * TICKS_PER_MINUTE,
        seed=seed,
        intel=IntelMode(),
        advisory_cadence_min=cadence_min,
    )


# ---------------------------------------------------------------------------
# Shared bot helpers
# ---------------------------------------------------------------------------

def _balanced_assignment(ids, positions, goals, grid):
    counts = {g: 0 for g in goals}
    out = {}
    for tid in sorted(ids):
        best = None
        p = positions[tid]
        for g in goals:
            gp = grid.cell_center(g)
            key = (counts[g], p.dist_to(gp), g)
            if best is None or key < best[0]:
                best = (key, g)
        out[tid] = best[1]
        counts[best[1]] += 1
    return out


def _away_point(grid: TerrainGrid, from_pos: Position, threat: Position,
                distance_m: float) -> Position:
    dx = from_pos.x_m - threat.x_m
    dy = from_pos.y_m - threat.y_m
    norm = math.hypot(dx, dy) or 1.0
    x = min(max(from_pos.x_m + dx / norm * distance_m, 5.0), grid.width_m - 5.0)
    y = min(max(from_pos.y_m + dy / norm * distance_m, 5.0), grid.height_m - 5.0)
    cell = grid.cell_of(Position(x, y))
    snapped = nearest_passable_cell(grid, grid.cell_index(*cell), "fireteam")
    return grid.cell_center(snapped)


def _toward_point(grid: TerrainGrid, target: Position, from_pos: Position,
                  range_m: float) -> Position:
    dx = from_pos.x_m - target.x_m
    dy = from_pos.y_m - target.y_m
    norm = math.hypot(dx, dy) or 1.0
    x = min(max(target.x_m + dx / norm * range_m, 5.0), grid.width_m - 5.0)
    y = min(max(target.y_m + dy / norm * range_m, 5.0), grid.height_m - 5.0)
    cell = grid.cell_of(Position(x, y))
    snapped = nearest_passable_cell(grid, grid.cell_index(*cell), "fireteam")
    return grid.cell_center(snapped)


def _incoming_fire(state, since_seq: int) -> dict[str, int]:
    hits: dict[str, int] = {}
    for e in state.events:
        if e.seq < since_seq:
            continue
        if e.kind == "fired":
            hits[e.payload["target"]] = hits.get(e.payload["target"], 0) + 1
    return hits


def _casualties_since(state, since_seq: int) -> dict[str, int]:
    lost: dict[str, int] = {}
    for e in state.events:
        if e.seq < since_seq:
            continue
        if e.kind == "casualty":
            lost[e.payload["team"]] = lost.get(e.payload["team"], 0) + 1
    return lost


# ---------------------------------------------------------------------------
# Red bot
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RedProfile:
    aggression: float = 0.8
    feints: int = 0
    fearful_onset_fallback_min: int = 45


class RedBot:
    """Mission-driven red controller with scripted feints and emotions."""

    def __init__(self, scenario: Scenario, profile: RedProfile | None = None):
        self.identity = "red_bot"
        self.profile = profile or RedProfile()
        self.rng = random.Random(scenario.seed + 101)
        self._cursor = 0
        self._feint_state: dict[str, dict] = {}
        self._emotion_started: dict[str, int] = {}
        self._assignment: dict[str, int] | None = None
        self._wave_started: set[str] = set()

    def _setup(self, state):
        scenario = state.scenario
        grid = scenario.terrain
        red = [t for t in state.teams if t.side == "red"]
        positions = {t.id: t.position for t in red}
        objectives = list(scenario.mission.objectives)
        # free play: the red commander sometimes hits everything, sometimes
        # masses on one or two axes
        focus = objectives
        if scenario.mission.type in ("point-defense", "area-defense") and len(objectives) > 1:
            roll = self.rng.random()
            if roll >= 0.70:
                n_focus = 1
            elif roll >= 0.30:
                n_focus = min(2, len(objectives))
            else:
                n_focus = len(objectives)
            focus = sorted(self.rng.sample(objectives, n_focus))
        self._assignment = _balanced_assignment(
            [t.id for t in red], positions, focus, grid)
        if self.profile.feints and len(objectives) >= 2:
            off_axis = sorted(set(objectives) - set(focus)) or sorted(objectives)
            feint_obj = off_axis[0]
            candidates = sorted(
                (t.id for t in red),
                key=lambda tid: (positions[tid].dist_to(grid.cell_center(feint_obj)), tid))
            for tid in candidates[: self.profile.feints]:
                team = state.team(tid)
                self._feint_state[tid] = {
                    "objective": feint_obj,
                    "phase": "stage",
                    "stage_pos": _toward_point(grid, grid.cell_center(feint_obj),
                                               team.position, 480.0),
                    "approach_pos": _toward_point(grid, grid.cell_center(feint_obj),
                                                  team.position, 140.0),
                    "home": team.position,
                }

    def on_pause(self, state, advisories):
        scenario = state.scenario
        grid = scenario.terrain
        if self._assignment is None:
            self._setup(state)
        incoming = _incoming_fire(state, self._cursor)
        losses = _casualties_since(state, self._cursor)
        self._cursor = state.events[-1].seq + 1 if state.events else 0
        tasks: list[Task] = []
        blue_alive = [t for t in state.teams if t.side == "blue" and t.alive]
        mission = scenario.mission.type
        for team in state.teams:
            if team.side != "red" or not team.alive:
                continue
            tid = team.id
            if tid in self._feint_state:
                task = self._feint_task(state, team)
                if task is not None:
                    tasks.append(task)
                continue
            if team.scripted_emotion == "fearful":
                task = self._fearful_task(state, team, incoming, blue_alive)
                if task is not None:
                    tasks.append(task)
                    continue
                # not yet triggered: fall through to neutral behavior
            elif team.scripted_emotion == "zealous":
                tasks.append(self._zealous_task(state, team))
                continue
            tasks.append(self._neutral_task(state, team, losses, blue_alive, mission))
        return [t for t in tasks if t is not None]

    def _log_gt(self, state, kind: str, team_id: str, **extra):
        payload = {"ground_truth": True, "kind": kind, "team": team_id}
        payload.update(extra)
        state.log("alert", payload)

    def _feint_task(self, state, team) -> Task | None:
        st = self._feint_state[team.id]
        grid = state.scenario.terrain
        obj_pos = grid.cell_center(st["objective"])
        if st["phase"] == "stage":
            if team.position.dist_to(st["stage_pos"]) < 60.0:
                st["phase"] = "approach"
                self._log_gt(state, "feint_onset", team.id, objective=st["objective"])
                return move_to(team.id, st["approach_pos"])
            return move_to(team.id, st["stage_pos"])
        if st["phase"] == "approach":
            if team.position.dist_to(obj_pos) < 180.0:
                st["phase"] = "withdrawn"
                self._log_gt(state, "feint_withdraw", team.id, objective=st["objective"])
                return withdraw_to(team.id, _away_point(grid, team.position, obj_pos, 420.0))
            return move_to(team.id, st["approach_pos"])
        return None  # lurk after withdrawing

    def _fearful_task(self, state, team, incoming, blue_alive) -> Task | None:
        minute = state.minute()
        triggered = team.id in self._emotion_started
        under_fire = incoming.get(team.id, 0) > 0
        if not triggered and (under_fire
                              or minute >= self.profile.fearful_onset_fallback_min):
            self._emotion_started[team.id] = state.tick
            self._log_gt(state, "emotion_onset", team.id, label="fearful")
            triggered = True
        if not triggered:
            return None
        grid = state.scenario.terrain
        threat = min(blue_alive, key=lambda b: team.position.dist_to(b.position),
                     default=None)
        threat_pos = threat.position if threat else grid.cell_center(
            state.scenario.mission.objectives[0])
        dest = _away_point(grid, team.position, threat_pos, 320.0)
        # prefer a building cell near the flight point for cover
        ix, iy = grid.cell_of(dest)
        best = None
        for dx in range(-3, 4):
            for dy in range(-3, 4):
                nx, ny = ix + dx, iy + dy
                if 0 <= nx < grid.width_cells and 0 <= ny < grid.height_cells:
                    if grid.kind[ny, nx] == BUILDING:
                        d = abs(dx) + abs(dy)
                        if best is None or d < best[0]:
                            best = (d, nx, ny)
        if best is not None:
            dest = grid.cell_center(grid.cell_index(best[1], best[2]))
        return move_to(team.id, dest)

    def _zealous_task(self, state, team) -> Task:
        if team.id not in self._emotion_started:
            self._emotion_started[team.id] = state.tick
            self._log_gt(state, "emotion_onset", team.id, label="zealous")
        return attack_target(team.id, self._assignment[team.id])

    def _neutral_task(self, state, team, losses, blue_alive, mission) -> Task | None:
        grid = state.scenario.terrain
        if mission in ("point-attack", "area-attack"):
            # red defends its ground near the objective
            obj = self._assignment[team.id]
            return defend_area(team.id, grid.cell_center(obj), 80.0)
        if mission == "withdrawal":
            target = min(blue_alive, key=lambda b: team.position.dist_to(b.position),
                         default=None)
            if target is None:
                return None
            return move_to(team.id, target.position)
        # defense missions: red assaults in waves sized by aggression; a team
        # mauled in the last interval goes to ground for one pause
        if losses.get(team.id, 0) >= 2 and self.profile.aggression < 0.9:
            return defend_area(team.id, team.position, 50.0)
        if team.id in self._wave_started:
            return attack_target(team.id, self._assignment[team.id])
        reds = sorted(t.id for t in state.teams if t.side == "red")
        rank = reds.index(team.id) / max(1, len(reds) - 1)
        wave = 0 if rank < self.profile.aggression else 1
        pause_no = int(state.minute() // state.scenario.advisory_cadence_min)
        if pause_no >= wave:
            self._wave_started.add(team.id)
            return attack_target(team.id, self._assignment[team.id])
        return defend_area(team.id, team.position, 60.0)


# ---------------------------------------------------------------------------
# Blue bots
# ---------------------------------------------------------------------------

class BlueBaselineBot:
    """Routes teams straight at the mission objectives and holds."""

    def __init__(self, scenario: Scenario):
        self.identity = "blue_baseline"
        self._assigned = False

    def on_pause(self, state, advisories):
        scenario = state.scenario
        grid = scenario.terrain
        mission = scenario.mission.type
        tasks = []
        blue = [t for t in state.teams if t.side == "blue" and t.alive]
        positions = {t.id: t.position for t in blue}
        objectives = list(scenario.mission.objectives)
        assignment = _balanced_assignment([t.id for t in blue], positions,
                                          objectives, grid)
        for team in blue:
            if state.tasks.get(team.id) is not None and self._assigned:
                continue
            obj = assignment[team.id]
            if mission in ("point-defense", "area-defense"):
                tasks.append(defend_area(team.id, grid.cell_center(obj), 55.0))
            elif mission == "withdrawal":
                # consolidate defensively at the rally, not in a stack
                tasks.append(defend_area(team.id, grid.cell_center(objectives[0]), 90.0))
            else:
                if team.kind == "stryker":
                    cell = nearest_passable_cell(grid, obj, "stryker")
                    tasks.append(move_to(team.id, grid.cell_center(cell)))
                else:
                    tasks.append(attack_target(team.id, obj))
        self._assigned = True
        return tasks


class BlueAdvisedBot:
    """Converts each delivered blue recommendation into tasks verbatim."""

    def __init__(self, scenario: Scenario):
        self.identity = "blue_advised"
        self._fallback = BlueBaselineBot(scenario)
        self._graph = None
        self._held_objective: dict[str, int] = {}
        self._pending_shift: dict[str, int] = {}

    def _sticky_objective(self, team_id: str, assigned: int, pause_no: int) -> int:
        """Defenders follow the threat-informed assignment while the red
        axes are still being revealed, then hold what they have."""
        if pause_no <= 2:
            self._held_objective[team_id] = assigned
        return self._held_objective.setdefault(team_id, assigned)

    def _weakest_objective(self, state) -> int:
        """The objective with the least live red strength in close defense,
        sticky until effectively cleared so the assault does not flip-flop."""
        grid = state.scenario.terrain
        objectives = state.scenario.mission.objectives
        strengths = {}
        for obj in objectives:
            center = grid.cell_center(obj)
            strengths[obj] = sum(
                t.strength for t in state.teams
                if t.side == "red" and t.alive and t.position.dist_to(center) <= 250.0)
        held = getattr(self, "_focus_objective", None)
        if held is not None and strengths.get(held, 0) > 1:
            return held
        focus = min(objectives, key=lambda o: (strengths[o], o))
        self._focus_objective = focus
        return focus

    @staticmethod
    def _threat_side_center(grid, graph, pred, obj: int) -> Position:
        """Shift the defensive position toward the hottest predicted contact
        so defenders hold the approach-side cover, staying on the perimeter."""
        obj_pos = grid.cell_center(obj)
        best = None
        for ez in pred.engagement_zones:
            c = graph.zones[ez.zone].centroid
            d = c.dist_to(obj_pos)
            if d > 320.0 or d < 1e-6:
                continue
            key = (ez.likelihood, -d, -ez.zone)
            if best is None or key > best[0]:
                best = (key, c)
        if best is None:
            return obj_pos
        c = best[1]
        dx, dy = c.x_m - obj_pos.x_m, c.y_m - obj_pos.y_m
        norm = math.hypot(dx, dy) or 1.0
        return Position(obj_pos.x_m + 20.0 * dx / norm, obj_pos.y_m + 20.0 * dy / norm)

    @staticmethod
    def _route_is_hot(pred, graph, start: Position, dest: Position) -> bool:
        """Does the straight route pass a likely predicted engagement?"""
        for ez in pred.engagement_zones:
            if ez.likelihood < 0.5:
                continue
            c = graph.zones[ez.zone].centroid
            dx, dy = dest.x_m - start.x_m, dest.y_m - start.y_m
            norm2 = dx * dx + dy * dy
            if norm2 <= 1e-9:
                continue
            t = max(0.0, min(1.0, ((c.x_m - start.x_m) * dx + (c.y_m - start.y_m) * dy) / norm2))
            if t < 0.3:
                continue  # contact at our own position is pursuit, not a block
            px, py = start.x_m + t * dx, start.y_m + t * dy
            if math.hypot(c.x_m - px, c.y_m - py) <= 90.0:
                return True
        return False

    def on_pause(self, state, advisories):
        preds = [p for p in advisories.predictions if p.variant == "most_likely"]
        if not preds or advisories.pause_index == 0:
            # open exactly like the unadvised commander; deviate only once
            # the predictions have evidence behind them
            return self._fallback.on_pause(state, advisories)
        pred = preds[-1]
        scenario = state.scenario
        grid = scenario.terrain
        if self._graph is None:
            self._graph = abstract_map(grid)
        graph = self._graph
        mission = scenario.mission.type
        tasks = []
        for team in state.teams:
            if team.side != "blue" or not team.alive:
                continue
            assigned = pred.blue_assignments.get(team.id)
            if mission in ("point-defense", "area-defense") and assigned is not None:
                obj = self._sticky_objective(team.id, assigned, advisories.pause_index)
                if mission == "point-defense":
                    # objective buildings have cover on the approach side
                    center = self._threat_side_center(grid, graph, pred, obj)
                    tasks.append(defend_area(team.id, center, 40.0))
                else:
                    tasks.append(defend_area(team.id, grid.cell_center(obj), 55.0))
                continue
            path = pred.blue_recommendation.steps.get(team.id)
            if not path:
                continue
            final_zone = path[-1][0]
            if mission in ("point-attack", "area-attack") and assigned is not None:
                if mission == "area-attack":
                    # concentrate: throw everything at the weakest objective
                    assigned = self._weakest_objective(state)
                if team.kind == "stryker":
                    cell = nearest_passable_cell(grid, assigned, "stryker")
                    dest = grid.cell_center(cell)
                    if dest != team.position:
                        tasks.append(move_to(team.id, dest))
                    continue
                tasks.append(attack_target(team.id, assigned))
                continue
            if mission == "withdrawal":
                # speed is everything against pursuit: straight to the rally,
                # then consolidate in cover
                rally = scenario.mission.objectives[0]
                tasks.append(defend_area(team.id, grid.cell_center(rally), 90.0))
                continue
            anchor = graph.zones[final_zone].anchor_cell
            cell = nearest_passable_cell(grid, anchor, team.kind)
            dest = grid.cell_center(cell)
            if self._route_is_hot(pred, graph, team.position, dest):
                zone = path[0][0]
                for z, arr in path:
                    if arr <= 600.0:
                        zone = z
                anchor = graph.zones[zone].anchor_cell
                cell = nearest_passable_cell(grid, anchor, team.kind)
                dest = grid.cell_center(cell)
            if dest == team.position:
                continue
            tasks.append(move_to(team.id, dest))
        return tasks


# ---------------------------------------------------------------------------
# Advisory observer pipeline (the advised arm's RAID stack)
# ---------------------------------------------------------------------------

class AdvisoryObserver:
    """Runs estimation every minute and full prediction at every pause."""

    def __init__(self, scenario: Scenario, horizon_min: float = 30.0,
                 search: SearchConfig | None = None,
                 mind: MindConfig | None = None,
                 drm: DrmConfig | None = None,
                 guidance: CommanderGuidance | None = None,
                 ghost_samples: int = 48):
        self.scenario = scenario
        self.horizon_min = horizon_min
        self.search = search or SearchConfig()
        self.guidance = guidance
        self.graph = abstract_map(scenario.terrain)
        self.history = TeamHistory.start({
            t.id: {"side": t.side, "kind": t.kind, "strength": t.strength,
                   "x": t.position.x_m, "y": t.position.y_m}
            for t in scenario.teams
        })
        self.mind = MindTracker(scenario.terrain, scenario.mission.objectives,
                                self.graph, mind or MindConfig())
        self.drm = FeintDetector(scenario.terrain, scenario.mission.objectives,
                                 self.graph, drm or DrmConfig())
        self.ghost_samples = ghost_samples
        self._cursor = 0
        self._latest_prediction = None
        self.feint_alerts: list = []

    def _ingest(self, state):
        events = state.events
        self.history.ingest(events[i] for i in range(self._cursor, len(events)))
        self._cursor = len(events)

    def _masked_state(self, state):
        frac = state.scenario.intel.masked_fraction
        if frac <= 0.0:
            return state
        import hashlib

        visible = copy.copy(state)
        visible.teams = [
            t for t in state.teams
            if t.side == "blue" or (int(hashlib.sha256(
                f"{t.id}:{state.scenario.seed}".encode()).hexdigest(), 16)
                % 1000) / 1000.0 >= frac
        ]
        return visible

    def on_minute(self, state) -> list[dict]:
        self._ingest(state)
        minute = state.tick // TICKS_PER_MINUTE
        if minute >= 1 and self.history.last_minute < minute:
            self.history.close_minute(minute)
        return self.mind.update_minute(self.history, minute)

    def on_pause(self, state) -> dict:
        self._ingest(state)
        visible = self._masked_state(state)
        ghosts = rollout_ghosts(visible, self.graph, self.mind.estimates,
                                self.mind.field_, self.ghost_samples,
                                seed=state.scenario.seed + state.tick)
        goal_modes = {}
        for tid, est in self.mind.estimates.items():
            label = max(est.goal, key=est.goal.get)
            if est.goal[label] < 0.60:
                continue
            if label == "withdraw":
                # only trust a flight read when the team is actually receding
                feats = self.mind.last_features.get(tid)
                if feats is None or feats.advance_rate is None or feats.advance_rate > -5.0:
                    continue
            goal_modes[tid] = label
        preds = predict(visible, self.graph, self.guidance, self.horizon_min,
                        config=self.search, red_move_priors=ghosts.weights,
                        red_goal_modes=goal_modes,
                        red_objective_hints=self._objective_hints(state))
        self._latest_prediction = preds[0]
        feints = self.drm.detect(state, self.history, preds[0])
        self.feint_alerts.extend(feints)
        return {
            "predictions": preds,
            "alerts": [f.to_payload() for f in feints],
        }

    def _objective_hints(self, state) -> dict[str, int]:
        """Each red team's apparent axis from its recent approach history."""
        objectives = self.scenario.mission.objectives
        if not objectives:
            return {}
        grid = self.scenario.terrain
        h = self.history
        now = h.last_minute
        then = max(0, now - 10)
        hints: dict[str, int] = {}
        for tid in h.team_ids("red"):
            if h.sample(now).strengths.get(tid, 0) <= 0:
                continue
            px, py = h.sample(now).positions[tid]
            qx, qy = h.sample(then).positions[tid]
            best = None
            for obj in objectives:
                c = grid.cell_center(obj)
                d_now = math.hypot(px - c.x_m, py - c.y_m)
                d_then = math.hypot(qx - c.x_m, qy - c.y_m)
                key = (d_now - d_then, d_now, obj)  # strongest approach, then nearest
                if best is None or key < best:
                    best = key
                    hints[tid] = obj
            # only a demonstrated approach counts as a revealed axis
            if best is not None and best[0] > -30.0:
                hints.pop(tid, None)
        return hints


# ---------------------------------------------------------------------------
# Paired runs and batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    missions: tuple[str, ...] = ("point-defense", "area-defense", "point-attack",
                                 "withdrawal")
    n_pairs: int = 20
    seed: int = 1000
    duration_min: int = 120
    cadence_min: int = 15
    horizon_min: float = 30.0
    aggression: float = 0.8
    feints: int = 0
    fearful: int = 0
    zealous: int = 0
    out_dir: str | None = None
    jobs: int = 1

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        if raw.get("version", "raid-experiment/1") != "raid-experiment/1":
            raise ValueError("unsupported experiment config version")
        known = set(ExperimentConfig.__dataclass_fields__)
        kwargs = {k: v for k, v in raw.items() if k in known}
        if "missions" in kwargs:
            kwargs["missions"] = tuple(kwargs["missions"])
        return ExperimentConfig(**kwargs)


def _ground_truth_emotions(replay) -> dict[str, tuple[int, str]]:
    out = {}
    for e in replay.events:
        p = e.payload
        if e.kind == "alert" and p.get("ground_truth") and p.get("kind") == "emotion_onset":
            out[p["team"]] = (e.tick, p["label"])
    return out


def _ground_truth_feints(replay) -> list[dict]:
    return [dict(e.payload, tick=e.tick) for e in replay.events
            if e.kind == "alert" and e.payload.get("ground_truth")
            and e.payload.get("kind") == "feint_onset"]


def _mind_alerts(replay) -> list[dict]:
    return [e.payload for e in replay.events
            if e.kind == "alert" and e.payload.get("source") == "mind"]


def _feint_alert_payloads(replay) -> list[dict]:
    return [e.payload for e in replay.events
            if e.kind == "alert" and e.payload.get("source") == "drm"]


def feint_confusion(replay) -> tuple[int, int]:
    """(true positives, false positives) for feint alerts in one replay."""
    truth = _ground_truth_feints(replay)
    truth_pairs = {(t["team"], t["objective"]) for t in truth}
    truth_objs = {t["objective"] for t in truth}
    tp_objs = set()
    fp = 0
    for a in _feint_alert_payloads(replay):
        teams = set(a.get("teams", ()))
        if a.get("zone") in truth_objs and any(
                (t, a["zone"]) in truth_pairs for t in teams):
            tp_objs.add(a["zone"])
        else:
            fp += 1
    return len(tp_objs), fp


def _run_record(scenario: Scenario, result: GameResult, advised: bool,
                history: TeamHistory | None = None) -> RunRecord:
    from .history import history_from_replay

    replay = result.replay
    card = score(replay, scenario)
    h = history or history_from_replay(replay)
    rec = RunRecord(
        scenario_name=scenario.name,
        seed=scenario.seed,
        advised=advised,
        score=card,
        replay_hash=replay.digest(),
    )
    if advised:
        sums: dict[int, list[float]] = {t: [] for t in ERROR_OFFSETS_MIN}
        dr_sums: dict[int, list[float]] = {t: [] for t in ERROR_OFFSETS_MIN}
        for created_tick, pred in result.predictions:
            if pred.variant != "most_likely":
                continue
            for t in ERROR_OFFSETS_MIN:
                if t > pred.horizon_min:
                    continue
                minute = created_tick // TICKS_PER_MINUTE + t
                if minute > h.last_minute:
                    continue
                _e, mean = prediction_error(pred, h, t)
                _e2, dr_mean = dead_reckoning_error(h, created_tick, t, scenario.terrain)
                if _e:
                    sums[t].append(mean)
                    dr_sums[t].append(dr_mean)
        rec.mean_errors = {t: sum(v) / len(v) for t, v in sums.items() if v}
        rec.baseline_errors = {t: sum(v) / len(v) for t, v in dr_sums.items() if v}
        gt = _ground_truth_emotions(replay)
        rec.emotion_latencies = detection_latency(_mind_alerts(replay), gt)
        rec.feint_alerts = _feint_alert_payloads(replay)
    return rec


def run_pair(scenario: Scenario, config: ExperimentConfig,
             engine_config: EngineConfig | None = None) -> PairedRunResult:
    profile = RedProfile(aggression=config.aggression, feints=config.feints)
    advised_result = run_game(
        scenario,
        RedBot(scenario, profile),
        BlueAdvisedBot(scenario),
        observers=(AdvisoryObserver(scenario, horizon_min=config.horizon_min),),
        config=engine_config,
    )
    baseline_result = run_game(
        scenario,
        RedBot(scenario, profile),
        BlueBaselineBot(scenario),
        observers=(),
        config=engine_config,
    )
    return PairedRunResult(
        scenario_name=scenario.name,
        seed=scenario.seed,
        scenario_hash=scenario_digest(scenario),
        advised=_run_record(scenario, advised_result, True),
        unadvised=_run_record(scenario, baseline_result, False),
    )


def _pair_worker(args) -> PairedRunResult:
    mission, seed, cfg_dict = args
    cfg = ExperimentConfig(**cfg_dict)
    scenario = generate_scenario(
        mission, seed, duration_min=cfg.duration_min, cadence_min=cfg.cadence_min,
        fearful=cfg.fearful, zealous=cfg.zealous)
    return run_pair(scenario, cfg)


def run_batch(config: ExperimentConfig, progress=None):
    """Run every pair; returns (results, summary, csv_text)."""
    jobs = []
    for i in range(config.n_pairs):
        mission = config.missions[i % len(config.missions)]
        jobs.append((mission, config.seed + i, asdict(config)))
    results: list[PairedRunResult] = []
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for i, res in enumerate(pool.map(_pair_worker, jobs)):
                results.append(res)
                if progress:
                    progress(i + 1, config.n_pairs, res)
    else:
        for i, job in enumerate(jobs):
            res = _pair_worker(job)
            results.append(res)
            if progress:
                progress(i + 1, config.n_pairs, res)
    from .metrics import paired_summary

    summary = paired_summary(results)
    csv_text = results_csv(results)
    if config.out_dir:
        import pathlib

        out = pathlib.Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runs.csv").write_text(csv_text)
        (out / "summary.txt").write_text(summary_table(summary) + "\n")
    return results, summary, csv_text
