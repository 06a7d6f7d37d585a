"""Deterministic tick-based battle engine.

Each 5 s tick moves every live team along its task path, then resolves
automated fires for every shooter/target pair with range and line of sight,
drawing hits from a single seeded stream.  Everything that happens lands in
an append-only event log, so a replay reconstructs the whole game.
"""
from __future__ import annotations

import copy
import math
import random
from dataclasses import dataclass, field
from typing import Protocol

from .config import EngineConfig, TICKS_PER_MINUTE, WeaponSpec
from .replay import ENGINE_VERSION, REPLAY_SCHEMA, Event, ReplayLog, scenario_digest
from .world import (
    BUILDING,
    ROAD,
    Position,
    Scenario,
    Team,
    TerrainGrid,
    find_path,
    line_of_sight,
)


class UnknownTeam(KeyError):
    pass


class DeadTeam(ValueError):
    pass


class GameOver(RuntimeError):
    pass


class ControllerFailure(RuntimeError):
    def __init__(self, identity: str, cause: BaseException):
        super().__init__(f"controller {identity!r} failed: {cause!r}")
        self.identity = identity


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Task:
    kind: str                 # move | defend | attack | withdraw
    team_id: str
    dest: Position | None = None          # move/withdraw rally point
    center: Position | None = None        # defend
    radius_m: float = 0.0                 # defend
    objective: int | None = None          # attack (cell index)
    issued_tick: int = 0

    def to_payload(self) -> dict:
        p: dict = {"kind": self.kind, "team": self.team_id}
        if self.dest is not None:
            p["dest"] = [self.dest.x_m, self.dest.y_m]
        if self.center is not None:
            p["center"] = [self.center.x_m, self.center.y_m]
            p["radius"] = self.radius_m
        if self.objective is not None:
            p["objective"] = self.objective
        return p


def move_to(team_id: str, dest: Position) -> Task:
    return Task("move", team_id, dest=dest)


def withdraw_to(team_id: str, rally: Position) -> Task:
    return Task("withdraw", team_id, dest=rally)


def defend_area(team_id: str, center: Position, radius_m: float) -> Task:
    return Task("defend", team_id, center=center, radius_m=radius_m)


def attack_target(team_id: str, objective: int) -> Task:
    return Task("attack", team_id, objective=objective)


def task_from_payload(p: dict) -> Task:
    kind = p["kind"]
    team = p["team"]
    if kind in ("move", "withdraw"):
        return Task(kind, team, dest=Position(*p["dest"]))
    if kind == "defend":
        return Task(kind, team, center=Position(*p["center"]), radius_m=float(p["radius"]))
    if kind == "attack":
        return Task(kind, team, objective=int(p["objective"]))
    raise ValueError(f"unknown task kind {kind!r}")


# ---------------------------------------------------------------------------
# Game state
# ---------------------------------------------------------------------------

@dataclass
class _Mover:
    """Per-team movement bookkeeping derived from the active task."""

    waypoints: tuple[Position, ...] = ()
    next_i: int = 1  # waypoints[0] is the position at task issue


@dataclass
class GameState:
    scenario: Scenario
    config: EngineConfig
    tick: int
    teams: list[Team]
    tasks: dict[str, Task] = field(default_factory=dict)
    events: list[Event] = field(default_factory=list)
    rng: random.Random = field(default_factory=random.Random)
    movers: dict[str, _Mover] = field(default_factory=dict)
    cooldowns: dict[str, dict[str, int]] = field(default_factory=dict)
    _seq: int = 0
    _index: dict[str, Team] = field(default_factory=dict)
    _los_memo: dict = field(default_factory=dict)
    _objective_fire_minute: dict[str, int] = field(default_factory=dict)

    @property
    def terrain(self) -> TerrainGrid:
        return self.scenario.terrain

    def team(self, team_id: str) -> Team:
        try:
            return self._index[team_id]
        except KeyError:
            raise UnknownTeam(team_id) from None

    def log(self, kind: str, payload: dict, tick: int | None = None) -> Event:
        e = Event(self.tick if tick is None else tick, self._seq, kind, payload)
        self._seq += 1
        self.events.append(e)
        return e

    def minute(self) -> float:
        return self.tick * self.config.tick_seconds / 60.0


def new_game(scenario: Scenario, config: EngineConfig | None = None) -> GameState:
    config = config or EngineConfig()
    teams = [copy.deepcopy(t) for t in scenario.teams]
    state = GameState(
        scenario=scenario,
        config=config,
        tick=0,
        teams=teams,
        rng=random.Random(scenario.seed),
    )
    state._index = {t.id: t for t in teams}
    if len(state._index) != len(teams):
        raise ValueError("duplicate team ids")
    state.cooldowns = {t.id: {} for t in teams}
    return state


# ---------------------------------------------------------------------------
# Task issue
# ---------------------------------------------------------------------------

def _cover_cell_near(grid: TerrainGrid, team: Team, center: Position, radius_m: float) -> Position:
    """Nearest cover cell to the team inside the area, else nearest cell to center.

    Cover means a building cell for fireteams, or a building-adjacent
    passable cell for strykers.
    """
    s = grid.cell_size_m
    cx, cy = grid.cell_of(center)
    r_cells = max(1, int(radius_m // s))
    best = None
    for iy in range(max(0, cy - r_cells), min(grid.height_cells, cy + r_cells + 1)):
        for ix in range(max(0, cx - r_cells), min(grid.width_cells, cx + r_cells + 1)):
            c = grid.cell_center(grid.cell_index(ix, iy))
            if c.dist_to(center) > radius_m:
                continue
            if not grid.passable(ix, iy, team.kind):
                continue
            if team.kind == "fireteam":
                is_cover = grid.kind[iy, ix] == BUILDING
            else:
                is_cover = any(
                    0 <= ix + dx < grid.width_cells and 0 <= iy + dy < grid.height_cells
                    and grid.kind[iy + dy, ix + dx] == BUILDING
                    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))
                )
            key = (0 if is_cover else 1, c.dist_to(team.position), ix, iy)
            if best is None or key < best[0]:
                best = (key, c)
    if best is not None:
        return best[1]
    return center


def _task_destination(state: GameState, team: Team, task: Task) -> Position | None:
    grid = state.terrain
    if task.kind in ("move", "withdraw"):
        return task.dest
    if task.kind == "defend":
        return _cover_cell_near(grid, team, task.center, task.radius_m)
    if task.kind == "attack":
        return grid.cell_center(task.objective)
    return None


def issue_task(state: GameState, task: Task, by: str | None = None) -> None:
    team = state.team(task.team_id)
    if not team.alive:
        raise DeadTeam(task.team_id)
    grid = state.terrain
    dest = _task_destination(state, team, task)
    if dest is not None and not grid.in_bounds(dest):
        raise ValueError(f"task destination outside the grid for {team.id}")
    task = Task(task.kind, task.team_id, dest=task.dest, center=task.center,
                radius_m=task.radius_m, objective=task.objective,
                issued_tick=state.tick)
    state.tasks[team.id] = task
    if dest is None or dest == team.position:
        state.movers[team.id] = _Mover((team.position,), next_i=1)
    else:
        path = find_path(grid, team.position, dest, team.kind)
        state.movers[team.id] = _Mover(path.waypoints, next_i=1)
    payload = task.to_payload()
    if by:
        payload["by"] = by
    state.log("task", payload)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def _speed_at(state: GameState, team: Team, pos: Position) -> float:
    grid = state.terrain
    ix, iy = grid.cell_of(pos)
    k = grid.kind[iy, ix]
    cfg = state.config
    if team.kind == "stryker":
        return cfg.stryker_road_speed_mps if k == ROAD else cfg.stryker_open_speed_mps
    if k == BUILDING:
        return team.speed_mps * cfg.building_speed_factor
    return team.speed_mps


def _advance(state: GameState, team: Team) -> bool:
    """Move the team along its path for one tick; True if it moved."""
    mover = state.movers.get(team.id)
    if mover is None or mover.next_i >= len(mover.waypoints):
        return False
    t_rem = state.config.tick_seconds
    pos = team.position
    moved = False
    while t_rem > 1e-9 and mover.next_i < len(mover.waypoints):
        target = mover.waypoints[mover.next_i]
        d = pos.dist_to(target)
        if d < 1e-9:
            mover.next_i += 1
            continue
        v = _speed_at(state, team, pos)
        reach = v * t_rem
        if reach >= d:
            pos = target
            t_rem -= d / v
            mover.next_i += 1
        else:
            f = reach / d
            pos = Position(pos.x_m + (target.x_m - pos.x_m) * f,
                           pos.y_m + (target.y_m - pos.y_m) * f)
            t_rem = 0.0
        moved = True
    if moved:
        team.position = pos
    return moved


def _fire_weapon(state: GameState, shooter: Team, target: Team, spec: WeaponSpec) -> None:
    eff = spec.effect_vs(target.kind)
    prob = spec.hit_prob_per_tick * eff
    if state.terrain.is_building_cell(target.position):
        prob *= state.config.building_cover_factor
    hit = state.rng.random() < prob
    state.log("fired", {
        "shooter": shooter.id, "target": target.id, "weapon": spec.name,
        "hit": hit,
        "sx": shooter.position.x_m, "sy": shooter.position.y_m,
        "tx": target.position.x_m, "ty": target.position.y_m,
    })
    if hit:
        target.strength -= 1
        state.log("casualty", {"team": target.id, "strength": target.strength})


def _los_clear_cached(state: GameState, key, a: Position, b: Position) -> bool:
    rec = state._los_memo.get(key)
    if rec is not None and rec[0] == a and rec[1] == b:
        return rec[2]
    clear = line_of_sight(state.terrain, a, b).clear
    state._los_memo[key] = (a, b, clear)
    return clear


def _resolve_fires(state: GameState) -> None:
    cfg = state.config
    grid = state.terrain
    live = [t for t in state.teams if t.alive]
    reds = [t for t in live if t.side == "red"]
    blues = [t for t in live if t.side == "blue"]
    for shooter in live:
        targets = blues if shooter.side == "red" else reds
        cooldown = state.cooldowns[shooter.id]
        for wname in shooter.weapons:
            spec = cfg.weapons[wname]
            if cooldown.get(wname, 0) > 0:
                continue
            fired_reloading_weapon = False
            # shaped-charge rounds go to vehicles first
            ordered = (
                sorted(targets, key=lambda t: (t.kind != "stryker",))
                if spec.reload_ticks else targets
            )
            for target in ordered:
                if not target.alive:
                    continue
                if spec.effect_vs(target.kind) <= 0.0:
                    continue
                if shooter.position.dist_to(target.position) > spec.max_range_m:
                    continue
                if not _los_clear_cached(state, (shooter.id, target.id),
                                         shooter.position, target.position):
                    continue
                _fire_weapon(state, shooter, target, spec)
                if spec.reload_ticks:
                    cooldown[wname] = spec.reload_ticks
                    fired_reloading_weapon = True
                    break
            if fired_reloading_weapon:
                continue
            # suppressive fire against an assaulted objective, booked once per
            # team-minute of effective firing position
            task = state.tasks.get(shooter.id)
            if (task is not None and task.kind == "attack" and not spec.reload_ticks):
                minute = state.tick // 12
                if state._objective_fire_minute.get(shooter.id) == minute:
                    continue
                obj_pos = grid.cell_center(task.objective)
                if (shooter.position.dist_to(obj_pos) <= spec.max_range_m
                        and _los_clear_cached(state, (shooter.id, task.objective),
                                              shooter.position, obj_pos)):
                    state._objective_fire_minute[shooter.id] = minute
                    state.log("objective_hit", {
                        "objective": task.objective, "shooter": shooter.id,
                        "sx": shooter.position.x_m, "sy": shooter.position.y_m,
                    })


def step(state: GameState) -> None:
    if state.tick >= state.scenario.duration_ticks:
        raise GameOver(f"game already ran its {state.scenario.duration_ticks} ticks")
    moved_payload: dict[str, list[float]] = {}
    for team in state.teams:
        if not team.alive:
            continue
        if _advance(state, team):
            moved_payload[team.id] = [team.position.x_m, team.position.y_m]
    state.log("moved", {"teams": moved_payload})
    for cd in state.cooldowns.values():
        for w in list(cd):
            if cd[w] > 0:
                cd[w] -= 1
    _resolve_fires(state)
    state.tick += 1


# ---------------------------------------------------------------------------
# Full-game driver
# ---------------------------------------------------------------------------

class Controller(Protocol):  # pragma: no cover - typing aid
    identity: str

    def on_pause(self, state: GameState, advisories) -> list[Task]:
        ...


@dataclass
class Advisories:
    """What observers delivered at a pause: predictions plus fresh alerts."""

    pause_index: int
    minute: float
    predictions: list = field(default_factory=list)
    alerts: list = field(default_factory=list)


@dataclass
class GameResult:
    replay: ReplayLog
    final_state: GameState
    predictions: list = field(default_factory=list)   # (tick, PredictionSet)
    alerts: list = field(default_factory=list)        # alert payload dicts


def _apply_controller(state: GameState, controller, advisories: Advisories) -> None:
    if controller is None:
        return
    try:
        tasks = controller.on_pause(state, advisories) or []
    except Exception as e:  # noqa: BLE001 - surfaced as a typed failure
        raise ControllerFailure(getattr(controller, "identity", "?"), e) from e
    for task in tasks:
        team = state.team(task.team_id)
        if not team.alive:
            continue  # a bot may race a casualty from the last interval
        issue_task(state, task, by=getattr(controller, "identity", None))


def run_game(
    scenario: Scenario,
    red_controller,
    blue_controller,
    observers: tuple = (),
    config: EngineConfig | None = None,
    commander_script: dict[int, list[Task]] | None = None,
) -> GameResult:
    """Run a full game headlessly.

    ``commander_script`` maps pause ticks to extra tasks applied after the
    bots, exactly as an interactive commander's transcript would have them.
    """
    state = new_game(scenario, config)
    result = GameResult(replay=ReplayLog(header={}), final_state=state)
    header = {
        "record": "header",
        "schema": REPLAY_SCHEMA,
        "engine": ENGINE_VERSION,
        "scenario_hash": scenario_digest(scenario),
        "name": scenario.name,
        "seed": scenario.seed,
        "duration_ticks": scenario.duration_ticks,
        "cadence_min": scenario.advisory_cadence_min,
        "teams": {
            t.id: {"side": t.side, "kind": t.kind, "strength": t.strength,
                   "x": t.position.x_m, "y": t.position.y_m}
            for t in scenario.teams
        },
    }
    result.replay.header = header
    cadence_ticks = scenario.advisory_cadence_min * TICKS_PER_MINUTE

    def deliver(pause_index: int) -> Advisories:
        adv = Advisories(pause_index=pause_index, minute=state.minute())
        for obs in observers:
            got = obs.on_pause(state) or {}
            for pred in got.get("predictions", ()):
                adv.predictions.append(pred)
                result.predictions.append((state.tick, pred))
                state.log("prediction", {
                    "variant": pred.variant,
                    "horizon_min": pred.horizon_min,
                    "created_tick": pred.created_tick,
                    "digest": pred.digest(),
                })
            for alert in got.get("alerts", ()):
                adv.alerts.append(alert)
                result.alerts.append(alert)
                state.log("alert", alert)
        return adv

    def run_minute_observers() -> None:
        for obs in observers:
            hook = getattr(obs, "on_minute", None)
            if hook is None:
                continue
            for alert in hook(state) or ():
                result.alerts.append(alert)
                state.log("alert", alert)

    def apply_script() -> None:
        for task in (commander_script or {}).get(state.tick, []):
            team = state.team(task.team_id)
            if team.alive:
                issue_task(state, task, by="commander")

    run_minute_observers()
    adv0 = deliver(0)
    _apply_controller(state, red_controller, adv0)
    _apply_controller(state, blue_controller, adv0)
    apply_script()
    pause_index = 0
    while state.tick < scenario.duration_ticks:
        step(state)
        if state.tick % TICKS_PER_MINUTE == 0:
            run_minute_observers()
        if state.tick % cadence_ticks == 0 or state.tick == scenario.duration_ticks:
            pause_index += 1
            state.log("paused", {"pause_index": pause_index, "minute": state.minute()})
            if state.tick < scenario.duration_ticks:
                adv = deliver(pause_index)
                _apply_controller(state, red_controller, adv)
                _apply_controller(state, blue_controller, adv)
                apply_script()
    result.replay.events = list(state.events)
    return result
