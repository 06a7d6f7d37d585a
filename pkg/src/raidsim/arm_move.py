"""Movement prediction: zone-graph abstraction plus a low-branching search.

The map is abstracted into zone super-cells; prediction runs iterated best
response between the sides, where each side answers the other's plan with a
per-team beam search over timed zone paths.  The value model is a closed-form
encounter estimate plus mission progress, deliberately separable per team so
a side's best response decomposes team by team.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import SearchConfig
from .replay import canonical_json
from .world import BUILDING, Position, Scenario, TerrainGrid

WAIT_QUANTUM_S = 90.0

# Expected-casualty effectiveness of a shooter kind against a target kind,
# folded from the weapon table (rifles useless against armor, RPGs slow).
EFFECTIVENESS = {
    ("fireteam", "fireteam"): 1.0,
    ("fireteam", "stryker"): 0.5,
    ("stryker", "fireteam"): 1.3,
    ("stryker", "stryker"): 0.0,
}

FIRETEAM_REF_SPEED = 1.5
STRYKER_REF_SPEED = 5.0


class InvalidPlan(ValueError):
    pass


class UnknownTeam(KeyError):
    pass


class TimeOutOfRange(ValueError):
    pass


# ---------------------------------------------------------------------------
# Zone graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Zone:
    id: int
    cells: tuple[int, ...]
    centroid: Position
    cover_fraction: float
    anchor_cell: int  # member cell nearest the centroid


@dataclass
class ZoneGraph:
    zones: list[Zone]
    neighbors: dict[int, tuple[int, ...]]
    times: dict[tuple[int, int], dict[str, float]]  # per mover kind, seconds
    cell_zone: np.ndarray       # flat cell -> zone id (buildings get nearest)
    cell_size_m: float
    width_cells: int

    def zone_of_cell(self, cell: int) -> int:
        return int(self.cell_zone[cell])

    def zone_of_position(self, pos: Position) -> int:
        ix = int(pos.x_m // self.cell_size_m)
        iy = int(pos.y_m // self.cell_size_m)
        return int(self.cell_zone[iy * self.width_cells + ix])

    def traversal_s(self, a: int, b: int, kind: str) -> float:
        return self.times[(a, b)][kind]

    def zone_polygon(self, zone_id: int) -> list[tuple[float, float]]:
        z = self.zones[zone_id]
        s = self.cell_size_m
        xs = [c % self.width_cells for c in z.cells]
        ys = [c // self.width_cells for c in z.cells]
        x0, x1 = min(xs) * s, (max(xs) + 1) * s
        y0, y1 = min(ys) * s, (max(ys) + 1) * s
        return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def abstract_map(grid: TerrainGrid, zone_cells: int | None = None,
                 max_zones: int | None = None) -> ZoneGraph:
    """Partition passable cells into super-cell zones, split by buildings.

    The super-cell edge doubles until the zone count fits under ``max_zones``.
    """
    cfg = SearchConfig()
    zone_cells = zone_cells or cfg.zone_cells
    max_zones = max_zones or cfg.max_zones
    w, h = grid.width_cells, grid.height_cells
    passable = grid.kind != BUILDING

    def build(size: int):
        zone_of = np.full(h * w, -1, dtype=np.int32)
        zones: list[list[int]] = []
        for sy in range(0, h, size):
            for sx in range(0, w, size):
                block = [
                    (ix, iy)
                    for iy in range(sy, min(sy + size, h))
                    for ix in range(sx, min(sx + size, w))
                    if passable[iy, ix]
                ]
                todo = set(block)
                while todo:
                    seed = min(todo)
                    comp = [seed]
                    todo.discard(seed)
                    queue = [seed]
                    while queue:
                        cx, cy = queue.pop()
                        for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
                            if (nx, ny) in todo:
                                todo.discard((nx, ny))
                                comp.append((nx, ny))
                                queue.append((nx, ny))
                    zid = len(zones)
                    zones.append([iy * w + ix for ix, iy in sorted(comp)])
                    for ix, iy in comp:
                        zone_of[iy * w + ix] = zid
        return zones, zone_of

    size = zone_cells
    zones_cells, zone_of = build(size)
    while len(zones_cells) > max_zones:
        size *= 2
        zones_cells, zone_of = build(size)

    s = grid.cell_size_m
    zones: list[Zone] = []
    for zid, cells in enumerate(zones_cells):
        xs = [(c % w + 0.5) * s for c in cells]
        ys = [(c // w + 0.5) * s for c in cells]
        centroid = Position(sum(xs) / len(xs), sum(ys) / len(ys))
        near_building = 0
        for c in cells:
            ix, iy = c % w, c // w
            if any(
                0 <= ix + dx < w and 0 <= iy + dy < h and grid.kind[iy + dy, ix + dx] == BUILDING
                for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)
            ):
                near_building += 1
        anchor = min(cells, key=lambda c: (abs((c % w + 0.5) * s - centroid.x_m)
                                           + abs((c // w + 0.5) * s - centroid.y_m), c))
        zones.append(Zone(zid, tuple(cells), centroid, near_building / len(cells), anchor))

    adj: dict[int, set[int]] = {z.id: set() for z in zones}
    for iy in range(h):
        for ix in range(w):
            z0 = zone_of[iy * w + ix]
            if z0 < 0:
                continue
            for nx, ny in ((ix + 1, iy), (ix, iy + 1)):
                if nx < w and ny < h:
                    z1 = zone_of[ny * w + nx]
                    if z1 >= 0 and z1 != z0:
                        adj[int(z0)].add(int(z1))
                        adj[int(z1)].add(int(z0))
    times: dict[tuple[int, int], dict[str, float]] = {}
    for a, nbrs in adj.items():
        for b in nbrs:
            d = zones[a].centroid.dist_to(zones[b].centroid)
            d = max(d, s)  # split fragments can share a super-cell centroid area
            times[(a, b)] = {
                "fireteam": d / FIRETEAM_REF_SPEED,
                "stryker": d / STRYKER_REF_SPEED,
            }

    # building cells adopt the zone of the nearest passable cell so any
    # position maps somewhere (cover-seeking teams stand inside buildings)
    if (zone_of < 0).any():
        frontier = [
            (ix, iy) for iy in range(h) for ix in range(w) if zone_of[iy * w + ix] >= 0
        ]
        while frontier:
            nxt = []
            for ix, iy in frontier:
                zid = zone_of[iy * w + ix]
                for nx, ny in ((ix + 1, iy), (ix - 1, iy), (ix, iy + 1), (ix, iy - 1)):
                    if 0 <= nx < w and 0 <= ny < h and zone_of[ny * w + nx] < 0:
                        zone_of[ny * w + nx] = zid
                        nxt.append((nx, ny))
            frontier = nxt

    return ZoneGraph(
        zones=zones,
        neighbors={a: tuple(sorted(n)) for a, n in adj.items()},
        times=times,
        cell_zone=zone_of,
        cell_size_m=s,
        width_cells=w,
    )


def zone_distances(graph: ZoneGraph, goal: int, kind: str) -> dict[int, float]:
    """Dijkstra seconds-to-goal over the zone graph for one mover kind."""
    import heapq

    dist = {goal: 0.0}
    heap = [(0.0, goal)]
    while heap:
        d, z = heapq.heappop(heap)
        if d > dist.get(z, math.inf):
            continue
        for n in graph.neighbors.get(z, ()):
            nd = d + graph.traversal_s(z, n, kind)
            if nd < dist.get(n, math.inf) - 1e-12:
                dist[n] = nd
                heapq.heappush(heap, (nd, n))
    return dist


# ---------------------------------------------------------------------------
# Plans and prediction sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plan:
    side: str
    steps: dict[str, tuple[tuple[int, float], ...]]  # team -> ((zone, arrival_s), ...)

    def first_moves(self) -> dict[str, int | None]:
        out = {}
        for tid, path in self.steps.items():
            out[tid] = path[1][0] if len(path) > 1 else None
        return out


def validate_plan(plan: Plan, graph: ZoneGraph, horizon_s: float) -> None:
    for tid, path in plan.steps.items():
        last_t = -1e-9
        for i, (zone, t) in enumerate(path):
            if zone not in graph.neighbors and not (0 <= zone < len(graph.zones)):
                raise InvalidPlan(f"{tid}: unknown zone {zone}")
            if t < last_t:
                raise InvalidPlan(f"{tid}: arrival times must be non-decreasing")
            if t > horizon_s + 1e-6:
                raise InvalidPlan(f"{tid}: arrival beyond the horizon")
            if i > 0:
                prev = path[i - 1][0]
                if zone != prev and zone not in graph.neighbors.get(prev, ()):
                    raise InvalidPlan(f"{tid}: {prev}->{zone} is not a graph edge")
            last_t = t


@dataclass(frozen=True)
class EngagementZone:
    zone: int
    t_start_s: float
    t_end_s: float
    likelihood: float


@dataclass
class PredictionSet:
    created_tick: int
    horizon_min: float
    red_plan: Plan
    blue_recommendation: Plan
    engagement_zones: list[EngagementZone]
    variant: str                      # "most_likely" | "most_dangerous"
    solve_time_s: float
    truncated: bool = False
    tracks: dict[str, tuple[tuple[float, float, float], ...]] = field(default_factory=dict)
    blue_assignments: dict[str, int] = field(default_factory=dict)  # team -> objective cell

    def serializable(self) -> dict:
        return {
            "created_tick": self.created_tick,
            "horizon_min": self.horizon_min,
            "variant": self.variant,
            "truncated": self.truncated,
            "red": {t: list(map(list, p)) for t, p in sorted(self.red_plan.steps.items())},
            "blue": {t: list(map(list, p))
                     for t, p in sorted(self.blue_recommendation.steps.items())},
            "assignments": dict(sorted(self.blue_assignments.items())),
            "tracks": {t: list(map(list, p)) for t, p in sorted(self.tracks.items())},
            "engagements": [
                [e.zone, e.t_start_s, e.t_end_s, e.likelihood]
                for e in self.engagement_zones
            ],
        }

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.serializable()).encode()).hexdigest()


def trajectory_at(pred: PredictionSet, team_id: str, t_min: float) -> Position:
    if team_id not in pred.tracks:
        raise UnknownTeam(team_id)
    if t_min < -1e-9 or t_min > pred.horizon_min + 1e-9:
        raise TimeOutOfRange(f"{t_min} outside [0, {pred.horizon_min}]")
    t = t_min * 60.0
    pts = pred.tracks[team_id]
    if t <= pts[0][0]:
        return Position(pts[0][1], pts[0][2])
    for i in range(1, len(pts)):
        if t <= pts[i][0]:
            t0, x0, y0 = pts[i - 1]
            t1, x1, y1 = pts[i]
            if t1 <= t0:
                return Position(x1, y1)
            f = (t - t0) / (t1 - t0)
            return Position(x0 + (x1 - x0) * f, y0 + (y1 - y0) * f)
    return Position(pts[-1][1], pts[-1][2])


# ---------------------------------------------------------------------------
# Mission context: per-team goals and weights for the value model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CommanderGuidance:
    objective_weights: dict[int, float] = field(default_factory=dict)  # cell -> weight
    protect_teams: dict[str, float] = field(default_factory=dict)      # team -> own-loss multiplier


RED_COMPLEMENT = {
    "point-defense": "point-attack",
    "area-defense": "area-attack",
    "point-attack": "point-defense",
    "area-attack": "area-defense",
    "withdrawal": "harass",
}


@dataclass
class TeamCtx:
    team_id: str
    side: str
    kind: str
    strength: int
    start_zone: int
    goal_zone: int
    goal_dist0_s: float
    mode: str            # "approach" | "hold" | "pursue"
    progress_weight: float
    enemy_loss_weight: float
    own_loss_weight: float
    speed_scale: float   # team speed relative to the reference for its kind
    dist_map: dict[int, float]
    goal_cell: int | None = None  # objective cell backing the goal zone


@dataclass
class MissionContext:
    horizon_s: float
    teams: dict[str, TeamCtx]
    sides: dict[str, list[str]]
    strength_totals: dict[str, float]
    config: SearchConfig


def build_mission_context(
    state,
    graph: ZoneGraph,
    horizon_min: float,
    config: SearchConfig,
    guidance: CommanderGuidance | None = None,
    red_goal_modes: dict[str, str] | None = None,
    red_objective_hints: dict[str, int] | None = None,
) -> MissionContext:
    scenario: Scenario = state.scenario
    guidance = guidance or CommanderGuidance()
    live = [t for t in state.teams if t.alive]
    blue_mission = scenario.mission.type
    red_mission = RED_COMPLEMENT[blue_mission]
    ctx_teams: dict[str, TeamCtx] = {}
    sides = {"red": [], "blue": []}
    totals = {"red": 0.0, "blue": 0.0}

    start_zone = {t.id: graph.zone_of_position(t.position) for t in live}
    dist_cache: dict[tuple[int, str], dict[int, float]] = {}

    def dmap(goal: int, kind: str) -> dict[int, float]:
        key = (goal, kind)
        if key not in dist_cache:
            dist_cache[key] = zone_distances(graph, goal, kind)
        return dist_cache[key]

    def nearest_cell(zone: int, cells) -> int:
        return min(cells, key=lambda c: (
            dmap(graph.zone_of_cell(c), "fireteam").get(zone, math.inf), c))

    def objective_quotas(side: str, mission: str, cells, ids) -> dict[int, int]:
        """How many teams each objective gets; defense mass follows the
        revealed red axes (teams observed actually closing on an objective)."""
        n = len(ids)
        hinted = red_objective_hints or {}
        if side == "blue" and mission in ("point-defense", "area-defense"):
            threat = {c: 1.0 for c in cells}
            hinted_strength = 0.0
            red_total = 0.0
            for t in live:
                if t.side != "red":
                    continue
                red_total += t.strength
                if hinted.get(t.id) in threat:
                    threat[hinted[t.id]] += t.strength
                    hinted_strength += t.strength
            total = sum(threat.values())
            # tilt as hard as the evidence allows, never stripping an objective
            w = min(0.6, hinted_strength / max(red_total, 1.0))
            raw = {c: n * ((1.0 - w) / len(cells) + w * threat[c] / total) for c in cells}
        else:
            raw = {c: n / len(cells) for c in cells}
        base = {c: int(raw[c]) for c in cells}
        leftover = n - sum(base.values())
        by_frac = sorted(cells, key=lambda c: (-(raw[c] - base[c]), c))
        for k in range(leftover):
            base[by_frac[k % len(cells)]] += 1
        return base

    def assign_cells(ids, cells, quotas):
        remaining = set(ids)
        zone_asn: dict[str, int] = {}
        cell_asn: dict[str, int | None] = {}
        for c in sorted(cells, key=lambda c: (-quotas[c], c)):
            dm = dmap(graph.zone_of_cell(c), "fireteam")
            take = sorted(remaining,
                          key=lambda i: (dm.get(start_zone[i], math.inf), i))[: quotas[c]]
            for i in take:
                remaining.discard(i)
                zone_asn[i] = graph.zone_of_cell(c)
                cell_asn[i] = c
        for i in sorted(remaining):
            c = nearest_cell(start_zone[i], cells)
            zone_asn[i] = graph.zone_of_cell(c)
            cell_asn[i] = c
        return zone_asn, cell_asn

    for side, mission in (("blue", blue_mission), ("red", red_mission)):
        ids = sorted(t.id for t in live if t.side == side)
        sides[side] = ids
        teams_by_id = {t.id: t for t in live}
        totals[side] = float(sum(teams_by_id[i].strength for i in ids))
        kind_of = {i: teams_by_id[i].kind for i in ids}
        if mission == "harass":
            enemy_zones = sorted({start_zone[t.id] for t in live if t.side != side}) or [0]
            assignment = {
                i: min(enemy_zones, key=lambda g: (
                    dmap(g, "fireteam").get(start_zone[i], math.inf), g))
                for i in ids
            }
            cell_assignment: dict[str, int | None] = {i: None for i in ids}
        else:
            cells = list(scenario.mission.objectives) or [0]
            quotas = objective_quotas(side, mission, cells, ids)
            assignment, cell_assignment = assign_cells(ids, cells, quotas)
        if side == "red" and red_objective_hints:
            # observed approach axes trump the balanced default
            for i in ids:
                cell = red_objective_hints.get(i)
                if cell is not None:
                    assignment[i] = graph.zone_of_cell(cell)
                    cell_assignment[i] = cell
        hold = mission in ("point-defense", "area-defense")
        mode = "hold" if hold else ("pursue" if mission == "harass" else "approach")
        for i in ids:
            team = teams_by_id[i]
            goal = assignment[i]
            if hold and team.position.dist_to(graph.zones[goal].centroid) <= 160.0:
                # already in position: hold the ground actually occupied
                goal = start_zone[i]
            per_kind = dmap(goal, kind_of[i])
            ref = STRYKER_REF_SPEED if team.kind == "stryker" else FIRETEAM_REF_SPEED
            pw, ew, lw = config.mission_weights.get(
                (mission, side),
                (config.weight_progress, config.weight_enemy_losses,
                 config.weight_own_losses))
            if side == "blue":
                cell = cell_assignment.get(i)
                if cell is not None:
                    pw *= guidance.objective_weights.get(cell, 1.0)
                lw *= guidance.protect_teams.get(i, 1.0)
            ctx_teams[i] = TeamCtx(
                team_id=i,
                side=side,
                kind=team.kind,
                strength=team.strength,
                start_zone=start_zone[i],
                goal_zone=goal,
                goal_dist0_s=per_kind.get(start_zone[i], math.inf),
                mode=mode,
                progress_weight=pw,
                enemy_loss_weight=ew,
                own_loss_weight=lw,
                speed_scale=team.speed_mps / ref if team.kind == "fireteam" else 1.0,
                dist_map=per_kind,
                goal_cell=cell_assignment.get(i),
            )

    # Estimated red goals (from the cognitive estimates) override the default
    # mission complement team by team: the mental-state picture shapes where
    # the movement search expects each team to go.
    if red_goal_modes:
        blue_zones = sorted({start_zone[t.id] for t in live if t.side == "blue"})
        for tid, label in sorted(red_goal_modes.items()):
            tc = ctx_teams.get(tid)
            if tc is None or tc.side != "red":
                continue
            if label == "assault" or label not in ("defend_in_place", "harass", "withdraw"):
                continue
            if label == "defend_in_place":
                goal = tc.start_zone
                mode = "hold"
            elif label == "harass":
                goal = min(blue_zones, key=lambda z: dmap(z, tc.kind).get(
                    tc.start_zone, math.inf)) if blue_zones else tc.goal_zone
                mode = "approach"
            else:  # withdraw: break contact toward the safest nearby zone
                if blue_zones:
                    away = _multi_source_distances(graph, blue_zones)
                    reach = zone_distances(graph, tc.start_zone, tc.kind)
                    best = None
                    for z, d_reach in reach.items():
                        if d_reach > 450.0:
                            continue
                        key = (away.get(z, 0.0), -z)
                        if best is None or key > best[0]:
                            best = (key, z)
                    goal = best[1] if best is not None else tc.start_zone
                else:
                    goal = tc.start_zone
                mode = "approach"
            per_kind = dmap(goal, tc.kind)
            ctx_teams[tid] = replace(
                tc, goal_zone=goal, mode=mode, dist_map=per_kind,
                goal_dist0_s=per_kind.get(tc.start_zone, math.inf))
    return MissionContext(
        horizon_s=horizon_min * 60.0,
        teams=ctx_teams,
        sides=sides,
        strength_totals=totals,
        config=config,
    )


def _multi_source_distances(graph: ZoneGraph, sources) -> dict[int, float]:
    import heapq

    dist = {s: 0.0 for s in sources}
    heap = [(0.0, s) for s in sorted(sources)]
    heapq.heapify(heap)
    while heap:
        d, z = heapq.heappop(heap)
        if d > dist.get(z, math.inf):
            continue
        for nb in graph.neighbors.get(z, ()):
            nd = d + graph.traversal_s(z, nb, "fireteam")
            if nd < dist.get(nb, math.inf) - 1e-12:
                dist[nb] = nd
                heapq.heappush(heap, (nd, nb))
    return dist


# ---------------------------------------------------------------------------
# Value model
# ---------------------------------------------------------------------------

def _intervals(path, horizon_s: float):
    """Occupancy intervals [(zone, t0, t1)]; the team sits in a zone until the
    next arrival, and in the last zone until the horizon."""
    out = []
    for i, (zone, t) in enumerate(path):
        t_end = path[i + 1][1] if i + 1 < len(path) else horizon_s
        if t_end > t:
            out.append((zone, t, min(t_end, horizon_s)))
    if not out:
        out.append((path[0][0], 0.0, horizon_s))
    return out


def _occupancy_index(plans: dict, ctx: MissionContext, graph: ZoneGraph, side: str):
    """zone -> list of (team_ctx, t0, t1) for the given side's plan."""
    index: dict[int, list] = {}
    for tid in ctx.sides[side]:
        path = plans[tid]
        tc = ctx.teams[tid]
        for zone, t0, t1 in _intervals(path, ctx.horizon_s):
            index.setdefault(zone, []).append((tc, t0, t1))
    return index


def _contact_terms(tc: TeamCtx, zone: int, t0: float, t1: float,
                   opp_index, graph: ZoneGraph, cfg: SearchConfig):
    """Expected (inflicted, taken) casualties for one occupancy interval."""
    inflicted = 0.0
    taken = 0.0
    my_cover = graph.zones[zone].cover_fraction
    for opp_zone, factor in [(zone, 1.0)] + [
        (n, cfg.adjacent_contact_factor) for n in graph.neighbors.get(zone, ())
    ]:
        for oc, o0, o1 in opp_index.get(opp_zone, ()):
            overlap = min(t1, o1) - max(t0, o0)
            if overlap <= 0:
                continue
            minutes = overlap / 60.0
            their_cover = graph.zones[opp_zone].cover_fraction
            rate = cfg.contact_rate_per_strength_min * factor
            inflicted += (minutes * tc.strength * rate
                          * EFFECTIVENESS[(tc.kind, oc.kind)] * (1.0 - their_cover / 2.0))
            taken += (minutes * oc.strength * rate
                      * EFFECTIVENESS[(oc.kind, tc.kind)] * (1.0 - my_cover / 2.0))
    return inflicted, taken


def _progress_of_path(tc: TeamCtx, path, horizon_s: float, graph: ZoneGraph) -> float:
    if tc.mode == "hold":
        dwell = 0.0
        for zone, t0, t1 in _intervals(path, horizon_s):
            if zone == tc.goal_zone:
                dwell += t1 - t0
            elif tc.goal_zone in graph.neighbors.get(zone, ()):
                dwell += 0.4 * (t1 - t0)
        return dwell / horizon_s
    d0 = tc.goal_dist0_s
    d_end = tc.dist_map.get(path[-1][0], math.inf)
    if math.isinf(d_end):
        return 0.0
    if d0 <= 0.0:
        closeness = 1.0
    else:
        closeness = max(0.0, min(1.0, (d0 - d_end) / d0))
    dwell = 0.0
    for zone, t0, t1 in _intervals(path, horizon_s):
        if zone == tc.goal_zone:
            dwell += t1 - t0
    return 0.7 * closeness + 0.3 * dwell / horizon_s


def _soft_cap(x: float, scale: float) -> float:
    """Expected losses saturate: nobody loses more strength than they have."""
    if scale <= 0.0:
        return 0.0
    return scale * (1.0 - math.exp(-x / scale))


def _team_path_score(tc: TeamCtx, path, ctx: MissionContext, graph: ZoneGraph,
                     opp_index) -> tuple[float, float, float]:
    """(own-side value contribution, inflicted, taken) for one team's path."""
    cfg = ctx.config
    inflicted = 0.0
    taken = 0.0
    for zone, t0, t1 in _intervals(path, ctx.horizon_s):
        i, k = _contact_terms(tc, zone, t0, t1, opp_index, graph, cfg)
        inflicted += i
        taken += k
    progress = _progress_of_path(tc, path, ctx.horizon_s, graph)
    enemy_total = max(1.0, ctx.strength_totals["red" if tc.side == "blue" else "blue"])
    own_total = max(1.0, ctx.strength_totals[tc.side])
    value = (tc.progress_weight * progress
             + tc.enemy_loss_weight * _soft_cap(inflicted, enemy_total) / enemy_total
             - tc.own_loss_weight * _soft_cap(taken, float(tc.strength)) / own_total)
    return value, inflicted, taken


@dataclass(frozen=True)
class PlanValues:
    red_value: float
    blue_value: float


def expected_losses(state, graph: ZoneGraph, red: Plan, blue: Plan,
                    missions: MissionContext) -> dict[str, float]:
    """Expected casualties suffered by each side under the encounter model."""
    red_index = _occupancy_index(red.steps, missions, graph, "red")
    blue_index = _occupancy_index(blue.steps, missions, graph, "blue")
    losses = {"red": 0.0, "blue": 0.0}
    for side, plan, opp_index in (("red", red, blue_index), ("blue", blue, red_index)):
        for tid in missions.sides[side]:
            tc = missions.teams[tid]
            _v, inflicted, _taken = _team_path_score(tc, plan.steps[tid], missions, graph, opp_index)
            losses["blue" if side == "red" else "red"] += inflicted
    return losses


def evaluate_plans(state, graph: ZoneGraph, red: Plan, blue: Plan,
                   missions: MissionContext, validate: bool = True) -> PlanValues:
    if validate:
        validate_plan(red, graph, missions.horizon_s)
        validate_plan(blue, graph, missions.horizon_s)
    red_index = _occupancy_index(red.steps, missions, graph, "red")
    blue_index = _occupancy_index(blue.steps, missions, graph, "blue")
    values = {"red": 0.0, "blue": 0.0}
    for side, plan, opp_index in (("red", red, blue_index), ("blue", blue, red_index)):
        for tid in missions.sides[side]:
            tc = missions.teams[tid]
            v, _, _ = _team_path_score(tc, plan.steps[tid], missions, graph, opp_index)
            values[side] += v
    return PlanValues(red_value=values["red"], blue_value=values["blue"])


# ---------------------------------------------------------------------------
# Per-team beam search (one side's best response, team by team)
# ---------------------------------------------------------------------------

def legal_moves(graph: ZoneGraph, tc: TeamCtx, zone: int, t: float, horizon_s: float):
    """(next_zone, arrival) moves from here; None marks hold-to-horizon."""
    moves: list[tuple[int, float] | None] = [None]
    if t + WAIT_QUANTUM_S < horizon_s:
        moves.append((zone, t + WAIT_QUANTUM_S))
    for n in graph.neighbors.get(zone, ()):
        dt = graph.traversal_s(zone, n, tc.kind) / max(tc.speed_scale, 1e-9)
        if t + dt <= horizon_s:
            moves.append((n, t + dt))
    return moves


def _rank_candidates(moves, tc: TeamCtx, graph: ZoneGraph, prior: dict | None,
                     top_m: int, depth: int):
    """Order real moves by goal progress, cover, and the ghost prior; the
    hold-to-horizon option is always kept."""
    def score(mv):
        zone, _t = mv
        d = tc.dist_map.get(zone, math.inf)
        if math.isinf(d):
            d = 1e9
        s = -d + 30.0 * graph.zones[zone].cover_fraction
        if prior and depth == 0:
            s += 200.0 * prior.get(zone, 0.0)
        return s

    ranked = sorted((m for m in moves if m is not None),
                    key=lambda mv: (-score(mv), mv[0]))
    return [None] + ranked[:top_m]


@dataclass
class _DangerTracker:
    """Largest expected blue losses over every red candidate plan examined."""

    best_total: float = -math.inf
    best_steps: dict | None = None

    def offer(self, total: float, base_steps: dict, team_id: str, path) -> None:
        if total > self.best_total + 1e-12:
            self.best_total = total
            steps = dict(base_steps)
            steps[team_id] = path
            self.best_steps = steps


def _beam_best_path(tc: TeamCtx, ctx: MissionContext, graph: ZoneGraph,
                    opp_index, cfg: SearchConfig, prior: dict | None,
                    on_complete=None):
    """Best timed zone path for one team against a fixed opposing plan.

    Beam nodes carry accumulated contact/dwell terms so extending a path by
    one move costs only that move's interval, matching _team_path_score sums
    addition for addition.
    """
    horizon = ctx.horizon_s
    hold_mode = tc.mode == "hold"
    goal = tc.goal_zone
    goal_nbrs = graph.neighbors.get(goal, ())
    enemy_total = max(1.0, ctx.strength_totals["red" if tc.side == "blue" else "blue"])
    own_total = max(1.0, ctx.strength_totals[tc.side])

    def interval_terms(zone, t0, t1):
        inflicted, taken = _contact_terms(tc, zone, t0, t1, opp_index, graph, cfg)
        if zone == goal:
            dwell = t1 - t0
        elif hold_mode and zone in goal_nbrs:
            dwell = 0.4 * (t1 - t0)
        else:
            dwell = 0.0
        return inflicted, taken, dwell

    def completion_value(acc_i, acc_k, acc_dwell, last_zone):
        if hold_mode:
            progress = acc_dwell / horizon
        else:
            d0 = tc.goal_dist0_s
            d_end = tc.dist_map.get(last_zone, math.inf)
            if math.isinf(d_end):
                closeness = 0.0
            elif d0 <= 0.0:
                closeness = 1.0
            else:
                closeness = max(0.0, min(1.0, (d0 - d_end) / d0))
            progress = 0.7 * closeness + 0.3 * acc_dwell / horizon
        return (tc.progress_weight * progress
                + tc.enemy_loss_weight * _soft_cap(acc_i, enemy_total) / enemy_total
                - tc.own_loss_weight * _soft_cap(acc_k, float(tc.strength)) / own_total)

    start = ((tc.start_zone, 0.0),)
    # node = (path, acc_inflicted, acc_taken, acc_dwell) over committed intervals
    frontier = [(start, 0.0, 0.0, 0.0)]
    best_path = start
    best_value = -math.inf
    best_key: tuple = ()
    best_inflicted = 0.0
    depth = 0
    max_depth = min(64, int(horizon / 45.0) + 4)
    while frontier and depth <= max_depth:
        scored_next = []
        for path, acc_i, acc_k, acc_dwell in frontier:
            zone, t = path[-1]
            moves = legal_moves(graph, tc, zone, t, horizon)
            tail_i, tail_k, tail_d = interval_terms(zone, t, horizon)
            for mv in _rank_candidates(moves, tc, graph, prior, cfg.moves_per_expansion, depth):
                if mv is None:
                    total_i = acc_i + tail_i
                    v = completion_value(total_i, acc_k + tail_k, acc_dwell + tail_d, zone)
                    if on_complete is not None:
                        on_complete(total_i, path)
                    zones_key = tuple(z for z, _ in path)
                    if (v > best_value + 1e-12
                            or (abs(v - best_value) <= 1e-12 and zones_key < best_key)):
                        best_value, best_key = v, zones_key
                        best_path = path
                        best_inflicted = total_i
                else:
                    nz, nt = mv
                    si, sk, sd = interval_terms(zone, t, nt)
                    ni, nk, nd = acc_i + si, acc_k + sk, acc_dwell + sd
                    ti, tk, td = interval_terms(nz, nt, horizon)
                    v = completion_value(ni + ti, nk + tk, nd + td, nz)
                    new_path = path + (mv,)
                    scored_next.append(
                        (v, tuple(z for z, _ in new_path), new_path, ni, nk, nd))
        scored_next.sort(key=lambda it: (-it[0], it[1]))
        frontier = [(it[2], it[3], it[4], it[5]) for it in scored_next[: cfg.beam_width]]
        depth += 1
    return best_path, best_value, best_inflicted


def _best_response(side: str, plans_self: dict, plans_opp: dict,
                   ctx: MissionContext, graph: ZoneGraph, cfg: SearchConfig,
                   priors: dict | None, danger: _DangerTracker | None):
    opp_side = "blue" if side == "red" else "red"
    opp_index = _occupancy_index(plans_opp, ctx, graph, opp_side)
    current: dict[str, tuple[float, float]] = {}  # team -> (value, inflicted)
    for tid in ctx.sides[side]:
        tc = ctx.teams[tid]
        v, inflicted, _ = _team_path_score(tc, plans_self[tid], ctx, graph, opp_index)
        current[tid] = (v, inflicted)
    for tid in ctx.sides[side]:
        tc = ctx.teams[tid]
        prior = (priors or {}).get(tid)
        on_complete = None
        if danger is not None:
            others = sum(v for k, (_cv, v) in current.items() if k != tid)

            def on_complete(inflicted, path, _tid=tid, _others=others):
                danger.offer(_others + inflicted, plans_self, _tid, path)

        path, value, inflicted = _beam_best_path(tc, ctx, graph, opp_index, cfg,
                                                 prior, on_complete)
        cur_v, cur_inflicted = current[tid]
        if value > cur_v + 1e-12:
            plans_self[tid] = path
            current[tid] = (value, inflicted)
        # otherwise keep the incumbent: a response never worsens its own side
    return plans_self


def _seed_plans(state, graph: ZoneGraph, ctx: MissionContext) -> dict[str, dict]:
    """Blue seeds from current tasks; red seeds in place."""
    plans = {"red": {}, "blue": {}}
    task_dest = {}
    for tid, task in state.tasks.items():
        if task.kind in ("move", "withdraw") and task.dest is not None:
            task_dest[tid] = graph.zone_of_position(task.dest)
        elif task.kind == "defend" and task.center is not None:
            task_dest[tid] = graph.zone_of_position(task.center)
        elif task.kind == "attack" and task.objective is not None:
            task_dest[tid] = graph.zone_of_cell(task.objective)
    for side in ("red", "blue"):
        for tid in ctx.sides[side]:
            tc = ctx.teams[tid]
            path = [(tc.start_zone, 0.0)]
            if side == "blue" and tid in task_dest:
                goal = task_dest[tid]
                dist = zone_distances(graph, goal, tc.kind)
                zone, t = tc.start_zone, 0.0
                guard = 0
                while zone != goal and guard < 128:
                    guard += 1
                    nxt = min(
                        (n for n in graph.neighbors.get(zone, ())
                         if dist.get(n, math.inf) < dist.get(zone, math.inf)),
                        key=lambda n: (dist.get(n, math.inf), n),
                        default=None,
                    )
                    if nxt is None:
                        break
                    t += graph.traversal_s(zone, nxt, tc.kind) / max(tc.speed_scale, 1e-9)
                    if t > ctx.horizon_s:
                        break
                    zone = nxt
                    path.append((zone, t))
            plans[side][tid] = tuple(path)
    return plans


def _plan_tracks(state, plan_steps: dict, graph: ZoneGraph, horizon_s: float):
    """Waypoint polylines anchored at each team's live position."""
    pos = {t.id: t.position for t in state.teams}
    tracks = {}
    for tid, path in plan_steps.items():
        pts = [(0.0, pos[tid].x_m, pos[tid].y_m)]
        for zone, t in path[1:]:
            c = graph.zones[zone].centroid
            pts.append((t, c.x_m, c.y_m))
        tracks[tid] = tuple(pts)
    return tracks


def _engagements(red_steps, blue_steps, ctx: MissionContext, graph: ZoneGraph,
                 cfg: SearchConfig) -> list[EngagementZone]:
    blue_index = _occupancy_index(blue_steps, ctx, graph, "blue")
    per_zone: dict[int, list[tuple[float, float, float]]] = {}
    for tid in ctx.sides["red"]:
        tc = ctx.teams[tid]
        for zone, t0, t1 in _intervals(red_steps[tid], ctx.horizon_s):
            for opp_zone, factor in [(zone, 1.0)] + [
                (n, cfg.adjacent_contact_factor) for n in graph.neighbors.get(zone, ())
            ]:
                for oc, o0, o1 in blue_index.get(opp_zone, ()):
                    lo, hi = max(t0, o0), min(t1, o1)
                    if hi <= lo:
                        continue
                    minutes = (hi - lo) / 60.0
                    intensity = (minutes * cfg.contact_rate_per_strength_min * factor
                                 * (tc.strength + oc.strength))
                    per_zone.setdefault(opp_zone, []).append((lo, hi, intensity))
                    if opp_zone != zone:
                        per_zone.setdefault(zone, []).append((lo, hi, intensity))
    out = []
    for zone in sorted(per_zone):
        windows = sorted(per_zone[zone])
        merged: list[list[float]] = []
        for lo, hi, inten in windows:
            if merged and lo <= merged[-1][1] + 1e-9:
                merged[-1][1] = max(merged[-1][1], hi)
                merged[-1][2] += inten
            else:
                merged.append([lo, hi, inten])
        for lo, hi, inten in merged:
            out.append(EngagementZone(zone, lo, hi, 1.0 - math.exp(-1.5 * inten)))
    return out


def predict(
    state,
    graph: ZoneGraph,
    guidance: CommanderGuidance | None,
    horizon_min: float,
    config: SearchConfig | None = None,
    red_move_priors: dict | None = None,
    red_goal_modes: dict[str, str] | None = None,
    red_objective_hints: dict[str, int] | None = None,
) -> list[PredictionSet]:
    """Iterated best response; returns most-likely and most-dangerous sets."""
    if not (0.0 < horizon_min <= 300.0):
        raise ValueError("horizon_min must be in (0, 300]")
    cfg = config or SearchConfig()
    t_start = time.perf_counter()
    ctx = build_mission_context(state, graph, horizon_min, cfg, guidance,
                                red_goal_modes, red_objective_hints)
    plans = _seed_plans(state, graph, ctx)
    danger = _DangerTracker()
    truncated = False
    for _ in range(cfg.best_response_rounds):
        if time.perf_counter() - t_start > cfg.solve_budget_s:
            truncated = True
            break
        for _sweep in range(cfg.sweeps_per_response):
            _best_response("red", plans["red"], plans["blue"], ctx, graph, cfg,
                           red_move_priors, danger)
        for _sweep in range(cfg.sweeps_per_response):
            _best_response("blue", plans["blue"], plans["red"], ctx, graph, cfg,
                           None, None)
    red_plan = Plan("red", {t: tuple(p) for t, p in plans["red"].items()})
    blue_plan = Plan("blue", {t: tuple(p) for t, p in plans["blue"].items()})
    solve_s = time.perf_counter() - t_start

    assignments = {
        tid: ctx.teams[tid].goal_cell
        for tid in ctx.sides["blue"]
        if ctx.teams[tid].goal_cell is not None
    }

    def build(variant: str, red_steps) -> PredictionSet:
        rp = Plan("red", {t: tuple(p) for t, p in red_steps.items()})
        tracks = _plan_tracks(state, {**red_steps, **plans["blue"]}, graph, ctx.horizon_s)
        return PredictionSet(
            created_tick=state.tick,
            horizon_min=horizon_min,
            red_plan=rp,
            blue_recommendation=blue_plan,
            engagement_zones=_engagements(red_steps, plans["blue"], ctx, graph, cfg),
            variant=variant,
            solve_time_s=solve_s,
            truncated=truncated,
            tracks=tracks,
            blue_assignments=assignments,
        )

    most_likely = build("most_likely", plans["red"])
    danger_steps = danger.best_steps if danger.best_steps is not None else plans["red"]
    most_dangerous = build("most_dangerous", danger_steps)
    return [most_likely, most_dangerous]
