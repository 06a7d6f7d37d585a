"""Terrain grid, scenario documents, line of sight, and pathfinding.

The map is a dense 2D grid of 10 m cells (open ground, road, or a building
footprint with a floor count).  Positions are continuous meters inside the
grid.  Scenario documents are canonical JSON (schema ``raid-scenario/1``)
and must round-trip byte-exactly through ``render_scenario``/``load_scenario``.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

SCHEMA_VERSION = "raid-scenario/1"

OPEN, ROAD, BUILDING = 0, 1, 2

MISSION_TYPES = ("point-attack", "area-attack", "point-defense", "area-defense", "withdrawal")

SIDES = ("red", "blue")
KINDS = ("fireteam", "stryker")

# Relative per-cell traversal time factors (mirror the engine speed table).
FIRETEAM_BUILDING_FACTOR = 2.5  # 1 / 0.4 interior speed factor
STRYKER_OPEN_FACTOR = 2.0       # road 8 m/s vs open 4 m/s

SQRT2 = math.sqrt(2.0)

_DIRS8 = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


class MalformedDocument(ValueError):
    """Scenario text is not parseable against the schema."""


class InvariantViolation(ValueError):
    """Scenario parses but breaks a domain invariant."""


class OutOfBounds(ValueError):
    pass


class Unreachable(ValueError):
    pass


@dataclass(frozen=True)
class Position:
    x_m: float
    y_m: float

    def dist_to(self, other: "Position") -> float:
        return math.hypot(self.x_m - other.x_m, self.y_m - other.y_m)


class TerrainGrid:
    """Dense cell grid; ``kind`` is OPEN/ROAD/BUILDING, ``floors`` >= 1 on buildings."""

    def __init__(self, width_cells: int, height_cells: int, cell_size_m: float,
                 kind: np.ndarray, floors: np.ndarray):
        if width_cells < 1 or height_cells < 1:
            raise InvariantViolation("grid must be at least 1x1")
        if cell_size_m <= 0:
            raise InvariantViolation("cell_size_m must be positive")
        if kind.shape != (height_cells, width_cells):
            raise InvariantViolation("cell array does not match declared size")
        if np.any((kind == BUILDING) & (floors < 1)):
            raise InvariantViolation("building cells need floors >= 1")
        self.width_cells = width_cells
        self.height_cells = height_cells
        self.cell_size_m = float(cell_size_m)
        self.kind = np.ascontiguousarray(kind, dtype=np.uint8)
        self.floors = np.ascontiguousarray(floors, dtype=np.uint8)
        self.blocked = np.ascontiguousarray(self.kind == BUILDING)

    # -- geometry helpers -------------------------------------------------
    @property
    def width_m(self) -> float:
        return self.width_cells * self.cell_size_m

    @property
    def height_m(self) -> float:
        return self.height_cells * self.cell_size_m

    def in_bounds(self, pos: Position) -> bool:
        return 0.0 <= pos.x_m < self.width_m and 0.0 <= pos.y_m < self.height_m

    def cell_of(self, pos: Position) -> tuple[int, int]:
        return int(pos.x_m // self.cell_size_m), int(pos.y_m // self.cell_size_m)

    def cell_index(self, ix: int, iy: int) -> int:
        return iy * self.width_cells + ix

    def cell_xy(self, index: int) -> tuple[int, int]:
        return index % self.width_cells, index // self.width_cells

    def cell_center(self, index: int) -> Position:
        ix, iy = self.cell_xy(index)
        s = self.cell_size_m
        return Position((ix + 0.5) * s, (iy + 0.5) * s)

    def kind_at(self, ix: int, iy: int) -> int:
        return int(self.kind[iy, ix])

    def is_building_cell(self, pos: Position) -> bool:
        ix, iy = self.cell_of(pos)
        return bool(self.blocked[iy, ix])

    def passable(self, ix: int, iy: int, kind: str) -> bool:
        if not (0 <= ix < self.width_cells and 0 <= iy < self.height_cells):
            return False
        if kind == "stryker":
            return self.kind[iy, ix] != BUILDING
        return True  # fireteams may enter buildings

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, TerrainGrid)
            and self.width_cells == other.width_cells
            and self.height_cells == other.height_cells
            and self.cell_size_m == other.cell_size_m
            and np.array_equal(self.kind, other.kind)
            and np.array_equal(self.floors, other.floors)
        )


@dataclass
class Team:
    id: str
    side: str            # "red" | "blue"
    kind: str            # "fireteam" | "stryker"
    strength: int
    position: Position
    speed_mps: float
    weapons: tuple[str, ...]
    scripted_emotion: str | None = None  # "fearful" | "zealous", red only

    @property
    def alive(self) -> bool:
        return self.strength > 0


@dataclass(frozen=True)
class Mission:
    type: str
    objectives: tuple[int, ...]  # flat cell indices
    second: "Mission | None" = None


@dataclass(frozen=True)
class IntelMode:
    masked_fraction: float = 0.0  # 0.0 = full intelligence (default)

    @property
    def full(self) -> bool:
        return self.masked_fraction == 0.0


@dataclass
class Scenario:
    name: str
    terrain: TerrainGrid
    teams: list[Team]
    mission: Mission
    duration_ticks: int
    seed: int
    intel: IntelMode = field(default_factory=IntelMode)
    advisory_cadence_min: int = 15

    @property
    def duration_min(self) -> float:
        return self.duration_ticks / 12.0


# ---------------------------------------------------------------------------
# Scenario document I/O
# ---------------------------------------------------------------------------

def _encode_rows(grid: TerrainGrid) -> list[str]:
    rows = []
    for iy in range(grid.height_cells):
        tokens: list[str] = []
        run_code = None
        run_len = 0
        for ix in range(grid.width_cells):
            k = grid.kind[iy, ix]
            code = "O" if k == OPEN else "R" if k == ROAD else f"B{int(grid.floors[iy, ix])}"
            if code == run_code:
                run_len += 1
            else:
                if run_code is not None:
                    tokens.append(f"{run_len}{run_code}")
                run_code, run_len = code, 1
        tokens.append(f"{run_len}{run_code}")
        rows.append(" ".join(tokens))
    return rows


def _decode_rows(rows: list[str], width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    if len(rows) != height:
        raise MalformedDocument(f"expected {height} grid rows, got {len(rows)}")
    kind = np.zeros((height, width), dtype=np.uint8)
    floors = np.zeros((height, width), dtype=np.uint8)
    for iy, row in enumerate(rows):
        ix = 0
        for token in row.split():
            i = 0
            while i < len(token) and token[i].isdigit():
                i += 1
            if i == 0 or i == len(token):
                raise MalformedDocument(f"bad run token {token!r} in row {iy}")
            count = int(token[:i])
            code = token[i:]
            if ix + count > width:
                raise MalformedDocument(f"row {iy} overflows declared width")
            if code == "O":
                k, f = OPEN, 0
            elif code == "R":
                k, f = ROAD, 0
            elif code.startswith("B") and code[1:].isdigit():
                k, f = BUILDING, int(code[1:])
                if f < 1:
                    raise InvariantViolation("building cells need floors >= 1")
            else:
                raise MalformedDocument(f"unknown cell code {code!r}")
            kind[iy, ix:ix + count] = k
            floors[iy, ix:ix + count] = f
            ix += count
        if ix != width:
            raise MalformedDocument(f"row {iy} has {ix} cells, expected {width}")
    return kind, floors


def _mission_to_doc(m: Mission) -> dict:
    doc: dict = {"type": m.type, "objectives": list(m.objectives)}
    if m.second is not None:
        doc["second"] = _mission_to_doc(m.second)
    return doc


def _mission_from_doc(doc: dict) -> Mission:
    if not isinstance(doc, dict) or "type" not in doc:
        raise MalformedDocument("mission must carry a type")
    second = _mission_from_doc(doc["second"]) if "second" in doc else None
    return Mission(
        type=doc["type"],
        objectives=tuple(int(o) for o in doc.get("objectives", [])),
        second=second,
    )


def render_scenario(s: Scenario) -> str:
    """Serialize to canonical JSON (sorted keys, no whitespace)."""
    teams = []
    for t in s.teams:
        doc = {
            "id": t.id, "side": t.side, "kind": t.kind, "strength": t.strength,
            "x": t.position.x_m, "y": t.position.y_m,
        }
        if t.scripted_emotion is not None:
            doc["emotion"] = t.scripted_emotion
        teams.append(doc)
    doc = {
        "version": SCHEMA_VERSION,
        "name": s.name,
        "grid": {
            "w": s.terrain.width_cells,
            "h": s.terrain.height_cells,
            "cell_m": s.terrain.cell_size_m,
            "rows": _encode_rows(s.terrain),
        },
        "teams": teams,
        "mission": _mission_to_doc(s.mission),
        "duration_min": s.duration_ticks / 12 if s.duration_ticks % 12 else s.duration_ticks // 12,
        "seed": s.seed,
        "intel": "full" if s.intel.full else {"masked": s.intel.masked_fraction},
        "cadence_min": s.advisory_cadence_min,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def default_speed(side: str, kind: str) -> float:
    from .config import EngineConfig

    cfg = EngineConfig()
    if kind == "stryker":
        return cfg.stryker_open_speed_mps
    return cfg.red_fireteam_speed() if side == "red" else cfg.blue_fireteam_speed_mps


def default_weapons(side: str, kind: str) -> tuple[str, ...]:
    from .config import DEFAULT_LOADOUTS

    return DEFAULT_LOADOUTS.get((side, kind), ())


def load_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedDocument(f"not valid JSON: {e}") from None
    if not isinstance(doc, dict) or doc.get("version") != SCHEMA_VERSION:
        raise MalformedDocument(f"missing or unsupported version (want {SCHEMA_VERSION})")
    try:
        g = doc["grid"]
        width, height, cell_m = int(g["w"]), int(g["h"]), float(g["cell_m"])
        kind, floors = _decode_rows(g["rows"], width, height)
        terrain = TerrainGrid(width, height, cell_m, kind, floors)
        teams = []
        for td in doc["teams"]:
            teams.append(Team(
                id=str(td["id"]),
                side=td["side"],
                kind=td["kind"],
                strength=int(td["strength"]),
                position=Position(float(td["x"]), float(td["y"])),
                speed_mps=default_speed(td["side"], td["kind"]),
                weapons=default_weapons(td["side"], td["kind"]),
                scripted_emotion=td.get("emotion"),
            ))
        mission = _mission_from_doc(doc["mission"])
        duration_min = doc["duration_min"]
        intel_doc = doc["intel"]
        intel = IntelMode() if intel_doc == "full" else IntelMode(float(intel_doc["masked"]))
        scenario = Scenario(
            name=str(doc["name"]),
            terrain=terrain,
            teams=teams,
            mission=mission,
            duration_ticks=int(round(duration_min * 12)),
            seed=int(doc["seed"]),
            intel=intel,
            advisory_cadence_min=int(doc["cadence_min"]),
        )
    except InvariantViolation:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedDocument(f"bad scenario document: {e}") from None
    validate_scenario(scenario)
    return scenario


def validate_scenario(s: Scenario) -> None:
    if not s.teams:
        raise InvariantViolation("scenario has zero teams")
    seen: set[str] = set()
    for t in s.teams:
        if t.id in seen:
            raise InvariantViolation(f"duplicate team id {t.id!r}")
        seen.add(t.id)
        if t.side not in SIDES:
            raise InvariantViolation(f"unknown side {t.side!r}")
        if t.kind not in KINDS:
            raise InvariantViolation(f"unknown team kind {t.kind!r}")
        if not s.terrain.in_bounds(t.position):
            raise InvariantViolation(f"team {t.id} laid down outside the grid")
        if t.kind == "fireteam":
            want = 4 if t.side == "blue" else 3
            if t.strength != want:
                raise InvariantViolation(
                    f"{t.side} fireteam {t.id} must start with {want} dismounts")
        elif t.strength != 1:
            raise InvariantViolation(f"stryker {t.id} must start with strength 1")
        if t.scripted_emotion is not None:
            if t.side != "red":
                raise InvariantViolation("scripted emotions are red-only")
            if t.scripted_emotion not in ("fearful", "zealous"):
                raise InvariantViolation(f"unknown emotion {t.scripted_emotion!r}")
    m = s.mission
    while m is not None:
        if m.type not in MISSION_TYPES:
            raise InvariantViolation(f"unknown mission type {m.type!r}")
        n_cells = s.terrain.width_cells * s.terrain.height_cells
        for o in m.objectives:
            if not (0 <= o < n_cells):
                raise InvariantViolation(f"objective {o} outside the grid")
        if m.type in ("point-defense", "point-attack") and not m.objectives:
            raise InvariantViolation(f"{m.type} needs at least one objective")
        m = m.second
    if s.duration_ticks <= 0:
        raise InvariantViolation("duration must be positive")
    if s.advisory_cadence_min <= 0:
        raise InvariantViolation("advisory cadence must be positive")
    if not (0 <= s.seed < 2 ** 64):
        raise InvariantViolation("seed must fit in 64 unsigned bits")
    if not (0.0 <= s.intel.masked_fraction < 1.0):
        raise InvariantViolation("masked fraction must be in [0, 1)")


# ---------------------------------------------------------------------------
# Line of sight
# ---------------------------------------------------------------------------

def _los_scan_py(blocked, w, h, s, ax, ay, bx, by):
    """Supercover traversal; returns first blocking cell index or -1.

    A cell blocks only if the open segment passes through its interior; cells
    touched along an edge or at a corner do not count, and neither do the two
    endpoint cells.
    """
    ix, iy = int(ax // s), int(ay // s)
    jx, jy = int(bx // s), int(by // s)
    if ix == jx and iy == jy:
        return -1
    dx = bx - ax
    dy = by - ay
    # Segments running exactly along a grid line never enter any interior.
    if dy == 0.0 and (ay % s) == 0.0:
        return -1
    if dx == 0.0 and (ax % s) == 0.0:
        return -1
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    if dx != 0.0:
        nx = (ix + (1 if dx > 0 else 0)) * s
        t_max_x = (nx - ax) / dx
        t_dx = s / abs(dx)
    else:
        t_max_x = math.inf
        t_dx = math.inf
    if dy != 0.0:
        ny = (iy + (1 if dy > 0 else 0)) * s
        t_max_y = (ny - ay) / dy
        t_dy = s / abs(dy)
    else:
        t_max_y = math.inf
        t_dy = math.inf
    sx, sy = ix, iy  # remember start cell for the exclusion rule
    guard = 2 * (w + h) + 4
    while guard > 0:
        guard -= 1
        if t_max_x < t_max_y:
            ix += step_x
            t_max_x += t_dx
        elif t_max_y < t_max_x:
            iy += step_y
            t_max_y += t_dy
        else:
            # exact corner crossing: skip the edge-touched pair, go diagonal
            ix += step_x
            iy += step_y
            t_max_x += t_dx
            t_max_y += t_dy
        if ix == jx and iy == jy:
            return -1
        if not (0 <= ix < w and 0 <= iy < h):
            return -1
        if (ix != sx or iy != sy) and blocked[iy, ix]:
            return iy * w + ix
    return -1


if _HAVE_NUMBA:
    _los_scan = njit(cache=True)(_los_scan_py)
else:  # pragma: no cover
    _los_scan = _los_scan_py


@dataclass(frozen=True)
class LosResult:
    clear: bool
    blocking_cell: int | None = None


def line_of_sight(grid: TerrainGrid, a: Position, b: Position) -> LosResult:
    if not grid.in_bounds(a) or not grid.in_bounds(b):
        raise OutOfBounds("line_of_sight endpoints must lie inside the grid")
    hit = _los_scan(grid.blocked, grid.width_cells, grid.height_cells,
                    grid.cell_size_m, a.x_m, a.y_m, b.x_m, b.y_m)
    return LosResult(True) if hit < 0 else LosResult(False, int(hit))


# ---------------------------------------------------------------------------
# Pathfinding
# ---------------------------------------------------------------------------

def _cell_factor(grid: TerrainGrid, ix: int, iy: int, kind: str) -> float | None:
    k = grid.kind[iy, ix]
    if kind == "stryker":
        if k == BUILDING:
            return None
        return 1.0 if k == ROAD else STRYKER_OPEN_FACTOR
    return FIRETEAM_BUILDING_FACTOR if k == BUILDING else 1.0


@dataclass(frozen=True)
class Path:
    waypoints: tuple[Position, ...]
    cost: float      # factor-weighted meters
    length_m: float  # geometric length

    def __iter__(self):
        return iter(self.waypoints)


def find_path(grid: TerrainGrid, start: Position, goal: Position, kind: str) -> Path:
    """A* over cell centers; 8-connected, cost = meters weighted by terrain.

    Strykers cannot enter buildings and may not cut corners around them;
    fireteams cross building interiors at a time penalty.
    """
    if not grid.in_bounds(start) or not grid.in_bounds(goal):
        raise OutOfBounds("path endpoints must lie inside the grid")
    if start == goal:
        return Path((start,), 0.0, 0.0)
    s = grid.cell_size_m
    w, h = grid.width_cells, grid.height_cells
    sx, sy = grid.cell_of(start)
    gx, gy = grid.cell_of(goal)
    if _cell_factor(grid, gx, gy, kind) is None or _cell_factor(grid, sx, sy, kind) is None:
        raise Unreachable(f"{kind} cannot occupy the requested cell")
    if (sx, sy) == (gx, gy):
        length = start.dist_to(goal)
        return Path((start, goal), 0.0, length)

    def hcost(ix: int, iy: int) -> float:
        dx, dy = abs(ix - gx), abs(iy - gy)
        return s * (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy))

    start_node = (sx, sy)
    goal_node = (gx, gy)
    g_score: dict[tuple[int, int], float] = {start_node: 0.0}
    came: dict[tuple[int, int], tuple[int, int]] = {}
    counter = 0
    open_heap: list[tuple[float, int, tuple[int, int]]] = [(hcost(sx, sy), 0, start_node)]
    closed: set[tuple[int, int]] = set()
    while open_heap:
        f, _, node = heapq.heappop(open_heap)
        if node in closed:
            continue
        if node == goal_node:
            break
        closed.add(node)
        ix, iy = node
        f_here = _cell_factor(grid, ix, iy, kind)
        for dx, dy in _DIRS8:
            nx, ny = ix + dx, iy + dy
            if not (0 <= nx < w and 0 <= ny < h):
                continue
            f_there = _cell_factor(grid, nx, ny, kind)
            if f_there is None:
                continue
            if dx != 0 and dy != 0 and kind == "stryker":
                # no cutting corners around buildings
                if (_cell_factor(grid, ix + dx, iy, kind) is None
                        or _cell_factor(grid, ix, iy + dy, kind) is None):
                    continue
            dist = s * (SQRT2 if dx != 0 and dy != 0 else 1.0)
            ng = g_score[node] + dist * 0.5 * (f_here + f_there)
            prev = g_score.get((nx, ny))
            if prev is None or ng < prev - 1e-12:
                g_score[(nx, ny)] = ng
                came[(nx, ny)] = node
                counter += 1
                heapq.heappush(open_heap, (ng + hcost(nx, ny), counter, (nx, ny)))
    if goal_node not in g_score:
        raise Unreachable(f"no {kind} route between the requested cells")
    cells = [goal_node]
    while cells[-1] != start_node:
        cells.append(came[cells[-1]])
    cells.reverse()
    pts = [start]
    for ix, iy in cells[1:-1]:
        pts.append(Position((ix + 0.5) * s, (iy + 0.5) * s))
    pts.append(goal)
    length = sum(pts[i].dist_to(pts[i + 1]) for i in range(len(pts) - 1))
    return Path(tuple(pts), g_score[goal_node], length)


# ---------------------------------------------------------------------------
# Complexity accounting
# ---------------------------------------------------------------------------

def _move_options(grid: TerrainGrid, team: Team) -> int:
    """Hold plus every passable compass-neighbor move for this team's kind."""
    ix, iy = grid.cell_of(team.position)
    options = 1
    for dx, dy in _DIRS8:
        nx, ny = ix + dx, iy + dy
        if not grid.passable(nx, ny, team.kind):
            continue
        if dx != 0 and dy != 0 and team.kind == "stryker":
            if not (grid.passable(ix + dx, iy, team.kind)
                    and grid.passable(ix, iy + dy, team.kind)):
                continue
        options += 1
    return options


def complexity_estimate(s: Scenario, horizon_ticks: int) -> float:
    """log10 of the action-tree size over the horizon, options held static."""
    if horizon_ticks < 1:
        raise ValueError("horizon_ticks must be >= 1")
    per_tick = sum(
        math.log10(_move_options(s.terrain, t)) for t in s.teams if t.alive
    )
    return per_tick * horizon_ticks


# ---------------------------------------------------------------------------
# Terrain-derived helpers shared by bots and metrics
# ---------------------------------------------------------------------------

def nearest_passable_cell(grid: TerrainGrid, index: int, kind: str) -> int:
    """BFS out from a cell to the nearest one this unit kind can occupy."""
    ix, iy = grid.cell_xy(index)
    if grid.passable(ix, iy, kind):
        return index
    seen = {(ix, iy)}
    frontier = [(ix, iy)]
    while frontier:
        nxt: list[tuple[int, int]] = []
        for cx, cy in frontier:
            for dx, dy in _DIRS8:
                nx, ny = cx + dx, cy + dy
                if (nx, ny) in seen or not (0 <= nx < grid.width_cells and 0 <= ny < grid.height_cells):
                    continue
                seen.add((nx, ny))
                if grid.passable(nx, ny, kind):
                    return grid.cell_index(nx, ny)
                nxt.append((nx, ny))
        frontier = nxt
    raise Unreachable(f"no {kind}-passable cell anywhere near cell {index}")


def civilian_cells(grid: TerrainGrid) -> np.ndarray:
    """Boolean mask of road cells hugging buildings (collateral-risk proxy)."""
    road = grid.kind == ROAD
    b = grid.blocked
    near = np.zeros_like(b)
    near[:-1, :] |= b[1:, :]
    near[1:, :] |= b[:-1, :]
    near[:, :-1] |= b[:, 1:]
    near[:, 1:] |= b[:, :-1]
    return road & near
