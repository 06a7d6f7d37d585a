import json
import math
import random

import numpy as np
import pytest

from raidsim.world import (
    BUILDING,
    OPEN,
    ROAD,
    InvariantViolation,
    MalformedDocument,
    Mission,
    OutOfBounds,
    Position,
    Scenario,
    Team,
    TerrainGrid,
    Unreachable,
    complexity_estimate,
    civilian_cells,
    default_speed,
    default_weapons,
    find_path,
    line_of_sight,
    load_scenario,
    nearest_passable_cell,
    render_scenario,
    validate_scenario,
)


def make_grid(rows, cell_m=10.0, floors_value=2):
    """rows: list of strings of '.', 'r', '#' (open/road/building)."""
    h, w = len(rows), len(rows[0])
    kind = np.zeros((h, w), dtype=np.uint8)
    floors = np.zeros((h, w), dtype=np.uint8)
    for iy, row in enumerate(rows):
        for ix, ch in enumerate(row):
            if ch == "#":
                kind[iy, ix] = BUILDING
                floors[iy, ix] = floors_value
            elif ch == "r":
                kind[iy, ix] = ROAD
    return TerrainGrid(w, h, cell_m, kind, floors)


def team(tid, side="red", kind="fireteam", x=5.0, y=5.0, strength=None, emotion=None):
    if strength is None:
        strength = 1 if kind == "stryker" else (4 if side == "blue" else 3)
    return Team(tid, side, kind, strength, Position(x, y),
                default_speed(side, kind), default_weapons(side, kind),
                scripted_emotion=emotion)


def tiny_scenario(teams=None, mission=None, grid=None, **kw):
    grid = grid or make_grid(["....", "....", "....", "...."])
    teams = teams if teams is not None else [team("r1"), team("b1", side="blue", x=25.0, y=25.0)]
    mission = mission or Mission("point-defense", (5,))
    defaults = dict(duration_ticks=120, seed=7)
    defaults.update(kw)
    return Scenario("tiny", grid, teams, mission, **defaults)


# ---------------------------------------------------------------------------
# Independent LOS oracle: a cell blocks iff the open segment intersects its
# open interior for an interval of positive length (Liang-Barsky clipping).
# ---------------------------------------------------------------------------

def segment_interior_cells(grid, a, b):
    s = grid.cell_size_m
    cells = []
    lo_x = min(a.x_m, b.x_m)
    hi_x = max(a.x_m, b.x_m)
    lo_y = min(a.y_m, b.y_m)
    hi_y = max(a.y_m, b.y_m)
    for iy in range(int(lo_y // s), min(int(hi_y // s) + 1, grid.height_cells)):
        for ix in range(int(lo_x // s), min(int(hi_x // s) + 1, grid.width_cells)):
            x0, x1 = ix * s, (ix + 1) * s
            y0, y1 = iy * s, (iy + 1) * s
            t0, t1 = 0.0, 1.0
            dx, dy = b.x_m - a.x_m, b.y_m - a.y_m
            ok = True
            for p, q0, q1 in ((dx, a.x_m - x0, x1 - a.x_m), (dy, a.y_m - y0, y1 - a.y_m)):
                if p == 0.0:
                    if q0 < 0 or q1 < 0:
                        ok = False
                        break
                    continue
                tl = -q0 / p
                th = q1 / p
                if tl > th:
                    tl, th = th, tl
                t0 = max(t0, tl)
                t1 = min(t1, th)
            if not ok or t0 >= t1:
                continue
            # strict interior: reject pure edge/corner grazing
            mid = 0.5 * (t0 + t1)
            mx, my = a.x_m + mid * dx, a.y_m + mid * dy
            if x0 < mx < x1 and y0 < my < y1:
                cells.append((ix, iy))
    return cells


def los_oracle(grid, a, b):
    sa = grid.cell_of(a)
    sb = grid.cell_of(b)
    for ix, iy in segment_interior_cells(grid, a, b):
        if (ix, iy) in (sa, sb):
            continue
        if grid.blocked[iy, ix]:
            return False
    return True


class TestLineOfSight:
    def test_degenerate_segment_clear(self):
        g = make_grid(["##", "##"])
        p = Position(5.0, 5.0)
        assert line_of_sight(g, p, p).clear

    def test_adjacent_open_cells_clear(self):
        g = make_grid(["..", ".."])
        assert line_of_sight(g, Position(5.0, 5.0), Position(15.0, 5.0)).clear

    def test_building_between_blocks(self):
        g = make_grid(["...", ".#.", "..."])
        r = line_of_sight(g, Position(5.0, 15.0), Position(25.0, 15.0))
        assert not r.clear
        assert r.blocking_cell == g.cell_index(1, 1)

    def test_sees_out_of_own_building_cell(self):
        g = make_grid(["#..", "..."])
        assert line_of_sight(g, Position(5.0, 5.0), Position(25.0, 5.0)).clear

    def test_out_of_bounds_raises(self):
        g = make_grid(["..", ".."])
        with pytest.raises(OutOfBounds):
            line_of_sight(g, Position(5.0, 5.0), Position(50.0, 5.0))

    def test_symmetry_and_oracle_equivalence_1000_triples(self):
        rng = random.Random(2024)
        mismatches = 0
        for _ in range(1000):
            w = rng.randint(3, 16)
            h = rng.randint(3, 16)
            kind = np.zeros((h, w), dtype=np.uint8)
            floors = np.zeros((h, w), dtype=np.uint8)
            for iy in range(h):
                for ix in range(w):
                    if rng.random() < 0.30:
                        kind[iy, ix] = BUILDING
                        floors[iy, ix] = 1
            g = TerrainGrid(w, h, 10.0, kind, floors)
            a = Position(rng.uniform(0, w * 10.0 - 1e-9), rng.uniform(0, h * 10.0 - 1e-9))
            b = Position(rng.uniform(0, w * 10.0 - 1e-9), rng.uniform(0, h * 10.0 - 1e-9))
            fwd = line_of_sight(g, a, b)
            back = line_of_sight(g, b, a)
            assert fwd.clear == back.clear
            if fwd.clear != los_oracle(g, a, b):
                mismatches += 1
        assert mismatches == 0


# ---------------------------------------------------------------------------
# Independent shortest-path oracle: plain Dijkstra, no heuristics.
# ---------------------------------------------------------------------------

def path_cost_oracle(grid, start_cell, goal_cell, kind):
    from raidsim.world import _cell_factor

    s = grid.cell_size_m
    w, h = grid.width_cells, grid.height_cells
    dist = {start_cell: 0.0}
    todo = {start_cell}
    visited = set()
    while todo:
        node = min(todo, key=lambda n: (dist[n], n))
        todo.discard(node)
        if node == goal_cell:
            return dist[node]
        visited.add(node)
        ix, iy = node
        f_here = _cell_factor(grid, ix, iy, kind)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = ix + dx, iy + dy
                if not (0 <= nx < w and 0 <= ny < h) or (nx, ny) in visited:
                    continue
                f_there = _cell_factor(grid, nx, ny, kind)
                if f_there is None:
                    continue
                if dx != 0 and dy != 0 and kind == "stryker":
                    if (_cell_factor(grid, ix + dx, iy, kind) is None
                            or _cell_factor(grid, ix, iy + dy, kind) is None):
                        continue
                step = s * (math.sqrt(2) if dx and dy else 1.0)
                nd = dist[node] + step * 0.5 * (f_here + f_there)
                if nd < dist.get((nx, ny), math.inf):
                    dist[(nx, ny)] = nd
                    todo.add((nx, ny))
    return None


class TestFindPath:
    def test_same_point(self):
        g = make_grid(["..", ".."])
        p = find_path(g, Position(5.0, 5.0), Position(5.0, 5.0), "fireteam")
        assert p.waypoints == (Position(5.0, 5.0),)
        assert p.cost == 0.0

    def test_straight_corridor_length(self):
        g = make_grid(["......"])
        a, b = Position(5.0, 5.0), Position(55.0, 5.0)
        p = find_path(g, a, b, "fireteam")
        assert p.waypoints[0] == a and p.waypoints[-1] == b
        assert abs(p.length_m - 50.0) <= 10.0 * math.sqrt(2)

    def test_stryker_routes_around_building(self):
        rows = [
            ".....",
            ".###.",
            ".###.",
            ".....",
        ]
        g = make_grid(rows)
        a, b = Position(5.0, 25.0), Position(45.0, 25.0)
        ft = find_path(g, a, b, "fireteam")
        st = find_path(g, a, b, "stryker")
        assert st.length_m > ft.length_m

    def test_stryker_destination_in_building_unreachable(self):
        g = make_grid(["..#", "..."])
        with pytest.raises(Unreachable):
            find_path(g, Position(5.0, 5.0), Position(25.0, 5.0), "stryker")

    def test_admissibility_and_oracle_equivalence(self):
        rng = random.Random(99)
        for trial in range(100):
            w = rng.randint(4, 20)
            h = rng.randint(4, 20)
            kind_arr = np.zeros((h, w), dtype=np.uint8)
            floors = np.zeros((h, w), dtype=np.uint8)
            for iy in range(h):
                for ix in range(w):
                    r = rng.random()
                    if r < 0.22:
                        kind_arr[iy, ix] = BUILDING
                        floors[iy, ix] = 1
                    elif r < 0.4:
                        kind_arr[iy, ix] = ROAD
            g = TerrainGrid(w, h, 10.0, kind_arr, floors)
            kind = rng.choice(["fireteam", "stryker"])
            a = Position(rng.uniform(0, w * 10 - 1e-9), rng.uniform(0, h * 10 - 1e-9))
            b = Position(rng.uniform(0, w * 10 - 1e-9), rng.uniform(0, h * 10 - 1e-9))
            oracle = None
            try:
                oracle = path_cost_oracle(g, g.cell_of(a), g.cell_of(b), kind)
            except Exception:
                oracle = None
            try:
                p = find_path(g, a, b, kind)
            except Unreachable:
                assert oracle is None
                continue
            assert oracle is not None
            assert p.cost == pytest.approx(oracle, abs=1e-6)
            assert p.length_m >= a.dist_to(b) - 1e-9


class TestComplexity:
    def test_single_action_is_zero(self):
        g = make_grid(["###", "#.#", "###"])
        s = tiny_scenario(
            grid=g,
            teams=[team("s1", side="blue", kind="stryker", x=15.0, y=15.0)],
            mission=Mission("area-defense", ()),
        )
        assert complexity_estimate(s, 50) == 0.0

    def test_closed_form_two_teams_four_actions(self):
        # a T-junction pocket leaves exactly 3 passable neighbors (4 actions)
        rows = [
            "#.##",
            "#..#",
            "#.##",
        ]
        g = make_grid(rows)
        teams = [
            team("s1", side="blue", kind="stryker", x=15.0, y=15.0),
            team("s2", side="red", kind="stryker", x=15.0, y=15.0),
        ]
        s = tiny_scenario(grid=g, teams=teams, mission=Mission("area-defense", ()))
        got = complexity_estimate(s, 10)
        assert got == pytest.approx(math.log10(4 ** 20), abs=1e-6)
        assert got == pytest.approx(12.0412, abs=1e-3)

    def test_additive_over_horizon(self):
        s = tiny_scenario()
        assert complexity_estimate(s, 7) + complexity_estimate(s, 13) == pytest.approx(
            complexity_estimate(s, 20), rel=1e-12)


class TestScenarioDocument:
    def test_round_trip_bit_exact(self):
        rng = random.Random(5)
        for _ in range(20):
            w, h = rng.randint(4, 12), rng.randint(4, 12)
            kind = np.zeros((h, w), dtype=np.uint8)
            floors = np.zeros((h, w), dtype=np.uint8)
            for iy in range(h):
                for ix in range(w):
                    r = rng.random()
                    if r < 0.2:
                        kind[iy, ix] = BUILDING
                        floors[iy, ix] = rng.randint(1, 5)
                    elif r < 0.35:
                        kind[iy, ix] = ROAD
            g = TerrainGrid(w, h, 10.0, kind, floors)
            teams = [
                team("r1", x=rng.uniform(0, w * 10 - 1), y=rng.uniform(0, h * 10 - 1)),
                team("b1", side="blue", x=rng.uniform(0, w * 10 - 1), y=rng.uniform(0, h * 10 - 1),
                     emotion=None),
            ]
            teams[0].scripted_emotion = rng.choice([None, "fearful", "zealous"])
            sc = Scenario(
                name=f"rt-{rng.randint(0, 999)}",
                terrain=g,
                teams=teams,
                mission=Mission("point-defense", (rng.randrange(w * h),),
                                second=Mission("withdrawal", (0,))),
                duration_ticks=rng.choice([120, 720, 1440]),
                seed=rng.getrandbits(64),
                advisory_cadence_min=rng.choice([5, 15]),
            )
            text = render_scenario(sc)
            back = load_scenario(text)
            assert render_scenario(back) == text
            assert back.terrain == sc.terrain
            assert back.teams == sc.teams
            assert back.mission == sc.mission
            assert back.duration_ticks == sc.duration_ticks
            assert back.seed == sc.seed

    def test_canonical_point_defense_valid(self):
        from raidsim.harness import generate_scenario

        sc = generate_scenario("point-defense", seed=7)
        blue_ft = [t for t in sc.teams if t.side == "blue" and t.kind == "fireteam"]
        strykers = [t for t in sc.teams if t.kind == "stryker"]
        red_ft = [t for t in sc.teams if t.side == "red"]
        assert len(blue_ft) == 18 and all(t.strength == 4 for t in blue_ft)
        assert len(strykers) == 5
        assert len(red_ft) == 20 and all(t.strength == 3 for t in red_ft)
        validate_scenario(sc)

    def test_zero_teams_rejected(self):
        sc = tiny_scenario()
        sc.teams = []
        with pytest.raises(InvariantViolation):
            validate_scenario(sc)

    def test_duplicate_id_rejected(self):
        sc = tiny_scenario(teams=[team("x"), team("x", x=15.0)])
        with pytest.raises(InvariantViolation):
            validate_scenario(sc)

    def test_malformed_document(self):
        with pytest.raises(MalformedDocument):
            load_scenario("{not json")
        with pytest.raises(MalformedDocument):
            load_scenario(json.dumps({"version": "raid-scenario/1"}))

    def test_wrong_initial_strength_rejected(self):
        sc = tiny_scenario(teams=[team("r1", strength=2), team("b1", side="blue")])
        with pytest.raises(InvariantViolation):
            validate_scenario(sc)

    def test_emotion_on_blue_rejected(self):
        sc = tiny_scenario(teams=[team("b1", side="blue", emotion="fearful")])
        with pytest.raises(InvariantViolation):
            validate_scenario(sc)

    def test_objective_outside_grid_rejected(self):
        sc = tiny_scenario(mission=Mission("point-defense", (10_000,)))
        with pytest.raises(InvariantViolation):
            validate_scenario(sc)


class TestHelpers:
    def test_nearest_passable_cell_for_stryker(self):
        g = make_grid(["##.", "###"])
        got = nearest_passable_cell(g, g.cell_index(0, 0), "stryker")
        assert got == g.cell_index(2, 0)

    def test_civilian_cells_are_roads_near_buildings(self):
        g = make_grid(["r#.", "rr."])
        mask = civilian_cells(g)
        assert bool(mask[0, 0])      # road beside the building
        assert bool(mask[1, 1])      # road under the building
        assert not bool(mask[1, 0])  # road not touching any building
