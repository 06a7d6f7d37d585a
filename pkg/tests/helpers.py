"""Shared fixture builders for the test suite."""
from __future__ import annotations

import numpy as np

from raidsim.config import EngineConfig, WeaponSpec
from raidsim.world import (
    BUILDING,
    ROAD,
    Mission,
    Position,
    Scenario,
    Team,
    TerrainGrid,
    default_speed,
    default_weapons,
)


def make_grid(rows, cell_m=10.0, floors_value=2):
    """rows: strings of '.', 'r', '#' for open/road/building."""
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


def open_grid(w=20, h=20, cell_m=10.0):
    return TerrainGrid(w, h, cell_m,
                       np.zeros((h, w), dtype=np.uint8),
                       np.zeros((h, w), dtype=np.uint8))


def team(tid, side="red", kind="fireteam", x=5.0, y=5.0, strength=None,
         emotion=None, weapons=None, speed=None):
    if strength is None:
        strength = 1 if kind == "stryker" else (4 if side == "blue" else 3)
    return Team(tid, side, kind, strength, Position(x, y),
                speed if speed is not None else default_speed(side, kind),
                weapons if weapons is not None else default_weapons(side, kind),
                scripted_emotion=emotion)


def scenario(teams, grid=None, mission=None, duration_ticks=240, seed=11,
             cadence_min=15, name="test"):
    return Scenario(
        name=name,
        terrain=grid if grid is not None else open_grid(),
        teams=teams,
        mission=mission or Mission("area-defense", ()),
        duration_ticks=duration_ticks,
        seed=seed,
        advisory_cadence_min=cadence_min,
    )


def laser_config(hit_prob=1.0, range_m=1000.0):
    """Engine config with a deterministic do-everything rifle."""
    cfg = EngineConfig()
    weapons = dict(cfg.weapons)
    weapons["laser"] = WeaponSpec("laser", range_m, hit_prob, 1.0, 1.0)
    return EngineConfig(weapons=weapons, loadouts=cfg.loadouts)
