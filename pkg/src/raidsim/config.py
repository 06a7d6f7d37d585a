"""Tunable constants for the simulator, the predictors, and the scorer.

Everything here is config: the engine takes an EngineConfig, the movement
predictor a SearchConfig, and so on.  Defaults are the shipped calibration;
batch configs may override any field.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

TICK_SECONDS = 5.0
TICKS_PER_MINUTE = 12


@dataclass(frozen=True)
class WeaponSpec:
    name: str
    max_range_m: float
    hit_prob_per_tick: float
    effect_vs_fireteam: float
    effect_vs_stryker: float
    reload_ticks: int = 0  # 0 = fires every tick

    def effect_vs(self, kind: str) -> float:
        return self.effect_vs_stryker if kind == "stryker" else self.effect_vs_fireteam


# Per-tick rates are calibrated jointly with the every-eligible-pair fire
# rule: with ~5 shooters holding line of sight these produce two-hour battles
# with gradual double-digit casualty fractions, not instant wipes.
DEFAULT_WEAPONS: dict[str, WeaponSpec] = {
    "m16": WeaponSpec("m16", 400.0, 0.008, 1.0, 0.0),
    "ak47": WeaponSpec("ak47", 300.0, 0.008, 1.0, 0.0),
    "rpg": WeaponSpec("rpg", 150.0, 0.02, 0.5, 1.0, reload_ticks=6),
    # Stryker remote weapon station; rifles cannot hurt other vehicles either.
    "m2": WeaponSpec("m2", 500.0, 0.01, 1.0, 0.0),
}

# Weapon loadout implied by side+kind (the scenario document does not carry
# weapons; they resolve from this table at load).
DEFAULT_LOADOUTS: dict[tuple[str, str], tuple[str, ...]] = {
    ("blue", "fireteam"): ("m16",),
    ("blue", "stryker"): ("m2",),
    ("red", "fireteam"): ("ak47", "rpg"),
    ("red", "stryker"): ("ak47",),  # not used by stock scenarios
}


@dataclass(frozen=True)
class EngineConfig:
    tick_seconds: float = TICK_SECONDS
    blue_fireteam_speed_mps: float = 1.5
    red_speed_multiplier: float = 1.15  # terrain familiarity
    stryker_road_speed_mps: float = 8.0
    stryker_open_speed_mps: float = 4.0
    building_speed_factor: float = 0.4  # fireteams moving through interiors
    building_cover_factor: float = 0.5  # incoming hit probability multiplier
    weapons: dict[str, WeaponSpec] = field(
        default_factory=lambda: dict(DEFAULT_WEAPONS)
    )
    loadouts: dict[tuple[str, str], tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_LOADOUTS)
    )

    def red_fireteam_speed(self) -> float:
        return self.blue_fireteam_speed_mps * self.red_speed_multiplier


@dataclass(frozen=True)
class SearchConfig:
    """Movement-prediction search knobs."""

    zone_cells: int = 10          # super-zone edge, in grid cells
    max_zones: int = 200          # coarsen zone_cells until under this bound
    best_response_rounds: int = 3
    beam_width: int = 12
    moves_per_expansion: int = 4  # top-M candidate zones per team per step
    sweeps_per_response: int = 1  # per-team values are separable; one pass is exact
    solve_budget_s: float = 30.0
    # Value weights: mission progress, enemy losses, own losses (subtracted).
    weight_progress: float = 0.5
    weight_enemy_losses: float = 0.3
    weight_own_losses: float = 0.2
    # Per-mission overrides, keyed (mission, side); a withdrawing force cares
    # about breaking contact cleanly, not about the exchange ratio.
    mission_weights: dict = field(default_factory=lambda: {
        ("withdrawal", "blue"): (0.60, 0.05, 0.35),
        ("point-attack", "blue"): (0.45, 0.30, 0.25),
        ("area-attack", "blue"): (0.45, 0.30, 0.25),
    })
    # Encounter model: expected casualties per minute of contact scale with
    # opposing strength times these per-weapon-class rates.
    contact_rate_per_strength_min: float = 0.12
    adjacent_contact_factor: float = 0.35  # adjacent-zone contact attenuation
    ghost_prior_floor: float = 0.10


@dataclass(frozen=True)
class MindConfig:
    window_min: float = 5.0
    recompute_every_min: float = 1.0
    alert_threshold: float = 0.7
    pheromone_decay_per_min: float = 0.9
    advance_bin_mps: float = 10.0   # |advance| above this is directional
    retreat_leg_m: float = 10.0     # per-minute away-move that counts as a leg
    fire_bin_high: float = 2.0      # shots/min above this is heavy fire
    cover_bins: tuple[float, float] = (0.3, 0.7)


@dataclass(frozen=True)
class DrmConfig:
    min_history_min: float = 10.0
    detection_threshold: float = 0.6
    threat_range_m: float = 250.0     # "came within threat range" gate
    withdraw_m: float = 250.0         # pull-back that reads as disengagement
    withdraw_window_min: float = 6.0
    token_fire_minutes: float = 2.5
    committed_fire_minutes: float = 4.0
    value_cost_clip: tuple[float, float] = (0.25, 4.0)


# Operational score weights per mission family.  Each maps component -> weight
# and must sum to 1.
SCORE_WEIGHTS: dict[str, dict[str, float]] = {
    "defense": {
        "mission_progress": 0.40,
        "blue_survival": 0.25,
        "red_casualties": 0.20,
        "collateral_avoidance": 0.05,
        "time_efficiency": 0.10,
    },
    "attack": {
        "mission_progress": 0.35,
        "blue_survival": 0.25,
        "red_casualties": 0.20,
        "collateral_avoidance": 0.10,
        "time_efficiency": 0.10,
    },
    "withdrawal": {
        "mission_progress": 0.45,
        "blue_survival": 0.35,
        "red_casualties": 0.05,
        "collateral_avoidance": 0.05,
        "time_efficiency": 0.10,
    },
}

MISSION_FAMILY = {
    "point-defense": "defense",
    "area-defense": "defense",
    "point-attack": "attack",
    "area-attack": "attack",
    "withdrawal": "withdrawal",
}

OBJECTIVE_PERIMETER_M = 60.0   # "holding" an objective means a team this close
RALLY_RADIUS_M = 100.0
OBJECTIVE_HIT_NORM = 2400.0    # objective fire-minutes saturating the defense score


def engine_config_from_dict(raw: dict) -> EngineConfig:
    """Build an EngineConfig from a plain JSON-ish dict of overrides."""
    cfg = EngineConfig()
    weapons = dict(cfg.weapons)
    for name, spec in raw.get("weapons", {}).items():
        weapons[name] = WeaponSpec(
            name=name,
            max_range_m=float(spec["max_range_m"]),
            hit_prob_per_tick=float(spec["hit_prob_per_tick"]),
            effect_vs_fireteam=float(spec.get("effect_vs_fireteam", 1.0)),
            effect_vs_stryker=float(spec.get("effect_vs_stryker", 0.0)),
            reload_ticks=int(spec.get("reload_ticks", 0)),
        )
    scalars = {
        k: raw[k]
        for k in (
            "tick_seconds",
            "blue_fireteam_speed_mps",
            "red_speed_multiplier",
            "stryker_road_speed_mps",
            "stryker_open_speed_mps",
            "building_speed_factor",
            "building_cover_factor",
        )
        if k in raw
    }
    return replace(cfg, weapons=weapons, **scalars)


def search_config_from_dict(raw: dict) -> SearchConfig:
    known = {f for f in SearchConfig.__dataclass_fields__}
    return replace(SearchConfig(), **{k: v for k, v in raw.items() if k in known})
