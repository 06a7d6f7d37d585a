"""Emotion, goal, and fighter-type estimation from observed behavior.

A small discrete belief net (emotion -> goal -> binned behavior features,
with a fighter-type node feeding the fire and advance bins) is solved by
exact enumeration over its 32 joint states.  Estimates update recursively:
each window's posterior joint becomes the next window's prior.  A pheromone
field keeps a decaying trace of where each side has operated, and ghost
rollouts convert goal posteriors into per-zone move priors for the movement
search.

The conditional tables below are the shipped calibration (version tag
``raidsim-cpt/1``).  A feature that carries no information for a window is
reported as None (unobserved); such nodes contribute no likelihood, so a
fully empty window leaves the estimate untouched.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from .config import MindConfig
from .history import ReplayWindow
from .world import Position, TerrainGrid

CPT_VERSION = "raidsim-cpt/1"

EMOTIONS = ("fearful", "neutral", "enraged", "zealous")
GOALS = ("assault", "defend_in_place", "harass", "withdraw")
FIGHTERS = ("local", "foreign")

EMOTION_PRIOR = {"fearful": 0.15, "neutral": 0.55, "enraged": 0.15, "zealous": 0.15}

GOAL_GIVEN_EMOTION = {
    "fearful": {"assault": 0.03, "defend_in_place": 0.20, "harass": 0.07, "withdraw": 0.70},
    "neutral": {"assault": 0.25, "defend_in_place": 0.25, "harass": 0.25, "withdraw": 0.25},
    "enraged": {"assault": 0.45, "defend_in_place": 0.10, "harass": 0.35, "withdraw": 0.10},
    "zealous": {"assault": 0.80, "defend_in_place": 0.07, "harass": 0.10, "withdraw": 0.03},
}

FOREIGN_GIVEN_EMOTION = {"fearful": 0.02, "neutral": 0.05, "enraged": 0.15, "zealous": 0.70}

# Observed-node tables: (low, mid, high) bins.  A node whose value is unknown
# for the window is simply left unobserved (None), which contributes no
# likelihood and leaves the estimate untouched.
ADVANCE_GIVEN_GOAL_FIGHTER = {
    ("assault", "local"): (0.08, 0.27, 0.65),
    ("assault", "foreign"): (0.05, 0.25, 0.70),
    ("defend_in_place", "local"): (0.15, 0.70, 0.15),
    ("defend_in_place", "foreign"): (0.15, 0.70, 0.15),
    ("harass", "local"): (0.20, 0.35, 0.45),
    ("harass", "foreign"): (0.15, 0.35, 0.50),
    ("withdraw", "local"): (0.65, 0.25, 0.10),
    ("withdraw", "foreign"): (0.65, 0.25, 0.10),
}

RETREAT_GIVEN_GOAL = {
    "assault": (0.60, 0.30, 0.10),
    "defend_in_place": (0.60, 0.30, 0.10),
    "harass": (0.45, 0.35, 0.20),
    "withdraw": (0.15, 0.25, 0.60),
}

FIRE_GIVEN_GOAL_FIGHTER = {
    ("assault", "local"): (0.20, 0.50, 0.30),
    ("assault", "foreign"): (0.10, 0.30, 0.60),
    ("defend_in_place", "local"): (0.45, 0.40, 0.15),
    ("defend_in_place", "foreign"): (0.35, 0.35, 0.30),
    ("harass", "local"): (0.35, 0.40, 0.25),
    ("harass", "foreign"): (0.25, 0.35, 0.40),
    ("withdraw", "local"): (0.60, 0.30, 0.10),
    ("withdraw", "foreign"): (0.55, 0.30, 0.15),
}

COVER_GIVEN_GOAL = {
    "assault": (0.55, 0.30, 0.15),
    "defend_in_place": (0.15, 0.30, 0.55),
    "harass": (0.35, 0.30, 0.35),
    "withdraw": (0.30, 0.40, 0.30),
}


@dataclass(frozen=True)
class BehaviorFeatures:
    team_id: str
    window_min: float
    advance_rate: float | None       # net m/min toward the nearest blue, signed
    retreat_events: int | None
    fire_rate: float | None          # shots per minute
    cover_fraction: float | None
    casualties_taken: int = 0
    tick: int = 0                    # window end tick


@dataclass(frozen=True)
class MindAlert:
    label: str
    first_crossed_tick: int
    confidence: float


@dataclass(frozen=True)
class MindEstimate:
    team_id: str
    emotion: dict[str, float]
    goal: dict[str, float]
    fighter: dict[str, float]
    alert: MindAlert | None = None
    # Persistent recursive state: emotion and fighter type endure across
    # windows; goals are transient intents re-expressed through P(goal|emotion)
    # every window, which is what lets emotion evidence accumulate.
    joint: tuple[float, ...] = ()    # flattened (emotion, fighter)


def _joint_index(e: int, f: int) -> int:
    return e * len(FIGHTERS) + f


def _default_joint() -> tuple[float, ...]:
    joint = [0.0] * (len(EMOTIONS) * len(FIGHTERS))
    for ei, e in enumerate(EMOTIONS):
        for fi, f in enumerate(FIGHTERS):
            pf = FOREIGN_GIVEN_EMOTION[e] if f == "foreign" else 1.0 - FOREIGN_GIVEN_EMOTION[e]
            joint[_joint_index(ei, fi)] = EMOTION_PRIOR[e] * pf
    return tuple(joint)


def default_estimate(team_id: str) -> MindEstimate:
    joint = _default_joint()
    emotion = {e: 0.0 for e in EMOTIONS}
    fighter = {f: 0.0 for f in FIGHTERS}
    goal = {g: 0.0 for g in GOALS}
    for ei, e in enumerate(EMOTIONS):
        for fi, f in enumerate(FIGHTERS):
            p = joint[_joint_index(ei, fi)]
            emotion[e] += p
            fighter[f] += p
            for g in GOALS:
                goal[g] += p * GOAL_GIVEN_EMOTION[e][g]
    return MindEstimate(team_id, emotion, goal, fighter, None, joint)


def feature_bins(f: BehaviorFeatures, cfg: MindConfig) -> dict[str, int | None]:
    bins: dict[str, int | None] = {}
    if f.advance_rate is None:
        bins["advance"] = None
    else:
        bins["advance"] = (0 if f.advance_rate < -cfg.advance_bin_mps
                           else 2 if f.advance_rate > cfg.advance_bin_mps else 1)
    if f.retreat_events is None:
        bins["retreat"] = None
    else:
        bins["retreat"] = 0 if f.retreat_events == 0 else (1 if f.retreat_events <= 2 else 2)
    if f.fire_rate is None:
        bins["fire"] = None
    else:
        bins["fire"] = 0 if f.fire_rate == 0 else (2 if f.fire_rate > cfg.fire_bin_high else 1)
    if f.cover_fraction is None:
        bins["cover"] = None
    else:
        lo, hi = cfg.cover_bins
        bins["cover"] = 0 if f.cover_fraction < lo else (2 if f.cover_fraction > hi else 1)
    return bins


def _observation_likelihood(g: str, f: str, bins: dict) -> float:
    like = 1.0
    if bins["advance"] is not None:
        like *= ADVANCE_GIVEN_GOAL_FIGHTER[(g, f)][bins["advance"]]
    if bins["retreat"] is not None:
        like *= RETREAT_GIVEN_GOAL[g][bins["retreat"]]
    if bins["fire"] is not None:
        like *= FIRE_GIVEN_GOAL_FIGHTER[(g, f)][bins["fire"]]
    if bins["cover"] is not None:
        like *= COVER_GIVEN_GOAL[g][bins["cover"]]
    return like


def infer(features: BehaviorFeatures, prior: MindEstimate | None = None,
          config: MindConfig | None = None) -> MindEstimate:
    """Exact posterior by enumeration over the 32 (emotion, type, goal) states."""
    cfg = config or MindConfig()
    prior = prior or default_estimate(features.team_id)
    prior_joint = prior.joint or _default_joint()
    bins = feature_bins(features, cfg)
    emotion = {e: 0.0 for e in EMOTIONS}
    goal = {g: 0.0 for g in GOALS}
    fighter = {f: 0.0 for f in FIGHTERS}
    joint = [0.0] * len(prior_joint)
    total = 0.0
    for ei, e in enumerate(EMOTIONS):
        for fi, f in enumerate(FIGHTERS):
            base = prior_joint[_joint_index(ei, fi)]
            for g in GOALS:
                p = base * GOAL_GIVEN_EMOTION[e][g] * _observation_likelihood(g, f, bins)
                emotion[e] += p
                fighter[f] += p
                goal[g] += p
                joint[_joint_index(ei, fi)] += p
                total += p
    if total <= 0.0:
        return replace(default_estimate(features.team_id), alert=prior.alert)
    emotion = {k: v / total for k, v in emotion.items()}
    goal = {k: v / total for k, v in goal.items()}
    fighter = {k: v / total for k, v in fighter.items()}
    joint = [p / total for p in joint]
    alert = prior.alert
    if alert is None:
        candidates = [(p, lbl) for lbl, p in emotion.items()
                      if lbl != "neutral" and p >= cfg.alert_threshold]
        candidates += [(p, lbl) for lbl, p in goal.items() if p >= cfg.alert_threshold]
        if candidates:
            p, lbl = max(candidates)
            alert = MindAlert(lbl, features.tick, p)
    else:
        refreshed = max(emotion.get(alert.label, 0.0), goal.get(alert.label, 0.0))
        alert = replace(alert, confidence=max(alert.confidence, refreshed))
    return MindEstimate(features.team_id, emotion, goal, fighter, alert, tuple(joint))


# ---------------------------------------------------------------------------
# Feature extraction from the minute history
# ---------------------------------------------------------------------------

def extract_features(window: ReplayWindow, team_id: str, terrain: TerrainGrid,
                     objectives: tuple[int, ...] = (),
                     config: MindConfig | None = None) -> BehaviorFeatures:
    cfg = config or MindConfig()
    h = window.history
    if team_id not in h.sides:
        raise KeyError(team_id)
    m0, m1 = window.start_minute, window.end_minute
    span = max(1, m1 - m0)
    start = h.sample(m0)
    own_side = h.sides[team_id]
    enemy = "blue" if own_side == "red" else "red"
    ref: tuple[float, float] | None = None
    best = math.inf
    sx, sy = start.positions[team_id]
    for tid, pos in start.positions.items():
        if h.sides[tid] != enemy or start.strengths.get(tid, 0) <= 0:
            continue
        d = math.hypot(pos[0] - sx, pos[1] - sy)
        if d < best:
            best = d
            ref = pos
    if ref is None and objectives:
        cands = [terrain.cell_center(o) for o in objectives]
        ref_pos = min(cands, key=lambda p: math.hypot(p.x_m - sx, p.y_m - sy))
        ref = (ref_pos.x_m, ref_pos.y_m)
    if ref is None:
        return BehaviorFeatures(team_id, span, None, None,
                                h.fire_count(team_id, m0, m1) / span,
                                _cover_fraction(h, team_id, m0, m1, terrain),
                                0, m1 * 12)

    def dist_at(minute: int) -> float:
        px, py = h.sample(minute).positions[team_id]
        return math.hypot(px - ref[0], py - ref[1])

    d_series = [dist_at(m) for m in range(m0, m1 + 1)]
    advance = (d_series[0] - d_series[-1]) / span
    retreats = sum(1 for i in range(1, len(d_series))
                   if d_series[i] - d_series[i - 1] >= cfg.retreat_leg_m)
    fire = h.fire_count(team_id, m0, m1) / span
    cover = _cover_fraction(h, team_id, m0, m1, terrain)
    casualties = start.strengths.get(team_id, 0) - h.sample(m1).strengths.get(team_id, 0)
    return BehaviorFeatures(team_id, span, advance, retreats, fire, cover,
                            casualties, m1 * 12)


def _cover_fraction(h, team_id, m0, m1, terrain) -> float:
    samples = range(m0 + 1, m1 + 1)
    n = 0
    inside = 0
    for m in samples:
        px, py = h.sample(m).positions[team_id]
        n += 1
        inside += terrain.is_building_cell(Position(px, py))
    return inside / n if n else 0.0


# ---------------------------------------------------------------------------
# Pheromone field
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PheromoneField:
    decay_per_min: float = 0.9
    deposits: dict[tuple[str, int], float] = field(default_factory=dict)

    def total(self) -> float:
        return sum(self.deposits.values())

    def level(self, side: str, zone: int) -> float:
        return self.deposits.get((side, zone), 0.0)


def pheromone_update(field_: PheromoneField, occupied, dt_min: float) -> PheromoneField:
    """Decay, then deposit one unit per (side, zone) team-presence-minute."""
    if dt_min < 0:
        raise ValueError("time never runs backwards")
    decay = field_.decay_per_min ** dt_min
    deposits = {k: v * decay for k, v in field_.deposits.items() if v * decay > 1e-15}
    for side, zone in occupied:
        key = (side, zone)
        deposits[key] = deposits.get(key, 0.0) + 1.0
    return PheromoneField(field_.decay_per_min, deposits)


# ---------------------------------------------------------------------------
# Ghost-agent rollouts
# ---------------------------------------------------------------------------

@dataclass
class GhostRollout:
    weights: dict[str, dict[int, float]]      # team -> zone -> move prior
    goal_samples: dict[str, dict[str, int]]   # team -> sampled goal counts


def rollout_ghosts(state, graph, estimates: dict[str, MindEstimate],
                   field_: PheromoneField, n: int, seed: int) -> GhostRollout:
    """Sample goal assignments per red team; each sample backs the zones a
    ghost pursuing that goal would step into next."""
    if n < 1:
        raise ValueError("need at least one rollout")
    from .arm_move import zone_distances

    scenario = state.scenario
    live = [t for t in state.teams if t.alive]
    blue_zones = sorted({graph.zone_of_position(t.position)
                         for t in live if t.side == "blue"})
    obj_zones = sorted({graph.zone_of_cell(c) for c in scenario.mission.objectives})
    dist_to_obj = _multi_source(graph, obj_zones) if obj_zones else {}
    dist_to_blue = _multi_source(graph, blue_zones) if blue_zones else {}
    max_pher = max([field_.level("red", z.id) for z in graph.zones] + [1e-9])

    weights: dict[str, dict[int, float]] = {}
    samples: dict[str, dict[str, int]] = {}
    rng = random.Random(seed)
    goals = list(GOALS)
    for team in sorted((t for t in live if t.side == "red"), key=lambda t: t.id):
        est = estimates.get(team.id) or default_estimate(team.id)
        zone = graph.zone_of_position(team.position)
        cands = [zone, *graph.neighbors.get(zone, ())]
        probs = [est.goal[g] for g in goals]
        counts = {g: 0 for g in goals}
        acc = {c: 0.0 for c in cands}
        for _ in range(n):
            r = rng.random()
            cum = 0.0
            goal = goals[-1]
            for g, p in zip(goals, probs):
                cum += p
                if r < cum:
                    goal = g
                    break
            counts[goal] += 1
            scores = {}
            for c in cands:
                if goal == "assault":
                    s = -dist_to_obj.get(c, 1e6)
                elif goal == "harass":
                    s = -dist_to_blue.get(c, 1e6)
                elif goal == "withdraw":
                    s = dist_to_blue.get(c, 0.0)
                else:  # defend in place
                    s = 1.0 if c == zone else 0.0
                s += 5.0 * field_.level("red", c) / max_pher
                scores[c] = s
            top = max(scores.values())
            ties = [c for c in cands if abs(scores[c] - top) <= 1e-9]
            for c in ties:
                acc[c] += 1.0 / len(ties)
        total = sum(acc.values())
        weights[team.id] = {c: v / total for c, v in acc.items() if v > 0.0}
        samples[team.id] = counts
    return GhostRollout(weights, samples)


def _multi_source(graph, sources) -> dict[int, float]:
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
# Stateful per-game tracker used by the live observers
# ---------------------------------------------------------------------------

@dataclass
class MindTracker:
    """Keeps per-team estimates, latched alert ticks, and the pheromone field."""

    terrain: TerrainGrid
    objectives: tuple[int, ...]
    graph: object
    config: MindConfig = field(default_factory=MindConfig)
    estimates: dict[str, MindEstimate] = field(default_factory=dict)
    last_features: dict[str, BehaviorFeatures] = field(default_factory=dict)
    label_latch: dict[tuple[str, str], int] = field(default_factory=dict)
    field_: PheromoneField = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.field_ is None:
            self.field_ = PheromoneField(self.config.pheromone_decay_per_min)

    def update_minute(self, history, minute: int) -> list[dict]:
        """Run inference for every live red team; returns new alert payloads."""
        cfg = self.config
        new_alerts: list[dict] = []
        sample = history.sample(minute)
        occupied = [
            (history.sides[tid], self.graph.zone_of_position(Position(*pos)))
            for tid, pos in sample.positions.items()
            if sample.strengths.get(tid, 0) > 0
        ]
        self.field_ = pheromone_update(self.field_, occupied, cfg.recompute_every_min)
        if minute < 1:
            return []
        window = ReplayWindow(history, minute, int(cfg.window_min))
        for tid in history.team_ids("red"):
            if sample.strengths.get(tid, 0) <= 0:
                continue
            feats = extract_features(window, tid, self.terrain, self.objectives, cfg)
            prior = self.estimates.get(tid)
            est = infer(feats, prior, cfg)
            self.estimates[tid] = est
            self.last_features[tid] = feats
            for label, p in [*est.emotion.items(), *est.goal.items()]:
                if label == "neutral" or p < cfg.alert_threshold:
                    continue
                key = (tid, label)
                if key not in self.label_latch:
                    self.label_latch[key] = feats.tick
                    new_alerts.append({
                        "team": tid, "label": label,
                        "confidence": p, "first_tick": feats.tick,
                        "source": "mind",
                    })
        return new_alerts
