"""Operational scoring and experiment metrics.

The 0-100 operational score is a weighted sum of five components (mission
progress, red casualties, blue survival, collateral avoidance, time
efficiency); weights vary by mission family.  Prediction quality is measured
as mean distance error against the replay, with a dead-reckoning
extrapolation as the comparison baseline.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .arm_move import PredictionSet, trajectory_at
from .config import (
    MISSION_FAMILY,
    OBJECTIVE_HIT_NORM,
    OBJECTIVE_PERIMETER_M,
    RALLY_RADIUS_M,
    SCORE_WEIGHTS,
    TICKS_PER_MINUTE,
)
from .history import TeamHistory, history_from_replay
from .replay import ReplayLog
from .world import Position, Scenario, civilian_cells
from .world import _los_scan  # supercover scan reused for collateral checks


class IncompleteReplay(ValueError):
    pass


class TimeOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class ScoreCard:
    components: dict[str, tuple[float, float]]  # name -> (raw, weight)
    total: float

    @staticmethod
    def build(raws: dict[str, float], weights: dict[str, float]) -> "ScoreCard":
        if abs(sum(weights.values()) - 1.0) > 1e-9:
            raise ValueError("component weights must sum to 1")
        comps = {}
        total = 0.0
        for name, w in weights.items():
            raw = min(1.0, max(0.0, raws[name]))
            comps[name] = (raw, w)
            total += raw * w
        return ScoreCard(comps, 100.0 * total)

    def raw(self, name: str) -> float:
        return self.components[name][0]


def _members_lost(history: TeamHistory, side: str) -> tuple[int, int]:
    start = history.sample(0).strengths
    end = history.sample(history.last_minute).strengths
    initial = sum(v for tid, v in start.items() if history.sides[tid] == side)
    final = sum(v for tid, v in end.items() if history.sides[tid] == side)
    return initial - final, initial


def _covered(history: TeamHistory, minute: int, obj_pos: Position) -> bool:
    s = history.sample(minute)
    for tid, pos in s.positions.items():
        if history.sides[tid] != "blue" or s.strengths.get(tid, 0) <= 0:
            continue
        if math.hypot(pos[0] - obj_pos.x_m, pos[1] - obj_pos.y_m) <= OBJECTIVE_PERIMETER_M:
            return True
    return False


def _collateral_fraction(replay: ReplayLog, scenario: Scenario) -> float:
    grid = scenario.terrain
    mask = civilian_cells(grid)
    total = 0
    crossing = 0
    for e in replay.events:
        if e.kind != "fired":
            continue
        total += 1
        hit = _los_scan(mask, grid.width_cells, grid.height_cells, grid.cell_size_m,
                        e.payload["sx"], e.payload["sy"],
                        e.payload["tx"], e.payload["ty"])
        if hit >= 0:
            crossing += 1
    return crossing / total if total else 0.0


def score(replay: ReplayLog, scenario: Scenario, partial: bool = False) -> ScoreCard:
    duration = scenario.duration_ticks
    n_moved = sum(1 for e in replay.events if e.kind == "moved")
    if n_moved < duration and not partial:
        raise IncompleteReplay(f"replay has {n_moved} of {duration} tick records")
    if partial:
        duration = max(n_moved, 1)
    history = history_from_replay(replay)
    mission = scenario.mission.type
    family = MISSION_FAMILY[mission]
    grid = scenario.terrain
    minutes = history.last_minute
    objectives = [grid.cell_center(o) for o in scenario.mission.objectives]

    completion_minute: int | None = None
    if family == "defense":
        covered_sum = 0
        slots = 0
        for m in range(0, minutes + 1):
            states = [_covered(history, m, o) for o in objectives]
            covered_sum += sum(states)
            slots += len(states)
            if completion_minute is None and states and all(states):
                completion_minute = m
        coverage = covered_sum / slots if slots else 0.0
        hits = sum(1 for e in replay.events if e.kind == "objective_hit")
        # surviving red always finds firing positions eventually, so objective
        # fire discounts rather than erases held ground
        progress = coverage * (1.0 - 0.5 * min(1.0, hits / OBJECTIVE_HIT_NORM))
    elif family == "attack":
        per_team = []
        end_sample = history.sample(minutes)
        for tid in history.team_ids("blue"):
            p0 = history.sample(0).positions[tid]
            p1 = end_sample.positions[tid]
            d0 = min(math.hypot(p0[0] - o.x_m, p0[1] - o.y_m) for o in objectives)
            d1 = min(math.hypot(p1[0] - o.x_m, p1[1] - o.y_m) for o in objectives)
            per_team.append(1.0 if d0 <= 1e-9 else max(0.0, min(1.0, (d0 - d1) / d0)))
        for m in range(0, minutes + 1):
            if all(_covered(history, m, o) for o in objectives):
                completion_minute = m
                break
        captured = sum(_covered(history, minutes, o) for o in objectives)
        progress = (0.7 * (sum(per_team) / len(per_team) if per_team else 0.0)
                    + 0.3 * captured / max(1, len(objectives)))
    else:  # withdrawal
        rally = objectives[0] if objectives else grid.cell_center(0)
        end_sample = history.sample(minutes)
        blue_ids = history.team_ids("blue")
        at_rally = 0
        for tid in blue_ids:
            if end_sample.strengths.get(tid, 0) <= 0:
                continue
            pos = end_sample.positions[tid]
            if math.hypot(pos[0] - rally.x_m, pos[1] - rally.y_m) <= RALLY_RADIUS_M:
                at_rally += 1
        progress = at_rally / max(1, len(blue_ids))
        for m in range(0, minutes + 1):
            s = history.sample(m)
            live = [t for t in blue_ids if s.strengths.get(t, 0) > 0]
            if live and all(
                math.hypot(s.positions[t][0] - rally.x_m, s.positions[t][1] - rally.y_m)
                <= RALLY_RADIUS_M for t in live
            ):
                completion_minute = m
                break

    red_lost, red_initial = _members_lost(history, "red")
    blue_lost, blue_initial = _members_lost(history, "blue")
    completion_tick = (completion_minute * TICKS_PER_MINUTE
                       if completion_minute is not None else duration)
    raws = {
        "mission_progress": progress,
        "red_casualties": red_lost / red_initial if red_initial else 0.0,
        "blue_survival": 1.0 - (blue_lost / blue_initial if blue_initial else 0.0),
        "collateral_avoidance": 1.0 - _collateral_fraction(replay, scenario),
        "time_efficiency": 1.0 - completion_tick / duration,
    }
    return ScoreCard.build(raws, SCORE_WEIGHTS[family])


# ---------------------------------------------------------------------------
# Prediction accuracy
# ---------------------------------------------------------------------------

def prediction_error(pred: PredictionSet, history: TeamHistory, t_min: float,
                     terrain=None) -> tuple[dict[str, float], float]:
    """Per-live-red-team distance error at offset t_min, and the mean."""
    created_minute = pred.created_tick // TICKS_PER_MINUTE
    minute = created_minute + int(round(t_min))
    if t_min < 0 or t_min > pred.horizon_min + 1e-9:
        raise TimeOutOfRange(f"offset {t_min} beyond the {pred.horizon_min} min horizon")
    if minute > history.last_minute:
        raise TimeOutOfRange(f"minute {minute} beyond the replay span")
    sample = history.sample(minute)
    errors: dict[str, float] = {}
    for tid in history.team_ids("red"):
        if tid not in pred.tracks or sample.strengths.get(tid, 0) <= 0:
            continue
        want = trajectory_at(pred, tid, t_min)
        got = sample.positions[tid]
        errors[tid] = math.hypot(want.x_m - got[0], want.y_m - got[1])
    mean = sum(errors.values()) / len(errors) if errors else 0.0
    return errors, mean


def dead_reckoning_error(history: TeamHistory, created_tick: int, t_min: float,
                         terrain) -> tuple[dict[str, float], float]:
    """Linear extrapolation baseline from the last five minutes of motion."""
    m0 = created_tick // TICKS_PER_MINUTE
    minute = m0 + int(round(t_min))
    if minute > history.last_minute:
        raise TimeOutOfRange(f"minute {minute} beyond the replay span")
    lookback = min(5, m0)
    sample_now = history.sample(m0)
    sample_then = history.sample(m0 - lookback)
    sample_future = history.sample(minute)
    errors: dict[str, float] = {}
    for tid in history.team_ids("red"):
        if sample_future.strengths.get(tid, 0) <= 0:
            continue
        x0, y0 = sample_now.positions[tid]
        if lookback > 0:
            xp, yp = sample_then.positions[tid]
            vx = (x0 - xp) / lookback
            vy = (y0 - yp) / lookback
        else:
            vx = vy = 0.0
        px = x0 + vx * t_min
        py = y0 + vy * t_min
        px = min(max(px, 0.0), terrain.width_m - 1e-6)
        py = min(max(py, 0.0), terrain.height_m - 1e-6)
        gx, gy = sample_future.positions[tid]
        errors[tid] = math.hypot(px - gx, py - gy)
    mean = sum(errors.values()) / len(errors) if errors else 0.0
    return errors, mean


# ---------------------------------------------------------------------------
# Detection latency
# ---------------------------------------------------------------------------

def detection_latency(alerts: list[dict], ground_truth: dict[str, tuple[int, str]]
                      ) -> dict[str, float | None]:
    """Minutes from scripted onset to the first matching alert; None if missed."""
    out: dict[str, float | None] = {}
    for team, (onset_tick, label) in sorted(ground_truth.items()):
        first: int | None = None
        for a in alerts:
            if a.get("team") == team and a.get("label") == label:
                tick = a.get("first_tick", a.get("tick", 0))
                if first is None or tick < first:
                    first = tick
        out[team] = None if first is None else (first - onset_tick) / TICKS_PER_MINUTE
    return out


# ---------------------------------------------------------------------------
# Paired runs
# ---------------------------------------------------------------------------

ERROR_OFFSETS_MIN = (5, 10, 15, 20, 25, 30)


@dataclass
class RunRecord:
    scenario_name: str
    seed: int
    advised: bool
    score: ScoreCard
    replay_hash: str
    mean_errors: dict[int, float] = field(default_factory=dict)       # arm_move
    baseline_errors: dict[int, float] = field(default_factory=dict)   # dead reckoning
    feint_alerts: list[dict] = field(default_factory=list)
    emotion_latencies: dict[str, float | None] = field(default_factory=dict)


@dataclass
class PairedRunResult:
    scenario_name: str
    seed: int
    scenario_hash: str
    advised: RunRecord
    unadvised: RunRecord

    @property
    def advised_won(self) -> bool:
        return self.advised.score.total > self.unadvised.score.total

    def error_series(self) -> list[tuple[int, float, float]]:
        out = []
        for t in ERROR_OFFSETS_MIN:
            if t in self.advised.mean_errors and t in self.advised.baseline_errors:
                out.append((t, self.advised.mean_errors[t], self.advised.baseline_errors[t]))
        return out


def paired_summary(results: list[PairedRunResult]) -> dict:
    if not results:
        raise ValueError("need at least one pair")
    diffs = [r.advised.score.total - r.unadvised.score.total for r in results]
    n = len(results)
    adv_mean = math.fsum(r.advised.score.total for r in results) / n
    unadv_mean = math.fsum(r.unadvised.score.total for r in results) / n
    mean_diff = math.fsum(diffs) / n
    var = math.fsum((d - mean_diff) ** 2 for d in diffs) / (n - 1) if n > 1 else 0.0
    wins = sum(1 for d in diffs if d > 0)
    losses = sum(1 for d in diffs if d < 0)
    # sign test (ours, descriptive): chance of >= wins out of decided pairs
    decided = wins + losses
    p = (sum(math.comb(decided, k) for k in range(wins, decided + 1)) / 2 ** decided
         if decided else 1.0)
    return {
        "advised_mean": adv_mean,
        "unadvised_mean": unadv_mean,
        "std": math.sqrt(var),
        "wins": wins,
        "n": n,
        "sign_test_p": p,
    }


def summary_table(summary: dict) -> str:
    lines = [
        f"{'pairs':>18}: {summary['n']}",
        f"{'advised mean':>18}: {summary['advised_mean']:.2f}",
        f"{'unadvised mean':>18}: {summary['unadvised_mean']:.2f}",
        f"{'diff std':>18}: {summary['std']:.2f}",
        f"{'advised wins':>18}: {summary['wins']} of {summary['n']}",
        f"{'sign-test p':>18}: {summary['sign_test_p']:.3f} (descriptive, ours)",
    ]
    return "\n".join(lines)


CSV_COLUMNS = [
    "scenario", "seed", "arm", "total",
    "mission_progress", "red_casualties", "blue_survival",
    "collateral_avoidance", "time_efficiency",
    *[f"err{t}" for t in ERROR_OFFSETS_MIN],
    *[f"dr{t}" for t in ERROR_OFFSETS_MIN],
    "feint_tp", "feint_fp", "emotion_latencies", "replay_hash",
]


def run_csv_row(rec: RunRecord, feint_tp: int = 0, feint_fp: int = 0) -> list[str]:
    lat = ";".join(
        f"{team}:{'' if v is None else format(v, '.1f')}"
        for team, v in sorted(rec.emotion_latencies.items()))
    row = [
        rec.scenario_name, str(rec.seed), "advised" if rec.advised else "baseline",
        f"{rec.score.total:.4f}",
        *[f"{rec.score.raw(c):.6f}" for c in (
            "mission_progress", "red_casualties", "blue_survival",
            "collateral_avoidance", "time_efficiency")],
        *[f"{rec.mean_errors[t]:.2f}" if t in rec.mean_errors else ""
          for t in ERROR_OFFSETS_MIN],
        *[f"{rec.baseline_errors[t]:.2f}" if t in rec.baseline_errors else ""
          for t in ERROR_OFFSETS_MIN],
        str(feint_tp), str(feint_fp), lat, rec.replay_hash,
    ]
    return row


def results_csv(results: list[PairedRunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow(run_csv_row(r.advised))
        w.writerow(run_csv_row(r.unadvised))
    return buf.getvalue()
