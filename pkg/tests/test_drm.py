import math
import random

import pytest

from helpers import open_grid, scenario, team
from raidsim.arm_move import Plan, PredictionSet, abstract_map
from raidsim.config import DrmConfig
from raidsim.drm import FeintDetector, InsufficientHistory, score_intents
from raidsim.history import TeamHistory
from raidsim.world import Mission, Position


def synthetic_history(sc, minute_positions, fired=None):
    """minute_positions: dict team -> list of (x, y) per minute (incl. 0)."""
    h = TeamHistory.start({t.id: {"side": t.side, "kind": t.kind,
                                  "strength": t.strength,
                                  "x": t.position.x_m, "y": t.position.y_m}
                           for t in sc.teams})
    n = max(len(v) for v in minute_positions.values())
    fired = fired or {}
    for m in range(1, n):
        for tid, track in minute_positions.items():
            h._pos[tid] = track[min(m, len(track) - 1)]
        for tid, count in fired.get(m, {}).items():
            h._fire_bucket[tid] = count
        h.close_minute(m)
    return h


def straight_track(start, end, minutes):
    x0, y0 = start
    x1, y1 = end
    return [(x0 + (x1 - x0) * m / minutes, y0 + (y1 - y0) * m / minutes)
            for m in range(minutes + 1)]


def defense_scenario(n_red=2):
    g = open_grid(100, 100)
    objective = g.cell_index(50, 50)
    other = g.cell_index(80, 50)
    teams = [team(f"r{i}", x=105.0 + 30 * i, y=905.0) for i in range(n_red)]
    teams.append(team("b1", side="blue", x=505.0, y=505.0))
    sc = scenario(teams, grid=g, mission=Mission("point-defense", (objective, other)),
                  duration_ticks=1440)
    return sc, objective, other


class TestScoreIntents:
    def test_committed_attack_mode(self):
        sc, objective, other = defense_scenario(1)
        obj_pos = sc.terrain.cell_center(objective)
        track = straight_track((105.0, 905.0), (obj_pos.x_m + 60, obj_pos.y_m), 12)
        track += [track[-1]] * 10
        fired = {m: {"r0": 8} for m in range(10, 22)}
        h = synthetic_history(sc, {"r0": track}, fired)
        post = score_intents(h, "r0", sc.mission.objectives, sc.terrain)
        mode = max(post, key=post.get)
        assert mode == ("committed_attack", objective)

    def test_demonstration_mode(self):
        sc, objective, other = defense_scenario(1)
        obj_pos = sc.terrain.cell_center(objective)
        approach = straight_track((105.0, 905.0), (obj_pos.x_m + 150, obj_pos.y_m), 10)
        pullback = straight_track(
            (obj_pos.x_m + 150, obj_pos.y_m), (obj_pos.x_m + 520, obj_pos.y_m), 4)
        track = approach + pullback[1:] + [pullback[-1]] * 6
        fired = {10: {"r0": 3}}  # one token burst at closest approach
        h = synthetic_history(sc, {"r0": track}, fired)
        post = score_intents(h, "r0", sc.mission.objectives, sc.terrain)
        mode = max(post, key=post.get)
        assert mode == ("demonstration", objective)

    def test_stationary_team_repositions(self):
        sc, objective, other = defense_scenario(1)
        h = synthetic_history(sc, {"r0": [(105.0, 905.0)] * 15})
        post = score_intents(h, "r0", sc.mission.objectives, sc.terrain)
        assert max(post, key=post.get) == ("reposition", None)
        assert sum(post.values()) == pytest.approx(1.0, abs=1e-9)

    def test_insufficient_history(self):
        sc, objective, other = defense_scenario(1)
        h = synthetic_history(sc, {"r0": [(105.0, 905.0)] * 4})
        with pytest.raises(InsufficientHistory):
            score_intents(h, "r0", sc.mission.objectives, sc.terrain)


def prediction_stub(sc, graph, red_paths):
    return PredictionSet(
        created_tick=0, horizon_min=30.0,
        red_plan=Plan("red", red_paths),
        blue_recommendation=Plan("blue", {}),
        engagement_zones=[], variant="most_likely", solve_time_s=0.0)


class TestDetectFeints:
    def build(self, sc):
        graph = abstract_map(sc.terrain)
        det = FeintDetector(sc.terrain, sc.mission.objectives, graph)
        return graph, det

    def test_no_approach_no_alerts(self):
        sc, objective, other = defense_scenario(2)
        graph, det = self.build(sc)
        h = synthetic_history(sc, {"r0": [(105.0, 905.0)] * 20,
                                   "r1": [(135.0, 905.0)] * 20})
        pred = prediction_stub(sc, graph, {
            "r0": ((graph.zone_of_position(Position(105.0, 905.0)), 0.0),),
            "r1": ((graph.zone_of_position(Position(135.0, 905.0)), 0.0),),
        })
        assert det.detect(None, h, pred) == []

    def feint_setup(self):
        sc, objective, other = defense_scenario(2)
        graph, det = self.build(sc)
        obj_pos = sc.terrain.cell_center(objective)
        other_pos = sc.terrain.cell_center(other)
        # r0 demonstrates at `objective`, r1 presses `other`
        approach = straight_track((105.0, 905.0), (obj_pos.x_m + 140, obj_pos.y_m), 10)
        pullback = straight_track(
            (obj_pos.x_m + 140, obj_pos.y_m), (obj_pos.x_m + 540, obj_pos.y_m), 4)
        r0 = approach + pullback[1:] + [pullback[-1]] * 8
        r1 = straight_track((135.0, 905.0), (other_pos.x_m, other_pos.y_m + 50), 14)
        r1 += [r1[-1]] * 8
        h = synthetic_history(sc, {"r0": r0, "r1": r1}, {9: {"r0": 2}})
        z_main = graph.zone_of_position(Position(other_pos.x_m, other_pos.y_m + 50))
        pred = prediction_stub(sc, graph, {
            "r0": ((graph.zone_of_position(Position(r0[-1][0], r0[-1][1])), 0.0),),
            "r1": ((graph.zone_of_position(Position(135.0, 905.0)), 0.0), (z_main, 300.0)),
        })
        return sc, graph, det, h, pred, objective

    def test_scripted_feint_detected_with_cross_check(self):
        sc, graph, det, h, pred, objective = self.feint_setup()
        alerts = det.detect(None, h, pred)
        assert len(alerts) == 1
        alert = alerts[0]
        assert alert.zone == objective
        assert "r0" in alert.implicated
        assert alert.confidence >= det.config.detection_threshold
        assert alert.rationale == "approach_then_withdraw"

    def test_latching_requires_confidence_increase(self):
        sc, graph, det, h, pred, objective = self.feint_setup()
        first = det.detect(None, h, pred)
        assert len(first) == 1
        again = det.detect(None, h, pred)
        assert again == []  # same evidence, no re-emission

    def test_committed_attack_specificity_100_generations(self):
        rng = random.Random(77)
        alerts_total = 0
        for trial in range(100):
            sc, objective, other = defense_scenario(2)
            graph, det = self.build(sc)
            obj = objective if rng.random() < 0.5 else other
            obj_pos = sc.terrain.cell_center(obj)
            minutes = rng.randint(10, 16)
            tracks = {}
            for i in range(2):
                x0 = 105.0 + 30 * i + rng.uniform(0, 120)
                y0 = 905.0 - rng.uniform(0, 120)
                stop = rng.uniform(20.0, 90.0)
                t = straight_track((x0, y0), (obj_pos.x_m + stop, obj_pos.y_m), minutes)
                tracks[f"r{i}"] = t + [t[-1]] * 8
            fired = {m: {"r0": rng.randint(3, 9), "r1": rng.randint(3, 9)}
                     for m in range(minutes - 1, minutes + 8)}
            h = synthetic_history(sc, tracks, fired)
            pred = prediction_stub(sc, graph, {
                tid: ((graph.zone_of_position(Position(*tracks[tid][-1])), 0.0),)
                for tid in tracks
            })
            alerts_total += len(det.detect(None, h, pred))
        assert alerts_total == 0

    def test_posterior_normalization_across_fuzz(self):
        rng = random.Random(3)
        sc, objective, other = defense_scenario(1)
        for _ in range(50):
            track = [(105.0 + rng.uniform(-50, 700), 905.0 - rng.uniform(0, 700))]
            for _m in range(14):
                x, y = track[-1]
                track.append((min(max(x + rng.uniform(-90, 90), 5), 995),
                              min(max(y + rng.uniform(-90, 90), 5), 995)))
            h = synthetic_history(sc, {"r0": track},
                                  {m: {"r0": rng.randint(0, 6)} for m in range(14)})
            post = score_intents(h, "r0", sc.mission.objectives, sc.terrain)
            assert sum(post.values()) == pytest.approx(1.0, abs=1e-9)
