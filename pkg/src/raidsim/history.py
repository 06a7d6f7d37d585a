"""Minute-resolution game history folded from replay events.

Both the live observers and the offline replay tools build the same
TeamHistory, so estimates computed during a run match estimates recomputed
from its replay file.  Minute m covers ticks [12(m-1), 12m); callers close a
minute once every event of its last tick has been ingested.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .config import TICKS_PER_MINUTE
from .replay import ReplayLog


@dataclass
class MinuteSample:
    minute: int
    positions: dict[str, tuple[float, float]]
    strengths: dict[str, int]


@dataclass
class TeamHistory:
    """Per-minute samples plus per-minute fire counts for every team."""

    sides: dict[str, str]
    kinds: dict[str, str]
    samples: list[MinuteSample] = field(default_factory=list)
    fired: dict[int, dict[str, int]] = field(default_factory=dict)
    casualty_ticks: dict[str, list[int]] = field(default_factory=dict)
    _pos: dict[str, tuple[float, float]] = field(default_factory=dict)
    _strength: dict[str, int] = field(default_factory=dict)
    _fire_bucket: dict[str, int] = field(default_factory=dict)

    @staticmethod
    def start(initial_teams: dict) -> "TeamHistory":
        h = TeamHistory(
            sides={tid: d["side"] for tid, d in initial_teams.items()},
            kinds={tid: d["kind"] for tid, d in initial_teams.items()},
        )
        h._pos = {tid: (d["x"], d["y"]) for tid, d in initial_teams.items()}
        h._strength = {tid: d["strength"] for tid, d in initial_teams.items()}
        h.samples.append(MinuteSample(0, dict(h._pos), dict(h._strength)))
        return h

    def ingest(self, events) -> None:
        for e in events:
            if e.kind == "moved":
                for tid, xy in e.payload["teams"].items():
                    self._pos[tid] = (xy[0], xy[1])
            elif e.kind in ("fired", "objective_hit"):
                tid = e.payload["shooter"]
                self._fire_bucket[tid] = self._fire_bucket.get(tid, 0) + 1
            elif e.kind == "casualty":
                self._strength[e.payload["team"]] = e.payload["strength"]
                self.casualty_ticks.setdefault(e.payload["team"], []).append(e.tick)

    def close_minute(self, minute: int) -> None:
        """Snapshot the state once every event of tick 12*minute-1 is in."""
        if minute != self.last_minute + 1:
            raise ValueError(f"minutes close in order; expected {self.last_minute + 1}")
        self.samples.append(MinuteSample(minute, dict(self._pos), dict(self._strength)))
        if self._fire_bucket:
            self.fired[minute] = dict(self._fire_bucket)
            self._fire_bucket.clear()

    @property
    def last_minute(self) -> int:
        return self.samples[-1].minute

    def sample(self, minute: int) -> MinuteSample:
        minute = max(0, min(minute, self.last_minute))
        return self.samples[minute]

    def fire_count(self, team_id: str, m_from: int, m_to: int) -> int:
        """Shots by a team in minutes (m_from, m_to]."""
        return sum(self.fired.get(m, {}).get(team_id, 0)
                   for m in range(m_from + 1, m_to + 1))

    def team_ids(self, side: str | None = None):
        ids = sorted(self.sides)
        return [i for i in ids if side is None or self.sides[i] == side]

    def position_at_minute(self, team_id: str, minute: int) -> tuple[float, float]:
        return self.sample(minute).positions[team_id]


def history_from_replay(replay: ReplayLog) -> TeamHistory:
    h = TeamHistory.start(replay.header["teams"])
    next_minute = 1
    for e in replay.events:
        while e.tick >= next_minute * TICKS_PER_MINUTE:
            h.close_minute(next_minute)
            next_minute += 1
        h.ingest((e,))
    duration = replay.header.get("duration_ticks", 0)
    while next_minute * TICKS_PER_MINUTE <= duration:
        h.close_minute(next_minute)
        next_minute += 1
    return h


@dataclass
class ReplayWindow:
    """A sliding feature window over the minute history."""

    history: TeamHistory
    end_minute: int
    window_min: int

    @property
    def start_minute(self) -> int:
        return max(0, self.end_minute - self.window_min)

    @property
    def span_min(self) -> int:
        return self.end_minute - self.start_minute
