"""Replay log: newline-delimited JSON records, one per event, plus a header.

The replay hash is the SHA-256 of the serialized byte stream, so two runs
match iff their replays are byte-identical.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

REPLAY_SCHEMA = "raid-replay/1"
ENGINE_VERSION = "raidsim-0.1.0"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class Event:
    tick: int
    seq: int
    kind: str
    payload: dict

    def to_record(self) -> dict:
        return {"t": self.tick, "i": self.seq, "k": self.kind, "p": self.payload}

    @staticmethod
    def from_record(rec: dict) -> "Event":
        return Event(rec["t"], rec["i"], rec["k"], rec["p"])


@dataclass
class ReplayLog:
    header: dict
    events: list[Event] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        lines = [canonical_json(self.header)]
        lines.extend(canonical_json(e.to_record()) for e in self.events)
        return ("\n".join(lines) + "\n").encode("utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def write(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @staticmethod
    def read(path) -> "ReplayLog":
        with open(path, "rb") as f:
            lines = f.read().decode("utf-8").splitlines()
        header = json.loads(lines[0])
        if header.get("schema") != REPLAY_SCHEMA:
            raise ValueError(f"not a {REPLAY_SCHEMA} replay")
        events = [Event.from_record(json.loads(line)) for line in lines[1:] if line]
        return ReplayLog(header, events)


def scenario_digest(scenario) -> str:
    from .world import render_scenario

    return hashlib.sha256(render_scenario(scenario).encode("utf-8")).hexdigest()
