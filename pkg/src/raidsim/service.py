"""Live-game gateway: runs the engine with wall-clock pacing and serves the
commander console over a WebSocket (schema ``raid-wire/1``).

One commander at a time; later connections spectate.  Commands are accepted
only while paused (the phase-one replan discipline) unless free replan is
enabled.  Every commander task lands in the replay tagged ``commander`` and
in a transcript, so an interactive game replays headlessly to the same hash.
"""
from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass, field

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .arm_move import predict
from .config import TICKS_PER_MINUTE
from .engine import Advisories, _apply_controller, issue_task, new_game, step, task_from_payload
from .harness import AdvisoryObserver, BlueBaselineBot, RedBot, RedProfile
from .metrics import score
from .overlay import alert_record, overlay_payload
from .replay import ENGINE_VERSION, REPLAY_SCHEMA, ReplayLog, scenario_digest
from .world import Scenario

WIRE_SCHEMA = "raid-wire/1"


@dataclass
class ServeOptions:
    minutes_per_second: float = 1.0   # 0 = unthrottled
    snapshot_every_ticks: int = 4
    free_replan: bool = False
    red_profile: RedProfile = field(default_factory=RedProfile)
    horizon_min: float = 30.0
    wait_for_commander_at_pause: bool = True


class _Connection:
    def __init__(self, ws: WebSocket, role: str):
        self.ws = ws
        self.role = role
        self.seq = 0
        self.engaged = False  # has ever sent a command

    async def send(self, msg_type: str, payload: dict) -> None:
        self.seq += 1
        await self.ws.send_text(json.dumps({
            "v": WIRE_SCHEMA, "type": msg_type, "seq": self.seq, "payload": payload,
        }, sort_keys=True))


class GameServer:
    """Owns the engine timeline; sockets feed a command queue it drains."""

    def __init__(self, scenario: Scenario, options: ServeOptions | None = None):
        self.scenario = scenario
        self.options = options or ServeOptions()
        self.state = new_game(scenario)
        self.red_bot = RedBot(scenario, self.options.red_profile)
        self.blue_bot = BlueBaselineBot(scenario)
        self.observer = AdvisoryObserver(scenario, horizon_min=self.options.horizon_min)
        self.sides = {t.id: t.side for t in scenario.teams}
        self.connections: list[_Connection] = []
        self.commander: _Connection | None = None
        self.paused = False
        self.finished = False
        self.pause_requested = False
        self._resume = asyncio.Event()
        self.transcript: list[dict] = []
        self._cursor = 0
        self._pause_index = 0

    # -- wire helpers ------------------------------------------------------
    async def _broadcast(self, msg_type: str, payload: dict) -> None:
        dead = []
        for conn in self.connections:
            try:
                await conn.send(msg_type, payload)
            except Exception:  # noqa: BLE001 - connection teardown races
                dead.append(conn)
        for conn in dead:
            self._drop(conn)

    def _drop(self, conn: _Connection) -> None:
        if conn in self.connections:
            self.connections.remove(conn)
        if conn is self.commander:
            self.commander = None
            if not self.finished:
                self.pause_requested = True  # hold the line for a reconnect

    def _snapshot_payload(self) -> dict:
        return {
            "tick": self.state.tick,
            "minute": self.state.minute(),
            "paused": self.paused,
            "finished": self.finished,
            "teams": [
                {"id": t.id, "side": t.side, "kind": t.kind,
                 "strength": t.strength, "x": t.position.x_m, "y": t.position.y_m}
                for t in self.state.teams
            ],
        }

    def _scorecard_payload(self) -> dict:
        replay = self._replay()
        try:
            card = score(replay, self.scenario, partial=not self.finished)
        except Exception:  # noqa: BLE001 - partial scoring is best-effort
            return {}
        return {
            "total": card.total,
            "components": {k: {"raw": r, "weight": w}
                           for k, (r, w) in card.components.items()},
        }

    def _replay(self) -> ReplayLog:
        header = {
            "record": "header", "schema": REPLAY_SCHEMA, "engine": ENGINE_VERSION,
            "scenario_hash": scenario_digest(self.scenario),
            "name": self.scenario.name, "seed": self.scenario.seed,
            "duration_ticks": self.scenario.duration_ticks,
            "cadence_min": self.scenario.advisory_cadence_min,
            "teams": {
                t.id: {"side": t.side, "kind": t.kind, "strength": t.strength,
                       "x": t.position.x_m, "y": t.position.y_m}
                for t in self.scenario.teams
            },
        }
        return ReplayLog(header, list(self.state.events))

    # -- command handling ----------------------------------------------------
    async def handle_message(self, conn: _Connection, raw: str) -> None:
        try:
            msg = json.loads(raw)
            msg_type = msg["type"]
            payload = msg.get("payload", {})
        except (json.JSONDecodeError, KeyError, TypeError):
            await conn.send("error", {"reason": "malformed message"})
            return
        conn.engaged = True
        if conn.role != "commander" and msg_type in ("task_cmd", "pause_cmd", "resume_cmd"):
            await conn.send("error", {"reason": "spectators cannot command"})
            return
        if msg_type == "task_cmd":
            await self._handle_task(conn, payload)
        elif msg_type == "pause_cmd":
            self.pause_requested = True
            await conn.send("pause_cmd", {"accepted": True})
        elif msg_type == "resume_cmd":
            if self.paused:
                self._resume.set()
                await conn.send("resume_cmd", {"accepted": True})
            else:
                await conn.send("error", {"reason": "not paused"})
        elif msg_type == "request_prediction":
            await self._handle_prediction_request(conn, payload)
        else:
            await conn.send("error", {"reason": f"unknown message type {msg_type!r}"})

    async def _handle_task(self, conn: _Connection, payload: dict) -> None:
        if not self.paused and not self.options.free_replan:
            await conn.send("error", {"reason": "not paused"})
            return
        if self.sides.get(payload.get("team")) != "blue":
            await conn.send("error", {"reason": "only blue teams take commands"})
            return
        try:
            task = task_from_payload(payload["task"] | {"team": payload["team"]})
            issue_task(self.state, task, by="commander")
        except Exception as e:  # noqa: BLE001 - surface the reason to the console
            await conn.send("error", {"reason": str(e) or type(e).__name__})
            return
        entry = {"tick": self.state.tick, "team": payload["team"],
                 "task": payload["task"]}
        self.transcript.append(entry)
        await conn.send("task_cmd", {"accepted": True, **entry})

    async def _handle_prediction_request(self, conn: _Connection, payload: dict) -> None:
        horizon = float(payload.get("horizon_min", self.options.horizon_min))
        preds = predict(self.state, self.observer.graph, None, horizon,
                        config=self.observer.search)
        for pred in preds:
            await conn.send("overlay", overlay_payload(pred, self.observer.graph,
                                                       self.sides))

    # -- game loop ----------------------------------------------------------
    async def _deliver_advisories(self) -> None:
        got = self.observer.on_pause(self.state)
        for pred in got.get("predictions", ()):
            self.state.log("prediction", {
                "variant": pred.variant, "horizon_min": pred.horizon_min,
                "created_tick": pred.created_tick, "digest": pred.digest(),
            })
            await self._broadcast("overlay", overlay_payload(
                pred, self.observer.graph, self.sides))
        for alert in got.get("alerts", ()):
            self.state.log("alert", alert)
            await self._broadcast("alert", alert_record(alert, self.scenario.terrain))

    async def _pause(self) -> None:
        self._pause_index += 1
        self.paused = True
        self.pause_requested = False
        self.state.log("paused", {"pause_index": self._pause_index,
                                  "minute": self.state.minute()})
        if self.state.tick < self.scenario.duration_ticks:
            await self._deliver_advisories()
            adv = Advisories(self._pause_index, self.state.minute())
            _apply_controller(self.state, self.red_bot, adv)
            _apply_controller(self.state, self.blue_bot, adv)
        await self._broadcast("paused", {"pause_index": self._pause_index,
                                         "minute": self.state.minute()})
        await self._broadcast("scorecard", self._scorecard_payload())
        if self.state.tick >= self.scenario.duration_ticks:
            return
        # a silent connection spectates; only an engaged commander holds the
        # clock at pauses
        if (self.commander is not None and self.commander.engaged
                and self.options.wait_for_commander_at_pause):
            self._resume.clear()
            await self._resume.wait()
        self.paused = False
        await self._broadcast("resumed", {"minute": self.state.minute()})

    async def run(self) -> None:
        cadence_ticks = self.scenario.advisory_cadence_min * TICKS_PER_MINUTE
        opts = self.options
        # opening orders, matching a headless game's start-of-game delivery
        for alert in self.observer.on_minute(self.state) or ():
            self.state.log("alert", alert)
        got = self.observer.on_pause(self.state)
        adv = Advisories(0, 0.0)
        adv.predictions = got.get("predictions", [])
        for pred in adv.predictions:
            self.state.log("prediction", {
                "variant": pred.variant, "horizon_min": pred.horizon_min,
                "created_tick": pred.created_tick, "digest": pred.digest(),
            })
        for alert in got.get("alerts", ()):
            adv.alerts.append(alert)
            self.state.log("alert", alert)
        _apply_controller(self.state, self.red_bot, adv)
        _apply_controller(self.state, self.blue_bot, adv)
        while self.state.tick < self.scenario.duration_ticks:
            step(self.state)
            if self.state.tick % TICKS_PER_MINUTE == 0:
                for alert in self.observer.on_minute(self.state) or ():
                    self.state.log("alert", alert)
                    await self._broadcast("alert", alert_record(alert, self.scenario.terrain))
            if self.state.tick % opts.snapshot_every_ticks == 0:
                await self._broadcast("snapshot", self._snapshot_payload())
            boundary = self.state.tick % cadence_ticks == 0
            if boundary or self.pause_requested or (
                    self.state.tick == self.scenario.duration_ticks):
                await self._pause()
            if opts.minutes_per_second > 0:
                await asyncio.sleep(
                    self.state.config.tick_seconds / 60.0 / opts.minutes_per_second)
            else:
                await asyncio.sleep(0)
        self.finished = True
        await self._broadcast("snapshot", self._snapshot_payload())
        await self._broadcast("scorecard", self._scorecard_payload())


def create_app(scenario: Scenario, options: ServeOptions | None = None) -> FastAPI:
    server = GameServer(scenario, options)
    app = FastAPI(title="raidsim gateway")
    app.state.game = server

    @app.on_event("startup")
    async def _start() -> None:
        app.state.game_task = asyncio.create_task(server.run())

    @app.get("/transcript")
    async def transcript() -> list[dict]:
        return server.transcript

    @app.get("/replay")
    async def replay() -> dict:
        log = server._replay()
        return {"hash": log.digest(), "finished": server.finished,
                "events": len(log.events)}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        role = "commander" if server.commander is None else "spectator"
        conn = _Connection(ws, role)
        server.connections.append(conn)
        if role == "commander":
            server.commander = conn
            server.pause_requested = server.pause_requested and not server.paused
        await conn.send("snapshot", server._snapshot_payload() | {"role": role})
        try:
            while True:
                raw = await ws.receive_text()
                await server.handle_message(conn, raw)
        except WebSocketDisconnect:
            server._drop(conn)

    return app


def serve_game(scenario: Scenario, port: int, options: ServeOptions | None = None) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn

    app = create_app(scenario, options)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning",
                ws_ping_interval=5.0, ws_ping_timeout=20.0)
