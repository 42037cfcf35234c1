"""Live session server: fixed 60 Hz step loop streaming poses as
line-delimited JSON over TCP, with an optional WebSocket listener for
browser clients.

Message shapes (one JSON object per line):
  client -> server: {"type": "control", "dir": [x, z], "speed": s,
                     "gait": "walk", "style": {"mode": "single", "id": ...}
                                            | {"mode": "triangle", "ids": [...], "lambda": [...]}}
                    {"type": "claim_control"}
  server -> client: {"type": "hello", "skeleton": {...}, "styles": [...]}
                    {"type": "pose", "tick": n, "root": [x, y, z, yaw],
                     "joints": [[x, y, z, qx, qy, qz, qw] * 25],
                     "contacts": [l, r], "style_telemetry": "..."}
                    {"type": "error", "message": "..."}
"""
from __future__ import annotations

import asyncio
import json
import logging
import time

import numpy as np

from .model import StyleModel
from .runtime import (
    FPS,
    ControlError,
    ControlInput,
    ControllerState,
    model_skeleton,
    resolve_style,
    step,
)

log = logging.getLogger(__name__)


def _hello_message(model: StyleModel) -> dict:
    skel = model_skeleton(model)
    return {
        "type": "hello",
        "skeleton": {
            "names": skel.names,
            "parents": [-1 if p is None else p for p in skel.parents],
            "offsets": skel.offsets.tolist(),
            "feet": list(skel.feet),
            "end_effectors": list(skel.end_effectors),
        },
        "styles": sorted(model.embeddings),
        "fps": FPS,
    }


def parse_control(msg: dict) -> ControlInput:
    try:
        control = ControlInput(
            target_direction_xz=np.asarray(msg.get("dir", [0.0, 0.0]), dtype=np.float64),
            target_speed=float(msg.get("speed", 0.0)),
            gait=str(msg.get("gait", "idle")),
        )
        style = msg.get("style")
        if style:
            if style.get("mode") == "triangle":
                ids = style["ids"]
                if len(ids) != 3:
                    raise ControlError("triangle selection needs 3 style ids")
                control.triangle_ids = tuple(ids)
                control.triangle_lambda = np.asarray(style["lambda"], dtype=np.float64)
            else:
                control.style_id = style.get("id")
        if control.target_direction_xz.shape != (2,):
            raise ControlError("dir must be [x, z]")
        control.validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise ControlError(str(exc)) from exc
    return control


class Session:
    """Owns the controller state; clients attach through queues."""

    def __init__(self, model: StyleModel, state: ControllerState):
        self.model = model
        self.state = state
        self.control = ControlInput()
        self.controller: object | None = None  # token owned by the steering client
        self.clients: dict[object, asyncio.Queue] = {}
        self.tick = 0
        self.stopping = asyncio.Event()

    def attach(self, token: object) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(maxsize=4)
        self.clients[token] = q
        return q

    def detach(self, token: object) -> None:
        self.clients.pop(token, None)
        if self.controller is token:
            self.controller = None
            self.control = ControlInput()  # character idles

    def handle_message(self, token: object, line: str) -> dict | None:
        """Returns an error message dict, or None when accepted."""
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return {"type": "error", "message": f"bad json: {exc}"}
        mtype = msg.get("type")
        if mtype == "claim_control":
            if self.controller is None or self.controller is token:
                self.controller = token
                return None
            return {"type": "error", "message": "control already claimed"}
        if mtype == "control":
            if self.controller is not token:
                return {"type": "error", "message": "not the controller"}
            try:
                self.control = parse_control(msg)
            except ControlError as exc:
                return {"type": "error", "message": str(exc)}
            return None
        return {"type": "error", "message": f"unknown message type {mtype!r}"}

    def _broadcast(self, message: dict) -> None:
        line = json.dumps(message)
        for q in self.clients.values():
            # Latest wins: drop the oldest frame instead of backlogging.
            while q.full():
                try:
                    q.get_nowait()
                except asyncio.QueueEmpty:
                    break
            q.put_nowait(line)

    async def run(self, max_ticks: int | None = None) -> None:
        period = 1.0 / FPS
        next_tick = time.monotonic()
        while not self.stopping.is_set():
            if max_ticks is not None and self.tick >= max_ticks:
                break
            control = self.control
            try:
                result = step(self.state, control, self.model)
            except ControlError as exc:
                log.warning("step rejected control: %s", exc)
                self.control = ControlInput()
                continue
            telemetry = self._style_telemetry(control)
            self._broadcast(
                {
                    "type": "pose",
                    "tick": self.tick,
                    "root": [*result.root.tolist(), result.yaw],
                    "joints": np.concatenate(
                        [result.positions, result.rotations], axis=1
                    ).tolist(),
                    "contacts": result.contacts.tolist(),
                    "style_telemetry": telemetry,
                }
            )
            self.tick += 1
            next_tick += period
            now = time.monotonic()
            if now < next_tick:
                await asyncio.sleep(next_tick - now)
            else:
                # Behind schedule: skip ahead rather than backlog.
                missed = int((now - next_tick) / period) + 1
                next_tick += missed * period
                await asyncio.sleep(0)

    def _style_telemetry(self, control: ControlInput) -> str:
        if self.model.config.mode != "film":
            return control.style_id or ""
        try:
            _, label = resolve_style(self.model, control)
            return label
        except ControlError:
            return ""


async def _serve_tcp_client(session: Session, reader, writer) -> None:
    token = object()
    queue = session.attach(token)
    writer.write((json.dumps(_hello_message(session.model)) + "\n").encode())
    await writer.drain()

    async def pump_out():
        while True:
            line = await queue.get()
            writer.write((line + "\n").encode())
            await writer.drain()

    out_task = asyncio.ensure_future(pump_out())
    try:
        while True:
            raw = await reader.readline()
            if not raw:
                break
            reply = session.handle_message(token, raw.decode("utf-8", "replace").strip())
            if reply is not None:
                writer.write((json.dumps(reply) + "\n").encode())
                await writer.drain()
    except (ConnectionResetError, asyncio.IncompleteReadError):
        pass
    finally:
        out_task.cancel()
        session.detach(token)
        writer.close()


async def _serve_ws_client(session: Session, ws) -> None:
    token = object()
    queue = session.attach(token)
    await ws.send(json.dumps(_hello_message(session.model)))

    async def pump_out():
        while True:
            await ws.send(await queue.get())

    out_task = asyncio.ensure_future(pump_out())
    try:
        async for raw in ws:
            reply = session.handle_message(token, raw)
            if reply is not None:
                await ws.send(json.dumps(reply))
    except Exception:
        pass
    finally:
        out_task.cancel()
        session.detach(token)


async def serve_session(
    model: StyleModel,
    state: ControllerState,
    port: int,
    ws_port: int | None = None,
    max_ticks: int | None = None,
    ready: asyncio.Event | None = None,
) -> None:
    """Run the tick loop plus TCP (and optional WebSocket) listeners."""
    session = Session(model, state)
    server = await asyncio.start_server(
        lambda r, w: _serve_tcp_client(session, r, w), "127.0.0.1", port
    )
    ws_server = None
    if ws_port is not None:
        import websockets

        ws_server = await websockets.serve(
            lambda ws: _serve_ws_client(session, ws), "127.0.0.1", ws_port
        )
    log.info("serving on tcp://127.0.0.1:%d%s", port,
             f" ws://127.0.0.1:{ws_port}" if ws_port else "")
    if ready is not None:
        ready.set()
    try:
        await session.run(max_ticks=max_ticks)
    finally:
        server.close()
        await server.wait_closed()
        if ws_server is not None:
            ws_server.close()
            await ws_server.wait_closed()
