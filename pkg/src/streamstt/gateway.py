"""WebSocket realtime gateway.

Protocol v1, one JSON object per text frame, one session per connection:

  client -> server
    {"type": "session.create", "delay_ms": int, "left_pad_frames": int=0}
    {"type": "audio.append", "audio": base64 of PCM16LE mono 16 kHz}
    {"type": "audio.commit"}
    {"type": "session.finish"}

  server -> client
    {"type": "session.created", "id": str}
    {"type": "token.delta", "frame_index": int, "token_id": int,
     "kind": "subword"|"pad"|"word_boundary", "text": str}
    {"type": "transcript.final", "text": str}
    {"type": "error", "code": str, "message": str}

Appends accumulate in a bounded input buffer (default 10 s of audio) and are
handed to the engine on commit; token deltas stream back over the same
connection.  Protocol violations get an error reply; session-level failures
close the session but not the connection.  If an auth token is configured
(env var), the client must present it as a `token` query parameter or an
`Authorization: Bearer` header.
"""

from __future__ import annotations

import asyncio
import base64
import json
import os
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import SAMPLE_RATE, DelaySpec
from .model import load_checkpoint
from .session import Engine, Session

MAX_BUFFER_SECONDS = 10.0


@dataclass
class GatewayConfig:
    checkpoint: str
    host: str = "127.0.0.1"
    port: int = 8000
    max_sessions: int = 8
    pool_blocks: int = 512
    auth_env: str = "STREAMSTT_AUTH_TOKEN"
    max_buffer_seconds: float = MAX_BUFFER_SECONDS


def _error(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


class _Connection:
    def __init__(self, engine: Engine, max_sessions: int, max_buffer_samples: int):
        self.engine = engine
        self.max_sessions = max_sessions
        self.max_buffer_samples = max_buffer_samples
        self.session: Session | None = None
        self.buffered: list[np.ndarray] = []
        self.buffered_samples = 0

    def handle_create(self, msg: dict) -> list[dict]:
        if self.session is not None:
            return [_error("session_exists", "this connection already has a session")]
        if len(self.engine.sessions) >= self.max_sessions:
            return [_error("capacity", "maximum concurrent sessions reached")]
        try:
            tau = DelaySpec.from_ms(int(msg["delay_ms"]))
            pad = int(msg.get("left_pad_frames", 0))
            self.session = self.engine.create_session(tau, pad)
        except (KeyError, TypeError) as exc:
            return [_error("bad_request", f"missing or invalid field: {exc}")]
        except ValueError as exc:
            return [_error("bad_request", str(exc))]
        except Exception as exc:
            return [_error("session_failed", str(exc))]
        return [{"type": "session.created", "id": self.session.id}]

    def handle_append(self, msg: dict) -> list[dict]:
        if self.session is None:
            return [_error("no_session", "create a session first")]
        try:
            raw = base64.b64decode(msg["audio"])
        except (KeyError, TypeError, ValueError) as exc:
            return [_error("bad_request", f"invalid audio payload: {exc}")]
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
        if self.buffered_samples + samples.size > self.max_buffer_samples:
            self._drop_session()
            return [_error("buffer_overflow", "uncommitted audio exceeded the input buffer")]
        self.buffered.append(samples)
        self.buffered_samples += samples.size
        return []

    def _take_buffer(self) -> np.ndarray:
        if not self.buffered:
            return np.zeros(0, dtype=np.float32)
        out = np.concatenate(self.buffered)
        self.buffered = []
        self.buffered_samples = 0
        return out

    def handle_commit(self) -> list[dict]:
        if self.session is None:
            return [_error("no_session", "create a session first")]
        samples = self._take_buffer()
        try:
            events = self.session.append_audio(samples)
        except Exception as exc:
            self._drop_session()
            return [_error("session_failed", str(exc))]
        return [self._delta(ev) for ev in events]

    def handle_finish(self) -> list[dict]:
        if self.session is None:
            return [_error("no_session", "create a session first")]
        samples = self._take_buffer()
        try:
            events = self.session.append_audio(samples)
            flush_events, transcript = self.session.finish()
        except Exception as exc:
            self._drop_session()
            return [_error("session_failed", str(exc))]
        out = [self._delta(ev) for ev in events + flush_events]
        out.append({"type": "transcript.final", "text": transcript})
        self.session = None
        return out

    @staticmethod
    def _delta(ev) -> dict:
        return {
            "type": "token.delta",
            "frame_index": ev.frame_index,
            "token_id": ev.token_id,
            "kind": ev.kind,
            "text": ev.text,
        }

    def _drop_session(self) -> None:
        if self.session is not None:
            self.session.close()
            self.session = None
        self.buffered = []
        self.buffered_samples = 0

    def handle(self, msg: dict) -> list[dict]:
        mtype = msg.get("type")
        if mtype == "session.create":
            return self.handle_create(msg)
        if mtype == "audio.append":
            return self.handle_append(msg)
        if mtype == "audio.commit":
            return self.handle_commit()
        if mtype == "session.finish":
            return self.handle_finish()
        return [_error("unknown_type", f"unknown message type: {mtype!r}")]


def build_app(
    engine: Engine,
    auth_token: str | None = None,
    max_sessions: int = 8,
    max_buffer_seconds: float = MAX_BUFFER_SECONDS,
) -> FastAPI:
    app = FastAPI()
    max_buffer_samples = int(max_buffer_seconds * SAMPLE_RATE)

    @app.get("/v1/status")
    def status() -> dict:
        return engine.stats()

    @app.websocket("/v1/realtime")
    async def realtime(ws: WebSocket) -> None:
        await ws.accept()
        if auth_token is not None:
            presented = ws.query_params.get("token")
            header = ws.headers.get("authorization", "")
            if header.startswith("Bearer "):
                presented = presented or header[len("Bearer ") :]
            if presented != auth_token:
                await ws.send_text(json.dumps(_error("unauthorized", "invalid or missing token")))
                await ws.close(code=1008)
                return
        conn = _Connection(engine, max_sessions, max_buffer_samples)
        loop = asyncio.get_running_loop()
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict):
                        raise ValueError("message must be a JSON object")
                except ValueError as exc:
                    await ws.send_text(json.dumps(_error("bad_json", str(exc))))
                    continue
                # decode steps are CPU-bound; keep the event loop responsive
                replies = await loop.run_in_executor(None, conn.handle, msg)
                for reply in replies:
                    await ws.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            conn._drop_session()

    return app


def serve(cfg: GatewayConfig) -> None:
    """Load the checkpoint and run the gateway until interrupted."""
    import uvicorn

    model, _ = load_checkpoint(cfg.checkpoint)
    engine = Engine(model, num_blocks=cfg.pool_blocks)
    app = build_app(
        engine,
        auth_token=os.environ.get(cfg.auth_env) or None,
        max_sessions=cfg.max_sessions,
        max_buffer_seconds=cfg.max_buffer_seconds,
    )
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="warning")
