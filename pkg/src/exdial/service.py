"""Live session service: WoZ and auto modes over HTTP/WebSocket.

Each session serializes all writes through one lock, appends accepted
moves to a per-session JSONL log (fsync on accept) and broadcasts wire
events to subscribers in order.  The in-memory state is always the fold
of the log, so crash recovery is a replay.
"""

from __future__ import annotations

import json
import os
import queue
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import PlainTextResponse

from exdial import codec, protocol
from exdial.agents import ExplanandumRecord, _explainer_duty, scripted_explainer_step
from exdial.protocol import Actor, Move, ProtocolError, SessionState


class ServiceError(Exception):
    pass


class UnknownSession(ServiceError):
    pass


class BadCredential(ServiceError):
    pass


class ActorMismatch(ServiceError):
    pass


class MissingKnowledgeBase(ServiceError):
    pass


class CorruptLog(ServiceError):
    def __init__(self, offset: int, detail: str):
        self.offset = offset
        super().__init__(f"log entry {offset}: {detail}")


@dataclass(frozen=True)
class WireEvent:
    """One protocol event on the wire; seq is the accepted-move counter."""

    type: str  # move_accepted | move_rejected | legal_moves | session_closed | error
    seq: int
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.type, "seq": self.seq, "payload": self.payload}


@dataclass
class SessionRecord:
    session_id: str
    mode: str  # "woz" | "auto"
    created_at: float
    participants: dict[Actor, str]
    state: SessionState
    log_path: Path


class Subscription:
    """Ordered event stream for one subscriber."""

    def __init__(self) -> None:
        self._queue: "queue.Queue[Optional[WireEvent]]" = queue.Queue()
        self.closed = False

    def push(self, event: WireEvent) -> None:
        self._queue.put(event)

    def get(self, timeout: Optional[float] = None) -> Optional[WireEvent]:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def drain(self) -> list[WireEvent]:
        events = []
        while True:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                return events
            if item is not None:
                events.append(item)


@dataclass
class _Session:
    record: SessionRecord
    kb: list[ExplanandumRecord] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    subscribers: list[Subscription] = field(default_factory=list)
    last_active: float = field(default_factory=time.time)
    closed: bool = False
    log_file: Any = None


def _legal_payload(state: SessionState) -> dict[str, Any]:
    legal = protocol.legal_moves(state)
    top = state.top
    return {
        "legal": {
            "Q": sorted(k.value for a, k in legal if a is Actor.Q),
            "E": sorted(k.value for a, k in legal if a is Actor.E),
        },
        "terminal_eligible": protocol.is_terminal_eligible(state),
        "frame": None
        if top is None
        else {"type": top.type.value, "state": top.state.value, "topic": top.topic},
    }


def _rejection_payload(move: Move, err: ProtocolError) -> dict[str, Any]:
    reason: dict[str, Any] = {
        "error": type(err).__name__,
        "message": str(err),
        "kind": move.kind.value,
    }
    if isinstance(err, protocol.IllegalMove):
        reason["state"] = err.state_desc
    return {"move": move.to_dict(), "reason": reason}


class SessionService:
    """Hosts many concurrent sessions; one writer per session."""

    def __init__(
        self,
        data_dir: Union[str, Path],
        session_timeout: float = 1800.0,
    ) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.session_timeout = session_timeout
        self._sessions: dict[str, _Session] = {}
        self._registry_lock = threading.Lock()

    # -- lifecycle ---------------------------------------------------------

    def create_session(
        self, mode: str, kb: Optional[list[ExplanandumRecord]] = None
    ) -> SessionRecord:
        if mode not in ("woz", "auto"):
            raise ValueError(f"unknown session mode {mode!r}")
        if mode == "auto" and kb is None:
            raise MissingKnowledgeBase("auto mode needs a knowledge base")
        session_id = secrets.token_hex(8)
        record = SessionRecord(
            session_id=session_id,
            mode=mode,
            created_at=time.time(),
            participants={
                Actor.Q: secrets.token_hex(16),
                Actor.E: secrets.token_hex(16),
            },
            state=protocol.initial_session(),
            log_path=self.data_dir / f"{session_id}.jsonl",
        )
        session = _Session(record=record, kb=list(kb or []))
        session.log_file = open(record.log_path, "a", encoding="utf-8")
        with self._registry_lock:
            self._sessions[session_id] = session
        return record

    def _get(self, session_id: str) -> _Session:
        with self._registry_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        self._expire_if_due(session)
        return session

    def _expire_if_due(self, session: _Session) -> None:
        if session.closed:
            return
        if time.time() - session.last_active > self.session_timeout:
            with session.lock:
                if not session.closed:
                    self._close_locked(session, reason="timeout")

    def _close_locked(self, session: _Session, reason: str) -> None:
        session.closed = True
        if session.log_file is not None:
            session.log_file.close()
            session.log_file = None
        event = WireEvent(
            "session_closed",
            seq=len(session.record.state.history),
            payload={"reason": reason},
        )
        for sub in session.subscribers:
            sub.push(event)

    def close_session(self, session_id: str, reason: str = "closed") -> None:
        session = self._get(session_id)
        with session.lock:
            if not session.closed:
                self._close_locked(session, reason)

    def _credential_actor(self, session: _Session, credential: str) -> Actor:
        for actor, token in session.record.participants.items():
            if secrets.compare_digest(token, credential):
                return actor
        raise BadCredential("credential does not match this session")

    # -- moves -------------------------------------------------------------

    def post_move(self, session_id: str, credential: str, move: Move) -> WireEvent:
        """Apply one move; accepted moves are logged, then broadcast.

        Rejections are returned to the caller only and leave both the
        state and the log untouched.
        """
        session = self._get(session_id)
        with session.lock:
            if session.closed:
                raise UnknownSession(f"session {session_id} is closed")
            actor = self._credential_actor(session, credential)
            # neutral end moves may come from either side
            if move.actor is not None and move.actor is not actor:
                raise ActorMismatch(
                    f"credential is for {actor.value}, move is by {move.actor.value}"
                )
            try:
                next_state = protocol.apply_move(session.record.state, move)
            except ProtocolError as err:
                return WireEvent(
                    "move_rejected",
                    seq=len(session.record.state.history),
                    payload=_rejection_payload(move, err),
                )
            event = self._accept_locked(session, next_state, move)
            if session.record.mode == "auto":
                self._auto_reply_locked(session)
            return event

    def _accept_locked(
        self, session: _Session, next_state: SessionState, move: Move
    ) -> WireEvent:
        seq = len(next_state.history)
        line = json.dumps({"seq": seq, "move": move.to_dict()}, sort_keys=True)
        session.log_file.write(line + "\n")
        session.log_file.flush()
        os.fsync(session.log_file.fileno())
        session.record.state = next_state
        session.last_active = time.time()
        accepted = WireEvent("move_accepted", seq=seq, payload={"move": move.to_dict()})
        legal = WireEvent("legal_moves", seq=seq, payload=_legal_payload(next_state))
        for sub in session.subscribers:
            sub.push(accepted)
            sub.push(legal)
        return accepted

    def _auto_reply_locked(self, session: _Session) -> None:
        # the scripted explainer answers synchronously whenever the
        # protocol expects a reply from E
        while _explainer_duty(session.record.state):
            move = scripted_explainer_step(session.record.state, session.kb)
            next_state = protocol.apply_move(session.record.state, move)
            self._accept_locked(session, next_state, move)

    # -- reads -------------------------------------------------------------

    def session_view(self, session_id: str) -> dict[str, Any]:
        session = self._get(session_id)
        with session.lock:
            state = session.record.state
            view = {
                "session_id": session_id,
                "mode": session.record.mode,
                "seq": len(state.history),
                "history": [m.to_dict() for m in state.history],
                "completed_dialogues": state.completed_dialogues,
                "closed": session.closed,
                "kb": [record.to_dict() for record in session.kb],
            }
            view.update(_legal_payload(state))
            return view

    def subscribe(
        self, session_id: str, credential: str, last_seq: int = 0
    ) -> Subscription:
        """Event stream from just after ``last_seq``: backlog, then live."""
        session = self._get(session_id)
        with session.lock:
            self._credential_actor(session, credential)
            sub = Subscription()
            state = session.record.state
            for i, move in enumerate(state.history[last_seq:], start=last_seq + 1):
                sub.push(WireEvent("move_accepted", seq=i, payload={"move": move.to_dict()}))
            sub.push(
                WireEvent(
                    "legal_moves", seq=len(state.history), payload=_legal_payload(state)
                )
            )
            if session.closed:
                sub.push(
                    WireEvent(
                        "session_closed",
                        seq=len(state.history),
                        payload={"reason": "closed"},
                    )
                )
            else:
                session.subscribers.append(sub)
            return sub

    def unsubscribe(self, session_id: str, sub: Subscription) -> None:
        session = self._get(session_id)
        with session.lock:
            if sub in session.subscribers:
                session.subscribers.remove(sub)

    def export_trace(self, session_id: str, format: str = "tags") -> str:
        """Render the session history as tag lines or move JSONL.

        Tags format: one line per dialogue game, split where the frame
        stack empties; a trailing game that could legally end is included
        even though its end moves were never issued.
        """
        session = self._get(session_id)
        with session.lock:
            history = session.record.state.history
        if format == "jsonl":
            return "\n".join(json.dumps(m.to_dict(), sort_keys=True) for m in history)
        if format != "tags":
            raise ValueError(f"unknown export format {format!r}")
        lines = []
        state = protocol.initial_session()
        span: list[Move] = []
        for move in history:
            state = protocol.apply_move(state, move)
            span.append(move)
            if not state.frames:
                lines.append(codec.format_tags(span))
                span = []
        if span and protocol.is_terminal_eligible(state):
            lines.append(codec.format_tags(span))
        return "\n".join(lines)

    def record_of(self, session_id: str) -> SessionRecord:
        return self._get(session_id).record


def replay_log(path: Union[str, Path]) -> SessionState:
    """Fold a session log back into its final state.

    A partial final line (torn write) counts as truncation and is
    ignored; any other undecodable or protocol-illegal entry raises
    CorruptLog with the 1-based entry offset.
    """
    raw = Path(path).read_bytes()
    chunks = raw.split(b"\n")
    trailing_partial = chunks and chunks[-1] != b""
    entries = [c for c in chunks if c != b""]
    state = protocol.initial_session()
    for index, chunk in enumerate(entries, start=1):
        is_last = index == len(entries)
        try:
            entry = json.loads(chunk.decode("utf-8"))
            move = Move.from_dict(entry["move"])
            expected_seq = entry["seq"]
        except Exception as err:
            if is_last and trailing_partial:
                break  # torn final write: state as of the previous entry
            raise CorruptLog(index, f"undecodable entry: {err}") from err
        if expected_seq != index:
            raise CorruptLog(index, f"sequence gap: entry claims seq {expected_seq}")
        try:
            state = protocol.apply_move(state, move)
        except ProtocolError as err:
            raise CorruptLog(index, f"illegal move in log: {err}") from err
    return state


# -- configuration -----------------------------------------------------------

@dataclass
class ServiceConfig:
    data_dir: str = "./exdial-data"
    port: int = 8040
    session_timeout_seconds: float = 1800.0


def parse_config(text: str) -> ServiceConfig:
    """Parse the ``key = value`` config format (# starts a comment)."""
    config = ServiceConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected key = value")
        key = key.strip()
        value = value.strip()
        if key == "data_dir":
            config.data_dir = value
        elif key == "port":
            config.port = int(value)
        elif key == "session_timeout_seconds":
            config.session_timeout_seconds = float(value)
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return config


def load_config(path: Union[str, Path]) -> ServiceConfig:
    return parse_config(Path(path).read_text())


# -- HTTP / WebSocket layer ---------------------------------------------------

def build_app(service: SessionService) -> FastAPI:
    """FastAPI app speaking the console wire protocol."""
    app = FastAPI(title="exdial session service")

    def _http_error(err: Exception) -> HTTPException:
        if isinstance(err, UnknownSession):
            return HTTPException(status_code=404, detail=str(err))
        if isinstance(err, (BadCredential, ActorMismatch)):
            return HTTPException(status_code=403, detail=str(err))
        return HTTPException(status_code=400, detail=str(err))

    @app.post("/sessions", status_code=201)
    def create_session(body: dict) -> dict:
        mode = body.get("mode", "woz")
        kb = None
        if body.get("kb") is not None:
            kb = [ExplanandumRecord.from_dict(d) for d in body["kb"]]
        try:
            record = service.create_session(mode, kb)
        except (MissingKnowledgeBase, ValueError) as err:
            raise _http_error(err) from err
        return {
            "session_id": record.session_id,
            "mode": record.mode,
            "created_at": record.created_at,
            "credentials": {a.value: t for a, t in record.participants.items()},
        }

    @app.get("/sessions/{session_id}")
    def view(session_id: str) -> dict:
        try:
            return service.session_view(session_id)
        except ServiceError as err:
            raise _http_error(err) from err

    @app.post("/sessions/{session_id}/moves")
    def post_move(session_id: str, body: dict) -> dict:
        try:
            move = Move.from_dict(body["move"])
        except (KeyError, ValueError) as err:
            raise HTTPException(status_code=400, detail=f"bad move: {err}") from err
        try:
            event = service.post_move(session_id, body.get("credential", ""), move)
        except ServiceError as err:
            raise _http_error(err) from err
        return event.to_dict()

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str, format: str = "tags") -> PlainTextResponse:
        try:
            return PlainTextResponse(service.export_trace(session_id, format))
        except ValueError as err:
            raise HTTPException(status_code=400, detail=str(err)) from err
        except ServiceError as err:
            raise _http_error(err) from err

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str) -> None:
        await websocket.accept()
        try:
            hello = await websocket.receive_json()
        except Exception:
            await websocket.close(code=1002)
            return
        try:
            sub = service.subscribe(
                session_id,
                hello.get("credential", ""),
                int(hello.get("last_seq", 0)),
            )
        except ServiceError as err:
            await websocket.send_json(
                {"type": "error", "seq": 0, "payload": {"message": str(err)}}
            )
            await websocket.close(code=1008)
            return
        try:
            idle = 0
            while True:
                event = await run_in_threadpool(sub.get, 0.2)
                if event is None:
                    idle += 1
                    if idle >= 25:  # keepalive; also surfaces dead sockets
                        await websocket.send_json({"type": "ping", "seq": 0, "payload": {}})
                        idle = 0
                    continue
                idle = 0
                await websocket.send_json(event.to_dict())
                if event.type == "session_closed":
                    break
            await websocket.close()
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            try:
                service.unsubscribe(session_id, sub)
            except ServiceError:
                pass

    return app
