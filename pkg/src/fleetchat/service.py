"""HTTP service over the chat engine.

Endpoints:

    POST /sessions                      -> {"session_id"}
    GET  /sessions/{id}                 -> session snapshot + transcript
    POST /sessions/{id}/messages        -> {"reply", "cards", "task_id", ...}
    PUT  /sessions/{id}/context         -> replace the pinned view context
    GET  /tasks/{id}/results            -> fan-out result + cards
    POST /investigations                -> create investigation
    GET  /investigations/{id}           -> fetch investigation
    POST /feedback                      -> append a feedback event

Turns on one session are strictly serialized: a second concurrent message
is rejected with 409 busy rather than queued. Every acknowledged turn is
persisted to the session's event log before the response is returned, and
sessions are rebuilt from those logs after a restart.
"""

from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional, Union

from fastapi import Depends, FastAPI, HTTPException, Request
from pydantic import BaseModel, Field

from .dialog import ContextBinding, DialogSession, SessionState, TurnResult
from .engine import ChatEngine, Investigation, TaskRecord
from .entities import EntityType
from .persistence import (
    FeedbackEvent,
    FeedbackLog,
    InvestigationLog,
    SessionStore,
    TaskStore,
    now,
)

logger = logging.getLogger(__name__)


class BusyError(Exception):
    pass


class NotFoundError(Exception):
    pass


class SessionManager:
    """Owns per-session locks, the engine, and all persistence."""

    def __init__(self, engine: ChatEngine, state_dir: str):
        self.engine = engine
        self.sessions = SessionStore(state_dir)
        self.task_store = TaskStore(state_dir)
        self.investigation_log = InvestigationLog(state_dir)
        self.feedback_log = FeedbackLog(state_dir)

        self._live: dict[str, DialogSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self._background = ThreadPoolExecutor(max_workers=4)

        # Resume id sequences and stores across restarts.
        persisted_invs = self.investigation_log.replay()
        for inv_id, payload in persisted_invs.items():
            self.engine.investigations[inv_id] = Investigation(
                investigation_id=payload["investigation_id"],
                title=payload["title"],
                created_at=payload["created_at"],
                task_ids=list(payload["task_ids"]),
                card_refs=list(payload.get("card_refs", [])),
                status=payload["status"],
            )
        self.engine.resume_counters(self.task_store.task_ids(), persisted_invs.keys())
        self.engine.task_exists = self._task_exists
        self.engine._on_task_complete = self._persist_task

    # -- internals ---------------------------------------------------------

    def _task_exists(self, task_id: str) -> bool:
        return task_id in self.engine.tasks or self.task_store.load(task_id) is not None

    def _persist_task(self, record: TaskRecord) -> None:
        assert record.result is not None
        self.task_store.save(
            record.task.task_id,
            {
                "task_id": record.task.task_id,
                "intent": record.task.intent.value,
                "result": record.result.to_dict(),
                "cards": [card.to_dict() for card in record.cards],
            },
        )

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(session_id, threading.Lock())

    def _get_session(self, session_id: str) -> DialogSession:
        with self._registry_lock:
            session = self._live.get(session_id)
        if session is not None:
            return session
        if not self.sessions.exists(session_id):
            raise NotFoundError(f"unknown session {session_id}")
        session = self._replay(session_id)
        with self._registry_lock:
            self._live.setdefault(session_id, session)
            return self._live[session_id]

    def _replay(self, session_id: str) -> DialogSession:
        """Rebuild a session by replaying its event log through the engine."""
        events = self.sessions.events(session_id)
        dispatches = [e for e in events if e.get("event") == "dispatch"]
        investigations = [e for e in events if e.get("event") == "investigation"]
        session = self.engine.new_session(session_id)
        with self.engine.replay_mode(dispatches, investigations):
            for event in events:
                if event.get("who") == "user":
                    self.engine.handle_turn(session, event["text"])
                elif event.get("event") == "context":
                    bindings = [
                        ContextBinding(
                            EntityType(b["entity_type"]), b["value"], b.get("source", "")
                        )
                        for b in event["bindings"]
                    ]
                    self.engine.set_context(session, bindings)
        return session

    def _persist_new_events(self, session: DialogSession, start: int) -> None:
        for event in session.transcript[start:]:
            self.sessions.append(session.session_id, event)

    # -- public operations ----------------------------------------------------

    def create_session(self) -> str:
        session_id = uuid.uuid4().hex
        self.sessions.create(session_id)
        session = self.engine.new_session(session_id)
        with self._registry_lock:
            self._live[session_id] = session
        return session_id

    def post_message(self, session_id: str, text: str) -> tuple[TurnResult, int]:
        """Run one dialog turn. Returns the result and the transcript index
        of the bot turn (used by feedback)."""
        session = self._get_session(session_id)
        lock = self._lock_for(session_id)
        if not lock.acquire(blocking=False):
            raise BusyError(session_id)
        try:
            start = len(session.transcript)
            result = self.engine.handle_turn(session, text)
            self._persist_new_events(session, start)
            bot_turn_index = len(session.transcript) - 1
            return result, bot_turn_index
        finally:
            lock.release()

    def update_context(self, session_id: str, bindings: list[ContextBinding]) -> DialogSession:
        session = self._get_session(session_id)
        lock = self._lock_for(session_id)
        if not lock.acquire(blocking=False):
            raise BusyError(session_id)
        try:
            start = len(session.transcript)
            self.engine.set_context(session, bindings)
            self._persist_new_events(session, start)
            return session
        finally:
            lock.release()

    def get_session(self, session_id: str) -> DialogSession:
        return self._get_session(session_id)

    def get_task(self, task_id: str) -> dict:
        record = self.engine.tasks.get(task_id)
        if record is not None and record.done:
            return {
                "task_id": task_id,
                "state": "done",
                "result": record.result.to_dict(),
                "cards": [card.to_dict() for card in record.cards],
            }
        if record is not None:
            return {"task_id": task_id, "state": "pending", "result": None, "cards": []}
        payload = self.task_store.load(task_id)
        if payload is None:
            raise NotFoundError(f"unknown task {task_id}")
        return {
            "task_id": task_id,
            "state": "done",
            "result": payload["result"],
            "cards": payload["cards"],
        }

    def create_investigation(self, title: str, task_ids: list[str]) -> Investigation:
        try:
            investigation = self.engine.create_investigation(title, task_ids)
        except KeyError as exc:
            raise NotFoundError(str(exc)) from exc
        self.investigation_log.record_created(investigation.to_dict())
        return investigation

    def get_investigation(self, investigation_id: str) -> Investigation:
        investigation = self.engine.investigations.get(investigation_id)
        if investigation is None:
            raise NotFoundError(f"unknown investigation {investigation_id}")
        return investigation

    def post_feedback(self, event: FeedbackEvent) -> None:
        session = self._get_session(event.session_id)
        if event.turn_index >= len(session.transcript):
            raise NotFoundError(f"turn {event.turn_index} does not exist")
        turn = session.transcript[event.turn_index]
        if turn.get("who") != "bot":
            raise ValueError("feedback applies to bot turns only")
        self.feedback_log.append(event)


# -- wire schemas --------------------------------------------------------------


class MessageIn(BaseModel):
    text: str = Field(min_length=1, max_length=4000)


class BindingIn(BaseModel):
    entity_type: Literal[
        "FILE_HASH",
        "IP_ADDRESS",
        "DOMAIN_NAME",
        "FILE_NAME",
        "PROCESS_NAME",
        "PID",
        "ENDPOINT_NAME",
        "USER_NAME",
        "REGISTRY_KEY",
        "TIME_RANGE",
    ]
    value: str = Field(min_length=1)
    source: str = ""


class ContextIn(BaseModel):
    bindings: list[BindingIn]


class InvestigationIn(BaseModel):
    title: str = Field(min_length=1)
    task_ids: list[str] = Field(default_factory=list)


class FeedbackIn(BaseModel):
    session_id: str
    turn_index: int
    verdict: Union[Literal["up", "down"], int]


def _session_payload(session: DialogSession) -> dict:
    return {
        "session_id": session.session_id,
        "state": session.state.value,
        "snapshot": session.snapshot(),
        "transcript": list(session.transcript),
        "view_context": [b.to_dict() for b in session.view_context],
    }


def create_app(manager: SessionManager, api_token: str = "") -> FastAPI:
    app = FastAPI(title="fleetchat", version="0.1.0")

    async def check_token(request: Request):
        if api_token:
            header = request.headers.get("authorization", "")
            if header != f"Bearer {api_token}":
                raise HTTPException(status_code=401, detail="invalid token")

    auth = Depends(check_token)

    @app.exception_handler(NotFoundError)
    async def not_found(request, exc):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(BusyError)
    async def busy(request, exc):
        from fastapi.responses import JSONResponse

        return JSONResponse(status_code=409, content={"detail": "busy"})

    @app.post("/sessions", status_code=201, dependencies=[auth])
    def create_session():
        return {"session_id": manager.create_session()}

    @app.get("/sessions/{session_id}", dependencies=[auth])
    def get_session(session_id: str):
        return _session_payload(manager.get_session(session_id))

    @app.post("/sessions/{session_id}/messages", dependencies=[auth])
    def post_message(session_id: str, message: MessageIn):
        result, turn_index = manager.post_message(session_id, message.text)
        return {
            "reply": result.response.to_dict(),
            "cards": [card.to_dict() for card in result.cards],
            "task_id": result.task_id,
            "turn_index": turn_index,
        }

    @app.put("/sessions/{session_id}/context", dependencies=[auth])
    def update_context(session_id: str, payload: ContextIn):
        bindings = [
            ContextBinding(EntityType(b.entity_type), b.value, b.source)
            for b in payload.bindings
        ]
        session = manager.update_context(session_id, bindings)
        return {"ok": True, "view_context": [b.to_dict() for b in session.view_context]}

    @app.get("/tasks/{task_id}/results", dependencies=[auth])
    def get_results(task_id: str):
        return manager.get_task(task_id)

    @app.post("/investigations", status_code=201, dependencies=[auth])
    def create_investigation(payload: InvestigationIn):
        investigation = manager.create_investigation(payload.title, payload.task_ids)
        return investigation.to_dict()

    @app.get("/investigations/{investigation_id}", dependencies=[auth])
    def get_investigation(investigation_id: str):
        return manager.get_investigation(investigation_id).to_dict()

    @app.post("/feedback", dependencies=[auth])
    def post_feedback(payload: FeedbackIn):
        try:
            event = FeedbackEvent(
                session_id=payload.session_id,
                turn_index=payload.turn_index,
                verdict=payload.verdict,
                timestamp=now(),
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        try:
            manager.post_feedback(event)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"ok": True}

    return app
