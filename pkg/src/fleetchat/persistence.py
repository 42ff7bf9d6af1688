"""Append-only, replayable persistence for the service.

Layout under the state directory:

    sessions/<session_id>.log   one JSON event per line (the transcript)
    tasks/<task_id>.json        fan-out result + cards for one task
    investigations.log          investigation create/close events
    feedback.log                feedback events

Writes are one flushed line per event, so a crash can lose at most the
in-flight turn; everything acknowledged is replayable.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

logger = logging.getLogger(__name__)


def _append_line(path: Path, payload: dict) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")
        fh.flush()


def _read_lines(path: Path) -> Iterator[dict]:
    if not path.exists():
        return
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            yield json.loads(line)


class SessionStore:
    """One append-only event log per session."""

    def __init__(self, root: Path | str):
        self.root = Path(root) / "sessions"
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.log"

    def create(self, session_id: str) -> None:
        path = self._path(session_id)
        if path.exists():
            raise FileExistsError(f"session {session_id} already exists")
        path.touch()

    def exists(self, session_id: str) -> bool:
        return self._path(session_id).exists()

    def append(self, session_id: str, event: dict) -> None:
        _append_line(self._path(session_id), event)

    def events(self, session_id: str) -> list[dict]:
        return list(_read_lines(self._path(session_id)))

    def session_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.log"))


class TaskStore:
    def __init__(self, root: Path | str):
        self.root = Path(root) / "tasks"
        self.root.mkdir(parents=True, exist_ok=True)

    def save(self, task_id: str, payload: dict) -> None:
        tmp = self.root / f"{task_id}.json.tmp"
        tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        tmp.replace(self.root / f"{task_id}.json")

    def load(self, task_id: str) -> Optional[dict]:
        path = self.root / f"{task_id}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def task_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))


class InvestigationLog:
    """Flat append-only store; state is rebuilt by replaying the log."""

    def __init__(self, root: Path | str):
        self.path = Path(root) / "investigations.log"
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def record_created(self, investigation: dict) -> None:
        _append_line(self.path, {"event": "created", "investigation": investigation})

    def record_closed(self, investigation_id: str) -> None:
        _append_line(self.path, {"event": "closed", "investigation_id": investigation_id})

    def replay(self) -> dict[str, dict]:
        state: dict[str, dict] = {}
        for event in _read_lines(self.path):
            if event["event"] == "created":
                inv = dict(event["investigation"])
                state[inv["investigation_id"]] = inv
            elif event["event"] == "closed":
                inv = state.get(event["investigation_id"])
                if inv is not None:
                    inv["status"] = "closed"
        return state


@dataclass(frozen=True)
class FeedbackEvent:
    session_id: str
    turn_index: int
    verdict: Union[str, int]  # "up" | "down" | 1..10
    timestamp: float

    def __post_init__(self):
        ok = self.verdict in ("up", "down") or (
            isinstance(self.verdict, int) and 1 <= self.verdict <= 10
        )
        if not ok:
            raise ValueError(f"verdict must be up, down, or 1-10, got {self.verdict!r}")
        if self.turn_index < 0:
            raise ValueError("turn_index must be non-negative")

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "verdict": self.verdict,
            "timestamp": self.timestamp,
        }


class FeedbackLog:
    """Append-only capture of user feedback; no model retraining happens here."""

    def __init__(self, root: Path | str):
        self.path = Path(root) / "feedback.log"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, event: FeedbackEvent) -> None:
        with self._lock:
            _append_line(self.path, event.to_dict())

    def replay(self) -> list[FeedbackEvent]:
        return [
            FeedbackEvent(
                session_id=item["session_id"],
                turn_index=item["turn_index"],
                verdict=item["verdict"],
                timestamp=item["timestamp"],
            )
            for item in _read_lines(self.path)
        ]


def now() -> float:
    return time.time()
