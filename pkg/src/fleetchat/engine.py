"""Assembles the full chat engine from configuration.

One ChatEngine instance owns the immutable NLU tables, the trained intent
model, the fleet shards, and the dispatcher that runs fan-out + enrichment +
card building. The interactive REPL and the HTTP service both drive this
object, which is what makes their responses comparable turn for turn.

Task and investigation ids are plain per-engine counters, deterministic for
a given turn sequence. Replay mode swaps the fleet dispatcher for one that
re-emits recorded outcomes, so persisted transcripts rebuild session state
without re-running fleet queries.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .config import AppConfig
from .dialog import (
    BotResponse,
    ContextBinding,
    DialogEngine,
    DialogSession,
    DispatchOutcome,
    SchemaRegistry,
    TurnResult,
)
from .entities import EntityTables, EntityType, SynonymTable
from .fleet import (
    Blocklist,
    EndpointShard,
    FanoutResult,
    QueryTask,
    ResultCard,
    build_cards,
    enrich,
    fan_out,
)
from .fleetgen import FleetManifest, generate_fleet, load_fleet
from .intents import IntentLabel, IntentModel, load_corpus, train

logger = logging.getLogger(__name__)


@dataclass
class TaskRecord:
    task: QueryTask
    result: Optional[FanoutResult] = None
    cards: tuple[ResultCard, ...] = ()

    @property
    def done(self) -> bool:
        return self.result is not None


@dataclass
class Investigation:
    investigation_id: str
    title: str
    created_at: float
    task_ids: list[str] = field(default_factory=list)
    card_refs: list[str] = field(default_factory=list)
    status: str = "open"

    def close(self) -> None:
        if self.status != "open":
            raise ValueError(f"investigation {self.investigation_id} already closed")
        self.status = "closed"

    def to_dict(self) -> dict:
        return {
            "investigation_id": self.investigation_id,
            "title": self.title,
            "created_at": self.created_at,
            "task_ids": list(self.task_ids),
            "card_refs": list(self.card_refs),
            "status": self.status,
        }


class ChatEngine:
    """Everything needed to run dialog turns against the simulated fleet."""

    def __init__(
        self,
        *,
        tables: EntityTables,
        model: IntentModel,
        registry: SchemaRegistry,
        shards: Sequence[EndpointShard],
        manifest: Optional[FleetManifest] = None,
        blocklist: Optional[Blocklist] = None,
        endpoint_timeout_s: float = 2.0,
        parallelism: int = 32,
        turn_timeout_s: float = 10.0,
        clock: Callable[[], float] = time.time,
    ):
        self.tables = tables
        self.model = model
        self.registry = registry
        self.shards = list(shards)
        self.manifest = manifest
        self.blocklist = blocklist or Blocklist.empty()
        self.endpoint_timeout_s = endpoint_timeout_s
        self.parallelism = parallelism
        self.turn_timeout_s = turn_timeout_s
        self.clock = clock
        self.hostnames = {s.endpoint_id: s.hostname for s in self.shards}

        self.tasks: dict[str, TaskRecord] = {}
        self.investigations: dict[str, Investigation] = {}
        self.whitelist: set[str] = set()
        self.fleet_calls = 0

        self._task_seq = itertools.count(1)
        self._inv_seq = itertools.count(1)
        self._lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=8)
        self._replay_dispatches: Optional[list[dict]] = None
        self._replay_investigations: Optional[list[dict]] = None

        self.dialog = DialogEngine(
            tables,
            model,
            registry,
            self._dispatch,
            on_whitelist=self._whitelist_hash,
            on_create_investigation=self._create_investigation_from_chat,
        )

    # -- construction -----------------------------------------------------

    @classmethod
    def from_config(cls, cfg: AppConfig, clock: Callable[[], float] = time.time) -> "ChatEngine":
        if cfg.fleet_dir:
            shards, manifest = load_fleet(cfg.fleet_dir)
        else:
            shards, manifest = generate_fleet(
                cfg.fleet_seed, cfg.fleet_endpoints, cfg.fleet_records
            )
        synonyms = SynonymTable.from_file(cfg.synonyms_path)
        users = set(manifest.users)
        for shard in shards:
            for record in shard.records:
                user = record.attributes.get("user")
                if user:
                    users.add(str(user))
        tables = EntityTables.load(
            cfg.tlds_path,
            cfg.extensions_path,
            endpoints=manifest.hostnames,
            users=users,
            synonyms=synonyms,
        )
        model = train(load_corpus(cfg.corpus_path), alpha=cfg.alpha, tau=cfg.tau)
        if cfg.blocklist_path:
            blocklist = Blocklist.from_file(cfg.blocklist_path)
        elif cfg.fleet_dir and (Path(cfg.fleet_dir) / "blocklist.txt").exists():
            blocklist = Blocklist.from_file(Path(cfg.fleet_dir) / "blocklist.txt")
        else:
            blocklist = Blocklist(
                hashes=frozenset(h for h in manifest.blocklist if "." not in h),
                domains=frozenset(d for d in manifest.blocklist if "." in d),
            )
        return cls(
            tables=tables,
            model=model,
            registry=SchemaRegistry.from_file(cfg.schemas_path),
            shards=shards,
            manifest=manifest,
            blocklist=blocklist,
            endpoint_timeout_s=cfg.endpoint_timeout_s,
            parallelism=cfg.parallelism,
            turn_timeout_s=cfg.turn_timeout_s,
            clock=clock,
        )

    # -- session surface ----------------------------------------------------

    def new_session(self, session_id: str) -> DialogSession:
        return self.dialog.new_session(session_id)

    def handle_turn(self, session: DialogSession, text: str) -> TurnResult:
        return self.dialog.handle_utterance(session, text)

    def set_context(self, session: DialogSession, bindings) -> None:
        self.dialog.set_view_context(session, bindings)

    # -- dispatch -----------------------------------------------------------

    def _dispatch(
        self, intent: IntentLabel, slots: dict, session: DialogSession
    ) -> DispatchOutcome:
        if self._replay_dispatches is not None:
            if not self._replay_dispatches:
                raise RuntimeError("replay log exhausted: more dispatches than recorded")
            recorded = self._replay_dispatches.pop(0)
            return DispatchOutcome(
                task_id=recorded["task_id"],
                match_count=recorded["match_count"],
                pending=recorded.get("pending", False),
            )

        with self._lock:
            task_id = f"task-{next(self._task_seq)}"
        target = None
        if EntityType.ENDPOINT_NAME in slots:
            target = (slots[EntityType.ENDPOINT_NAME],)
        task = QueryTask(
            task_id=task_id,
            intent=intent,
            slots=dict(slots),
            target=target,
            issued_at=self.clock(),
        )
        record = TaskRecord(task=task)
        self.tasks[task_id] = record
        self.fleet_calls += 1

        def run() -> TaskRecord:
            result = fan_out(
                task,
                self.shards,
                parallelism=self.parallelism,
                timeout_s=self.endpoint_timeout_s,
            )
            record.cards = tuple(
                build_cards(enrich(result.records, self.blocklist), self.hostnames)
            )
            record.result = result
            self._on_task_complete(record)
            return record

        future = self._executor.submit(run)
        try:
            # Inline when the fleet answers within the turn timeout; otherwise
            # hand back a task id the caller can poll.
            future.result(timeout=self.turn_timeout_s)
        except FutureTimeout:
            logger.info("task %s still running; returning poll handle", task_id)
            return DispatchOutcome(task_id=task_id, match_count=0, pending=True)
        return DispatchOutcome(
            task_id=task_id, match_count=len(record.result.records), cards=record.cards
        )

    def _on_task_complete(self, record: TaskRecord) -> None:
        """Hook for the service layer to persist task results."""

    @contextmanager
    def replay_mode(self, dispatches: list[dict], investigations: list[dict] = ()):
        """Re-emit recorded dispatch/investigation outcomes while replaying a
        persisted transcript, instead of re-running fleet queries or creating
        duplicate investigations."""
        self._replay_dispatches = list(dispatches)
        self._replay_investigations = list(investigations)
        try:
            yield
        finally:
            self._replay_dispatches = None
            self._replay_investigations = None

    def resume_counters(self, task_ids, investigation_ids) -> None:
        """Continue id sequences past persisted ids after a restart."""

        def max_suffix(ids, prefix):
            best = 0
            for value in ids:
                if value.startswith(prefix) and value[len(prefix):].isdigit():
                    best = max(best, int(value[len(prefix):]))
            return best

        self._task_seq = itertools.count(max_suffix(task_ids, "task-") + 1)
        self._inv_seq = itertools.count(max_suffix(investigation_ids, "inv-") + 1)

    # -- local intents --------------------------------------------------------

    def _whitelist_hash(self, file_hash: str, session: DialogSession) -> str:
        self.whitelist.add(file_hash.lower())
        return f"Whitelisted hash {file_hash.lower()}. Future alerts on it will be suppressed."

    def _create_investigation_from_chat(self, session: DialogSession) -> str:
        task_ids = [session.dispatched_task_id] if session.dispatched_task_id else []
        if self._replay_investigations is not None:
            if not self._replay_investigations:
                raise RuntimeError("replay log exhausted: unrecorded investigation")
            recorded = self._replay_investigations.pop(0)
            inv_id = recorded["inv_id"]
        else:
            inv = self.create_investigation("Chat investigation", task_ids)
            inv_id = inv.investigation_id
        session.transcript.append(
            {
                "who": "system",
                "event": "investigation",
                "inv_id": inv_id,
                "task_ids": task_ids,
            }
        )
        suffix = f" linked to {task_ids[0]}" if task_ids else ""
        return f"Created investigation {inv_id}{suffix}."

    def task_exists(self, task_id: str) -> bool:
        """Overridden by the service layer to consult persisted tasks too."""
        return task_id in self.tasks

    def create_investigation(self, title: str, task_ids: list[str]) -> Investigation:
        for task_id in task_ids:
            if not self.task_exists(task_id):
                raise KeyError(f"unknown task {task_id}")
        with self._lock:
            inv_id = f"inv-{next(self._inv_seq)}"
        card_refs = [
            card.record_id
            for task_id in task_ids
            if task_id in self.tasks
            for card in self.tasks[task_id].cards
        ]
        inv = Investigation(
            investigation_id=inv_id,
            title=title,
            created_at=self.clock(),
            task_ids=list(task_ids),
            card_refs=card_refs,
        )
        self.investigations[inv_id] = inv
        return inv


def default_engine(clock: Callable[[], float] = time.time) -> ChatEngine:
    """Engine over the bundled corpus and the synthesized default fleet."""
    return ChatEngine.from_config(AppConfig(), clock=clock)
