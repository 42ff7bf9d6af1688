"""Per-session dialog state machine.

Each turn runs the NLU pipeline (extract -> hint -> redact -> classify) and
routes on session state: a fresh intent starts slot filling, follow-up turns
merge newly extracted entities, ambiguous entities pause for disambiguation,
deictic references ("this hash") resolve against the pinned view context,
and dangerous tasks never dispatch without an explicit confirmation turn.

Dispatch is delegated to a callable so the fleet layer, the service layer,
and test doubles can all sit behind the same state machine.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .entities import (
    TYPE_NOUNS,
    EntityTables,
    Entity,
    EntityType,
    SynonymTable,
    extract_entities,
    redact,
    tokenize,
)
from .intents import IntentLabel, IntentModel

logger = logging.getLogger(__name__)

AFFIRMATIONS = frozenset({"yes", "y", "confirm", "do it"})
NEGATIONS = frozenset({"no", "n", "cancel", "abort"})

#: Intents resolved in the dialog layer; they never reach the fleet.
LOCAL_INTENTS = frozenset(
    {
        IntentLabel.EXPLAIN_FEATURE,
        IntentLabel.WHITELIST_ALERT,
        IntentLabel.CREATE_INVESTIGATION,
    }
)

_DEICTIC_MARKERS = frozenset({"this", "that", "it"})
_DEICTIC_NOUNS = {
    "hash": EntityType.FILE_HASH,
    "file": EntityType.FILE_NAME,
    "ip": EntityType.IP_ADDRESS,
    "address": EntityType.IP_ADDRESS,
    "domain": EntityType.DOMAIN_NAME,
    "endpoint": EntityType.ENDPOINT_NAME,
    "pid": EntityType.PID,
    "process": EntityType.PROCESS_NAME,
    "user": EntityType.USER_NAME,
    "key": EntityType.REGISTRY_KEY,
}

# A lone token in a clarification reply may fill these types directly; their
# values are free-form names no pattern can validate.
_LIBERAL_SLOTS = (
    EntityType.PROCESS_NAME,
    EntityType.ENDPOINT_NAME,
    EntityType.USER_NAME,
)


class SessionState(str, Enum):
    IDLE = "idle"
    AWAITING_SLOTS = "awaiting_slots"
    AWAITING_DISAMBIGUATION = "awaiting_disambiguation"
    AWAITING_CONFIRMATION = "awaiting_confirmation"
    DISPATCHED = "dispatched"


class ResponseKind(str, Enum):
    CLARIFICATION = "clarification"
    DISAMBIGUATION = "disambiguation"
    CONFIRMATION = "confirmation"
    DISPATCH_ACK = "dispatch_ack"
    ANSWER = "answer"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class BotResponse:
    kind: ResponseKind
    text: str
    choices: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind is ResponseKind.DISAMBIGUATION and len(self.choices) < 2:
            raise ValueError("disambiguation needs at least two choices")
        if self.kind is ResponseKind.CONFIRMATION and self.choices != ("yes", "no"):
            raise ValueError("confirmation choices must be exactly (yes, no)")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "text": self.text, "choices": list(self.choices)}


@dataclass(frozen=True)
class IntentSchema:
    label: IntentLabel
    required: tuple[frozenset[EntityType], ...]
    optional: frozenset[EntityType]
    dangerous: bool
    description: str
    keywords: frozenset[str] = frozenset()

    def __post_init__(self):
        flat_required = {t for group in self.required for t in group}
        if flat_required & self.optional:
            raise ValueError(f"{self.label.value}: required and optional slots overlap")

    @property
    def all_slot_types(self) -> frozenset[EntityType]:
        return frozenset(t for group in self.required for t in group) | self.optional


class SchemaRegistry:
    """Intent schemas loaded from a declarative JSON file."""

    def __init__(self, schemas: dict[IntentLabel, IntentSchema]):
        self._schemas = dict(schemas)

    @classmethod
    def from_file(cls, path: Path | str) -> "SchemaRegistry":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != 1:
            raise ValueError(f"unsupported schema registry version {payload.get('version')!r}")
        schemas = {}
        for name, spec in payload["intents"].items():
            label = IntentLabel(name)
            schemas[label] = IntentSchema(
                label=label,
                required=tuple(
                    frozenset(EntityType(t) for t in group) for group in spec["required"]
                ),
                optional=frozenset(EntityType(t) for t in spec.get("optional", [])),
                dangerous=bool(spec.get("dangerous", False)),
                description=spec.get("description", ""),
                keywords=frozenset(spec.get("keywords", [])),
            )
        return cls(schemas)

    def get(self, label: IntentLabel) -> IntentSchema:
        return self._schemas[label]

    def labels(self) -> list[IntentLabel]:
        return sorted(self._schemas, key=lambda l: l.value)

    def __contains__(self, label: IntentLabel) -> bool:
        return label in self._schemas


@dataclass(frozen=True)
class SlotValue:
    value: str
    provenance: str  # utterance | context | clarification


def missing_slots(
    schema: IntentSchema, fills: dict[EntityType, SlotValue]
) -> set[frozenset[EntityType]]:
    """Required groups not yet satisfied. An any-of group counts as filled
    when any one of its member types is present."""
    return {group for group in schema.required if not (group & fills.keys())}


def generate_clarification(
    missing: Iterable[frozenset[EntityType]],
    order: Sequence[frozenset[EntityType]] = (),
) -> BotResponse:
    """Deterministic templated question naming every missing slot."""
    groups = list(missing)
    if not groups:
        raise ValueError("no missing slots to ask about")
    if order:
        rank = {g: i for i, g in enumerate(order)}
        groups.sort(key=lambda g: rank.get(g, len(rank)))
    else:
        groups.sort(key=lambda g: sorted(t.value for t in g))
    nouns = []
    for group in groups:
        members = sorted(group, key=lambda t: t.value)
        nouns.append(" or ".join(TYPE_NOUNS[t] for t in members))
    return BotResponse(
        ResponseKind.CLARIFICATION, f"Which {' and '.join(nouns)} should I target?"
    )


# -- deictic resolution ------------------------------------------------------


@dataclass(frozen=True)
class Resolved:
    value: str


@dataclass(frozen=True)
class NoContext:
    pass


@dataclass(frozen=True)
class Ambiguous:
    candidates: tuple[str, ...]


@dataclass(frozen=True)
class ContextBinding:
    entity_type: EntityType
    value: str
    source: str = ""

    def to_dict(self) -> dict:
        return {
            "entity_type": self.entity_type.value,
            "value": self.value,
            "source": self.source,
        }


def normalize_binding(binding: ContextBinding) -> ContextBinding:
    """Be liberal in what we accept: canonicalize casing rather than reject."""
    value = binding.value
    if binding.entity_type in (EntityType.FILE_HASH, EntityType.DOMAIN_NAME):
        value = value.lower()
    return ContextBinding(binding.entity_type, value, binding.source)


@dataclass(frozen=True)
class DisambiguationOption:
    entity_type: EntityType
    value: str
    provenance: str

    @property
    def display(self) -> str:
        return f"{TYPE_NOUNS[self.entity_type]}: {self.value}"


@dataclass
class PendingTask:
    schema: IntentSchema
    fills: dict[EntityType, SlotValue] = field(default_factory=dict)
    # Ambiguous entities queued for disambiguation, processed one at a time.
    ambiguities: list[tuple[str, tuple[DisambiguationOption, ...]]] = field(
        default_factory=list
    )


@dataclass
class DialogSession:
    session_id: str
    state: SessionState = SessionState.IDLE
    pending: Optional[PendingTask] = None
    active_options: tuple[DisambiguationOption, ...] = ()
    view_context: list[ContextBinding] = field(default_factory=list)
    transcript: list[dict] = field(default_factory=list)
    dispatched_task_id: Optional[str] = None

    def snapshot(self) -> dict:
        """State summary used by crash-consistency checks and the API."""
        return {
            "session_id": self.session_id,
            "state": self.state.value,
            "intent": self.pending.schema.label.value if self.pending else None,
            "fills": {
                t.value: [sv.value, sv.provenance]
                for t, sv in sorted(
                    (self.pending.fills if self.pending else {}).items(),
                    key=lambda kv: kv[0].value,
                )
            },
            "options": [o.display for o in self.active_options],
            "view_context": [b.to_dict() for b in self.view_context],
            "dispatched_task_id": self.dispatched_task_id,
            "transcript_len": len(self.transcript),
        }


@dataclass(frozen=True)
class DispatchOutcome:
    task_id: str
    match_count: int
    cards: tuple = ()
    pending: bool = False


# Dispatcher signature: (intent label, {type: value}, target session) -> outcome.
Dispatcher = Callable[[IntentLabel, dict, DialogSession], DispatchOutcome]


@dataclass(frozen=True)
class TurnResult:
    response: BotResponse
    cards: tuple = ()
    task_id: Optional[str] = None


class DialogEngine:
    """Stateless orchestration over per-session DialogSession objects.

    The caller guarantees at most one in-flight turn per session; distinct
    sessions may run turns concurrently.
    """

    def __init__(
        self,
        tables: EntityTables,
        model: IntentModel,
        registry: SchemaRegistry,
        dispatcher: Dispatcher,
        *,
        on_whitelist: Callable[[str, DialogSession], str] | None = None,
        on_create_investigation: Callable[[DialogSession], str] | None = None,
    ):
        self.tables = tables
        self.model = model
        self.registry = registry
        self.dispatcher = dispatcher
        self.on_whitelist = on_whitelist
        self.on_create_investigation = on_create_investigation

    # -- public ops -----------------------------------------------------

    def new_session(self, session_id: str) -> DialogSession:
        return DialogSession(session_id=session_id)

    def set_view_context(
        self, session: DialogSession, bindings: Iterable[ContextBinding]
    ) -> None:
        """Replace the view context wholesale (view navigation semantics)."""
        session.view_context = [normalize_binding(b) for b in bindings]
        session.transcript.append(
            {
                "who": "system",
                "event": "context",
                "bindings": [b.to_dict() for b in session.view_context],
            }
        )

    def resolve_deictic(self, session: DialogSession, requested: EntityType):
        matches = [b for b in session.view_context if b.entity_type is requested]
        if not matches:
            return NoContext()
        if len(matches) == 1:
            return Resolved(matches[0].value)
        return Ambiguous(tuple(b.value for b in matches))

    def handle_utterance(self, session: DialogSession, text: str) -> TurnResult:
        session.transcript.append({"who": "user", "text": text})
        if session.state is SessionState.AWAITING_CONFIRMATION:
            result = self._confirmation_turn(session, text)
        elif session.state is SessionState.AWAITING_DISAMBIGUATION:
            result = self._disambiguation_turn(session, text)
        elif session.state is SessionState.AWAITING_SLOTS:
            result = self._slot_fill_turn(session, text)
        else:
            result = self._fresh_turn(session, text)
        self._record_bot_turn(session, result.response)
        return result

    # -- turn handlers ---------------------------------------------------

    def _fresh_turn(self, session: DialogSession, text: str) -> TurnResult:
        entities = extract_entities(text, self.tables)
        redacted = redact(text, entities)
        prediction = self.model.classify(redacted)
        if prediction.chosen is IntentLabel.NO_INTENT or prediction.chosen not in self.registry:
            return TurnResult(self._fallback_response())
        schema = self.registry.get(prediction.chosen)

        if schema.label is IntentLabel.EXPLAIN_FEATURE:
            session.state = SessionState.IDLE
            session.pending = None
            return TurnResult(self._explain_answer(text))

        session.pending = PendingTask(schema=schema)
        session.state = SessionState.AWAITING_SLOTS
        # Re-extract now that the schema is known: context-sensitive patterns
        # (bare-integer pids) only fire for slot types the intent can take,
        # and they strictly extend the plain extraction used for redaction.
        entities = extract_entities(text, self.tables, expecting=schema.all_slot_types)
        self._merge_entities(session, entities, provenance="utterance")
        self._merge_deictics(session, text)
        return self._advance(session)

    def _slot_fill_turn(self, session: DialogSession, text: str) -> TurnResult:
        pending = session.pending
        assert pending is not None
        if text.strip().lower() in NEGATIONS:
            return TurnResult(self._abort(session))
        expecting = {t for group in missing_slots(pending.schema, pending.fills) for t in group}
        entities = extract_entities(text, self.tables, expecting=expecting)
        filled = self._merge_entities(session, entities, provenance="clarification")
        self._merge_deictics(session, text)
        if not filled and not entities:
            # A lone bare word can answer for name-like slots no pattern covers.
            tokens = tokenize(text)
            if len(tokens) == 1 and tokens[0].text.lower() not in AFFIRMATIONS:
                for slot_type in _LIBERAL_SLOTS:
                    if slot_type in expecting:
                        pending.fills[slot_type] = SlotValue(tokens[0].text, "clarification")
                        break
        return self._advance(session)

    def _confirmation_turn(self, session: DialogSession, text: str) -> TurnResult:
        reply = text.strip().lower()
        if reply in AFFIRMATIONS:
            return self._dispatch(session)
        if reply in NEGATIONS:
            return TurnResult(self._abort(session))
        return TurnResult(self._confirmation_prompt(session))

    def _abort(self, session: DialogSession) -> BotResponse:
        session.pending = None
        session.active_options = ()
        session.state = SessionState.IDLE
        return BotResponse(ResponseKind.ANSWER, "Cancelled. No action was taken.")

    def _disambiguation_turn(self, session: DialogSession, text: str) -> TurnResult:
        options = session.active_options
        pending = session.pending
        assert pending is not None and options

        if text.strip().lower() in NEGATIONS:
            return TurnResult(self._abort(session))
        selected = self._parse_choice(text, options)
        if selected is None:
            return TurnResult(self._disambiguation_prompt(options, reprompt=True))
        pending.fills[selected.entity_type] = SlotValue(selected.value, selected.provenance)
        session.active_options = ()
        session.state = SessionState.AWAITING_SLOTS
        return self._advance(session)

    def _parse_choice(
        self, text: str, options: tuple[DisambiguationOption, ...]
    ) -> Optional[DisambiguationOption]:
        stripped = text.strip().rstrip("?!.,")
        if stripped.isdigit():
            index = int(stripped) - 1
            return options[index] if 0 <= index < len(options) else None
        # A restatement also picks: hinted ("file command.com") selects by type
        # and may carry a corrected value; an unhinted entity must match an
        # option exactly (e.g. pasting one of two listed hashes back).
        for entity in extract_entities(text, self.tables):
            for cand in entity.candidates:
                for opt in options:
                    if opt.entity_type is not cand.entity_type:
                        continue
                    if entity.hinted:
                        return DisambiguationOption(
                            opt.entity_type, cand.canonical, opt.provenance
                        )
                    if opt.value.lower() == cand.canonical.lower():
                        return opt
        return None

    # -- slot machinery ---------------------------------------------------

    def _open_types(self, pending: PendingTask) -> set[EntityType]:
        open_types = {
            t
            for group in missing_slots(pending.schema, pending.fills)
            for t in group
        }
        open_types |= {t for t in pending.schema.optional if t not in pending.fills}
        return open_types

    def _merge_entities(
        self, session: DialogSession, entities: list[Entity], provenance: str
    ) -> int:
        """Fold extracted entities into the pending fills; queue ambiguities.

        Returns the number of slots filled.
        """
        pending = session.pending
        assert pending is not None
        filled = 0
        for entity in entities:
            open_types = self._open_types(pending)
            relevant = [
                c for c in entity.candidates if self._fill_type(c.entity_type, open_types)
            ]
            if not relevant:
                continue
            if entity.ambiguous:
                options = tuple(
                    DisambiguationOption(c.entity_type, c.canonical, provenance)
                    for c in entity.candidates
                )
                pending.ambiguities.append((entity.raw, options))
                continue
            cand = relevant[0]
            slot = self._fill_type(cand.entity_type, open_types)
            pending.fills[slot] = SlotValue(cand.canonical, provenance)
            filled += 1
        return filled

    @staticmethod
    def _fill_type(
        entity_type: EntityType, open_types: set[EntityType]
    ) -> Optional[EntityType]:
        """Map an entity type onto an open slot.

        Direct match wins; a FILE_NAME may stand in for an open PROCESS_NAME
        slot (processes are named by their image file) when FILE_NAME itself
        is not wanted.
        """
        if entity_type in open_types:
            return entity_type
        if (
            entity_type is EntityType.FILE_NAME
            and EntityType.PROCESS_NAME in open_types
        ):
            return EntityType.PROCESS_NAME
        return None

    def _merge_deictics(self, session: DialogSession, text: str) -> None:
        pending = session.pending
        assert pending is not None
        words = [tok.text.lower() for tok in tokenize(text)]
        requests: list[Optional[EntityType]] = []
        for i, word in enumerate(words):
            if word not in _DEICTIC_MARKERS:
                continue
            requested = None
            if i + 1 < len(words):
                noun = self.tables.synonyms.canonical(words[i + 1])
                requested = _DEICTIC_NOUNS.get(noun)
            requests.append(requested)

        for requested in requests:
            open_types = self._open_types(pending)
            if requested is not None:
                if requested not in open_types or requested in pending.fills:
                    continue
                resolution = self.resolve_deictic(session, requested)
                if isinstance(resolution, Resolved):
                    pending.fills[requested] = SlotValue(resolution.value, "context")
                elif isinstance(resolution, Ambiguous):
                    options = tuple(
                        DisambiguationOption(requested, value, "context")
                        for value in resolution.candidates
                    )
                    pending.ambiguities.append((TYPE_NOUNS[requested], options))
                # NoContext: leave the slot missing; clarification will ask.
            else:
                # Bare "this"/"it" resolves only against a single-binding context.
                if len(session.view_context) == 1:
                    binding = session.view_context[0]
                    slot = self._fill_type(binding.entity_type, open_types)
                    if slot and slot not in pending.fills:
                        pending.fills[slot] = SlotValue(binding.value, "context")

    def _advance(self, session: DialogSession) -> TurnResult:
        pending = session.pending
        assert pending is not None
        if pending.ambiguities:
            raw, options = pending.ambiguities.pop(0)
            session.active_options = options
            session.state = SessionState.AWAITING_DISAMBIGUATION
            return TurnResult(self._disambiguation_prompt(options, raw=raw))
        missing = missing_slots(pending.schema, pending.fills)
        if missing:
            session.state = SessionState.AWAITING_SLOTS
            return TurnResult(
                generate_clarification(missing, order=pending.schema.required)
            )
        if pending.schema.dangerous:
            session.state = SessionState.AWAITING_CONFIRMATION
            return TurnResult(self._confirmation_prompt(session))
        return self._dispatch(session)

    # -- prompts -----------------------------------------------------------

    def _disambiguation_prompt(
        self,
        options: tuple[DisambiguationOption, ...],
        raw: str = "",
        reprompt: bool = False,
    ) -> BotResponse:
        listing = "; ".join(
            f"{i + 1}) {opt.display}" for i, opt in enumerate(options)
        )
        if reprompt:
            text = f"That didn't match an option. Pick one: {listing}"
        else:
            subject = f'"{raw}"' if raw else "that value"
            text = f"Did you mean {subject} as: {listing}? Reply with a number or restate with a type word."
        return BotResponse(
            ResponseKind.DISAMBIGUATION, text, tuple(o.display for o in options)
        )

    def _confirmation_prompt(self, session: DialogSession) -> BotResponse:
        pending = session.pending
        assert pending is not None
        details = ", ".join(
            f"{TYPE_NOUNS[t]} {sv.value}"
            for t, sv in sorted(pending.fills.items(), key=lambda kv: kv[0].value)
        )
        return BotResponse(
            ResponseKind.CONFIRMATION,
            f"This will {pending.schema.description.rstrip('.').lower()} ({details}). Proceed? (yes/no)",
            ("yes", "no"),
        )

    def _fallback_response(self) -> BotResponse:
        labels = [l.value for l in self.registry.labels()]
        listing = ", ".join(labels)
        return BotResponse(
            ResponseKind.FALLBACK,
            f"I didn't recognize that request. I can help with: {listing}.",
            tuple(labels),
        )

    def _explain_answer(self, text: str) -> BotResponse:
        words = {tok.text.lower() for tok in tokenize(text)}
        hits = []
        for label in self.registry.labels():
            schema = self.registry.get(label)
            if schema.label is IntentLabel.EXPLAIN_FEATURE:
                continue
            if schema.keywords & words:
                hits.append(schema)
        if len(hits) == 1:
            return BotResponse(
                ResponseKind.ANSWER, f"{hits[0].label.value}: {hits[0].description}"
            )
        lines = [
            f"{self.registry.get(label).label.value}: {self.registry.get(label).description}"
            for label in self.registry.labels()
        ]
        return BotResponse(ResponseKind.ANSWER, "Here is what I can do. " + " ".join(lines))

    # -- dispatch ----------------------------------------------------------

    def _dispatch(self, session: DialogSession) -> TurnResult:
        pending = session.pending
        assert pending is not None
        if missing_slots(pending.schema, pending.fills):
            raise RuntimeError("dispatch attempted with missing required slots")
        label = pending.schema.label
        slots = {t: sv.value for t, sv in pending.fills.items()}

        if label is IntentLabel.WHITELIST_ALERT:
            message = (
                self.on_whitelist(slots[EntityType.FILE_HASH], session)
                if self.on_whitelist
                else f"Whitelisted hash {slots[EntityType.FILE_HASH]}."
            )
            session.pending = None
            session.state = SessionState.IDLE
            return TurnResult(BotResponse(ResponseKind.ANSWER, message))

        if label is IntentLabel.CREATE_INVESTIGATION:
            if self.on_create_investigation:
                message = self.on_create_investigation(session)
            else:
                message = "Investigations are not available in this session."
            session.pending = None
            session.state = SessionState.IDLE
            return TurnResult(BotResponse(ResponseKind.ANSWER, message))

        outcome = self.dispatcher(label, slots, session)
        session.transcript.append(
            {
                "who": "system",
                "event": "dispatch",
                "task_id": outcome.task_id,
                "intent": label.value,
                "match_count": outcome.match_count,
                "pending": outcome.pending,
                # slot provenance kept for the audit transcript
                "slots": {
                    t.value: [sv.value, sv.provenance]
                    for t, sv in sorted(pending.fills.items(), key=lambda kv: kv[0].value)
                },
            }
        )
        session.pending = None
        session.dispatched_task_id = outcome.task_id
        session.state = SessionState.DISPATCHED
        if outcome.pending:
            text = f"Dispatched {outcome.task_id}; results are still coming in, poll the task for cards."
        else:
            noun = "record" if outcome.match_count == 1 else "records"
            text = f"Dispatched {outcome.task_id}: {outcome.match_count} matching {noun}."
        return TurnResult(
            BotResponse(ResponseKind.DISPATCH_ACK, text),
            cards=outcome.cards,
            task_id=outcome.task_id,
        )

    def _record_bot_turn(self, session: DialogSession, response: BotResponse) -> None:
        session.transcript.append({"who": "bot", **response.to_dict()})
