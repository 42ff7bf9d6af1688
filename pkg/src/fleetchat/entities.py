"""Tokenization, typed entity extraction, and redaction.

The extractor is rule-based and fully deterministic: a fixed pattern table
plus gazetteers for endpoint and user names. Ambiguity (one token matching
several types, e.g. ``command.com`` as a file name or a domain) is preserved
as multiple candidates on a single entity and resolved later by the dialog
layer. Redaction replaces entity spans with ``{TYPE}`` placeholders so the
intent classifier sees a reduced vocabulary.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional


class EntityType(str, Enum):
    FILE_HASH = "FILE_HASH"
    IP_ADDRESS = "IP_ADDRESS"
    DOMAIN_NAME = "DOMAIN_NAME"
    FILE_NAME = "FILE_NAME"
    PROCESS_NAME = "PROCESS_NAME"
    PID = "PID"
    ENDPOINT_NAME = "ENDPOINT_NAME"
    USER_NAME = "USER_NAME"
    REGISTRY_KEY = "REGISTRY_KEY"
    TIME_RANGE = "TIME_RANGE"


# Candidate ordering when one span matches several patterns. FILE_NAME wins
# the placeholder so "command.com" redacts as {FILE_NAME}.
TYPE_PRIORITY = (
    EntityType.FILE_HASH,
    EntityType.IP_ADDRESS,
    EntityType.REGISTRY_KEY,
    EntityType.TIME_RANGE,
    EntityType.FILE_NAME,
    EntityType.DOMAIN_NAME,
    EntityType.ENDPOINT_NAME,
    EntityType.USER_NAME,
    EntityType.PID,
    EntityType.PROCESS_NAME,
)

# Human-readable noun per type, used in generated clarification questions.
TYPE_NOUNS = {
    EntityType.FILE_HASH: "hash",
    EntityType.IP_ADDRESS: "ip address",
    EntityType.DOMAIN_NAME: "domain",
    EntityType.FILE_NAME: "file name",
    EntityType.PROCESS_NAME: "process name",
    EntityType.PID: "pid",
    EntityType.ENDPOINT_NAME: "endpoint",
    EntityType.USER_NAME: "user",
    EntityType.REGISTRY_KEY: "registry key",
    EntityType.TIME_RANGE: "time range",
}

# Explicit type hints the user can prefix a value with ("file command.com").
HINT_KEYWORDS = {
    "file": EntityType.FILE_NAME,
    "hash": EntityType.FILE_HASH,
    "domain": EntityType.DOMAIN_NAME,
    "ip": EntityType.IP_ADDRESS,
    "user": EntityType.USER_NAME,
    "endpoint": EntityType.ENDPOINT_NAME,
    "pid": EntityType.PID,
    "process": EntityType.PROCESS_NAME,
}

_SENTENCE_PUNCT = "?!.,"
_HASH_RE = re.compile(r"^[0-9a-fA-F]+$")
_HASH_LENGTHS = (32, 40, 64)
_IP_RE = re.compile(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})$")
_DOMAIN_LABEL_RE = re.compile(r"^[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?$")
_PID_RE = re.compile(r"^\d+$")
_PID_MAX = 4194304
_REGISTRY_PREFIXES = ("hklm\\", "hkcu\\", "hkcr\\", "hku\\")
_TIME_UNITS = {"hour", "hours", "day", "days", "minute", "minutes"}
# Hinted names for gazetteer-backed types are accepted when they look like
# identifiers (contain a digit or separator), so "endpoint box-99" works even
# before box-99 shows up in the inventory.
_IDENTIFIER_CHARS = set("0123456789.-_\\/")


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class Candidate:
    entity_type: EntityType
    canonical: str


@dataclass(frozen=True)
class Entity:
    start: int
    end: int
    raw: str
    candidates: tuple[Candidate, ...]
    hinted: bool = False

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("entity requires at least one candidate")
        if self.hinted and len(self.candidates) != 1:
            raise ValueError("hinted entity must have exactly one candidate")

    @property
    def primary_type(self) -> EntityType:
        return self.candidates[0].entity_type

    @property
    def ambiguous(self) -> bool:
        return len(self.candidates) > 1


@dataclass(frozen=True)
class RedactedUtterance:
    text: str
    entities: tuple[Entity, ...]
    original: str

    def restore(self) -> str:
        """Re-substitute raw entity text for placeholders, left to right."""
        out = self.text
        pos = 0
        for ent in self.entities:
            placeholder = "{%s}" % ent.primary_type.value
            idx = out.find(placeholder, pos)
            if idx < 0:
                raise ValueError(f"placeholder {placeholder} missing from redacted text")
            out = out[:idx] + ent.raw + out[idx + len(placeholder):]
            pos = idx + len(ent.raw)
        return out


def load_wordlist(path: Path | str) -> list[str]:
    """Read a plain-text table: one entry per line, '#' starts a comment."""
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.append(line)
    return entries


class SynonymTable:
    """Maps surface nouns (lowercased) to canonical domain nouns.

    Canonical nouns always map to themselves, so canonicalization is
    idempotent by construction.
    """

    def __init__(self, mapping: Mapping[str, str] | None = None):
        self._map: dict[str, str] = {}
        for surface, canonical in (mapping or {}).items():
            self._map[surface.lower()] = canonical.lower()
        for canonical in list(self._map.values()):
            self._map.setdefault(canonical, canonical)

    @classmethod
    def from_file(cls, path: Path | str) -> "SynonymTable":
        mapping = {}
        for entry in load_wordlist(path):
            parts = entry.split()
            if len(parts) != 2:
                raise ValueError(f"synonym entry needs two columns: {entry!r}")
            mapping[parts[0]] = parts[1]
        return cls(mapping)

    def canonical(self, word: str) -> str:
        return self._map.get(word.lower(), word)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._map


def canonicalize_noun(word: str, table: SynonymTable) -> str:
    """Look up the lowercased word; unknown words pass through unchanged."""
    return table.canonical(word)


@dataclass
class EntityTables:
    """Immutable lookup tables backing extraction; safe to share across threads."""

    tlds: frozenset[str]
    extensions: frozenset[str]
    endpoints: frozenset[str] = frozenset()
    users: frozenset[str] = frozenset()
    synonyms: SynonymTable = field(default_factory=SynonymTable)

    @classmethod
    def load(
        cls,
        tld_path: Path | str,
        extension_path: Path | str,
        *,
        endpoints: Iterable[str] = (),
        users: Iterable[str] = (),
        synonyms: SynonymTable | None = None,
    ) -> "EntityTables":
        return cls(
            tlds=frozenset(w.lower() for w in load_wordlist(tld_path)),
            extensions=frozenset(w.lower() for w in load_wordlist(extension_path)),
            endpoints=frozenset(w.lower() for w in endpoints),
            users=frozenset(w.lower() for w in users),
            synonyms=synonyms or SynonymTable(),
        )


def tokenize(text: str) -> list[Token]:
    """Split on whitespace, peeling trailing sentence punctuation (?!.,) into
    separate single-character tokens. Path, hash, and registry characters
    stay inside tokens. Offsets index into the original string.
    """
    tokens: list[Token] = []
    for match in re.finditer(r"\S+", text):
        run = match.group()
        start = match.start()
        core_end = len(run)
        while core_end > 0 and run[core_end - 1] in _SENTENCE_PUNCT:
            core_end -= 1
        if core_end > 0:
            tokens.append(Token(run[:core_end], start, start + core_end))
        for i in range(core_end, len(run)):
            tokens.append(Token(run[i], start + i, start + i + 1))
    return tokens


# ---------------------------------------------------------------------------
# Per-type validators. Each returns the canonical value or None.

def _valid_hash(token: str) -> Optional[str]:
    if len(token) in _HASH_LENGTHS and _HASH_RE.match(token):
        return token.lower()
    return None


def _valid_ip(token: str) -> Optional[str]:
    m = _IP_RE.match(token)
    if not m:
        return None
    if all(0 <= int(octet) <= 255 for octet in m.groups()):
        return token
    return None


def _valid_domain(token: str, tables: EntityTables) -> Optional[str]:
    labels = token.split(".")
    if len(labels) < 2:
        return None
    if not all(_DOMAIN_LABEL_RE.match(lbl) for lbl in labels):
        return None
    if labels[-1].lower() not in tables.tlds:
        return None
    return token.lower()


def _valid_file_name(token: str, tables: EntityTables) -> Optional[str]:
    if _valid_registry_key(token):
        return None
    if "/" in token or "\\" in token:
        return token
    if "." in token:
        suffix = token.rsplit(".", 1)[-1].lower()
        if suffix in tables.extensions:
            return token
    return None


def _valid_pid(token: str) -> Optional[str]:
    if _PID_RE.match(token) and 1 <= int(token) <= _PID_MAX:
        return token
    return None


def _valid_registry_key(token: str) -> Optional[str]:
    if token.lower().startswith(_REGISTRY_PREFIXES):
        return token
    return None


def _looks_like_identifier(token: str) -> bool:
    return any(ch in _IDENTIFIER_CHARS for ch in token)


def _hint_value(hint_type: EntityType, token: str, tables: EntityTables) -> Optional[str]:
    """Validate a hinted value; a failing value means the hint is ignored."""
    if hint_type is EntityType.FILE_HASH:
        return _valid_hash(token)
    if hint_type is EntityType.IP_ADDRESS:
        return _valid_ip(token)
    if hint_type is EntityType.DOMAIN_NAME:
        return _valid_domain(token, tables)
    if hint_type is EntityType.FILE_NAME:
        return _valid_file_name(token, tables)
    if hint_type is EntityType.PID:
        return _valid_pid(token)
    if hint_type is EntityType.ENDPOINT_NAME:
        if token.lower() in tables.endpoints or _looks_like_identifier(token):
            return token
        return None
    if hint_type is EntityType.USER_NAME:
        if token.lower() in tables.users or _looks_like_identifier(token):
            return token
        return None
    if hint_type is EntityType.PROCESS_NAME:
        if _looks_like_identifier(token):
            return token
        return None
    return None


def apply_hint(
    tokens: list[Token], index: int, tables: EntityTables
) -> Optional[tuple[EntityType, Token]]:
    """Interpret tokens[index] as a type hint keyword.

    Returns the hinted type and the value token that follows, or None when
    there is no following token or the value fails the type's validator.
    """
    word = tables.synonyms.canonical(tokens[index].text.lower())
    hint_type = HINT_KEYWORDS.get(word)
    if hint_type is None:
        return None
    if index + 1 >= len(tokens):
        return None
    value_token = tokens[index + 1]
    if _hint_value(hint_type, value_token.text, tables) is None:
        return None
    return hint_type, value_token


def _token_candidates(token: str, tables: EntityTables, expecting: frozenset) -> list[Candidate]:
    found: dict[EntityType, str] = {}
    canonical = _valid_hash(token)
    if canonical:
        found[EntityType.FILE_HASH] = canonical
    canonical = _valid_ip(token)
    if canonical:
        found[EntityType.IP_ADDRESS] = canonical
    canonical = _valid_registry_key(token)
    if canonical:
        found[EntityType.REGISTRY_KEY] = canonical
    canonical = _valid_file_name(token, tables)
    if canonical:
        found[EntityType.FILE_NAME] = canonical
    canonical = _valid_domain(token, tables)
    if canonical:
        found[EntityType.DOMAIN_NAME] = canonical
    if token.lower() in tables.endpoints:
        found[EntityType.ENDPOINT_NAME] = token
    if token.lower() in tables.users:
        found[EntityType.USER_NAME] = token
    # Bare integers are PIDs only when a PID answer is expected; otherwise
    # numbers are too ambiguous to tag.
    if EntityType.PID in expecting:
        canonical = _valid_pid(token)
        if canonical:
            found[EntityType.PID] = canonical
    return [Candidate(t, found[t]) for t in TYPE_PRIORITY if t in found]


def _match_time_range(tokens: list[Token], i: int) -> Optional[tuple[int, str]]:
    """Match a time-range phrase starting at token i.

    Returns (token count consumed, canonical value) or None. Grammar:
    "last N hours|days|minutes", "today", "yesterday".
    """
    word = tokens[i].text.lower()
    if word in ("today", "yesterday"):
        return 1, word
    if word == "last" and i + 2 < len(tokens):
        count, unit = tokens[i + 1].text, tokens[i + 2].text.lower()
        if count.isdigit() and int(count) > 0 and unit in _TIME_UNITS:
            return 3, f"last {int(count)} {unit}"
    return None


def extract_entities(
    text: str,
    tables: EntityTables,
    expecting: Iterable[EntityType] = (),
) -> list[Entity]:
    """Extract typed entities from an utterance.

    Deterministic: multi-token time ranges are matched first (longest span
    wins), then explicit hints are consumed, then the single-token pattern
    table runs over whatever is left. Output spans are disjoint and sorted.

    ``expecting`` enables context-sensitive patterns (currently bare-integer
    PIDs) when the dialog layer is waiting for a specific slot type.
    """
    expecting = frozenset(expecting)
    tokens = tokenize(text)
    consumed = [False] * len(tokens)
    entities: list[Entity] = []

    # Pass 1: multi-token time ranges.
    i = 0
    while i < len(tokens):
        match = _match_time_range(tokens, i)
        if match:
            span_len, canonical = match
            start, end = tokens[i].start, tokens[i + span_len - 1].end
            entities.append(
                Entity(start, end, text[start:end], (Candidate(EntityType.TIME_RANGE, canonical),))
            )
            for j in range(i, i + span_len):
                consumed[j] = True
            i += span_len
        else:
            i += 1

    # Pass 2: explicit hints ("file command.com"). The keyword token is
    # consumed but is not part of the entity span.
    for i in range(len(tokens)):
        if consumed[i] or (i + 1 < len(tokens) and consumed[i + 1]):
            continue
        hint = apply_hint(tokens, i, tables)
        if hint is None:
            continue
        hint_type, value_token = hint
        canonical = _hint_value(hint_type, value_token.text, tables)
        entities.append(
            Entity(
                value_token.start,
                value_token.end,
                value_token.text,
                (Candidate(hint_type, canonical),),
                hinted=True,
            )
        )
        consumed[i] = True
        consumed[i + 1] = True

    # Pass 3: single-token patterns.
    for i, token in enumerate(tokens):
        if consumed[i]:
            continue
        candidates = _token_candidates(token.text, tables, expecting)
        if candidates:
            entities.append(
                Entity(token.start, token.end, token.text, tuple(candidates))
            )
            consumed[i] = True

    entities.sort(key=lambda e: e.start)
    return entities


def redact(text: str, entities: list[Entity] | tuple[Entity, ...]) -> RedactedUtterance:
    """Replace each entity span with a ``{TYPE}`` placeholder.

    Raises ValueError on out-of-bounds or overlapping spans (an extractor
    bug, not a user error). Ambiguous entities use their first candidate's
    type for the placeholder.
    """
    ordered = sorted(entities, key=lambda e: e.start)
    prev_end = 0
    for ent in ordered:
        if ent.start < prev_end or ent.end > len(text) or ent.start >= ent.end:
            raise ValueError(f"invalid entity span ({ent.start}, {ent.end})")
        if text[ent.start:ent.end] != ent.raw:
            raise ValueError("entity raw text does not match its span")
        prev_end = ent.end

    parts = []
    cursor = 0
    for ent in ordered:
        parts.append(text[cursor:ent.start])
        parts.append("{%s}" % ent.primary_type.value)
        cursor = ent.end
    parts.append(text[cursor:])
    return RedactedUtterance("".join(parts), tuple(ordered), text)


def redact_utterance(text: str, tables: EntityTables, expecting: Iterable[EntityType] = ()) -> RedactedUtterance:
    """Convenience: extract then redact in one step."""
    return redact(text, extract_entities(text, tables, expecting))
