"""Simulated endpoint fleet with scatter-gather query fan-out.

Each endpoint owns a local telemetry shard. A task compiles to a pure
predicate which every endpoint evaluates against its own records; only the
matches are "shipped" back. Byte accounting (serialized size of matched
records vs. serialized size scanned locally) makes the bandwidth claim of
endpoint-local filtering directly testable.

Endpoints are in-process workers with injectable latency and failure, not
real sensors; failures are isolated per endpoint and partial results are
always surfaced, never retried.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .entities import EntityType
from .intents import IntentLabel

logger = logging.getLogger(__name__)

RECORD_KINDS = ("process", "file", "network", "registry", "persistence")
SEVERITIES = ("info", "suspicious", "malicious")
_SEVERITY_RANK = {name: i for i, name in enumerate(SEVERITIES)}
SEVERITY_COLORS = {"malicious": "red", "suspicious": "yellow", "info": "neutral"}

DEFAULT_TIMEOUT_S = 2.0
DEFAULT_PARALLELISM_CAP = 32
LINEAGE_DEPTH_LIMIT = 64

#: Intents that never reach the fleet.
NON_FLEET_INTENTS = frozenset(
    {
        IntentLabel.EXPLAIN_FEATURE,
        IntentLabel.CREATE_INVESTIGATION,
        IntentLabel.WHITELIST_ALERT,
        IntentLabel.NO_INTENT,
    }
)

_TEMP_PATH_MARKERS = ("\\temp\\", "/tmp/", "\\tmp\\", "appdata\\local\\temp")


class UnsupportedIntentError(ValueError):
    """Raised when a non-fleet intent is compiled into a predicate."""


@dataclass(frozen=True)
class TelemetryRecord:
    record_id: str
    endpoint_id: str
    kind: str
    timestamp: int
    attributes: dict

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "endpoint_id": self.endpoint_id,
            "kind": self.kind,
            "timestamp": self.timestamp,
            "attributes": self.attributes,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "TelemetryRecord":
        return cls(
            record_id=payload["record_id"],
            endpoint_id=payload["endpoint_id"],
            kind=payload["kind"],
            timestamp=int(payload["timestamp"]),
            attributes=dict(payload["attributes"]),
        )


def encoded_size(record: TelemetryRecord) -> int:
    """Byte length of the canonical wire encoding of one record."""
    return len(encode_record(record).encode("utf-8"))


def encode_record(record: TelemetryRecord) -> str:
    return json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class EndpointShard:
    endpoint_id: str
    hostname: str
    records: tuple[TelemetryRecord, ...]
    _sizes: tuple[int, ...] = field(init=False, repr=False)
    byte_size: int = field(init=False)

    def __post_init__(self):
        for record in self.records:
            if record.endpoint_id != self.endpoint_id:
                raise ValueError(
                    f"record {record.record_id} carries endpoint "
                    f"{record.endpoint_id!r}, expected {self.endpoint_id!r}"
                )
        seen = set()
        for record in self.records:
            if record.record_id in seen:
                raise ValueError(f"duplicate record_id {record.record_id!r}")
            seen.add(record.record_id)
        self._sizes = tuple(encoded_size(r) for r in self.records)
        self.byte_size = sum(self._sizes)

    def size_of(self, index: int) -> int:
        return self._sizes[index]

    def write(self, path: Path) -> None:
        with path.open("w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(encode_record(record) + "\n")

    @classmethod
    def read(cls, endpoint_id: str, hostname: str, path: Path) -> "EndpointShard":
        records = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                records.append(TelemetryRecord.from_dict(json.loads(line)))
        return cls(endpoint_id=endpoint_id, hostname=hostname, records=tuple(records))


@dataclass(frozen=True)
class QueryTask:
    task_id: str
    intent: IntentLabel
    slots: dict  # EntityType -> canonical value
    target: Optional[tuple[str, ...]] = None  # None = all endpoints
    issued_at: float = 0.0

    def targets(self, shard: EndpointShard) -> bool:
        if self.target is None:
            return True
        wanted = {name.lower() for name in self.target}
        return shard.hostname.lower() in wanted or shard.endpoint_id.lower() in wanted


@dataclass(frozen=True)
class FanoutResult:
    task_id: str
    statuses: dict  # endpoint_id -> "ok" | "timeout" | "error"
    records: tuple[TelemetryRecord, ...]
    bytes_shipped: int
    bytes_local: int

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "statuses": dict(sorted(self.statuses.items())),
            "records": [r.to_dict() for r in self.records],
            "bytes_shipped": self.bytes_shipped,
            "bytes_local": self.bytes_local,
        }


# -- predicate compilation ----------------------------------------------------


def _time_window(spec: str, issued_at: float) -> tuple[float, float]:
    words = spec.lower().split()
    day = 86400.0
    if spec == "today":
        midnight = issued_at - (issued_at % day)
        return midnight, issued_at
    if spec == "yesterday":
        midnight = issued_at - (issued_at % day)
        return midnight - day, midnight
    if len(words) == 3 and words[0] == "last":
        count = int(words[1])
        unit = {"hour": 3600.0, "day": day, "minute": 60.0}[words[2].rstrip("s")]
        return issued_at - count * unit, issued_at
    raise ValueError(f"unsupported time range {spec!r}")


def compile_predicate(task: QueryTask) -> Callable[[TelemetryRecord], bool]:
    """Compile a task into a pure record predicate.

    Slot conditions are conjunctive. Hash slots match the hash field across
    process, file, and persistence records (a hash search means "anywhere"),
    except that search_process pins kind=process. Name and pid slots imply
    their record kind. ENDPOINT_NAME is a routing target, not a condition.
    """
    if task.intent in NON_FLEET_INTENTS:
        raise UnsupportedIntentError(f"{task.intent.value} never reaches the fleet")

    checks: list[Callable[[TelemetryRecord], bool]] = []
    slots = task.slots

    if task.intent is IntentLabel.SEARCH_PROCESS or task.intent is IntentLabel.PROCESS_SURVEY:
        checks.append(lambda r: r.kind == "process")
    elif task.intent is IntentLabel.HUNT_PERSISTENCE:
        checks.append(lambda r: r.kind == "persistence")
    elif task.intent is IntentLabel.SEARCH_NETWORK:
        checks.append(lambda r: r.kind == "network")
    elif task.intent is IntentLabel.KILL_PROCESS:
        pid = int(slots[EntityType.PID])
        checks.append(lambda r: r.kind == "process" and r.attributes.get("pid") == pid)
    elif task.intent is IntentLabel.SEARCH_FILE:
        if EntityType.FILE_HASH not in slots:
            checks.append(lambda r: r.kind == "file")
    elif task.intent is IntentLabel.PROCESS_LINEAGE:
        pass  # handled by the lineage walk, not a flat predicate
    else:
        raise UnsupportedIntentError(f"no predicate for intent {task.intent.value}")

    if EntityType.FILE_HASH in slots:
        wanted_hash = slots[EntityType.FILE_HASH].lower()
        checks.append(lambda r: r.attributes.get("hash") == wanted_hash)
    if EntityType.FILE_NAME in slots:
        wanted = slots[EntityType.FILE_NAME].lower()
        checks.append(lambda r: str(r.attributes.get("name", "")).lower() == wanted)
    if EntityType.PROCESS_NAME in slots:
        wanted = slots[EntityType.PROCESS_NAME].lower()
        checks.append(lambda r: str(r.attributes.get("name", "")).lower() == wanted)
    if EntityType.PID in slots and task.intent is IntentLabel.SEARCH_PROCESS:
        pid = int(slots[EntityType.PID])
        checks.append(lambda r: r.attributes.get("pid") == pid)
    if EntityType.DOMAIN_NAME in slots:
        wanted = slots[EntityType.DOMAIN_NAME].lower()
        checks.append(lambda r: str(r.attributes.get("domain", "")).lower() == wanted)
    if EntityType.IP_ADDRESS in slots:
        wanted_ip = slots[EntityType.IP_ADDRESS]
        checks.append(
            lambda r: r.attributes.get("remote_ip") == wanted_ip
            or r.attributes.get("local_ip") == wanted_ip
        )
    if EntityType.REGISTRY_KEY in slots:
        wanted = slots[EntityType.REGISTRY_KEY].lower()
        checks.append(lambda r: str(r.attributes.get("key", "")).lower().startswith(wanted))
    if EntityType.USER_NAME in slots:
        wanted = slots[EntityType.USER_NAME].lower()
        checks.append(lambda r: str(r.attributes.get("user", "")).lower() == wanted)
    if EntityType.TIME_RANGE in slots:
        lo, hi = _time_window(slots[EntityType.TIME_RANGE], task.issued_at)
        checks.append(lambda r: lo <= r.timestamp <= hi)

    def predicate(record: TelemetryRecord) -> bool:
        return all(check(record) for check in checks)

    return predicate


def lineage_walk(shard: EndpointShard, seed_pid: int) -> list[TelemetryRecord]:
    """Iterative parent-chain resolution from a seed pid.

    Walks parent_pid links through the shard's process records until a root,
    a missing parent, a cycle, or the depth guard stops it. Records come back
    in walk order, seed first.
    """
    by_pid: dict[int, TelemetryRecord] = {}
    for record in shard.records:
        if record.kind == "process":
            pid = record.attributes.get("pid")
            if pid is not None and pid not in by_pid:
                by_pid[pid] = record
    chain: list[TelemetryRecord] = []
    seen: set[int] = set()
    current = seed_pid
    for _ in range(LINEAGE_DEPTH_LIMIT):
        record = by_pid.get(current)
        if record is None or current in seen:
            break
        chain.append(record)
        seen.add(current)
        parent = record.attributes.get("parent_pid")
        if not parent:
            break
        current = parent
    return chain


def fan_out(
    task: QueryTask,
    shards: Sequence[EndpointShard],
    *,
    parallelism: Optional[int] = None,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    latencies: Optional[Mapping[str, float]] = None,
    failures: Optional[Iterable[str]] = None,
) -> FanoutResult:
    """Map the task across endpoints and gather only matching records.

    ``latencies`` maps endpoint_id to a simulated scan latency; an endpoint
    whose latency exceeds ``timeout_s`` reports status "timeout" and ships
    nothing. ``failures`` lists endpoint_ids that error outright. Either way
    the other endpoints are unaffected.
    """
    if not shards:
        raise ValueError("fleet is empty")
    latencies = latencies or {}
    failing = frozenset(failures or ())
    selected = [s for s in shards if task.targets(s)]

    lineage = task.intent is IntentLabel.PROCESS_LINEAGE
    predicate = None if lineage else compile_predicate(task)

    def scan(shard: EndpointShard):
        if shard.endpoint_id in failing:
            return shard.endpoint_id, "error", [], 0, 0
        if latencies.get(shard.endpoint_id, 0.0) > timeout_s:
            return shard.endpoint_id, "timeout", [], 0, 0
        if lineage:
            matches = lineage_walk(shard, int(task.slots[EntityType.PID]))
        else:
            matches = [r for r in shard.records if predicate(r)]
        shipped = sum(encoded_size(r) for r in matches)
        return shard.endpoint_id, "ok", matches, shipped, shard.byte_size

    statuses: dict[str, str] = {}
    matched: list[TelemetryRecord] = []
    bytes_shipped = 0
    bytes_local = 0
    if parallelism is None:
        parallelism = min(len(selected) or 1, DEFAULT_PARALLELISM_CAP)
    bound = max(1, parallelism)
    if selected:
        with ThreadPoolExecutor(max_workers=bound) as pool:
            for endpoint_id, status, matches, shipped, local in pool.map(scan, selected):
                statuses[endpoint_id] = status
                matched.extend(matches)
                bytes_shipped += shipped
                bytes_local += local

    if not lineage:
        matched.sort(key=lambda r: (r.endpoint_id, r.record_id))
    return FanoutResult(
        task_id=task.task_id,
        statuses=statuses,
        records=tuple(matched),
        bytes_shipped=bytes_shipped,
        bytes_local=bytes_local,
    )


def centralized_filter(
    task: QueryTask, shards: Sequence[EndpointShard]
) -> list[TelemetryRecord]:
    """Brute-force oracle: filter the concatenation of all targeted shards."""
    if task.intent is IntentLabel.PROCESS_LINEAGE:
        matches = []
        for shard in shards:
            if task.targets(shard):
                matches.extend(lineage_walk(shard, int(task.slots[EntityType.PID])))
        return matches
    predicate = compile_predicate(task)
    pool = [r for s in shards if task.targets(s) for r in s.records]
    return sorted(
        (r for r in pool if predicate(r)), key=lambda r: (r.endpoint_id, r.record_id)
    )


# -- enrichment and cards -----------------------------------------------------


@dataclass(frozen=True)
class Blocklist:
    hashes: frozenset[str]
    domains: frozenset[str]

    @classmethod
    def from_file(cls, path: Path | str) -> "Blocklist":
        hashes, domains = set(), set()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            entry = line.split("#", 1)[0].strip().lower()
            if not entry:
                continue
            if "." in entry:
                domains.add(entry)
            else:
                hashes.add(entry)
        return cls(frozenset(hashes), frozenset(domains))

    @classmethod
    def empty(cls) -> "Blocklist":
        return cls(frozenset(), frozenset())


@dataclass(frozen=True)
class TaggedRecord:
    record: TelemetryRecord
    tags: tuple[str, ...]
    severity: str


def enrich(
    records: Iterable[TelemetryRecord],
    blocklist: Blocklist,
    *,
    heuristics: bool = True,
) -> list[TaggedRecord]:
    """Tag records against the blocklist and path/persistence heuristics.

    Tags are additive; severity is the max over tags, and malicious severity
    comes from blocklist hits only.
    """
    tagged = []
    for record in records:
        tags: list[str] = []
        attrs = record.attributes
        record_hash = str(attrs.get("hash", "")).lower()
        if record_hash and record_hash in blocklist.hashes:
            tags.append("blocklist:hash")
        domain = str(attrs.get("domain", "")).lower()
        if domain and domain in blocklist.domains:
            tags.append("blocklist:domain")
        if heuristics:
            path = str(attrs.get("image_path", attrs.get("path", ""))).lower()
            if any(marker in path for marker in _TEMP_PATH_MARKERS):
                tags.append("heuristic:temp-path")
            if (
                record.kind == "persistence"
                and attrs.get("mechanism") == "run-key"
                and attrs.get("signed") is False
            ):
                tags.append("heuristic:unsigned-run-key")
        if any(tag.startswith("blocklist:") for tag in tags):
            severity = "malicious"
        elif tags:
            severity = "suspicious"
        else:
            severity = "info"
        tagged.append(TaggedRecord(record, tuple(tags), severity))
    return tagged


def severity_at_least(a: str, b: str) -> bool:
    return _SEVERITY_RANK[a] >= _SEVERITY_RANK[b]


@dataclass(frozen=True)
class ResultCard:
    record_id: str
    endpoint_id: str
    hostname: str
    kind: str
    name: str
    timestamp: int
    severity: str
    color: str
    tags: tuple[str, ...]
    pivots: tuple[tuple[EntityType, str], ...]
    summary: str

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "endpoint_id": self.endpoint_id,
            "hostname": self.hostname,
            "kind": self.kind,
            "name": self.name,
            "timestamp": self.timestamp,
            "severity": self.severity,
            "color": self.color,
            "tags": list(self.tags),
            "pivots": [{"entity_type": t.value, "value": v} for t, v in self.pivots],
            "summary": self.summary,
        }


def _primary_name(record: TelemetryRecord) -> str:
    attrs = record.attributes
    if record.kind in ("process", "file"):
        return str(attrs.get("name", record.record_id))
    if record.kind == "network":
        return str(attrs.get("domain") or attrs.get("remote_ip") or record.record_id)
    if record.kind == "registry":
        return str(attrs.get("key", record.record_id))
    if record.kind == "persistence":
        return f"{attrs.get('mechanism', '?')} {attrs.get('path', '')}".strip()
    return record.record_id


def _pivots(record: TelemetryRecord) -> tuple[tuple[EntityType, str], ...]:
    attrs = record.attributes
    pivots: list[tuple[EntityType, str]] = []
    if attrs.get("hash"):
        pivots.append((EntityType.FILE_HASH, str(attrs["hash"]).lower()))
    for key in ("local_ip", "remote_ip"):
        if attrs.get(key):
            pivots.append((EntityType.IP_ADDRESS, str(attrs[key])))
    if attrs.get("domain"):
        pivots.append((EntityType.DOMAIN_NAME, str(attrs["domain"]).lower()))
    if attrs.get("pid") is not None and record.kind == "process":
        pivots.append((EntityType.PID, str(attrs["pid"])))
    return tuple(pivots)


def build_cards(
    tagged: Iterable[TaggedRecord], hostnames: Mapping[str, str]
) -> list[ResultCard]:
    """One card per record: quick-story summary plus typed pivot entities."""
    cards = []
    for item in tagged:
        record = item.record
        hostname = hostnames.get(record.endpoint_id, record.endpoint_id)
        name = _primary_name(record)
        summary = f"{record.kind} {name} on {hostname} @ {record.timestamp}"
        if item.tags:
            summary += f" [{', '.join(item.tags)}]"
        cards.append(
            ResultCard(
                record_id=record.record_id,
                endpoint_id=record.endpoint_id,
                hostname=hostname,
                kind=record.kind,
                name=name,
                timestamp=record.timestamp,
                severity=item.severity,
                color=SEVERITY_COLORS[item.severity],
                tags=item.tags,
                pivots=_pivots(record),
                summary=summary,
            )
        )
    return cards
