"""Deterministic simulated-fleet generation.

Everything is driven by one seed through random.Random, so the same seed
always produces byte-identical shard files. Planted anomalies (blocklisted
hashes, a process lineage chain, unsigned run-key persistence, a kill
target) are recorded in a ground-truth manifest together with their expected
match counts, which makes the generator its own oracle.

Record timestamps hang off a fixed base time rather than the wall clock;
time-range queries in tests pin their reference time to the manifest's
base_time.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .fleet import EndpointShard, TelemetryRecord

# 2026-01-01T00:00:00Z; fixed so identical seeds yield identical files.
DEFAULT_BASE_TIME = 1767225600

DAY = 86400

_PROCESS_NAMES = (
    "svchost.exe", "chrome.exe", "explorer.exe", "powershell.exe", "winword.exe",
    "outlook.exe", "python.exe", "ssh.exe", "cmd.exe", "teams.exe", "code.exe",
    "lsass.exe", "spoolsv.exe", "notepad.exe", "firefox.exe",
)
_FILE_NAMES = (
    "report.doc", "invoice.pdf", "setup.msi", "driver.sys", "notes.doc",
    "archive.zip", "tool.exe", "helper.dll", "script.ps1", "update.bat",
    "readme.pdf", "loader.vbs", "config.ini", "backup.dat",
)
_DOMAINS = (
    "updates.vendor.net", "cdn.content.io", "mail.corp.org", "sync.cloud.net",
    "api.metrics.io", "docs.internal.org", "repo.mirror.net", "time.sync.org",
    "portal.corp.org", "files.share.net",
)
_USERS = ("alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi")
_PROGRAM_DIRS = (
    "C:\\Program Files\\", "C:\\Windows\\System32\\", "C:\\Users\\shared\\",
)
_TEMP_DIR = "C:\\Users\\victim\\AppData\\Local\\Temp\\"
_RUN_KEYS = (
    "HKLM\\Software\\Microsoft\\Windows\\CurrentVersion\\Run",
    "HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run",
)

# Planted indicators are real md5 digests of stable strings.
PLANTED_HASH = hashlib.md5(b"planted-malware-sample").hexdigest()
PLANTED_DOMAIN = "badupdate.site"
EXTRA_BLOCKED_HASH = hashlib.md5(b"second-stage-loader").hexdigest()
EXTRA_BLOCKED_DOMAIN = "exfil.relay.xyz"

KILL_TARGET_PID = 4412
KILL_TARGET_ENDPOINT_INDEX = 6  # box-7


@dataclass
class PlantSpec:
    """How many anomalies to plant; counts are clamped to the fleet size."""

    hash_endpoints: int = 3
    domain_endpoints: int = 2
    persistence_endpoints: int = 2
    lineage_length: int = 3


@dataclass
class FleetManifest:
    seed: int
    n_endpoints: int
    records_per_endpoint: int
    base_time: int
    hostnames: list[str]
    users: list[str]
    planted_hash: str
    planted_hash_endpoints: list[str]
    planted_hash_expected_matches: int
    planted_domain: str
    planted_domain_endpoints: list[str]
    planted_domain_expected_matches: int
    lineage_endpoint: str
    lineage_pids: list[int]
    persistence_endpoints: list[str]
    persistence_expected_matches: int
    kill_target_endpoint: str
    kill_target_pid: int
    blocklist: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FleetManifest":
        return cls(**json.loads(text))


def _hostname(index: int) -> str:
    return f"box-{index + 1}"


def _random_hash(rng: random.Random) -> str:
    return "".join(rng.choice("0123456789abcdef") for _ in range(32))


def _random_ts(rng: random.Random, base_time: int) -> int:
    return base_time - rng.randrange(0, 7 * DAY)


def generate_fleet(
    seed: int,
    n_endpoints: int = 10,
    records_per_endpoint: int = 1000,
    *,
    base_time: int = DEFAULT_BASE_TIME,
    plant: Optional[PlantSpec] = None,
) -> tuple[list[EndpointShard], FleetManifest]:
    """Build a deterministic pseudorandom fleet plus its ground truth."""
    if n_endpoints < 1:
        raise ValueError("need at least one endpoint")
    plant = plant or PlantSpec()
    rng = random.Random(seed)
    hostnames = [_hostname(i) for i in range(n_endpoints)]

    hash_targets = hostnames[: min(plant.hash_endpoints, n_endpoints)]
    n_domain = min(plant.domain_endpoints, n_endpoints)
    domain_targets = hostnames[n_endpoints - n_domain:] if n_domain else []
    persistence_targets = hostnames[: min(plant.persistence_endpoints, n_endpoints)]
    lineage_host = hostnames[min(2, n_endpoints - 1)]
    kill_host = hostnames[min(KILL_TARGET_ENDPOINT_INDEX, n_endpoints - 1)]
    lineage_pids = [400 + 7 * i for i in range(max(2, plant.lineage_length))]

    shards = []
    for hostname in hostnames:
        records: list[TelemetryRecord] = []
        counter = 0

        def add(kind: str, timestamp: int, attributes: dict) -> None:
            nonlocal counter
            records.append(
                TelemetryRecord(
                    record_id=f"{hostname}-r{counter:05d}",
                    endpoint_id=hostname,
                    kind=kind,
                    timestamp=timestamp,
                    attributes=attributes,
                )
            )
            counter += 1

        # Planted artifacts come first so their record ids are stable.
        if hostname in hash_targets:
            add(
                "file",
                base_time - rng.randrange(DAY, 2 * DAY),
                {
                    "name": "stage1.exe",
                    "path": _TEMP_DIR + "stage1.exe",
                    "hash": PLANTED_HASH,
                },
            )
        if hostname in domain_targets:
            add(
                "network",
                base_time - rng.randrange(0, DAY),
                {
                    "local_ip": f"10.0.0.{rng.randrange(2, 250)}",
                    "remote_ip": f"203.0.113.{rng.randrange(2, 250)}",
                    "port": 443,
                    "domain": PLANTED_DOMAIN,
                },
            )
        if hostname in persistence_targets:
            add(
                "persistence",
                base_time - rng.randrange(0, 2 * DAY),
                {
                    "mechanism": "run-key",
                    "path": _TEMP_DIR + "loader.vbs",
                    "hash": EXTRA_BLOCKED_HASH,
                    "signed": False,
                },
            )
        if hostname == lineage_host:
            # Chain child -> ... -> root; the last pid has no parent.
            for i, pid in enumerate(lineage_pids):
                parent = lineage_pids[i + 1] if i + 1 < len(lineage_pids) else 0
                add(
                    "process",
                    base_time - 3600 * (i + 1),
                    {
                        "pid": pid,
                        "parent_pid": parent,
                        "name": ["dropper.exe", "powershell.exe", "explorer.exe"][i % 3],
                        "image_path": _TEMP_DIR + "dropper.exe" if i == 0
                        else _PROGRAM_DIRS[0] + "host.exe",
                        "hash": _random_hash(rng),
                        "user": rng.choice(_USERS),
                    },
                )
        if hostname == kill_host:
            add(
                "process",
                base_time - 1800,
                {
                    "pid": KILL_TARGET_PID,
                    "parent_pid": 0,
                    "name": "miner.exe",
                    "image_path": _TEMP_DIR + "miner.exe",
                    "hash": _random_hash(rng),
                    "user": rng.choice(_USERS),
                },
            )

        while counter < records_per_endpoint:
            kind_roll = rng.random()
            ts = _random_ts(rng, base_time)
            if kind_roll < 0.40:
                # Pid range keeps clear of planted chain pids and the kill target.
                add(
                    "process",
                    ts,
                    {
                        "pid": rng.randrange(5000, 65000),
                        "parent_pid": rng.randrange(5000, 65000),
                        "name": rng.choice(_PROCESS_NAMES),
                        "image_path": rng.choice(_PROGRAM_DIRS) + rng.choice(_PROCESS_NAMES),
                        "hash": _random_hash(rng),
                        "user": rng.choice(_USERS),
                    },
                )
            elif kind_roll < 0.65:
                add(
                    "file",
                    ts,
                    {
                        "name": rng.choice(_FILE_NAMES),
                        "path": rng.choice(_PROGRAM_DIRS) + rng.choice(_FILE_NAMES),
                        "hash": _random_hash(rng),
                    },
                )
            elif kind_roll < 0.85:
                add(
                    "network",
                    ts,
                    {
                        "local_ip": f"10.0.0.{rng.randrange(2, 250)}",
                        "remote_ip": f"198.51.100.{rng.randrange(2, 250)}",
                        "port": rng.choice((80, 443, 53, 8080)),
                        "domain": rng.choice(_DOMAINS),
                    },
                )
            elif kind_roll < 0.95:
                add(
                    "registry",
                    ts,
                    {
                        "key": rng.choice(_RUN_KEYS),
                        "value": rng.choice(_PROCESS_NAMES),
                    },
                )
            else:
                add(
                    "persistence",
                    ts,
                    {
                        "mechanism": rng.choice(("scheduled-task", "service")),
                        "path": rng.choice(_PROGRAM_DIRS) + rng.choice(_PROCESS_NAMES),
                        "hash": _random_hash(rng),
                        "signed": True,
                    },
                )

        shards.append(
            EndpointShard(endpoint_id=hostname, hostname=hostname, records=tuple(records))
        )

    manifest = FleetManifest(
        seed=seed,
        n_endpoints=n_endpoints,
        records_per_endpoint=records_per_endpoint,
        base_time=base_time,
        hostnames=hostnames,
        users=sorted(_USERS),
        planted_hash=PLANTED_HASH,
        planted_hash_endpoints=hash_targets,
        planted_hash_expected_matches=len(hash_targets),
        planted_domain=PLANTED_DOMAIN,
        planted_domain_endpoints=domain_targets,
        planted_domain_expected_matches=len(domain_targets),
        lineage_endpoint=lineage_host,
        lineage_pids=lineage_pids,
        persistence_endpoints=persistence_targets,
        persistence_expected_matches=len(persistence_targets),
        kill_target_endpoint=kill_host,
        kill_target_pid=KILL_TARGET_PID,
        blocklist=sorted(
            {PLANTED_HASH, EXTRA_BLOCKED_HASH, PLANTED_DOMAIN, EXTRA_BLOCKED_DOMAIN}
        ),
    )
    return shards, manifest


def write_fleet(
    directory: Path | str, shards: list[EndpointShard], manifest: FleetManifest
) -> None:
    """Write one JSONL shard per endpoint plus manifest, inventory, blocklist."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for shard in shards:
        shard.write(directory / f"{shard.endpoint_id}.jsonl")
    (directory / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    (directory / "endpoints.txt").write_text(
        "\n".join(manifest.hostnames) + "\n", encoding="utf-8"
    )
    (directory / "users.txt").write_text(
        "\n".join(manifest.users) + "\n", encoding="utf-8"
    )
    (directory / "blocklist.txt").write_text(
        "\n".join(manifest.blocklist) + "\n", encoding="utf-8"
    )


def load_fleet(directory: Path | str) -> tuple[list[EndpointShard], FleetManifest]:
    directory = Path(directory)
    manifest = FleetManifest.from_json(
        (directory / "manifest.json").read_text(encoding="utf-8")
    )
    shards = []
    for hostname in manifest.hostnames:
        path = directory / f"{hostname}.jsonl"
        shards.append(EndpointShard.read(hostname, hostname, path))
    return shards, manifest
