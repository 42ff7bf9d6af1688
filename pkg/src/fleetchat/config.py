"""Application configuration: one JSON file plus environment overrides.

Every path defaults to the bundled data shipped inside the package, so the
CLI and service run out of the box; a fleet directory written by gen-fleet
overrides the synthesized default fleet.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from importlib.resources import files
from pathlib import Path
from typing import Mapping, Optional

ENV_PREFIX = "FLEETCHAT_"


def data_path(name: str) -> Path:
    return Path(str(files("fleetchat").joinpath("data", name)))


@dataclass
class AppConfig:
    corpus_path: str = ""
    schemas_path: str = ""
    tlds_path: str = ""
    extensions_path: str = ""
    synonyms_path: str = ""
    blocklist_path: str = ""          # empty: fleet blocklist, else bundled fallback
    fleet_dir: str = ""               # empty: generate the default in-memory fleet
    state_dir: str = "./fleetchat-state"
    listen: str = "127.0.0.1:8123"
    api_token: str = ""               # empty disables the static token check
    tau: float = 0.5
    alpha: float = 1.0
    endpoint_timeout_s: float = 2.0
    parallelism: int = 32
    turn_timeout_s: float = 10.0
    fleet_seed: int = 42
    fleet_endpoints: int = 10
    fleet_records: int = 200

    def __post_init__(self):
        self.corpus_path = self.corpus_path or str(data_path("corpus.tsv"))
        self.schemas_path = self.schemas_path or str(data_path("intent_schemas.json"))
        self.tlds_path = self.tlds_path or str(data_path("tlds.txt"))
        self.extensions_path = self.extensions_path or str(data_path("extensions.txt"))
        self.synonyms_path = self.synonyms_path or str(data_path("synonyms.txt"))


def load_config(
    path: Optional[Path | str] = None, env: Optional[Mapping[str, str]] = None
) -> AppConfig:
    """Read config JSON (optional) and apply FLEETCHAT_* env overrides."""
    env = os.environ if env is None else env
    values: dict = {}
    if path:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(AppConfig)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(payload)
    for f in fields(AppConfig):
        env_key = ENV_PREFIX + f.name.upper()
        if env_key in env:
            raw = env[env_key]
            if f.type in ("float",):
                values[f.name] = float(raw)
            elif f.type in ("int",):
                values[f.name] = int(raw)
            else:
                values[f.name] = raw
    return AppConfig(**values)
