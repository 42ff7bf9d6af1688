import pytest

from fleetchat.config import AppConfig, data_path
from fleetchat.dialog import SchemaRegistry
from fleetchat.engine import ChatEngine
from fleetchat.entities import EntityTables, SynonymTable
from fleetchat.fleet import Blocklist
from fleetchat.fleetgen import generate_fleet
from fleetchat.intents import load_corpus, train

USERS = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"]
ENDPOINTS = [f"box-{i}" for i in range(1, 11)]


@pytest.fixture(scope="session")
def synonyms():
    return SynonymTable.from_file(data_path("synonyms.txt"))


@pytest.fixture(scope="session")
def tables(synonyms):
    return EntityTables.load(
        data_path("tlds.txt"),
        data_path("extensions.txt"),
        endpoints=ENDPOINTS,
        users=USERS,
        synonyms=synonyms,
    )


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(data_path("corpus.tsv"))


@pytest.fixture(scope="session")
def model(corpus):
    return train(corpus)


@pytest.fixture(scope="session")
def registry():
    return SchemaRegistry.from_file(data_path("intent_schemas.json"))


@pytest.fixture(scope="session")
def fleet42():
    """The acceptance fleet: seed 42, 10 endpoints x 1000 records."""
    return generate_fleet(42, 10, 1000)


@pytest.fixture(scope="session")
def small_fleet():
    return generate_fleet(42, 10, 100)


@pytest.fixture(scope="session")
def engine_parts(tables, model, registry, small_fleet):
    shards, manifest = small_fleet
    blocklist = Blocklist(
        hashes=frozenset(h for h in manifest.blocklist if "." not in h),
        domains=frozenset(d for d in manifest.blocklist if "." in d),
    )
    return {
        "tables": tables,
        "model": model,
        "registry": registry,
        "shards": shards,
        "manifest": manifest,
        "blocklist": blocklist,
    }


@pytest.fixture
def make_engine(engine_parts):
    """Cheap per-test engines over shared immutable parts, clock pinned to
    the fleet's base time so time-range queries are reproducible."""

    def build(**overrides) -> ChatEngine:
        base_time = engine_parts["manifest"].base_time
        kwargs = dict(
            tables=engine_parts["tables"],
            model=engine_parts["model"],
            registry=engine_parts["registry"],
            shards=engine_parts["shards"],
            manifest=engine_parts["manifest"],
            blocklist=engine_parts["blocklist"],
            clock=lambda: float(base_time),
        )
        kwargs.update(overrides)
        return ChatEngine(**kwargs)

    return build
