"""Acceptance suite: one test per release criterion, each printing a
pass/fail line. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import random
import time
from contextlib import contextmanager
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from fleetchat.config import data_path
from fleetchat.dialog import (
    Ambiguous,
    ContextBinding,
    DialogEngine,
    IntentSchema,
    NoContext,
    Resolved,
    ResponseKind,
    SessionState,
    missing_slots,
)
from fleetchat.entities import (
    EntityType,
    extract_entities,
    load_wordlist,
    redact,
)
from fleetchat.fleet import QueryTask, centralized_filter, fan_out
from fleetchat.intents import (
    DANGER_LEXICON,
    IntentLabel,
    cross_validate,
    evaluate,
)
from fleetchat.service import SessionManager, create_app

ET = EntityType


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}", flush=True)
        raise
    print(f"[PASS] {name}", flush=True)


def test_nlu_round_trip(tables):
    """Redaction round-trip reproduces every bundled utterance byte-for-byte."""
    with criterion("NLU round-trip over bundled corpus (100%, < 1 s)"):
        lines = load_wordlist(data_path("utterances.txt"))
        assert len(lines) >= 300
        started = time.perf_counter()
        for line in lines:
            restored = redact(line, extract_entities(line, tables)).restore()
            assert restored == line
        elapsed = time.perf_counter() - started
        assert elapsed < 1.0, f"round-trip took {elapsed:.2f}s"


def test_intent_quality_gate(corpus, model):
    """10-fold CV macro accuracy >= 0.90 and resubstitution accuracy = 1.0."""
    with criterion("Intent quality gate (CV >= 0.90, resubstitution = 1.0, < 10 s)"):
        started = time.perf_counter()
        resub = evaluate(model, corpus)
        assert resub.macro_accuracy == 1.0
        assert resub.micro_accuracy == 1.0
        cv = cross_validate(corpus, k=10)
        assert cv.macro_accuracy >= 0.90, f"CV macro accuracy {cv.macro_accuracy:.4f}"
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"evaluation took {elapsed:.2f}s"


def test_safety_gate(model, corpus):
    """No trigger-free utterance ever classifies as kill_process."""
    with criterion("Safety gate (1,000 trigger-free utterances, zero kills)"):
        triggers = DANGER_LEXICON[IntentLabel.KILL_PROCESS]
        vocabulary = sorted(
            {
                word
                for ex in corpus
                for word in ex.text.lower().split()
                if word not in triggers
            }
        )
        rng = random.Random(20260810)
        for _ in range(1000):
            utterance = " ".join(rng.choices(vocabulary, k=rng.randint(2, 12)))
            assert model.classify(utterance).chosen is not IntentLabel.KILL_PROCESS
        assert model.classify("search for a process").chosen is not IntentLabel.KILL_PROCESS


def test_slot_filling_oracle():
    """missing_slots equals a brute-force membership scan, 10,000 cases."""
    with criterion("Slot filling vs brute-force set difference (10,000 cases)"):
        rng = random.Random(777)
        types = list(ET)
        for _ in range(10_000):
            groups = tuple(
                frozenset(rng.sample(types, rng.randint(1, 3)))
                for _ in range(rng.randint(0, 4))
            )
            flat = {t for g in groups for t in g}
            schema = IntentSchema(
                label=IntentLabel.SEARCH_PROCESS,
                required=groups,
                optional=frozenset(t for t in rng.sample(types, 2) if t not in flat),
                dangerous=False,
                description="",
            )
            fills = {t: object() for t in rng.sample(types, rng.randint(0, 6))}
            brute = set()
            for group in groups:
                if not any(member in fills for member in group):
                    brute.add(group)
            assert missing_slots(schema, fills) == brute


def test_disambiguation_behavior(make_engine):
    """command.com asks a 2-way question; the hinted form skips the menu."""
    with criterion("Disambiguation (command.com 2-choice; hinted form dispatches)"):
        engine = make_engine()
        session = engine.new_session("acc-disamb")
        response = engine.handle_turn(session, "search for command.com").response
        assert response.kind is ResponseKind.DISAMBIGUATION
        assert len(response.choices) == 2
        assert session.state is SessionState.AWAITING_DISAMBIGUATION

        hinted_session = engine.new_session("acc-hinted")
        response = engine.handle_turn(hinted_session, "search for file command.com").response
        assert response.kind is ResponseKind.DISPATCH_ACK
        assert hinted_session.state is SessionState.DISPATCHED


def test_context_resolution(make_engine):
    """resolve_deictic: one match resolves, zero asks, two disambiguate."""
    with criterion("Context resolution (Resolved / NoContext / Ambiguous)"):
        engine = make_engine()
        h1 = "5d41402abc4b2a76b9719d911017c592"
        h2 = "2b99370daf5b210267708eb5208ef6b9"

        session = engine.new_session("ctx-1")
        engine.set_context(session, [ContextBinding(ET.FILE_HASH, h1, "alert 17")])
        assert engine.dialog.resolve_deictic(session, ET.FILE_HASH) == Resolved(h1)

        session = engine.new_session("ctx-0")
        assert isinstance(engine.dialog.resolve_deictic(session, ET.FILE_HASH), NoContext)

        session = engine.new_session("ctx-2")
        engine.set_context(
            session,
            [ContextBinding(ET.FILE_HASH, h1, "a"), ContextBinding(ET.FILE_HASH, h2, "b")],
        )
        result = engine.dialog.resolve_deictic(session, ET.FILE_HASH)
        assert result == Ambiguous((h1, h2))


def _random_tasks(manifest, shards, rng, count):
    """Well-formed tasks spanning every fleet intent, mixing hits and misses."""
    endpoints = manifest.hostnames
    real_hashes = [
        r.attributes["hash"]
        for s in shards[:3]
        for r in s.records[:30]
        if r.attributes.get("hash")
    ]
    domains = ["updates.vendor.net", "cdn.content.io", manifest.planted_domain, "nosuch.org"]
    names = ["chrome.exe", "svchost.exe", "miner.exe", "nothere.exe"]
    times = ["last 24 hours", "last 3 days", "today", "yesterday"]
    tasks = []
    for i in range(count):
        roll = rng.randrange(7)
        slots = {}
        target = None
        if roll == 0:
            intent = IntentLabel.SEARCH_FILE
            slots[ET.FILE_HASH] = rng.choice(
                [manifest.planted_hash, rng.choice(real_hashes), "f" * 32]
            )
        elif roll == 1:
            intent = IntentLabel.SEARCH_PROCESS
            slots[ET.PROCESS_NAME] = rng.choice(names)
            if rng.random() < 0.5:
                slots[ET.TIME_RANGE] = rng.choice(times)
            if rng.random() < 0.3:
                target = (rng.choice(endpoints),)
        elif roll == 2:
            intent = IntentLabel.SEARCH_NETWORK
            slots[ET.DOMAIN_NAME] = rng.choice(domains)
        elif roll == 3:
            intent = IntentLabel.HUNT_PERSISTENCE
            if rng.random() < 0.3:
                target = (rng.choice(endpoints),)
        elif roll == 4:
            intent = IntentLabel.PROCESS_SURVEY
            target = (rng.choice(endpoints),)
        elif roll == 5:
            intent = IntentLabel.PROCESS_LINEAGE
            slots[ET.PID] = str(rng.choice(manifest.lineage_pids + [999999]))
            target = (manifest.lineage_endpoint,)
        else:
            intent = IntentLabel.KILL_PROCESS
            slots[ET.PID] = str(rng.choice([manifest.kill_target_pid, 31337]))
            target = (manifest.kill_target_endpoint,)
        tasks.append(
            QueryTask(
                task_id=f"acc-{i}",
                intent=intent,
                slots=slots,
                target=target,
                issued_at=float(manifest.base_time),
            )
        )
    return tasks


def test_scatter_gather_equivalence(fleet42):
    """fan_out over seed-42 fleet equals the centralized filter, 100 tasks."""
    with criterion("Scatter-gather equivalence (100 tasks, seed-42 fleet, < 30 s)"):
        shards, manifest = fleet42
        rng = random.Random(42)
        started = time.perf_counter()
        saw_selective = 0
        for task in _random_tasks(manifest, shards, rng, 100):
            result = fan_out(task, shards)
            expected = centralized_filter(task, shards)
            assert list(result.records) == expected
            scanned = sum(
                len(s.records) for s in shards
                if task.targets(s) and result.statuses.get(s.endpoint_id) == "ok"
            )
            assert result.bytes_shipped <= result.bytes_local
            if len(result.records) < scanned:
                saw_selective += 1
                assert result.bytes_shipped < result.bytes_local
        assert saw_selective > 50
        elapsed = time.perf_counter() - started
        assert elapsed < 30.0, f"scatter-gather sweep took {elapsed:.2f}s"


def _walk_utterances(manifest, rng):
    pid = rng.choice([str(manifest.kill_target_pid), "400", "871"])
    endpoint = rng.choice(manifest.hostnames)
    h = rng.choice([manifest.planted_hash, "5d41402abc4b2a76b9719d911017c592"])
    pool = [
        f"kill pid {pid} on {endpoint}",
        f"kill pid {pid}",
        "terminate it",
        "yes",
        "no",
        "y",
        "n",
        "do it",
        "cancel",
        "maybe",
        f"find {h} everywhere",
        "search for a process",
        f"search for process chrome.exe on {endpoint}",
        "search for command.com",
        "1",
        "2",
        "9",
        "file command.com",
        pid,
        endpoint,
        "run a persistence hunt",
        f"run a process survey on {endpoint}",
        f"trace the parent chain of {pid} on {endpoint}",
        "what can you do",
        "zzqq plonk",
        f"whitelist the hash {h}",
        "create an investigation",
        "does this hash show up anywhere else in my network?",
    ]
    return rng.choice(pool)


def test_confirmation_safety_walk(make_engine):
    """10,000 random turns: kills only after confirm+yes; no is a fleet no-op."""
    with criterion("Confirmation safety (10,000-step random dialog walk)"):
        engine = make_engine()
        manifest = engine.manifest
        rng = random.Random(31337)
        session = engine.new_session("walk")
        declined_checks = 0
        for step in range(10_000):
            was_confirming = session.state is SessionState.AWAITING_CONFIRMATION
            calls_before = engine.fleet_calls
            text = _walk_utterances(manifest, rng)
            engine.handle_turn(session, text)
            if was_confirming and text.strip().lower() in ("no", "n", "cancel", "abort"):
                assert engine.fleet_calls == calls_before
                declined_checks += 1
        assert declined_checks > 20, "walk never exercised the decline path"

        transcript = session.transcript
        kill_dispatches = [
            i
            for i, event in enumerate(transcript)
            if event.get("event") == "dispatch" and event.get("intent") == "kill_process"
        ]
        assert kill_dispatches, "walk never dispatched a kill"
        affirmations = {"yes", "y", "confirm", "do it"}
        for i in kill_dispatches:
            user_turn = transcript[i - 1]
            confirm_turn = transcript[i - 2]
            assert user_turn.get("who") == "user"
            assert user_turn["text"].strip().lower() in affirmations
            assert confirm_turn.get("who") == "bot"
            assert confirm_turn.get("kind") == "confirmation"


def test_crash_consistency(make_engine, tmp_path):
    """Replaying persisted transcripts rebuilds identical session states."""
    with criterion("Crash consistency (100 random sessions replay identically)"):
        state_dir = str(tmp_path / "state")
        manager = SessionManager(make_engine(), state_dir)
        manifest = manager.engine.manifest
        rng = random.Random(808)

        expected = {}
        for _ in range(100):
            sid = manager.create_session()
            if rng.random() < 0.4:
                manager.update_context(
                    sid,
                    [ContextBinding(ET.FILE_HASH, manifest.planted_hash, "alert")],
                )
            for _ in range(rng.randint(2, 6)):
                manager.post_message(sid, _walk_utterances(manifest, rng))
            session = manager.get_session(sid)
            expected[sid] = (session.snapshot(), list(session.transcript))

        restarted = SessionManager(make_engine(), state_dir)
        for sid, (snapshot, transcript) in expected.items():
            session = restarted.get_session(sid)
            assert session.snapshot() == snapshot
            assert session.transcript == transcript


def test_engine_parity(make_engine, tmp_path):
    """REPL-style engine turns equal service turns for 50 golden transcripts."""
    with criterion("Engine parity (50 scripted transcripts)"):
        transcripts = sorted(
            (Path(__file__).parent / "fixtures" / "transcripts").glob("*.txt")
        )
        assert len(transcripts) == 50
        for path in transcripts:
            lines = [l for l in path.read_text().splitlines() if l.strip()]

            engine = make_engine()
            session = engine.new_session("repl")
            engine_side = []
            for line in lines:
                result = engine.handle_turn(session, line)
                engine_side.append(
                    (
                        result.response.kind.value,
                        result.response.text,
                        tuple(result.response.choices),
                        tuple(card.record_id for card in result.cards),
                    )
                )

            manager = SessionManager(make_engine(), str(tmp_path / f"p-{path.stem}"))
            service_side = []
            with TestClient(create_app(manager)) as client:
                sid = client.post("/sessions").json()["session_id"]
                for line in lines:
                    body = client.post(
                        f"/sessions/{sid}/messages", json={"text": line}
                    ).json()
                    service_side.append(
                        (
                            body["reply"]["kind"],
                            body["reply"]["text"],
                            tuple(body["reply"]["choices"]),
                            tuple(card["record_id"] for card in body["cards"]),
                        )
                    )
            assert engine_side == service_side, path.name
