import math
import random

import pytest

from fleetchat.config import data_path
from fleetchat.intents import (
    DANGER_LEXICON,
    TRAINABLE_LABELS,
    CorpusError,
    IntentLabel,
    IntentModel,
    LabeledExample,
    TrainingError,
    cross_validate,
    evaluate,
    load_corpus,
    train,
)

TRIGGERS = DANGER_LEXICON[IntentLabel.KILL_PROCESS]


def tiny_corpus():
    """Minimal corpus covering every trainable label (for error-path tests)."""
    rows = [
        (IntentLabel.SEARCH_PROCESS, "search for a process"),
        (IntentLabel.SEARCH_FILE, "find the file {FILE_NAME}"),
        (IntentLabel.SEARCH_NETWORK, "search connections to {DOMAIN_NAME}"),
        (IntentLabel.HUNT_PERSISTENCE, "run a persistence hunt"),
        (IntentLabel.PROCESS_LINEAGE, "trace lineage for pid {PID}"),
        (IntentLabel.PROCESS_SURVEY, "survey processes on {ENDPOINT_NAME}"),
        (IntentLabel.KILL_PROCESS, "kill pid {PID}"),
        (IntentLabel.WHITELIST_ALERT, "whitelist this alert"),
        (IntentLabel.CREATE_INVESTIGATION, "create an investigation"),
        (IntentLabel.EXPLAIN_FEATURE, "what can you do"),
    ]
    return [LabeledExample(label, text) for label, text in rows]


class TestCorpusLoading:
    def test_bundled_corpus_shape(self, corpus):
        assert len(corpus) >= 300
        counts = {}
        for ex in corpus:
            counts[ex.label] = counts.get(ex.label, 0) + 1
        for label in TRAINABLE_LABELS:
            assert counts.get(label, 0) >= 20, label

    def test_kill_examples_carry_trigger_verbs(self, corpus):
        for ex in corpus:
            if ex.label is IntentLabel.KILL_PROCESS:
                words = set(ex.text.lower().split())
                assert words & TRIGGERS, ex.text

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("search_file\tfind it\nnot a corpus line\n")
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(path)

    def test_no_intent_is_not_trainable(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("no_intent\tblah\n")
        with pytest.raises(CorpusError, match="never a training label"):
            load_corpus(path)


class TestTrain:
    def test_resubstitution_is_perfect(self, corpus, model):
        metrics = evaluate(model, corpus)
        assert metrics.macro_accuracy == 1.0
        assert metrics.micro_accuracy == 1.0

    def test_single_label_corpus_rejected(self):
        rows = [LabeledExample(IntentLabel.SEARCH_FILE, f"find file {i}") for i in range(5)]
        with pytest.raises(TrainingError, match="missing"):
            train(rows)

    def test_missing_trigger_verb_rejected(self):
        rows = tiny_corpus() + [
            LabeledExample(IntentLabel.KILL_PROCESS, "find {FILE_HASH} everywhere")
        ]
        with pytest.raises(CorpusError, match="trigger verb"):
            train(rows)

    def test_training_is_order_independent(self, corpus):
        shuffled = list(corpus)
        random.Random(3).shuffle(shuffled)
        a, b = train(corpus), train(shuffled)
        text = "search process data for this hash"
        assert a.classify(text).ranked == b.classify(text).ranked


class TestClassify:
    def test_search_for_a_process(self, model):
        pred = model.classify("search for a process")
        assert pred.chosen is IntentLabel.SEARCH_PROCESS
        assert pred.chosen is not IntentLabel.KILL_PROCESS

    def test_empty_input_falls_back(self, model):
        assert model.classify("").chosen is IntentLabel.NO_INTENT

    def test_terminate_phrasing(self, model):
        assert model.classify("terminate pid {PID}").chosen is IntentLabel.KILL_PROCESS

    def test_gibberish_falls_back(self, model):
        assert model.classify("zzqq plonk").chosen is IntentLabel.NO_INTENT

    def test_scores_normalize_to_one(self, model, corpus):
        for ex in corpus[::7]:
            pred = model.classify(ex.text)
            assert math.isclose(sum(c for _, c in pred.ranked), 1.0, abs_tol=1e-9)

    def test_deterministic(self, model):
        text = "does this hash show up anywhere else in my network?"
        assert model.classify(text) == model.classify(text)

    def test_threshold_monotonicity(self, corpus, model):
        """Raising tau never turns a no_intent into a concrete intent."""
        strict = IntentModel(
            alpha=model.alpha,
            tau=0.9,
            labels=model.labels,
            doc_counts=model.doc_counts,
            feature_table=model.feature_table,
        )
        probes = [ex.text for ex in corpus[::11]] + ["", "zzqq plonk", "the", "help"]
        for text in probes:
            relaxed_choice = model.classify(text).chosen
            strict_choice = strict.classify(text).chosen
            if relaxed_choice is IntentLabel.NO_INTENT:
                assert strict_choice is IntentLabel.NO_INTENT


class TestSafetyGate:
    def test_thousand_trigger_free_utterances_never_kill(self, model, corpus):
        rng = random.Random(99)
        vocabulary = sorted(
            {
                word
                for ex in corpus
                for word in ex.text.lower().split()
                if word not in TRIGGERS
            }
        )
        for _ in range(1000):
            words = rng.choices(vocabulary, k=rng.randint(3, 10))
            utterance = " ".join(words)
            assert model.classify(utterance).chosen is not IntentLabel.KILL_PROCESS

    def test_kill_shaped_phrasing_without_trigger(self, model):
        # Everything but the verb says kill; the gate must still refuse.
        pred = model.classify("pid {PID} on {ENDPOINT_NAME} right now")
        assert pred.chosen is not IntentLabel.KILL_PROCESS


class TestEvaluate:
    def test_cross_validation_gate(self, corpus):
        metrics = cross_validate(corpus, k=10)
        assert metrics.macro_accuracy >= 0.90

    def test_permuted_labels_score_at_chance(self, corpus, model):
        rng = random.Random(5)
        labels = [ex.label for ex in corpus]
        rng.shuffle(labels)
        permuted = [
            LabeledExample(label, ex.text) for label, ex in zip(labels, corpus)
        ]
        metrics = evaluate(model, permuted)
        chance = 1.0 / len(TRAINABLE_LABELS)
        assert metrics.micro_accuracy < 2.5 * chance

    def test_empty_heldout_rejected(self, model):
        with pytest.raises(ValueError):
            evaluate(model, [])

    def test_confusion_rows_sum_to_support(self, corpus, model):
        metrics = evaluate(model, corpus)
        for label, row in metrics.confusion.items():
            assert sum(row.values()) == metrics.support[label]


class TestModelPersistence:
    def test_save_load_round_trip(self, model, tmp_path, corpus):
        path = tmp_path / "model.json"
        model.save(path)
        reloaded = IntentModel.load(path)
        for ex in corpus[::13]:
            assert reloaded.classify(ex.text).ranked == model.classify(ex.text).ranked

    def test_saved_file_is_stable(self, model, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        model.save(a)
        model.save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_version_check(self, model, tmp_path):
        path = tmp_path / "model.json"
        model.save(path)
        payload = path.read_text().replace('"version": 1', '"version": 99')
        path.write_text(payload)
        with pytest.raises(ValueError, match="version"):
            IntentModel.load(path)
