"""Intent classification over redacted utterances.

A multinomial naive-Bayes-style model over unigram+bigram counts with
additive smoothing. Scores are softmax-normalized so they sum to one; the
top label is chosen only when its confidence clears the threshold AND, for
dangerous labels, the utterance literally contains one of that label's
trigger verbs. The trigger gate makes it structurally impossible for a
search phrasing to dispatch a kill.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .entities import RedactedUtterance, tokenize

MODEL_FORMAT_VERSION = 1


class IntentLabel(str, Enum):
    SEARCH_PROCESS = "search_process"
    SEARCH_FILE = "search_file"
    SEARCH_NETWORK = "search_network"
    HUNT_PERSISTENCE = "hunt_persistence"
    PROCESS_LINEAGE = "process_lineage"
    PROCESS_SURVEY = "process_survey"
    KILL_PROCESS = "kill_process"
    WHITELIST_ALERT = "whitelist_alert"
    CREATE_INVESTIGATION = "create_investigation"
    EXPLAIN_FEATURE = "explain_feature"
    NO_INTENT = "no_intent"


#: Labels the model trains on; NO_INTENT is only ever a fallback output.
TRAINABLE_LABELS: tuple[IntentLabel, ...] = tuple(
    label for label in IntentLabel if label is not IntentLabel.NO_INTENT
)

#: Trigger verbs required, per dangerous label, both in training utterances
#: and (as a hard runtime gate) in any utterance classified as that label.
DANGER_LEXICON: dict[IntentLabel, frozenset[str]] = {
    IntentLabel.KILL_PROCESS: frozenset({"kill", "terminate", "stop", "end"}),
}

DEFAULT_ALPHA = 1.0
DEFAULT_TAU = 0.5


class CorpusError(ValueError):
    """Raised for malformed or contract-violating corpus data."""


class TrainingError(ValueError):
    """Raised when a corpus cannot produce a valid model."""


@dataclass(frozen=True)
class LabeledExample:
    label: IntentLabel
    text: str


def load_corpus(path: Path | str) -> list[LabeledExample]:
    """Load a corpus file: one ``label<TAB>redacted text`` example per line."""
    examples = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise CorpusError(f"line {lineno}: expected 'label<TAB>text', got {line!r}")
        label_text, utterance = parts[0].strip(), parts[1].strip()
        try:
            label = IntentLabel(label_text)
        except ValueError:
            raise CorpusError(f"line {lineno}: unknown label {label_text!r}") from None
        if label is IntentLabel.NO_INTENT:
            raise CorpusError(f"line {lineno}: {label.value} is never a training label")
        examples.append(LabeledExample(label, utterance))
    return examples


def feature_counts(text: str) -> dict[str, int]:
    """Unigram and bigram counts over lowercased tokens of the redacted text."""
    words = [tok.text.lower() for tok in tokenize(text)]
    counts: dict[str, int] = {}
    for w in words:
        counts[w] = counts.get(w, 0) + 1
    for a, b in zip(words, words[1:]):
        bigram = f"{a} {b}"
        counts[bigram] = counts.get(bigram, 0) + 1
    return counts


def _utterance_words(text: str) -> set[str]:
    return {tok.text.lower() for tok in tokenize(text)}


@dataclass(frozen=True)
class IntentPrediction:
    ranked: tuple[tuple[IntentLabel, float], ...]
    chosen: IntentLabel

    @property
    def top(self) -> tuple[IntentLabel, float]:
        return self.ranked[0]


@dataclass
class IntentModel:
    """Immutable after training; classify() is deterministic and thread-safe."""

    alpha: float
    tau: float
    labels: tuple[IntentLabel, ...]
    doc_counts: dict[IntentLabel, int]
    feature_table: dict[IntentLabel, dict[str, int]]
    totals: dict[IntentLabel, int] = field(default_factory=dict)
    vocabulary: frozenset[str] = frozenset()
    danger_lexicon: dict[IntentLabel, frozenset[str]] = field(
        default_factory=lambda: dict(DANGER_LEXICON)
    )

    def __post_init__(self):
        # Canonical label order keeps float accumulation identical across
        # train/save/load, so persisted models classify bit-for-bit the same.
        self.labels = tuple(sorted(self.labels, key=lambda l: l.value))
        if not self.totals:
            self.totals = {
                label: sum(self.feature_table[label].values()) for label in self.labels
            }
        if not self.vocabulary:
            vocab: set[str] = set()
            for table in self.feature_table.values():
                vocab.update(table)
            self.vocabulary = frozenset(vocab)

    def _log_scores(self, counts: Mapping[str, int]) -> dict[IntentLabel, float]:
        total_docs = sum(self.doc_counts.values())
        vocab_size = len(self.vocabulary)
        scores = {}
        for label in self.labels:
            score = math.log(self.doc_counts[label] / total_docs)
            denom = self.totals[label] + self.alpha * vocab_size
            table = self.feature_table[label]
            for feat, n in counts.items():
                if feat not in self.vocabulary:
                    continue
                score += n * math.log((table.get(feat, 0) + self.alpha) / denom)
            scores[label] = score
        return scores

    def classify(self, utterance: Union[str, RedactedUtterance]) -> IntentPrediction:
        text = utterance.text if isinstance(utterance, RedactedUtterance) else utterance
        counts = feature_counts(text)
        log_scores = self._log_scores(counts)
        # Softmax over log scores; confidences sum to 1.
        peak = max(log_scores.values())
        exp_scores = {label: math.exp(s - peak) for label, s in log_scores.items()}
        z = sum(exp_scores.values())
        ranked = sorted(
            ((label, exp_scores[label] / z) for label in self.labels),
            key=lambda item: (-item[1], item[0].value),
        )
        top_label, top_conf = ranked[0]
        chosen = IntentLabel.NO_INTENT
        if top_conf >= self.tau and self._danger_gate(top_label, text):
            chosen = top_label
        return IntentPrediction(tuple(ranked), chosen)

    def _danger_gate(self, label: IntentLabel, text: str) -> bool:
        triggers = self.danger_lexicon.get(label)
        if not triggers:
            return True
        return bool(triggers & _utterance_words(text))

    # -- persistence ---------------------------------------------------

    def save(self, path: Path | str) -> None:
        payload = {
            "version": MODEL_FORMAT_VERSION,
            "alpha": self.alpha,
            "tau": self.tau,
            "labels": {
                label.value: {
                    "docs": self.doc_counts[label],
                    "features": dict(sorted(self.feature_table[label].items())),
                }
                for label in self.labels
            },
            "danger_lexicon": {
                label.value: sorted(words) for label, words in self.danger_lexicon.items()
            },
        }
        Path(path).write_text(
            json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: Path | str) -> "IntentModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {payload.get('version')!r}")
        labels = tuple(IntentLabel(name) for name in payload["labels"])
        return cls(
            alpha=payload["alpha"],
            tau=payload["tau"],
            labels=labels,
            doc_counts={IntentLabel(n): d["docs"] for n, d in payload["labels"].items()},
            feature_table={
                IntentLabel(n): dict(d["features"]) for n, d in payload["labels"].items()
            },
            danger_lexicon={
                IntentLabel(n): frozenset(words)
                for n, words in payload["danger_lexicon"].items()
            },
        )


def validate_corpus(corpus: Sequence[LabeledExample]) -> None:
    """Check corpus invariants shared by train() and the CLI."""
    present = {ex.label for ex in corpus}
    missing = [label.value for label in TRAINABLE_LABELS if label not in present]
    if missing:
        raise TrainingError(
            "every trainable label needs at least one utterance; missing: "
            + ", ".join(missing)
        )
    for ex in corpus:
        triggers = DANGER_LEXICON.get(ex.label)
        if triggers and not (triggers & _utterance_words(ex.text)):
            raise CorpusError(
                f"{ex.label.value} utterance lacks a trigger verb: {ex.text!r}"
            )


def train(
    corpus: Sequence[LabeledExample],
    alpha: float = DEFAULT_ALPHA,
    tau: float = DEFAULT_TAU,
) -> IntentModel:
    """Train the n-gram model. Order-independent: only counts matter."""
    validate_corpus(corpus)
    doc_counts = {label: 0 for label in TRAINABLE_LABELS}
    table: dict[IntentLabel, dict[str, int]] = {label: {} for label in TRAINABLE_LABELS}
    for ex in corpus:
        doc_counts[ex.label] += 1
        row = table[ex.label]
        for feat, n in feature_counts(ex.text).items():
            row[feat] = row.get(feat, 0) + n
    return IntentModel(
        alpha=alpha,
        tau=tau,
        labels=TRAINABLE_LABELS,
        doc_counts=doc_counts,
        feature_table=table,
    )


@dataclass
class EvalMetrics:
    support: dict[IntentLabel, int]
    confusion: dict[IntentLabel, dict[IntentLabel, int]]
    precision: dict[IntentLabel, float]
    recall: dict[IntentLabel, float]
    macro_accuracy: float
    micro_accuracy: float

    def format_confusion(self) -> str:
        labels = sorted(self.support, key=lambda l: l.value)
        preds = labels + [IntentLabel.NO_INTENT]
        width = max(len(l.value) for l in preds) + 1
        lines = [" " * width + "".join(p.value.rjust(width) for p in preds)]
        for true in labels:
            row = self.confusion.get(true, {})
            lines.append(
                true.value.rjust(width)
                + "".join(str(row.get(p, 0)).rjust(width) for p in preds)
            )
        return "\n".join(lines)


def evaluate(model: IntentModel, heldout: Sequence[LabeledExample]) -> EvalMetrics:
    """Score the model against labeled examples.

    Predictions use the full classify path (threshold and danger gate
    included), so a low-confidence prediction counts as no_intent and is
    simply wrong for its true label.
    """
    if not heldout:
        raise ValueError("heldout corpus is empty")
    confusion: dict[IntentLabel, dict[IntentLabel, int]] = {}
    support: dict[IntentLabel, int] = {}
    for ex in heldout:
        pred = model.classify(ex.text).chosen
        support[ex.label] = support.get(ex.label, 0) + 1
        row = confusion.setdefault(ex.label, {})
        row[pred] = row.get(pred, 0) + 1

    recall = {}
    for label, n in support.items():
        recall[label] = confusion[label].get(label, 0) / n
    precision = {}
    for label in support:
        predicted = sum(confusion[t].get(label, 0) for t in confusion)
        precision[label] = (confusion[label].get(label, 0) / predicted) if predicted else 0.0
    correct = sum(confusion[t].get(t, 0) for t in confusion)
    return EvalMetrics(
        support=support,
        confusion=confusion,
        precision=precision,
        recall=recall,
        macro_accuracy=sum(recall.values()) / len(recall),
        micro_accuracy=correct / len(heldout),
    )


def stratified_folds(
    corpus: Sequence[LabeledExample], k: int, seed: int = 0
) -> list[list[LabeledExample]]:
    """Deterministic stratified k-fold split (per-label shuffle, round-robin deal)."""
    import random

    rng = random.Random(seed)
    by_label: dict[IntentLabel, list[LabeledExample]] = {}
    for ex in corpus:
        by_label.setdefault(ex.label, []).append(ex)
    folds: list[list[LabeledExample]] = [[] for _ in range(k)]
    for label in sorted(by_label, key=lambda l: l.value):
        group = list(by_label[label])
        rng.shuffle(group)
        for i, ex in enumerate(group):
            folds[i % k].append(ex)
    return folds


def cross_validate(
    corpus: Sequence[LabeledExample],
    k: int = 10,
    alpha: float = DEFAULT_ALPHA,
    tau: float = DEFAULT_TAU,
    seed: int = 0,
) -> EvalMetrics:
    """k-fold cross-validation; predictions are pooled into one metric set."""
    folds = stratified_folds(corpus, k, seed)
    pooled: list[tuple[LabeledExample, IntentLabel]] = []
    for i, heldout in enumerate(folds):
        train_set = [ex for j, fold in enumerate(folds) if j != i for ex in fold]
        model = train(train_set, alpha=alpha, tau=tau)
        for ex in heldout:
            pooled.append((ex, model.classify(ex.text).chosen))

    confusion: dict[IntentLabel, dict[IntentLabel, int]] = {}
    support: dict[IntentLabel, int] = {}
    for ex, pred in pooled:
        support[ex.label] = support.get(ex.label, 0) + 1
        row = confusion.setdefault(ex.label, {})
        row[pred] = row.get(pred, 0) + 1
    recall = {label: confusion[label].get(label, 0) / n for label, n in support.items()}
    precision = {}
    for label in support:
        predicted = sum(confusion[t].get(label, 0) for t in confusion)
        precision[label] = (confusion[label].get(label, 0) / predicted) if predicted else 0.0
    correct = sum(confusion[t].get(t, 0) for t in confusion)
    return EvalMetrics(
        support=support,
        confusion=confusion,
        precision=precision,
        recall=recall,
        macro_accuracy=sum(recall.values()) / len(recall),
        micro_accuracy=correct / len(pooled),
    )
