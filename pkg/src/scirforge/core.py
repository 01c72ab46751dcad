"""Domain types shared by every pipeline stage, plus corpus splitting and JSONL I/O.

All records are immutable value objects; construction validates the hard
invariants so anything loaded from disk is known-good downstream.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator


class PipelineError(Exception):
    """Base class for errors raised by this package."""


class RecordError(PipelineError):
    """A record violates its invariants or cannot be parsed."""


class ResponseParseError(PipelineError):
    """A model response did not match the expected format.

    Carries the raw response so failures can be inspected or re-prompted.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


# ---------------------------------------------------------------------------
# Enumerations
# ---------------------------------------------------------------------------


class SectionLabel(str, Enum):
    ABSTRACT_INTRO = "AbstractIntro"
    RELATED_WORK = "RelatedWork"
    METHOD = "Method"
    EXPERIMENT = "Experiment"
    CONCLUSION = "Conclusion"
    NONE = "None"


class Aspect(str, Enum):
    BACKGROUND = "Background"
    RESEARCH_OBJECTIVE = "ResearchObjective"
    METHODS = "Methods"
    CHALLENGES = "Challenges"
    DATASET = "Dataset"
    FINDINGS = "Findings"

    @property
    def display(self) -> str:
        return _ASPECT_DISPLAY[self]


# Canonical aspect order used for prompt blocks and reports.
ASPECT_ORDER: tuple[Aspect, ...] = (
    Aspect.BACKGROUND,
    Aspect.RESEARCH_OBJECTIVE,
    Aspect.METHODS,
    Aspect.CHALLENGES,
    Aspect.DATASET,
    Aspect.FINDINGS,
)

_ASPECT_DISPLAY = {
    Aspect.BACKGROUND: "Background",
    Aspect.RESEARCH_OBJECTIVE: "Research Objective",
    Aspect.METHODS: "Methods",
    Aspect.CHALLENGES: "Challenges",
    Aspect.DATASET: "Dataset",
    Aspect.FINDINGS: "Findings",
}


class AnswerForm(str, Enum):
    SHORT = "Short"
    LONG = "Long"


class QuestionType(str, Enum):
    """The 18 question categories, 5 short-answer and 13 long-answer."""

    VERIFICATION = "Verification"
    DISJUNCTIVE = "Disjunctive"
    CONCEPT_COMPLETION = "Concept Completion"
    FEATURE_SPECIFICATION = "Feature Specification"
    QUANTIFICATION = "Quantification"
    DEFINITION = "Definition"
    EXAMPLE = "Example"
    COMPARISON = "Comparison"
    INTERPRETATION = "Interpretation"
    CAUSAL_ANTECEDENT = "Causal Antecedent"
    CAUSAL_CONSEQUENCE = "Causal Consequence"
    GOAL_ORIENTATION = "Goal Orientation"
    INSTRUMENTAL_PROCEDURAL = "Instrumental/Procedural"
    ENABLEMENT = "Enablement"
    EXPECTATION = "Expectation"
    JUDGMENTAL = "Judgmental"
    ASSERTION = "Assertion"
    REQUEST_DIRECTIVE = "Request/Directive"


SHORT_TYPES: frozenset[QuestionType] = frozenset(
    {
        QuestionType.VERIFICATION,
        QuestionType.DISJUNCTIVE,
        QuestionType.CONCEPT_COMPLETION,
        QuestionType.FEATURE_SPECIFICATION,
        QuestionType.QUANTIFICATION,
    }
)

# Canonical listing order: the five short types, then the thirteen long ones.
QUESTION_TYPE_ORDER: tuple[QuestionType, ...] = tuple(QuestionType)


def answer_form(qtype: QuestionType) -> AnswerForm:
    """Short/Long grouping of a question type, used to pick evaluation metrics."""
    return AnswerForm.SHORT if qtype in SHORT_TYPES else AnswerForm.LONG


def _normalize_type_name(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


_TYPE_ALIASES: dict[str, QuestionType] = {
    _normalize_type_name(q.value): q for q in QuestionType
}
_TYPE_ALIASES.update(
    {
        "instrumentalorprocedural": QuestionType.INSTRUMENTAL_PROCEDURAL,
        "instrumentalprocedural": QuestionType.INSTRUMENTAL_PROCEDURAL,
        "procedural": QuestionType.INSTRUMENTAL_PROCEDURAL,
        "requestordirective": QuestionType.REQUEST_DIRECTIVE,
        "request": QuestionType.REQUEST_DIRECTIVE,
        "directive": QuestionType.REQUEST_DIRECTIVE,
        "causalantecedents": QuestionType.CAUSAL_ANTECEDENT,
        "causalconsequences": QuestionType.CAUSAL_CONSEQUENCE,
    }
)


def match_question_type(name: str) -> QuestionType | None:
    """Map a free-form type name to its canonical value, or None if unknown.

    Matching ignores case and every non-alphanumeric character, and accepts
    a few common spelling variants ("Instrumental or Procedural").
    """
    return _TYPE_ALIASES.get(_normalize_type_name(name))


class Provenance(str, Enum):
    WITH_PAPER = "WithPaper"
    METADATA_ONLY = "MetadataOnly"


class Decision(str, Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"


class CognitiveLevel(str, Enum):
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"
    C5 = "C5"
    C6 = "C6"


COGNITIVE_LEVELS: tuple[CognitiveLevel, ...] = tuple(CognitiveLevel)


def word_count(text: str) -> int:
    """Whitespace-token count."""
    return len(text.split())


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    title: str
    description: str = ""
    topics: tuple[str, ...] = ()
    linked_paper_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise RecordError("dataset id must be nonempty")
        if not self.title:
            raise RecordError(f"dataset {self.id}: title must be nonempty")
        if len(set(self.linked_paper_ids)) != len(self.linked_paper_ids):
            raise RecordError(f"dataset {self.id}: duplicate linked_paper_ids")
        object.__setattr__(self, "topics", tuple(self.topics))
        object.__setattr__(self, "linked_paper_ids", tuple(self.linked_paper_ids))


@dataclass(frozen=True)
class PaperRecord:
    id: str
    title: str
    segments: tuple[tuple[SectionLabel, str], ...] = ()

    def __post_init__(self):
        if not self.id:
            raise RecordError("paper id must be nonempty")
        segs = []
        for label, text in self.segments:
            label = SectionLabel(label)
            if not text:
                raise RecordError(f"paper {self.id}: empty segment text")
            segs.append((label, text))
        object.__setattr__(self, "segments", tuple(segs))

    def full_text(self) -> str:
        return "\n\n".join(text for _, text in self.segments)


@dataclass(frozen=True)
class AspectUnit:
    dataset_id: str
    paper_id: str
    aspect: Aspect
    text: str
    word_count: int = -1

    def __post_init__(self):
        object.__setattr__(self, "aspect", Aspect(self.aspect))
        if not self.text.strip():
            raise RecordError("aspect unit text must be nonempty")
        wc = word_count(self.text)
        if self.word_count < 0:
            object.__setattr__(self, "word_count", wc)
        elif self.word_count != wc:
            raise RecordError(
                f"aspect unit word_count {self.word_count} != token count {wc}"
            )


@dataclass(frozen=True)
class FilterVerdict:
    delta: float
    decision: Decision
    conf_with: float
    conf_without: float

    def __post_init__(self):
        object.__setattr__(self, "decision", Decision(self.decision))
        expected = Decision.ACCEPT if self.delta > 0 else Decision.REJECT
        if self.decision is not expected:
            raise RecordError(
                f"verdict decision {self.decision.value} inconsistent with delta {self.delta}"
            )


@dataclass(frozen=True)
class QAPair:
    id: str
    dataset_id: str
    qtype: QuestionType
    question: str
    answer: str
    provenance: Provenance = Provenance.WITH_PAPER
    verdict: FilterVerdict | None = None

    def __post_init__(self):
        object.__setattr__(self, "qtype", QuestionType(self.qtype))
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if not self.question.strip() or not self.answer.strip():
            raise RecordError(f"qa pair {self.id}: question and answer must be nonempty")

    def with_verdict(self, verdict: FilterVerdict) -> "QAPair":
        return replace(self, verdict=verdict)


# ---------------------------------------------------------------------------
# Corpus splitting
# ---------------------------------------------------------------------------


def split_sizes(total: int, ratios: tuple[int, int, int]) -> tuple[int, int, int]:
    """Largest-remainder apportionment of `total` into three ratio shares."""
    if sum(ratios) != 100:
        raise ValueError(f"split ratios must sum to 100, got {ratios}")
    quotas = [total * r / 100.0 for r in ratios]
    base = [int(q) for q in quotas]
    leftover = total - sum(base)
    # Hand the leftover units to the largest fractional remainders; ties go
    # to the earlier ratio so the result is order-stable.
    order = sorted(range(3), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return tuple(base)  # type: ignore[return-value]


def split_corpus(
    records: Iterable[DatasetRecord],
    ratios: tuple[int, int, int] = (80, 15, 5),
    seed: int = 0,
) -> tuple[set[str], set[str], set[str]]:
    """Partition dataset ids into three disjoint sets with ratio-proportional sizes.

    Deterministic: ids are sorted, then shuffled with the seeded RNG, so the
    split depends only on (ids, ratios, seed).
    """
    ids = sorted(r.id for r in records)
    if not ids:
        raise ValueError("cannot split an empty corpus")
    if len(set(ids)) != len(ids):
        raise RecordError("duplicate dataset ids in corpus")
    sizes = split_sizes(len(ids), tuple(ratios))  # type: ignore[arg-type]
    rng = random.Random(seed)
    rng.shuffle(ids)
    a, b, _ = sizes
    return set(ids[:a]), set(ids[a : a + b]), set(ids[a + b :])


# ---------------------------------------------------------------------------
# JSONL serialization
# ---------------------------------------------------------------------------


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if hasattr(value, "__dataclass_fields__"):
        return record_to_dict(value)
    return value


def record_to_dict(record: Any) -> dict[str, Any]:
    """Dataclass -> JSON-ready dict, preserving field order."""
    return {f.name: _plain(getattr(record, f.name)) for f in fields(record)}


def write_jsonl(path: Path, records: Iterable[Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as f:
        for r in records:
            d = record_to_dict(r) if hasattr(r, "__dataclass_fields__") else r
            f.write(json.dumps(d, ensure_ascii=False) + "\n")
    tmp.replace(path)


def read_jsonl(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (1-based line number, parsed object) for every nonblank line."""
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            yield lineno, json.loads(line)


def dataset_from_dict(d: dict[str, Any]) -> DatasetRecord:
    return DatasetRecord(
        id=d["id"],
        title=d["title"],
        description=d.get("description", ""),
        topics=tuple(d.get("topics", ())),
        linked_paper_ids=tuple(d.get("linked_paper_ids", ())),
    )


def paper_from_dict(d: dict[str, Any]) -> PaperRecord:
    return PaperRecord(
        id=d["id"],
        title=d.get("title", ""),
        segments=tuple((SectionLabel(label), text) for label, text in d.get("segments", ())),
    )


def aspect_from_dict(d: dict[str, Any]) -> AspectUnit:
    return AspectUnit(
        dataset_id=d["dataset_id"],
        paper_id=d["paper_id"],
        aspect=Aspect(d["aspect"]),
        text=d["text"],
        word_count=d.get("word_count", -1),
    )


def verdict_from_dict(d: dict[str, Any]) -> FilterVerdict:
    return FilterVerdict(
        delta=d["delta"],
        decision=Decision(d["decision"]),
        conf_with=d["conf_with"],
        conf_without=d["conf_without"],
    )


def qapair_from_dict(d: dict[str, Any]) -> QAPair:
    verdict = d.get("verdict")
    return QAPair(
        id=d["id"],
        dataset_id=d["dataset_id"],
        qtype=QuestionType(d["qtype"]),
        question=d["question"],
        answer=d["answer"],
        provenance=Provenance(d.get("provenance", Provenance.WITH_PAPER)),
        verdict=verdict_from_dict(verdict) if verdict else None,
    )


def load_datasets(path: Path) -> list[DatasetRecord]:
    out = [dataset_from_dict(d) for _, d in read_jsonl(path)]
    ids = [r.id for r in out]
    if len(set(ids)) != len(ids):
        raise RecordError(f"{path}: duplicate dataset ids")
    return out


def load_papers(path: Path) -> list[PaperRecord]:
    return [paper_from_dict(d) for _, d in read_jsonl(path)]


def load_aspects(path: Path) -> list[AspectUnit]:
    return [aspect_from_dict(d) for _, d in read_jsonl(path)]


def load_qapairs(path: Path) -> list[QAPair]:
    return [qapair_from_dict(d) for _, d in read_jsonl(path)]
