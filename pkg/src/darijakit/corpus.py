"""Core data vocabulary: messages, conversations, records, provenance.

Value types are frozen dataclasses, immutable after construction and safe to
share across threads. Conversation validation *reports* problems instead of
raising, so dirty upstream corpora can flow through filter stages and be
counted rather than crash the run. Strictness is applied at serialization
time, where only valid instructions may be written.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator


class Role(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


class TaskKind(str, Enum):
    TRANSLATION = "translation"
    TRANSLITERATION = "transliteration"
    SENTIMENT = "sentiment"
    SUMMARIZATION = "summarization"
    OPEN_QA = "open_qa"
    MCQ_QA = "mcq_qa"
    EXTRACTIVE_QA = "extractive_qa"
    MC_EXTRACTIVE_QA = "mc_extractive_qa"
    CONTINUATION = "continuation"
    REPLY = "reply"
    SOCIAL_SUMMARIZE = "social_summarize"
    REPHRASE = "rephrase"
    EXPLAIN = "explain"
    SAFE_RESPONSE = "safe_response"
    STORY_COMPLETION = "story_completion"
    TRANSLATED_GENERIC = "translated_generic"
    HARDCODED = "hardcoded"


class Script(str, Enum):
    ARABIC = "arabic"
    LATIN = "latin"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


class FormatKind(str, Enum):
    ZERO_SHOT = "zero_shot"
    FEW_SHOT = "few_shot"
    MULTI_TURN = "multi_turn"


MC_TASKS = (TaskKind.MCQ_QA, TaskKind.MC_EXTRACTIVE_QA)

# Payload fields each task kind must carry, non-empty. Extra fields are fine.
REQUIRED_PAYLOAD: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.TRANSLATION: ("src_lang", "dst_lang", "src_text", "dst_text"),
    TaskKind.TRANSLITERATION: ("src_script", "dst_script", "src_text", "dst_text"),
    TaskKind.SENTIMENT: ("text", "label", "labels_offered"),
    TaskKind.SUMMARIZATION: ("document", "summary"),
    TaskKind.OPEN_QA: ("question", "answer"),
    TaskKind.MCQ_QA: ("question", "options", "answer_index"),
    TaskKind.EXTRACTIVE_QA: ("passage", "question", "answer"),
    TaskKind.MC_EXTRACTIVE_QA: ("passage", "question", "options", "answer_index"),
    TaskKind.CONTINUATION: ("post", "response"),
    TaskKind.REPLY: ("post", "response"),
    TaskKind.SOCIAL_SUMMARIZE: ("post", "response"),
    TaskKind.REPHRASE: ("post", "response"),
    TaskKind.EXPLAIN: ("post", "response"),
    TaskKind.SAFE_RESPONSE: ("post", "response"),
    TaskKind.STORY_COMPLETION: ("prompt_text", "completion"),
    TaskKind.TRANSLATED_GENERIC: ("messages",),
    TaskKind.HARDCODED: ("question", "answer"),
}


def normalize_text(text: str) -> str:
    """Unicode NFC. Applied at ingestion and nowhere else; spelling
    variation is data, not noise."""
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def to_dict(self, with_loss: bool = False) -> dict:
        d = {"role": self.role.value, "content": self.content}
        if with_loss:
            # Loss-mask convention: loss is computed on assistant turns only.
            d["loss"] = self.role is Role.ASSISTANT
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Message":
        return cls(role=Role(d["role"]), content=d["content"])


@dataclass(frozen=True)
class Conversation:
    messages: tuple[Message, ...]

    def __len__(self) -> int:
        return len(self.messages)

    def to_dicts(self, with_loss: bool = False) -> list[dict]:
        return [m.to_dict(with_loss=with_loss) for m in self.messages]

    @classmethod
    def from_dicts(cls, dicts: Iterable[dict]) -> "Conversation":
        return cls(messages=tuple(Message.from_dict(d) for d in dicts))

    @classmethod
    def exchange(cls, user: str, assistant: str) -> "Conversation":
        return cls(messages=(Message(Role.USER, user), Message(Role.ASSISTANT, assistant)))


@dataclass(frozen=True)
class Provenance:
    source_id: str
    original_index: int
    license_tag: str = ""

    def __post_init__(self):
        if not self.source_id:
            raise ValueError("provenance source_id must be non-empty")
        if self.original_index < 0:
            raise ValueError("provenance original_index must be >= 0")

    def key(self) -> tuple[str, int]:
        return (self.source_id, self.original_index)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "original_index": self.original_index,
            "license_tag": self.license_tag,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(d["source_id"], d["original_index"], d.get("license_tag", ""))


@dataclass(frozen=True)
class CorpusRecord:
    task: TaskKind
    payload: dict
    provenance: Provenance
    split: Split = Split.UNASSIGNED

    def with_split(self, split: Split) -> "CorpusRecord":
        return replace(self, split=split)


@dataclass(frozen=True)
class Violation:
    index: int  # turn index, or -1 for whole-conversation problems
    code: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


def validate_conversation(conv: Conversation) -> ValidationReport:
    """Report every violated conversation invariant. Never raises.

    Checked: non-empty trimmed content per turn, strict user/assistant
    alternation, user-first, assistant-last, even length >= 2.
    """
    violations: list[Violation] = []
    msgs = conv.messages
    if len(msgs) < 2:
        violations.append(Violation(-1, "too_short", f"{len(msgs)} turns, need >= 2"))
    if len(msgs) % 2 != 0:
        violations.append(Violation(-1, "odd_turn_count", f"{len(msgs)} turns"))
    for i, msg in enumerate(msgs):
        if not msg.content.strip():
            violations.append(Violation(i, "empty_content"))
        expected = Role.USER if i % 2 == 0 else Role.ASSISTANT
        if msg.role is not expected:
            code = "roles_must_alternate"
            if i == 0:
                code = "first_turn_not_user"
            violations.append(Violation(i, code, f"got {msg.role.value}"))
    if msgs and msgs[-1].role is not Role.ASSISTANT and len(msgs) % 2 == 0:
        violations.append(Violation(len(msgs) - 1, "last_turn_not_assistant"))
    return ValidationReport(tuple(violations))


def validate_record(record: CorpusRecord) -> list[str]:
    """Missing or empty required payload fields, by name."""
    problems = []
    for name in REQUIRED_PAYLOAD[record.task]:
        value = record.payload.get(name)
        if value is None:
            problems.append(f"missing field '{name}'")
        elif isinstance(value, str) and not value.strip():
            problems.append(f"empty field '{name}'")
        elif isinstance(value, (list, tuple)) and len(value) == 0:
            problems.append(f"empty field '{name}'")
    return problems


@dataclass(frozen=True)
class Instruction:
    """A conversation ready for SFT serialization."""

    conversation: Conversation
    task: TaskKind
    format_kind: FormatKind
    provenance: tuple[Provenance, ...]
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "messages": self.conversation.to_dicts(with_loss=True),
            "task": self.task.value,
            "format_kind": self.format_kind.value,
            "provenance": [p.to_dict() for p in self.provenance],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instruction":
        return cls(
            conversation=Conversation.from_dicts(d["messages"]),
            task=TaskKind(d["task"]),
            format_kind=FormatKind(d["format_kind"]),
            provenance=tuple(Provenance.from_dict(p) for p in d["provenance"]),
            meta=d.get("meta", {}),
        )


class SerializationError(Exception):
    """Raised when a record cannot be written; carries the record index."""

    def __init__(self, index: int, reason: str):
        self.index = index
        self.reason = reason
        super().__init__(f"record {index}: {reason}")


def serialize_records(records: Iterable[Instruction], sink: IO[bytes]) -> int:
    """Write one JSON object per line (UTF-8). Returns the count written.

    Assistant turns carry ``"loss": true``; user turns ``"loss": false``.
    Records failing conversation validation are refused.
    """
    count = 0
    for i, record in enumerate(records):
        report = validate_conversation(record.conversation)
        if not report.ok:
            raise SerializationError(i, f"invalid conversation: {sorted(report.codes())}")
        line = json.dumps(record.to_dict(), ensure_ascii=False)
        try:
            sink.write(line.encode("utf-8") + b"\n")
        except OSError as exc:
            raise SerializationError(i, f"write failed: {exc}") from exc
        count += 1
    return count


def parse_instruction_line(line: str) -> Instruction:
    return Instruction.from_dict(json.loads(line))


def save_instructions(records: Iterable[Instruction], path: str | Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        return serialize_records(records, f)


def load_instructions(path: str | Path) -> Iterator[Instruction]:
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield parse_instruction_line(line)


def duplicate_provenance_keys(records: Iterable[CorpusRecord]) -> list[tuple[str, int]]:
    """Keys (source_id, original_index) appearing more than once."""
    seen: set[tuple[str, int]] = set()
    dupes: list[tuple[str, int]] = []
    for rec in records:
        key = rec.provenance.key()
        if key in seen:
            dupes.append(key)
        seen.add(key)
    return dupes
