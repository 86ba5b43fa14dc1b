"""Shared fakes and record factories for the test suite."""

from __future__ import annotations

import json
import re
import threading
import time

import pytest

from darijakit.corpus import Conversation, CorpusRecord, Provenance, TaskKind
from darijakit.digest import derive_rng
from darijakit.providers import GenerationParams


class FakeLID:
    """Scripted language identifier: exact-text table with a default."""

    def __init__(self, table: dict[str, tuple[str, float]] | None = None,
                 default: tuple[str, float] = ("eng", 0.99)):
        self.table = table or {}
        self.default = default
        self.calls = 0

    def top_k(self, text: str, k: int = 2):
        self.calls += 1
        tag, prob = self.table.get(text, self.default)
        second = ("zzz", min(prob, 1.0 - prob))
        return [(tag, prob), second][:k]


class FailingLID:
    def top_k(self, text: str, k: int = 2):
        raise RuntimeError("lid offline")


class InstrumentedProvider:
    """Thread-safe provider wrapper that tracks concurrency and calls.

    ``behavior(prompt, attempt)`` produces the reply or raises; ``attempt``
    counts calls for that exact prompt (1-based).
    """

    def __init__(self, behavior, delay: float = 0.0, provider_id: str = "fake"):
        self.behavior = behavior
        self.delay = delay
        self.provider_id = provider_id
        self._lock = threading.Lock()
        self._in_flight = 0
        self.peak_in_flight = 0
        self.calls: list[str] = []
        self._attempts: dict[str, int] = {}

    def complete(self, prompt: str, params: GenerationParams) -> str:
        with self._lock:
            self._in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
            self._attempts[prompt] = self._attempts.get(prompt, 0) + 1
            attempt = self._attempts[prompt]
            self.calls.append(prompt)
        try:
            if self.delay:
                time.sleep(self.delay)
            return self.behavior(prompt, attempt)
        finally:
            with self._lock:
                self._in_flight -= 1


def identity_tagged_reply(prompt: str, attempt: int = 1) -> str:
    """Echo the source block back as a tagged translation."""
    marker = "[Source Text]"
    idx = prompt.rfind(marker)
    source = prompt[idx + len(marker):].strip()
    return f"[[Original]]\n{source}\n[[Translation]]\n{source}"


_SUMMARY_A_RE = re.compile(r"\[Start of Summary A\]\n(.*?)\n\[Text of Summary A\]", re.DOTALL)
_SUMMARY_B_RE = re.compile(r"\[Start of Summary B\]\n(.*?)\n\[Text of Summary B\]", re.DOTALL)


def extract_summaries(prompt: str) -> tuple[str, str]:
    a = _SUMMARY_A_RE.search(prompt)
    b = _SUMMARY_B_RE.search(prompt)
    assert a and b, "prompt does not carry both summary slots"
    return a.group(1), b.group(1)


class QualityJudge:
    """Deterministic judge: prefers the summary with the higher score in
    its quality table, position-blind."""

    provider_id = "quality-judge"

    def __init__(self, quality: dict[str, int]):
        self.quality = quality

    def complete(self, prompt: str, params: GenerationParams) -> str:
        a, b = extract_summaries(prompt)
        return "A" if self.quality[a] >= self.quality[b] else "B"


class FunctionJudge:
    """Judge defined by an arbitrary deterministic function f(a, b) -> A|B."""

    provider_id = "function-judge"

    def __init__(self, fn):
        self.fn = fn

    def complete(self, prompt: str, params: GenerationParams) -> str:
        a, b = extract_summaries(prompt)
        return self.fn(a, b)


def seeded_table_judge(seed: int) -> FunctionJudge:
    """A random but deterministic verdict table over summary pairs."""

    def fn(a: str, b: str) -> str:
        return "A" if derive_rng(seed, "judge-table", a, b).random() < 0.5 else "B"

    return FunctionJudge(fn)


# --- record factories -------------------------------------------------------

def make_sentiment_record(i: int, source: str = "senti", label: str = "positive",
                          text: str | None = None) -> CorpusRecord:
    return CorpusRecord(
        task=TaskKind.SENTIMENT,
        payload={
            "text": text or f"جملة رقم {i}",
            "label": label,
            "labels_offered": ["negative", "positive"],
        },
        provenance=Provenance(source, i),
    )


def make_mc_record(i: int, gold: int, source: str = "mcq", passage: str | None = None) -> CorpusRecord:
    options = [f"خيار {i}-{j}" for j in range(4)]
    payload = {"question": f"سؤال {i}؟", "options": options, "answer_index": gold}
    task = TaskKind.MCQ_QA
    if passage is not None:
        payload["passage"] = passage
        task = TaskKind.MC_EXTRACTIVE_QA
    return CorpusRecord(task=task, payload=payload, provenance=Provenance(source, i))


def make_summarization_record(i: int, source: str = "summ") -> CorpusRecord:
    return CorpusRecord(
        task=TaskKind.SUMMARIZATION,
        payload={"document": f"مقال طويل {i} فيه تفاصيل بزاف", "summary": f"عنوان {i}"},
        provenance=Provenance(source, i),
    )


def conversation_from_texts(*texts: str) -> Conversation:
    dicts = []
    for i, text in enumerate(texts):
        dicts.append({"role": "user" if i % 2 == 0 else "assistant", "content": text})
    return Conversation.from_dicts(dicts)


def jsonl_lines(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


@pytest.fixture
def whitespace_tokenizer():
    from darijakit.segment import WhitespaceTokenizer

    return WhitespaceTokenizer()
