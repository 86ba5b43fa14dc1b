"""Source adapters: raw tables in, corpus records out.

Each adapter is pure per-row and accounts for every input opportunity:
``len(records) + skipped + len(rejects)`` always equals the opportunity
count. Skips are expected gaps (a parallel row missing one language);
rejects are structural violations and carry a reason for the reject log.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import CorpusRecord, Provenance, Split, TaskKind, normalize_text
from .digest import derive_rng

logger = logging.getLogger(__name__)

LANGUAGE_TAGS = frozenset({"darija_arabic", "darija_latin", "msa", "english", "french"})
SENTIMENT_LABELS = frozenset({"positive", "negative", "neutral", "mixed"})
TRANSLITERATION_PAIR = frozenset({"darija_arabic", "darija_latin"})


class QAKind(str, Enum):
    OPEN = "open"
    MCQ = "mcq"
    EXTRACTIVE = "extractive"
    MC_EXTRACTIVE = "mc_extractive"


QA_TASKS = {
    QAKind.OPEN: TaskKind.OPEN_QA,
    QAKind.MCQ: TaskKind.MCQ_QA,
    QAKind.EXTRACTIVE: TaskKind.EXTRACTIVE_QA,
    QAKind.MC_EXTRACTIVE: TaskKind.MC_EXTRACTIVE_QA,
}


@dataclass(frozen=True)
class ParallelRow:
    texts: dict  # language tag -> text
    split: Split = Split.UNASSIGNED


@dataclass(frozen=True)
class SentimentRow:
    text: str
    label: str
    split: Split = Split.UNASSIGNED


@dataclass(frozen=True)
class SummaryRow:
    document: str
    title: str
    split: Split = Split.UNASSIGNED


@dataclass(frozen=True)
class QARow:
    qa_kind: QAKind
    question: str
    passage: str | None = None
    options: tuple[str, ...] | None = None
    answer: str | None = None
    answer_index: int | None = None
    split: Split = Split.UNASSIGNED


@dataclass(frozen=True)
class Reject:
    provenance: dict
    reason: str


@dataclass
class IngestResult:
    records: list[CorpusRecord] = field(default_factory=list)
    skipped: int = 0
    rejects: list[Reject] = field(default_factory=list)
    opportunities: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def conserved(self) -> bool:
        return len(self.records) + self.skipped + len(self.rejects) == self.opportunities


def ingest_parallel(
    rows: Sequence[ParallelRow],
    directions: Sequence[tuple[str, str]],
    source_id: str,
    license_tag: str = "",
) -> IngestResult:
    """One record per (row, direction) with both sides present.

    The Arabic/Latin Darija pair becomes a transliteration record; every
    other pair is a translation record. Rows lacking a side for a direction
    are skipped and counted.
    """
    for src, dst in directions:
        for tag in (src, dst):
            if tag not in LANGUAGE_TAGS:
                raise ValueError(f"unknown language tag {tag!r}")
    result = IngestResult(opportunities=len(rows) * len(directions))
    for i, row in enumerate(rows):
        for src, dst in directions:
            src_text = (row.texts.get(src) or "").strip()
            dst_text = (row.texts.get(dst) or "").strip()
            if not src_text or not dst_text:
                result.skipped += 1
                continue
            if {src, dst} == TRANSLITERATION_PAIR:
                task = TaskKind.TRANSLITERATION
                payload = {
                    "src_script": "arabic" if src == "darija_arabic" else "latin",
                    "dst_script": "arabic" if dst == "darija_arabic" else "latin",
                    "src_text": normalize_text(src_text),
                    "dst_text": normalize_text(dst_text),
                }
            else:
                task = TaskKind.TRANSLATION
                payload = {
                    "src_lang": src,
                    "dst_lang": dst,
                    "src_text": normalize_text(src_text),
                    "dst_text": normalize_text(dst_text),
                }
            result.records.append(
                CorpusRecord(
                    task=task,
                    payload=payload,
                    provenance=Provenance(f"{source_id}:{src}->{dst}", i, license_tag),
                    split=row.split,
                )
            )
    return result


def ingest_sentiment(
    rows: Sequence[SentimentRow],
    allowed: Iterable[str],
    source_id: str,
    license_tag: str = "",
) -> IngestResult:
    """Keep rows whose label is in ``allowed``; drop the rest (counted).

    ``allowed`` must be a subset of {positive, negative, neutral}: mixed is
    never emitted. Unknown label strings are structural rejects.
    """
    allowed = set(allowed)
    if not allowed <= {"positive", "negative", "neutral"}:
        raise ValueError(f"allowed labels must be within positive/negative/neutral, got {sorted(allowed)}")
    offered = sorted(allowed)
    result = IngestResult(opportunities=len(rows))
    for i, row in enumerate(rows):
        label = row.label.strip().lower()
        if label not in SENTIMENT_LABELS:
            result.rejects.append(
                Reject({"source_id": source_id, "original_index": i}, f"unknown label {row.label!r}")
            )
            continue
        if label not in allowed:
            result.skipped += 1
            continue
        result.records.append(
            CorpusRecord(
                task=TaskKind.SENTIMENT,
                payload={
                    "text": normalize_text(row.text),
                    "label": label,
                    "labels_offered": offered,
                },
                provenance=Provenance(source_id, i, license_tag),
                split=row.split,
            )
        )
    return result


def ingest_summarization(
    rows: Sequence[SummaryRow | tuple[str, str]],
    source_id: str,
    license_tag: str = "",
) -> IngestResult:
    """Document/title pairs; the title is the summary. Empty side rejects."""
    result = IngestResult(opportunities=len(rows))
    lengths: list[int] = []
    for i, row in enumerate(rows):
        if isinstance(row, tuple):
            row = SummaryRow(document=row[0], title=row[1])
        if not row.document.strip() or not row.title.strip():
            result.rejects.append(
                Reject({"source_id": source_id, "original_index": i}, "empty document or title")
            )
            continue
        summary = normalize_text(row.title.strip())
        lengths.append(len(summary.split()))
        result.records.append(
            CorpusRecord(
                task=TaskKind.SUMMARIZATION,
                payload={"document": normalize_text(row.document.strip()), "summary": summary},
                provenance=Provenance(source_id, i, license_tag),
                split=row.split,
            )
        )
    if lengths:
        result.stats["mean_summary_words"] = sum(lengths) / len(lengths)
    return result


def ingest_qa(rows: Sequence[QARow], source_id: str, license_tag: str = "") -> IngestResult:
    """QA rows in four flavors; structural violations become rejects.

    Invariants: a passage is present iff the kind is extractive; options
    are present (exactly 4) iff the kind is multiple-choice; the gold index
    is within [0, 3].
    """
    result = IngestResult(opportunities=len(rows))
    for i, row in enumerate(rows):
        reason = _qa_problem(row)
        if reason:
            result.rejects.append(Reject({"source_id": source_id, "original_index": i}, reason))
            continue
        payload: dict = {"question": normalize_text(row.question.strip())}
        if row.passage is not None:
            payload["passage"] = normalize_text(row.passage.strip())
        if row.options is not None:
            payload["options"] = [normalize_text(o) for o in row.options]
            payload["answer_index"] = int(row.answer_index)  # type: ignore[arg-type]
        else:
            payload["answer"] = normalize_text((row.answer or "").strip())
        result.records.append(
            CorpusRecord(
                task=QA_TASKS[row.qa_kind],
                payload=payload,
                provenance=Provenance(source_id, i, license_tag),
                split=row.split,
            )
        )
    return result


def _qa_problem(row: QARow) -> str | None:
    needs_passage = row.qa_kind in (QAKind.EXTRACTIVE, QAKind.MC_EXTRACTIVE)
    needs_options = row.qa_kind in (QAKind.MCQ, QAKind.MC_EXTRACTIVE)
    if not row.question.strip():
        return "empty question"
    if needs_passage and not (row.passage or "").strip():
        return "missing passage"
    if not needs_passage and (row.passage or "").strip():
        return "unexpected passage"
    if needs_options:
        if row.options is None or len(row.options) != 4:
            got = 0 if row.options is None else len(row.options)
            return f"expected 4 options, got {got}"
        if any(not o.strip() for o in row.options):
            return "empty option text"
        if row.answer_index is None or not 0 <= int(row.answer_index) <= 3:
            return f"answer index {row.answer_index!r} out of range"
    else:
        if row.options is not None:
            return "unexpected options"
        if not (row.answer or "").strip():
            return "empty answer"
    return None


def split_train_test(
    records: Sequence[CorpusRecord], test_fraction: float, seed: int
) -> tuple[list[CorpusRecord], list[CorpusRecord]]:
    """Deterministic disjoint partition; round-half-up(test_fraction * N)
    of the unassigned records go to test. Records arriving with a
    source-provided split marker keep it."""
    if not records:
        raise ValueError("records must be non-empty")
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    pool_indices = [i for i, r in enumerate(records) if r.split is Split.UNASSIGNED]
    n_test = int(test_fraction * len(pool_indices) + 0.5)
    rng = derive_rng(seed, "train-test-split")
    shuffled = pool_indices[:]
    rng.shuffle(shuffled)
    test_indices = set(shuffled[:n_test])
    train: list[CorpusRecord] = []
    test: list[CorpusRecord] = []
    for i, rec in enumerate(records):
        if rec.split is Split.TEST or i in test_indices:
            test.append(rec.with_split(Split.TEST))
        else:
            train.append(rec.with_split(Split.TRAIN))
    return train, test


# --- table readers ---------------------------------------------------------

def read_table(path: str | Path, fmt: str) -> list[dict]:
    """Rows of a delimited or line-delimited source file as dicts."""
    path = Path(path)
    if fmt == "jsonl":
        rows = []
        with path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        return rows
    if fmt in ("csv", "tsv"):
        delimiter = "," if fmt == "csv" else "\t"
        with path.open("r", encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f, delimiter=delimiter))
    raise ValueError(f"unknown source format {fmt!r}")


def _row_split(raw: dict, split_column: str | None) -> Split:
    if split_column and raw.get(split_column) in ("train", "test"):
        return Split(raw[split_column])
    return Split.UNASSIGNED


def parallel_rows(raw_rows: Iterable[dict], column_map: dict, split_column: str | None = None) -> list[ParallelRow]:
    rows = []
    for raw in raw_rows:
        texts = {tag: raw.get(col) or "" for tag, col in column_map.items()}
        rows.append(ParallelRow(texts=texts, split=_row_split(raw, split_column)))
    return rows


def sentiment_rows(raw_rows: Iterable[dict], column_map: dict, split_column: str | None = None) -> list[SentimentRow]:
    return [
        SentimentRow(
            text=raw.get(column_map.get("text", "text")) or "",
            label=raw.get(column_map.get("label", "label")) or "",
            split=_row_split(raw, split_column),
        )
        for raw in raw_rows
    ]


def summary_rows(raw_rows: Iterable[dict], column_map: dict, split_column: str | None = None) -> list[SummaryRow]:
    return [
        SummaryRow(
            document=raw.get(column_map.get("document", "document")) or "",
            title=raw.get(column_map.get("title", "title")) or "",
            split=_row_split(raw, split_column),
        )
        for raw in raw_rows
    ]


def qa_rows(raw_rows: Iterable[dict], column_map: dict, split_column: str | None = None) -> list[QARow]:
    rows = []
    for raw in raw_rows:
        options = raw.get(column_map.get("options", "options"))
        rows.append(
            QARow(
                qa_kind=QAKind(raw.get(column_map.get("qa_kind", "qa_kind")) or "open"),
                question=raw.get(column_map.get("question", "question")) or "",
                passage=raw.get(column_map.get("passage", "passage")),
                options=tuple(options) if options is not None else None,
                answer=raw.get(column_map.get("answer", "answer")),
                answer_index=raw.get(column_map.get("answer_index", "answer_index")),
                split=_row_split(raw, split_column),
            )
        )
    return rows


def write_reject_log(rejects: Iterable[Reject], path: str | Path) -> int:
    """Line-delimited {provenance, reason} reject log."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as f:
        for reject in rejects:
            f.write(json.dumps({"provenance": reject.provenance, "reason": reject.reason}, ensure_ascii=False) + "\n")
            count += 1
    return count
