"""Instruction-corpus translation: pre-filters, tagged prompts, bounded
concurrency, post-processing.

The pipeline mirrors a translate-with-quality-control workflow: drop
conversations with empty turns, drop translation-task instructions (their
translation would be degenerate), drop samples the language identifier is
not confident about, then send each conversation to a generation provider
as a tagged prompt and parse the tagged reply back into the messages
structure. Post-processing replaces untranslated boilerplate keywords and
drops outputs that did not come back in Arabic script.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Conversation, validate_conversation
from .digest import stable_digest
from .providers import GenerationParams, GenerationProvider, LanguageIdProvider

logger = logging.getLogger(__name__)

ORIGINAL_TAG = "[[Original]]"
TRANSLATION_TAG = "[[Translation]]"
SOURCE_TEXT_TAG = "[Source Text]"

# Case-insensitive substrings marking translation-task instructions. The
# spaces are part of the patterns.
TRANSLATION_TASK_PATTERNS = ("translate ", " translation ")


class TranslationParseError(Exception):
    pass


@dataclass
class FilterResult:
    kept: list[Conversation]
    dropped: list[tuple[Conversation, str]]
    retry: list[Conversation] = field(default_factory=list)

    @property
    def conserved_total(self) -> int:
        return len(self.kept) + len(self.dropped) + len(self.retry)


def filter_empty(convs: Sequence[Conversation]) -> FilterResult:
    """Drop conversations containing any turn with empty trimmed content."""
    result = FilterResult(kept=[], dropped=[])
    for conv in convs:
        empties = [i for i, m in enumerate(conv.messages) if not m.content.strip()]
        if empties:
            result.dropped.append((conv, f"empty content at turns {empties}"))
        else:
            result.kept.append(conv)
    return result


def filter_translation_tasks(convs: Sequence[Conversation]) -> FilterResult:
    """Drop conversations mentioning translation work, by substring."""
    result = FilterResult(kept=[], dropped=[])
    for conv in convs:
        hit = None
        for msg in conv.messages:
            content = msg.content.lower()
            for pattern in TRANSLATION_TASK_PATTERNS:
                if pattern in content:
                    hit = pattern
                    break
            if hit:
                break
        if hit:
            result.dropped.append((conv, f"matched {hit!r}"))
        else:
            result.kept.append(conv)
    return result


def _conv_text(conv: Conversation) -> str:
    return "\n".join(m.content for m in conv.messages)


def filter_language(
    convs: Sequence[Conversation],
    lid: LanguageIdProvider,
    expect: str,
    threshold: float = 0.80,
) -> FilterResult:
    """Keep conversations whose top predicted language is ``expect`` with
    confidence >= threshold, over the concatenated turns. Provider failures
    go to the retry bucket, never silently dropped."""
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    result = FilterResult(kept=[], dropped=[])
    for conv in convs:
        try:
            ranked = lid.top_k(_conv_text(conv), k=2)
        except Exception as exc:
            logger.warning("language id failed, queueing for retry: %s", exc)
            result.retry.append(conv)
            continue
        if not ranked:
            result.dropped.append((conv, "no language prediction"))
            continue
        tag, prob = ranked[0]
        if tag == expect and prob >= threshold:
            result.kept.append(conv)
        else:
            result.dropped.append((conv, f"top language {tag}@{prob:.2f}, wanted {expect}@>={threshold:.2f}"))
    return result


def postfilter_script(
    convs: Sequence[Conversation],
    lid: LanguageIdProvider,
    threshold: float = 0.80,
    arabic_tag: str = "ara",
) -> FilterResult:
    """Keep translations identified as Arabic-script text. Dialects written
    in Arabic script pass: the identifier does not separate them from
    standard Arabic."""
    return filter_language(convs, lid, expect=arabic_tag, threshold=threshold)


_guidelines: str | None = None


def default_guidelines() -> str:
    global _guidelines
    if _guidelines is None:
        _guidelines = (
            resources.files("darijakit.data").joinpath("translation_guidelines.txt").read_text("utf-8").strip()
        )
    return _guidelines


def build_translation_prompt(batch: Sequence[Conversation], guidelines: str | None = None) -> str:
    """Guideline block, then the source block: [Source Text] plus the
    conversation serialized as a JSON list of {role, content}."""
    if not batch:
        raise ValueError("batch must be non-empty")
    if guidelines is None:
        guidelines = default_guidelines()
    if not guidelines.strip():
        raise ValueError("guidelines are mandatory")
    if len(batch) == 1:
        payload = batch[0].to_dicts()
    else:
        payload = [conv.to_dicts() for conv in batch]
    serialized = json.dumps(payload, ensure_ascii=False, indent=1)
    return f"{guidelines.strip()}\n\n{SOURCE_TEXT_TAG}\n{serialized}"


_FENCE_RE = re.compile(r"^```[a-zA-Z]*\n(.*)\n```$", re.DOTALL)


def _strip_fences(text: str) -> str:
    match = _FENCE_RE.match(text.strip())
    return match.group(1) if match else text


@dataclass(frozen=True)
class ParsedTranslation:
    original: str
    translation: Conversation


def parse_tagged_output(raw: str) -> ParsedTranslation:
    """Extract the original and translation blocks from a tagged reply.

    The last [[Translation]] tag wins (providers occasionally echo tags
    inside the content). The translation block must parse back into a valid
    conversation.
    """
    t_idx = raw.rfind(TRANSLATION_TAG)
    if t_idx == -1:
        raise TranslationParseError(f"missing {TRANSLATION_TAG} tag")
    o_idx = raw.find(ORIGINAL_TAG)
    if o_idx == -1:
        raise TranslationParseError(f"missing {ORIGINAL_TAG} tag")
    original = raw[o_idx + len(ORIGINAL_TAG): t_idx].strip()
    block = _strip_fences(raw[t_idx + len(TRANSLATION_TAG):].strip())
    try:
        messages = json.loads(block)
    except json.JSONDecodeError as exc:
        raise TranslationParseError(f"translation block is not valid JSON: {exc}") from exc
    if not isinstance(messages, list):
        raise TranslationParseError("translation block must be a JSON list of messages")
    try:
        conversation = Conversation.from_dicts(messages)
    except (KeyError, TypeError, ValueError) as exc:
        raise TranslationParseError(f"translation block has malformed messages: {exc}") from exc
    report = validate_conversation(conversation)
    if not report.ok:
        raise TranslationParseError(f"translated conversation invalid: {sorted(report.codes())}")
    return ParsedTranslation(original=original, translation=conversation)


class JobStatus(str, Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


@dataclass
class TranslationJob:
    source: Conversation
    prompt: str
    job_id: str
    status: JobStatus = JobStatus.PENDING
    attempts: int = 0
    result: Conversation | None = None
    error: str | None = None


def conversation_job_id(conv: Conversation) -> str:
    return stable_digest(conv.to_dicts())


class CallLog:
    """Append-only JSONL log of provider calls and job results.

    One line per event: {"event": "call"|"result", "job_id", ...}. Crash
    safe (each line flushed); completed jobs can be recovered from "result"
    events for resume.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, entry: dict) -> None:
        line = json.dumps(entry, ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as f:
                f.write(line + "\n")
                f.flush()

    def events(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with self.path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def completed(self) -> dict[str, Conversation]:
        done: dict[str, Conversation] = {}
        for event in self.events():
            if event.get("event") == "result" and event.get("status") == "done":
                done[event["job_id"]] = Conversation.from_dicts(event["messages"])
        return done


def translate_corpus(
    convs: Sequence[Conversation],
    gen: GenerationProvider,
    max_in_flight: int = 25,
    max_retries: int = 3,
    *,
    params: GenerationParams | None = None,
    backoff_base: float = 0.5,
    call_log: CallLog | None = None,
    guidelines: str | None = None,
) -> tuple[list[TranslationJob], list[TranslationJob]]:
    """Translate every conversation; returns (translated, failed) jobs.

    At most ``max_in_flight`` provider calls are outstanding at any instant.
    A provider error or an unparseable reply consumes one attempt; attempts
    are capped at max_retries + 1 with exponential backoff between them.
    Output order follows input order regardless of completion order. With a
    call log, jobs already recorded as done are not re-sent on a rerun.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    params = params or GenerationParams(temperature=0.0)
    prior = call_log.completed() if call_log else {}

    jobs = []
    for conv in convs:
        jobs.append(
            TranslationJob(
                source=conv,
                prompt=build_translation_prompt([conv], guidelines=guidelines),
                job_id=conversation_job_id(conv),
            )
        )

    def run(job: TranslationJob) -> TranslationJob:
        if job.job_id in prior:
            job.status = JobStatus.DONE
            job.result = prior[job.job_id]
            return job
        last_error = ""
        while job.attempts < max_retries + 1:
            job.attempts += 1
            started = time.monotonic()
            status = "ok"
            try:
                raw = gen.complete(job.prompt, params)
            except Exception as exc:
                status = "error"
                last_error = f"provider error: {exc}"
                raw = None
            latency_ms = int((time.monotonic() - started) * 1000)
            if raw is not None:
                try:
                    parsed = parse_tagged_output(raw)
                except TranslationParseError as exc:
                    status = "parse_error"
                    last_error = str(exc)
                else:
                    if call_log:
                        call_log.append(
                            {"event": "call", "job_id": job.job_id, "attempt": job.attempts,
                             "latency_ms": latency_ms, "status": "ok", "provider_id": gen.provider_id}
                        )
                        call_log.append(
                            {"event": "result", "job_id": job.job_id, "status": "done",
                             "messages": parsed.translation.to_dicts()}
                        )
                    job.status = JobStatus.DONE
                    job.result = parsed.translation
                    return job
            if call_log:
                call_log.append(
                    {"event": "call", "job_id": job.job_id, "attempt": job.attempts,
                     "latency_ms": latency_ms, "status": status, "provider_id": gen.provider_id,
                     "error": last_error}
                )
            if backoff_base > 0 and job.attempts < max_retries + 1:
                time.sleep(backoff_base * (2 ** (job.attempts - 1)))
        job.status = JobStatus.FAILED
        job.error = last_error
        if call_log:
            call_log.append({"event": "result", "job_id": job.job_id, "status": "failed", "error": last_error})
        return job

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        finished = list(pool.map(run, jobs))

    translated = [j for j in finished if j.status is JobStatus.DONE]
    failed = [j for j in finished if j.status is JobStatus.FAILED]
    return translated, failed


_WORD_BOUNDARY = r"(?<![^\W\d_]){}(?![^\W\d_])"


@dataclass(frozen=True)
class KeywordMap:
    """Untranslated-keyword replacements, validated at construction.

    Source keywords are unique and non-empty; no replacement may contain a
    source keyword as a standalone token, which makes replace_keywords
    idempotent.
    """

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        seen = set()
        for src, repl in self.entries:
            if not src or not repl:
                raise ValueError("keyword map entries must be non-empty on both sides")
            if src in seen:
                raise ValueError(f"duplicate keyword {src!r}")
            seen.add(src)
        pattern = self._pattern()
        for _, repl in self.entries:
            if pattern.search(repl):
                raise ValueError(f"replacement {repl!r} contains a source keyword; map would not be idempotent")

    def _pattern(self) -> re.Pattern:
        ordered = sorted((src for src, _ in self.entries), key=len, reverse=True)
        alternation = "|".join(re.escape(src) for src in ordered)
        return re.compile(_WORD_BOUNDARY.format(f"({alternation})"))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "KeywordMap":
        return cls(entries=tuple(pairs))

    @classmethod
    def from_file(cls, path: str | Path) -> "KeywordMap":
        """Two-column tab-separated UTF-8 table: keyword<TAB>replacement."""
        pairs = []
        with Path(path).open("r", encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                src, _, repl = line.partition("\t")
                pairs.append((src, repl))
        return cls.from_pairs(pairs)


_default_keyword_map: KeywordMap | None = None


def default_keyword_map() -> KeywordMap:
    global _default_keyword_map
    if _default_keyword_map is None:
        text = resources.files("darijakit.data").joinpath("keyword_map.tsv").read_text("utf-8")
        pairs = []
        for line in text.splitlines():
            if line.strip() and not line.startswith("#"):
                src, _, repl = line.partition("\t")
                pairs.append((src, repl))
        _default_keyword_map = KeywordMap.from_pairs(pairs)
    return _default_keyword_map


def replace_keywords(text: str, keyword_map: KeywordMap) -> str:
    """Replace standalone keyword tokens (bounded by non-letters), longest
    keyword first, in a single left-to-right pass."""
    lookup = dict(keyword_map.entries)
    return keyword_map._pattern().sub(lambda m: lookup[m.group(1)], text)


def replace_keywords_in_conversation(conv: Conversation, keyword_map: KeywordMap) -> Conversation:
    from .corpus import Message

    return Conversation(
        messages=tuple(Message(m.role, replace_keywords(m.content, keyword_map)) for m in conv.messages)
    )
