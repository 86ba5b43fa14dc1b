"""Token-budget story segmentation and prompt/completion splitting.

Both operations are text-conserving: concatenating the pieces reproduces the
input byte-for-byte. Cuts land on token boundaries supplied by a pluggable
tokenizer, and snap to line breaks when one is close enough, since a split
mid-sentence makes a poor completion target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Protocol, runtime_checkable

from .corpus import CorpusRecord, Provenance, TaskKind
from .digest import derive_rng


@runtime_checkable
class TokenizerProvider(Protocol):
    def count_tokens(self, text: str) -> int: ...

    def offsets(self, text: str) -> list[tuple[str, tuple[int, int]]]:
        """(token, (start, end)) character spans partitioning the text:
        contiguous, non-overlapping, first starts at 0, last ends at
        len(text). Whitespace belongs to the span of the preceding token."""
        ...


class WhitespaceTokenizer:
    """Tokens are maximal non-space runs; spans absorb trailing whitespace."""

    def count_tokens(self, text: str) -> int:
        return len(self.offsets(text))

    def offsets(self, text: str) -> list[tuple[str, tuple[int, int]]]:
        starts: list[int] = []
        in_token = False
        for i, ch in enumerate(text):
            if ch.isspace():
                in_token = False
            elif not in_token:
                starts.append(i)
                in_token = True
        if not starts:
            # whitespace-only input: one degenerate token covering everything
            return [(text, (0, len(text)))] if text else []
        spans = []
        bounds = [0] + starts[1:] + [len(text)]
        for k, start in enumerate(starts):
            lo, hi = bounds[k], bounds[k + 1]
            spans.append((text[start: min(hi, len(text))].rstrip(), (lo, hi)))
        return spans


@dataclass(frozen=True)
class Segment:
    text: str
    token_count: int
    origin: tuple[str, int]  # (story id, ordinal)


def _is_line_break(text: str, pos: int) -> bool:
    """True when cutting at ``pos`` splits right after a line break: the
    whitespace run ending at pos-1 contains a newline."""
    j = pos - 1
    while j >= 0 and text[j].isspace():
        if text[j] == "\n":
            return True
        j -= 1
    return False


def segment_story(
    text: str,
    tokenizer: TokenizerProvider,
    max_tokens: int = 2048,
    *,
    story_id: str = "story",
    slack: float = 0.05,
    break_window: float = 0.25,
) -> list[Segment]:
    """Cut a story into segments of roughly ``max_tokens`` tokens.

    A cut prefers the latest line break inside the final ``break_window``
    share of the token budget; the budget may stretch by ``slack`` to reach
    one past the boundary. With no line break in reach the cut is hard, at
    exactly ``max_tokens``. Conservation: ``"".join(s.text) == text``.
    """
    if not text:
        raise ValueError("text must be non-empty")
    if max_tokens < 32:
        raise ValueError(f"max_tokens must be >= 32, got {max_tokens}")
    spans = tokenizer.offsets(text)
    n = len(spans)

    def cut_pos(token_index: int) -> int:
        return spans[token_index][1][0] if token_index < n else len(text)

    segments: list[Segment] = []
    start_tok = 0
    start_pos = 0
    while n - start_tok > max_tokens:
        hard = start_tok + max_tokens
        lo = start_tok + int(max_tokens * (1 - break_window))
        hi = min(start_tok + int(max_tokens * (1 + slack)), n - 1)
        chosen = hard
        # latest break at or under budget wins; otherwise the earliest one
        # within the slack; otherwise a hard cut
        for b in range(min(hard, hi), lo - 1, -1):
            if _is_line_break(text, cut_pos(b)):
                chosen = b
                break
        else:
            for b in range(hard + 1, hi + 1):
                if _is_line_break(text, cut_pos(b)):
                    chosen = b
                    break
        end_pos = cut_pos(chosen)
        segments.append(
            Segment(text[start_pos:end_pos], chosen - start_tok, (story_id, len(segments)))
        )
        start_tok = chosen
        start_pos = end_pos
    segments.append(Segment(text[start_pos:], n - start_tok, (story_id, len(segments))))
    return segments


def split_completion(
    segment: Segment,
    tokenizer: TokenizerProvider,
    seed: int,
    *,
    fraction_range: tuple[float, float] = (0.25, 0.75),
    snap_window: float = 0.10,
) -> tuple[str, str]:
    """Split a segment into (prompt, completion) at a seeded random point.

    The split fraction is uniform over ``fraction_range`` of the tokens,
    snapped to the nearest line break within ``snap_window`` of the draw.
    Falls back to the raw token boundary, and for degenerate one-token
    segments to a midpoint character split; never raises.
    """
    text = segment.text
    rng = derive_rng(seed, "completion-split", *segment.origin)
    spans = tokenizer.offsets(text)
    n = len(spans)
    if n < 2:
        mid = max(1, len(text) // 2)
        return text[:mid], text[mid:]
    lo, hi = fraction_range
    target = round(rng.uniform(lo, hi) * n)
    target = min(max(target, 1), n - 1)
    window = int(snap_window * n)

    def cut_pos(token_index: int) -> int:
        return spans[token_index][1][0]

    chosen = target
    best_dist = None
    for b in range(max(1, target - window), min(n - 1, target + window) + 1):
        if _is_line_break(text, cut_pos(b)):
            dist = abs(b - target)
            if best_dist is None or dist < best_dist:
                best_dist = dist
                chosen = b
    pos = cut_pos(chosen)
    return text[:pos], text[pos:]


def stories_to_records(
    stories: Iterable[tuple[str, str]],
    tokenizer: TokenizerProvider,
    seed: int,
    source_id: str,
    max_tokens: int = 2048,
    license_tag: str = "",
):
    """Segment each (story_id, text) and split every segment into a story
    completion record. Returns an IngestResult: one opportunity per
    segment, with degenerate segments (empty prompt or completion after
    splitting) counted as skips."""
    from .ingest import IngestResult

    result = IngestResult()
    index = 0
    for story_id, text in stories:
        for seg in segment_story(text, tokenizer, max_tokens, story_id=story_id):
            result.opportunities += 1
            prompt, completion = split_completion(seg, tokenizer, seed)
            if not prompt.strip() or not completion.strip():
                result.skipped += 1
                continue
            result.records.append(
                CorpusRecord(
                    task=TaskKind.STORY_COMPLETION,
                    payload={
                        "prompt_text": prompt,
                        "completion": completion,
                        "story_id": seg.origin[0],
                        "ordinal": seg.origin[1],
                    },
                    provenance=Provenance(source_id, index, license_tag),
                )
            )
            index += 1
    return result
