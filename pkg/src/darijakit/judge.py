"""Pairwise summary judging with position-swap debiasing.

Each (candidate, reference) pair is asked twice, once in each presentation
order. The candidate wins only when chosen in both orders, loses only when
rejected in both, and the pair is discarded when flipping positions flips
the verdict. A position-biased judge therefore produces discards, not wins.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

from .digest import text_digest
from .providers import GenerationParams, GenerationProvider
from .templates import render_pattern

logger = logging.getLogger(__name__)


class JudgeError(Exception):
    pass


class VerdictParseError(Exception):
    pass


@dataclass(frozen=True)
class JudgePair:
    pair_id: str
    passage: str
    candidate: str
    reference: str

    def __post_init__(self):
        for name in ("pair_id", "passage", "candidate", "reference"):
            if not getattr(self, name).strip():
                raise ValueError(f"judge pair field {name!r} must be non-empty")


class PairResult(str, Enum):
    WIN = "win"
    LOSS = "loss"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class JudgeOutcome:
    pair_id: str
    first_order: str | None  # verdict with candidate shown as A
    second_order: str | None  # verdict with candidate shown as B
    result: PairResult
    reason: str = ""


_prompt_template: str | None = None


def default_judge_template() -> str:
    global _prompt_template
    if _prompt_template is None:
        _prompt_template = (
            resources.files("darijakit.data").joinpath("judge_prompt.txt").read_text("utf-8")
        )
    return _prompt_template


def build_judge_prompt(passage: str, summary_a: str, summary_b: str, template: str | None = None) -> str:
    """The pairwise comparison prompt: three criteria (wordness,
    conciseness, relevance), both summaries, and a strict answer-only
    output format."""
    for name, value in (("passage", passage), ("summary_a", summary_a), ("summary_b", summary_b)):
        if not value.strip():
            raise ValueError(f"{name} must be non-empty")
    if template is None:
        template = default_judge_template()
    return render_pattern(template, {"passage": passage, "summary_a": summary_a, "summary_b": summary_b}).strip()


_VERDICT_RE = re.compile(r"^\s*(?:Better Summary:\s*)?([AB])\s*$")


def parse_verdict(raw: str) -> str:
    """Accepts "A"/"B", optionally wrapped in whitespace or prefixed with
    the literal "Better Summary:". Anything else is unparseable."""
    match = _VERDICT_RE.match(raw)
    if not match:
        raise VerdictParseError(f"unparseable verdict: {raw[:80]!r}")
    return match.group(1)


def truncate_for_judging(summary: str, word_limit: int = 30) -> tuple[str, bool]:
    """Whitespace-word truncation to the judging word limit; the flag says
    whether anything was cut (for the audit log)."""
    if word_limit < 1:
        raise ValueError("word_limit must be >= 1")
    words = summary.split()
    if len(words) <= word_limit:
        return summary, False
    return " ".join(words[:word_limit]), True


def debiased_compare(
    pair: JudgePair,
    judge: GenerationProvider,
    *,
    params: GenerationParams | None = None,
    template: str | None = None,
    retries: int = 1,
) -> JudgeOutcome:
    """Two judge calls per pair, positions swapped between them.

    An unparseable verdict is retried once, then the pair is discarded with
    a reason. Raw verdicts are retained for the audit trail.
    """
    params = params or GenerationParams(temperature=0.0)

    def ask(summary_a: str, summary_b: str) -> str | None:
        prompt = build_judge_prompt(pair.passage, summary_a, summary_b, template=template)
        for attempt in range(retries + 1):
            raw = judge.complete(prompt, params)
            try:
                return parse_verdict(raw)
            except VerdictParseError as exc:
                logger.warning("pair %s attempt %d: %s", pair.pair_id, attempt + 1, exc)
        return None

    first = ask(pair.candidate, pair.reference)
    second = ask(pair.reference, pair.candidate)
    if first is None or second is None:
        return JudgeOutcome(pair.pair_id, first, second, PairResult.DISCARDED, reason="unparseable verdict")
    chose_candidate_first = first == "A"
    chose_candidate_second = second == "B"
    if chose_candidate_first and chose_candidate_second:
        result = PairResult.WIN
    elif not chose_candidate_first and not chose_candidate_second:
        result = PairResult.LOSS
    else:
        return JudgeOutcome(pair.pair_id, first, second, PairResult.DISCARDED,
                            reason="position swap changed the verdict")
    return JudgeOutcome(pair.pair_id, first, second, result)


@dataclass(frozen=True)
class WinRateReport:
    percent: float
    wins: int
    losses: int
    discards: int

    def to_dict(self) -> dict:
        return {
            "win_rate_percent": round(self.percent, 4),
            "wins": self.wins,
            "losses": self.losses,
            "discards": self.discards,
            "denominator": "non-discarded pairs",
        }


def win_rate(outcomes: Sequence[JudgeOutcome]) -> WinRateReport:
    """100 * wins / (wins + losses); discarded pairs are excluded from the
    denominator and reported alongside."""
    wins = sum(1 for o in outcomes if o.result is PairResult.WIN)
    losses = sum(1 for o in outcomes if o.result is PairResult.LOSS)
    discards = sum(1 for o in outcomes if o.result is PairResult.DISCARDED)
    if wins + losses == 0:
        raise JudgeError("win rate undefined: every pair was discarded")
    return WinRateReport(100.0 * wins / (wins + losses), wins, losses, discards)


def run_judging(
    pairs: Sequence[JudgePair],
    judge: GenerationProvider,
    *,
    max_in_flight: int = 8,
    word_limit: int = 30,
    audit_path: str | Path | None = None,
    template: str | None = None,
) -> list[JudgeOutcome]:
    """Judge all pairs under bounded parallelism; outcomes in input order.

    Candidates are defensively truncated to the word limit before judging.
    The audit log gets one record per pair: prompt digests, raw verdicts,
    truncation flag, outcome.
    """
    audit_lock = threading.Lock()
    audit_file = None
    if audit_path is not None:
        audit_path = Path(audit_path)
        audit_path.parent.mkdir(parents=True, exist_ok=True)
        audit_file = audit_path.open("w", encoding="utf-8")

    def work(pair: JudgePair) -> JudgeOutcome:
        candidate, truncated = truncate_for_judging(pair.candidate, word_limit)
        judged = JudgePair(pair.pair_id, pair.passage, candidate, pair.reference)
        outcome = debiased_compare(judged, judge, template=template)
        if audit_file is not None:
            entry = {
                "pair_id": pair.pair_id,
                "prompt_digests": [
                    text_digest(build_judge_prompt(judged.passage, judged.candidate, judged.reference, template=template)),
                    text_digest(build_judge_prompt(judged.passage, judged.reference, judged.candidate, template=template)),
                ],
                "verdicts": [outcome.first_order, outcome.second_order],
                "candidate_truncated": truncated,
                "result": outcome.result.value,
                "reason": outcome.reason,
            }
            with audit_lock:
                audit_file.write(json.dumps(entry, ensure_ascii=False) + "\n")
                audit_file.flush()
        return outcome

    try:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            outcomes = list(pool.map(work, pairs))
    finally:
        if audit_file is not None:
            audit_file.close()
    return outcomes
