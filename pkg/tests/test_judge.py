import pytest

from darijakit.judge import (
    JudgeError,
    JudgeOutcome,
    JudgePair,
    PairResult,
    VerdictParseError,
    build_judge_prompt,
    debiased_compare,
    parse_verdict,
    run_judging,
    truncate_for_judging,
    win_rate,
)
from darijakit.providers import ConstantProvider

from conftest import QualityJudge, jsonl_lines, seeded_table_judge


def make_pair(i=0, candidate="ملخص المرشح", reference="ملخص المرجع"):
    return JudgePair(pair_id=f"p{i}", passage=f"نص طويل {i}", candidate=candidate,
                     reference=reference)


# --- prompt -----------------------------------------------------------------

def test_prompt_slots_filled():
    prompt = build_judge_prompt("النص", "ملخص أ", "ملخص ب")
    assert "**Summary A**" in prompt and "**Summary B**" in prompt
    assert "ملخص أ" in prompt and "ملخص ب" in prompt
    assert "Wordness" in prompt and "Conciseness" in prompt and "Relevance" in prompt
    assert prompt.endswith("Your Response (Only A or B with no additional text):")


def test_prompt_swap_changes_only_slots():
    first, second = "ملخص-أول", "ملخص-ثاني"
    p1 = build_judge_prompt("النص", first, second)
    p2 = build_judge_prompt("النص", second, first)
    assert p1 != p2
    sentinel = "\x00"
    assert p1.replace(first, sentinel).replace(second, first).replace(sentinel, second) == p2


def test_prompt_rejects_empty_inputs():
    with pytest.raises(ValueError):
        build_judge_prompt("", "a", "b")


# --- verdict parsing ---------------------------------------------------------

def test_parse_verdict_accepted_forms():
    assert parse_verdict("A") == "A"
    assert parse_verdict("  B \n") == "B"
    assert parse_verdict("Better Summary: B") == "B"
    assert parse_verdict("Better Summary:A") == "A"


def test_parse_verdict_rejections():
    for raw in ("Both are good", "a", "C", "A because it is better", ""):
        with pytest.raises(VerdictParseError):
            parse_verdict(raw)


# --- truncation ---------------------------------------------------------------

def test_truncate_short_summary_unchanged():
    text, truncated = truncate_for_judging("كلمة " * 10)
    assert not truncated


def test_truncate_45_words_to_30():
    summary = " ".join(f"w{i}" for i in range(45))
    text, truncated = truncate_for_judging(summary, word_limit=30)
    assert truncated
    assert text.split() == [f"w{i}" for i in range(30)]


def test_truncate_limit_one():
    text, truncated = truncate_for_judging("a b c", word_limit=1)
    assert text == "a" and truncated
    with pytest.raises(ValueError):
        truncate_for_judging("a", word_limit=0)


# --- debiased comparison ------------------------------------------------------

def test_candidate_preferred_both_orders_is_win():
    judge = QualityJudge({"good": 2, "bad": 1, "نص طويل 0": 0})
    pair = make_pair(candidate="good", reference="bad")
    outcome = debiased_compare(pair, judge)
    assert outcome.result is PairResult.WIN
    assert (outcome.first_order, outcome.second_order) == ("A", "B")


def test_reference_preferred_both_orders_is_loss():
    judge = QualityJudge({"good": 2, "bad": 1})
    outcome = debiased_compare(make_pair(candidate="bad", reference="good"), judge)
    assert outcome.result is PairResult.LOSS


def test_position_biased_judge_discards():
    judge = ConstantProvider("A", provider_id="always-a")
    outcome = debiased_compare(make_pair(), judge)
    assert outcome.result is PairResult.DISCARDED
    assert "position" in outcome.reason


def test_unparseable_verdict_retried_then_discarded():
    calls = []

    class Babbler:
        provider_id = "babbler"

        def complete(self, prompt, params):
            calls.append(prompt)
            return "I think both summaries are lovely"

    outcome = debiased_compare(make_pair(), Babbler())
    assert outcome.result is PairResult.DISCARDED
    assert outcome.reason == "unparseable verdict"
    # two orders, each tried twice (one retry)
    assert len(calls) == 4


def test_exactly_two_calls_when_parseable():
    calls = []

    class CountingJudge:
        provider_id = "counting"

        def complete(self, prompt, params):
            calls.append(prompt)
            return "A"

    debiased_compare(make_pair(), CountingJudge())
    assert len(calls) == 2


# --- win rate ------------------------------------------------------------------

def outcomes_of(wins, losses, discards):
    out = []
    for i in range(wins):
        out.append(JudgeOutcome(f"w{i}", "A", "B", PairResult.WIN))
    for i in range(losses):
        out.append(JudgeOutcome(f"l{i}", "B", "A", PairResult.LOSS))
    for i in range(discards):
        out.append(JudgeOutcome(f"d{i}", "A", "A", PairResult.DISCARDED))
    return out


def test_win_rate_6_2_2_is_75():
    report = win_rate(outcomes_of(6, 2, 2))
    assert report.percent == pytest.approx(75.0)
    assert report.discards == 2


def test_win_rate_all_wins_and_all_discarded():
    assert win_rate(outcomes_of(5, 0, 0)).percent == 100.0
    with pytest.raises(JudgeError):
        win_rate(outcomes_of(0, 0, 4))


# --- orchestration --------------------------------------------------------------

def test_run_judging_order_audit_and_truncation(tmp_path):
    long_candidate = " ".join(f"c{i}" for i in range(45))
    pairs = [
        make_pair(0, candidate="good one", reference="bad one"),
        make_pair(1, candidate=long_candidate, reference="bad two"),
    ]
    quality = {"good one": 5, "bad one": 1, "bad two": 1,
               " ".join(f"c{i}" for i in range(30)): 9}
    judge = QualityJudge(quality)
    audit_path = tmp_path / "audit.jsonl"
    outcomes = run_judging(pairs, judge, audit_path=audit_path, max_in_flight=2)
    assert [o.pair_id for o in outcomes] == ["p0", "p1"]
    entries = jsonl_lines(audit_path)
    assert len(entries) == 2
    by_id = {e["pair_id"]: e for e in entries}
    assert by_id["p0"]["candidate_truncated"] is False
    assert by_id["p1"]["candidate_truncated"] is True
    assert by_id["p0"]["result"] == "win"
    assert all(len(e["prompt_digests"]) == 2 for e in entries)


def test_swap_soundness_on_table_judges():
    # relabeling candidate<->reference maps win rate r to 100 - r
    pairs = [make_pair(i, candidate=f"cand {i}", reference=f"ref {i}") for i in range(40)]
    judge = seeded_table_judge(99)
    outcomes = [debiased_compare(p, judge) for p in pairs]
    swapped = [JudgePair(p.pair_id, p.passage, p.reference, p.candidate) for p in pairs]
    outcomes_swapped = [debiased_compare(p, judge) for p in swapped]
    r = win_rate(outcomes)
    r_swapped = win_rate(outcomes_swapped)
    assert r.percent == pytest.approx(100.0 - r_swapped.percent)
    assert r.discards == r_swapped.discards
