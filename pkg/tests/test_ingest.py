import pytest

from darijakit.corpus import Split, TaskKind
from darijakit.ingest import (
    ParallelRow,
    QAKind,
    QARow,
    SentimentRow,
    SummaryRow,
    ingest_parallel,
    ingest_qa,
    ingest_sentiment,
    ingest_summarization,
    split_train_test,
)

from conftest import make_sentiment_record

SIX_DIRECTIONS = [
    ("darija_arabic", "english"), ("english", "darija_arabic"),
    ("darija_arabic", "french"), ("french", "darija_arabic"),
    ("darija_arabic", "msa"), ("msa", "darija_arabic"),
]

FULL_ROW = ParallelRow(texts={
    "darija_arabic": "كيداير؟",
    "darija_latin": "kidayr?",
    "msa": "كيف حالك؟",
    "english": "How are you?",
    "french": "Comment vas-tu ?",
})


def test_full_quintuple_yields_six_translation_records():
    result = ingest_parallel([FULL_ROW], SIX_DIRECTIONS, "doda")
    assert len(result.records) == 6
    assert result.skipped == 0
    assert result.conserved
    assert all(r.task is TaskKind.TRANSLATION for r in result.records)


def test_transliteration_directions_yield_two_records():
    directions = [("darija_arabic", "darija_latin"), ("darija_latin", "darija_arabic")]
    result = ingest_parallel([FULL_ROW], directions, "doda")
    assert len(result.records) == 2
    assert all(r.task is TaskKind.TRANSLITERATION for r in result.records)
    scripts = {(r.payload["src_script"], r.payload["dst_script"]) for r in result.records}
    assert scripts == {("arabic", "latin"), ("latin", "arabic")}


def test_missing_language_direction_is_skipped_and_counted():
    row = ParallelRow(texts={"darija_arabic": "سلام", "english": "hello"})
    result = ingest_parallel([row], SIX_DIRECTIONS, "doda")
    assert len(result.records) == 2  # both English directions
    assert result.skipped == 4  # french and msa directions, both ways
    assert result.conserved


def test_unknown_language_tag_is_a_configuration_error():
    with pytest.raises(ValueError, match="unknown language tag"):
        ingest_parallel([FULL_ROW], [("darija_arabic", "spanish")], "doda")


def test_parallel_provenance_unique_per_direction():
    result = ingest_parallel([FULL_ROW, FULL_ROW], SIX_DIRECTIONS, "doda")
    keys = {r.provenance.key() for r in result.records}
    assert len(keys) == len(result.records) == 12


def test_sentiment_drop_counts():
    rows = [SentimentRow(f"t{i}", "positive") for i in range(95)]
    rows += [SentimentRow(f"m{i}", "mixed") for i in range(5)]
    result = ingest_sentiment(rows, {"positive", "negative", "neutral"}, "mac")
    assert len(result.records) == 95
    assert result.skipped == 5
    assert result.conserved


def test_sentiment_mac_scale_counts():
    # 18,000 rows of which 643 are mixed -> 17,357 records
    rows = [SentimentRow(f"t{i}", "positive" if i % 3 else "neutral") for i in range(17357)]
    rows += [SentimentRow(f"m{i}", "mixed") for i in range(643)]
    result = ingest_sentiment(rows, {"positive", "negative", "neutral"}, "mac")
    assert len(result.records) == 17357
    assert result.skipped == 643


def test_sentiment_respects_allowed_set():
    rows = [SentimentRow("a", "positive"), SentimentRow("b", "neutral"), SentimentRow("c", "negative")]
    result = ingest_sentiment(rows, {"positive", "negative"}, "myc")
    labels = {r.payload["label"] for r in result.records}
    assert labels == {"positive", "negative"}
    assert result.skipped == 1
    assert all(r.payload["labels_offered"] == ["negative", "positive"] for r in result.records)


def test_sentiment_invalid_allowed_set():
    with pytest.raises(ValueError):
        ingest_sentiment([], {"positive", "mixed"}, "mac")


def test_sentiment_unknown_label_rejected():
    result = ingest_sentiment([SentimentRow("x", "banana")], {"positive"}, "mac")
    assert len(result.rejects) == 1
    assert result.conserved


def test_summarization_happy_path_and_reject():
    ok = SummaryRow("مقال طويل على الطقس", "الطقس اليوم")
    empty = SummaryRow("doc", "")
    result = ingest_summarization([ok, empty], "marsum")
    assert len(result.records) == 1
    assert result.records[0].payload["summary"] == "الطقس اليوم"
    assert len(result.rejects) == 1
    assert "empty" in result.rejects[0].reason


def test_summarization_reports_mean_summary_words():
    rows = [SummaryRow("doc one", "a b c"), SummaryRow("doc two", "a b c d e")]
    result = ingest_summarization(rows, "marsum")
    assert result.stats["mean_summary_words"] == pytest.approx(4.0)


def test_qa_kinds_map_to_tasks():
    rows = [
        QARow(QAKind.OPEN, "شكون؟", answer="هو"),
        QARow(QAKind.MCQ, "سؤال؟", options=("a", "b", "c", "d"), answer_index=2),
        QARow(QAKind.EXTRACTIVE, "فين؟", passage="النص", answer="هنا"),
        QARow(QAKind.MC_EXTRACTIVE, "علاش؟", passage="النص", options=("a", "b", "c", "d"), answer_index=0),
    ]
    result = ingest_qa(rows, "mwqa")
    kinds = [r.task for r in result.records]
    assert kinds == [TaskKind.OPEN_QA, TaskKind.MCQ_QA, TaskKind.EXTRACTIVE_QA, TaskKind.MC_EXTRACTIVE_QA]
    mc = result.records[1]
    assert mc.payload["options"] == ["a", "b", "c", "d"]
    assert mc.payload["answer_index"] == 2


def test_qa_three_options_rejected():
    row = QARow(QAKind.MCQ, "سؤال؟", options=("a", "b", "c"), answer_index=1)
    result = ingest_qa([row], "mwqa")
    assert not result.records
    assert "4 options" in result.rejects[0].reason


def test_qa_passage_iff_extractive():
    with_passage = QARow(QAKind.OPEN, "q", passage="p", answer="a")
    without_passage = QARow(QAKind.EXTRACTIVE, "q", answer="a")
    result = ingest_qa([with_passage, without_passage], "mwqa")
    assert len(result.rejects) == 2


def test_qa_bad_gold_index_rejected():
    row = QARow(QAKind.MCQ, "q", options=("a", "b", "c", "d"), answer_index=4)
    result = ingest_qa([row], "mwqa")
    assert "out of range" in result.rejects[0].reason


def test_split_sizes_and_partition():
    records = [make_sentiment_record(i) for i in range(100)]
    train, test = split_train_test(records, 0.10, seed=7)
    assert len(test) == 10 and len(train) == 90
    train_keys = {r.provenance.key() for r in train}
    test_keys = {r.provenance.key() for r in test}
    assert not train_keys & test_keys
    assert train_keys | test_keys == {r.provenance.key() for r in records}
    assert all(r.split is Split.TRAIN for r in train)
    assert all(r.split is Split.TEST for r in test)


def test_split_deterministic_under_seed():
    records = [make_sentiment_record(i) for i in range(50)]
    first = split_train_test(records, 0.2, seed=3)
    second = split_train_test(records, 0.2, seed=3)
    assert first == second


def test_split_small_pool_both_seeds_give_one_test_member():
    records = [make_sentiment_record(i) for i in range(10)]
    _, test_a = split_train_test(records, 0.10, seed=1)
    _, test_b = split_train_test(records, 0.10, seed=2)
    assert len(test_a) == 1 and len(test_b) == 1


def test_split_respects_predefined_markers():
    records = [make_sentiment_record(i) for i in range(8)]
    records[0] = records[0].with_split(Split.TEST)
    records[1] = records[1].with_split(Split.TRAIN)
    train, test = split_train_test(records, 0.5, seed=0)
    assert records[0].provenance.key() in {r.provenance.key() for r in test}
    assert records[1].provenance.key() in {r.provenance.key() for r in train}
    # round-half-up over the 6-record unassigned pool
    assert len(test) == 1 + 3


def test_split_preconditions():
    with pytest.raises(ValueError):
        split_train_test([], 0.1, seed=0)
    with pytest.raises(ValueError):
        split_train_test([make_sentiment_record(0)], 1.5, seed=0)


def test_parallel_empty_rows_is_empty_output_not_error():
    result = ingest_parallel([], SIX_DIRECTIONS, "doda")
    assert result.records == [] and result.conserved


def test_row_loaders_pick_up_predefined_split_column():
    from darijakit.ingest import sentiment_rows

    raws = [
        {"text": "a", "label": "positive", "subset": "test"},
        {"text": "b", "label": "negative", "subset": "train"},
        {"text": "c", "label": "neutral", "subset": ""},
    ]
    rows = sentiment_rows(raws, {}, split_column="subset")
    assert [r.split.value for r in rows] == ["test", "train", "unassigned"]
    result = ingest_sentiment(rows, {"positive", "negative", "neutral"}, "s")
    train, test = split_train_test(result.records, 0.5, seed=0)
    keys = {r.provenance.original_index for r in test}
    assert 0 in keys and 1 not in keys
