import pytest

from darijakit.evaluate import (
    EvalItem,
    MetricReport,
    ResponseCache,
    evaluate_task,
    format_report_table,
    instruction_to_eval_item,
)
from darijakit.providers import (
    EchoProvider,
    GoldChoiceScorer,
    HashEmbedder,
    ProviderError,
)

from conftest import InstrumentedProvider


def gen_items(n=5):
    return [EvalItem(item_id=f"i{j}", prompt=f"لخص هاد المقطع:\nنص {j}", reference=f"عنوان {j}")
            for j in range(n)]


def mc_items(n=8):
    items = []
    for j in range(n):
        options = tuple(f"opt{j}-{k}" for k in range(4))
        items.append(EvalItem(item_id=f"m{j}", prompt=f"سؤال {j}؟", reference=options[j % 4],
                              options=options, gold_index=j % 4))
    return items


def echo_provider(items):
    return EchoProvider({EchoProvider.prompt_key(i.prompt): i.reference for i in items})


def test_echo_provider_gives_chrf_100():
    items = gen_items()
    reports = evaluate_task(items, "summarization", ["chrf"], generator=echo_provider(items))
    assert len(reports) == 1
    assert reports[0].metric == "chrf"
    assert reports[0].value == pytest.approx(100.0)
    assert reports[0].count == 5


def test_gold_scorer_gives_accuracy_100():
    items = mc_items()
    scorer = GoldChoiceScorer({EchoProvider.prompt_key(i.prompt): i.gold_index for i in items})
    reports = evaluate_task(items, "mcq", ["accuracy"], choice_scorer=scorer)
    assert reports[0].value == 100.0


def test_adversarial_scorer_gives_accuracy_0():
    class WrongScorer:
        provider_id = "wrong"

        def score_choices(self, prompt, options):
            # highest score on a non-gold option every time
            return [1.0, 0.0, 0.0, 0.0]

    items = [i for i in mc_items() if i.gold_index != 0]
    reports = evaluate_task(items, "mcq", ["accuracy"], choice_scorer=WrongScorer())
    assert reports[0].value == 0.0


def test_cache_makes_reruns_free(tmp_path):
    items = gen_items()
    cache = ResponseCache(tmp_path / "cache")
    responses = {EchoProvider.prompt_key(i.prompt): i.reference for i in items}
    provider = InstrumentedProvider(lambda prompt, attempt: responses[EchoProvider.prompt_key(prompt)],
                                    provider_id="counted")
    evaluate_task(items, "summ", ["chrf"], generator=provider, cache=cache)
    assert len(provider.calls) == len(items)
    evaluate_task(items, "summ", ["chrf"], generator=provider, cache=cache)
    assert len(provider.calls) == len(items)  # zero new calls on warm cache


def test_provider_failures_counted_not_fatal():
    items = gen_items(4)
    good = {EchoProvider.prompt_key(i.prompt): i.reference for i in items[:2]}

    class Flaky:
        provider_id = "flaky"

        def complete(self, prompt, params):
            key = EchoProvider.prompt_key(prompt)
            if key not in good:
                raise ProviderError("nope")
            return good[key]

    reports = evaluate_task(items, "summ", ["chrf"], generator=Flaky())
    assert reports[0].count == 2
    assert reports[0].failures == 2


def test_all_failures_is_an_error():
    class Dead:
        provider_id = "dead"

        def complete(self, prompt, params):
            raise ProviderError("down")

    with pytest.raises(ProviderError):
        evaluate_task(gen_items(2), "summ", ["chrf"], generator=Dead())


def test_bertscore_needs_embedder_and_works_with_synthetic():
    items = gen_items(3)
    provider = echo_provider(items)
    with pytest.raises(ValueError):
        evaluate_task(items, "summ", ["bertscore"], generator=provider)
    reports = evaluate_task(items, "summ", ["bertscore"], generator=provider,
                            embedder=HashEmbedder())
    assert reports[0].value == pytest.approx(100.0, abs=1e-4)
    assert reports[0].config["embedder"] == "synthetic"


def test_unknown_metric_rejected():
    with pytest.raises(ValueError, match="unknown metrics"):
        evaluate_task(gen_items(1), "t", ["perplexity"])


def test_greedy_params_recorded_in_config():
    items = gen_items(2)
    reports = evaluate_task(items, "summ", ["chrf"], generator=echo_provider(items))
    assert reports[0].config["params"]["temperature"] == 0.0


def test_metric_report_range_validation():
    with pytest.raises(ValueError):
        MetricReport(task="t", metric="m", value=101.0, count=1)
    with pytest.raises(ValueError):
        MetricReport(task="t", metric="m", value=50.0, count=0)


def test_report_table_shape():
    reports = [
        MetricReport(task="summarization", metric="chrf", value=100.0, count=3),
        MetricReport(task="summarization", metric="rouge1", value=88.5, count=3),
        MetricReport(task="translation", metric="bleu", value=41.2, count=7),
    ]
    table = format_report_table(reports)
    lines = table.split("\n")
    assert lines[0] == "task\tchrf\trouge1\tbleu"
    assert lines[1].startswith("summarization\t100.00\t88.50\t-")
    assert lines[2].startswith("translation\t-\t-\t41.20")


def test_instruction_to_eval_item_carries_mc_meta():
    from darijakit.build import records_to_zero_shot
    from darijakit.templates import builtin_templates
    from conftest import make_mc_record

    record = make_mc_record(0, gold=3)
    instr = records_to_zero_shot([record], builtin_templates(), seed=0)[0]
    item = instruction_to_eval_item(instr)
    assert item.options == tuple(record.payload["options"])
    assert item.gold_index == 3
    assert item.reference == "D"


def test_score_count_mismatch_counted_as_failure():
    class ThreeScorer:
        provider_id = "three"

        def score_choices(self, prompt, options):
            return [0.1, 0.2, 0.3]  # one short for 4 options

    items = mc_items(4)
    with pytest.raises(ProviderError):
        evaluate_task(items, "mcq", ["accuracy"], choice_scorer=ThreeScorer())
