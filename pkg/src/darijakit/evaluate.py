"""Evaluation harness: run providers over a test set, score, report.

Zero-shot, greedy decoding: every generation call carries temperature 0.
Provider outputs are cached on disk keyed by (provider id, input digest),
so reruns cost nothing and evaluation is idempotent.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import metrics as m
from .corpus import FormatKind, Instruction
from .digest import stable_digest
from .providers import (
    ChoiceScoringProvider,
    EmbedderProvider,
    GenerationParams,
    GenerationProvider,
    ProviderError,
)

logger = logging.getLogger(__name__)

GENERATIVE_METRICS = ("bleu", "chrf", "rouge1", "rougeL", "bertscore")
MC_METRICS = ("accuracy",)


@dataclass(frozen=True)
class EvalItem:
    """One test example: a prompt, its reference, and (for multiple choice)
    the options with the gold index."""

    item_id: str
    prompt: str
    reference: str
    options: tuple[str, ...] | None = None
    gold_index: int | None = None


@dataclass(frozen=True)
class MetricReport:
    task: str
    metric: str
    value: float  # percent scale
    count: int
    failures: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.value <= 100.0:
            raise ValueError(f"metric value out of [0, 100]: {self.value}")
        if self.count < 1:
            raise ValueError("metric report needs at least one scored sample")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric,
            "value": round(self.value, 4),
            "count": self.count,
            "failures": self.failures,
            "config": self.config,
        }


class ResponseCache:
    """Disk cache of provider responses keyed by (provider id, digest)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def _path(self, provider_id: str, key: str) -> Path:
        safe = re.sub(r"[^A-Za-z0-9._-]", "_", provider_id)
        return self.directory / safe / f"{key}.json"

    def get(self, provider_id: str, key: str):
        path = self._path(provider_id, key)
        if not path.exists():
            return None
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)["response"]

    def put(self, provider_id: str, key: str, response) -> None:
        path = self._path(provider_id, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8") as f:
            json.dump({"response": response}, f, ensure_ascii=False)
        tmp.replace(path)


def instruction_to_eval_item(instr: Instruction) -> EvalItem:
    """A zero-shot instruction as an eval item: user turn is the prompt,
    assistant turn the reference; MC options ride in the meta."""
    options = instr.meta.get("options")
    gold = instr.meta.get("answer_index")
    return EvalItem(
        item_id=stable_digest([p.to_dict() for p in instr.provenance]),
        prompt=instr.conversation.messages[0].content,
        reference=instr.conversation.messages[-1].content,
        options=tuple(options) if options is not None else None,
        gold_index=int(gold) if gold is not None else None,
    )


def evaluate_task(
    items: Sequence[EvalItem],
    task: str,
    metric_names: Sequence[str],
    *,
    generator: GenerationProvider | None = None,
    choice_scorer: ChoiceScoringProvider | None = None,
    embedder: EmbedderProvider | None = None,
    cache: ResponseCache | None = None,
    params: GenerationParams | None = None,
) -> list[MetricReport]:
    """One MetricReport per requested metric over the test items.

    Generative metrics need a generation provider; accuracy needs a
    choice-scoring provider and MC items; bertscore needs an embedder.
    Per-item provider errors mark the item failed and are counted in the
    report rather than aborting the run.
    """
    if not items:
        raise ValueError("test set must be non-empty")
    params = params or GenerationParams(temperature=0.0)
    reports: list[MetricReport] = []
    wants_mc = [name for name in metric_names if name in MC_METRICS]
    wants_gen = [name for name in metric_names if name in GENERATIVE_METRICS]
    unknown = set(metric_names) - set(MC_METRICS) - set(GENERATIVE_METRICS)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")

    if wants_mc:
        if choice_scorer is None:
            raise ValueError("accuracy needs a choice-scoring provider")
        preds, golds, failures = _score_choices(items, choice_scorer, cache)
        if not preds:
            raise ProviderError(f"all {len(items)} choice-scoring calls failed")
        value = m.accuracy(preds, golds)
        reports.append(
            MetricReport(task=task, metric="accuracy", value=value, count=len(preds),
                         failures=failures, config={"provider": choice_scorer.provider_id})
        )

    if wants_gen:
        if generator is None:
            raise ValueError("generative metrics need a generation provider")
        hyps, refs, failures = _generate(items, generator, cache, params)
        if not hyps:
            raise ProviderError(f"all {len(items)} generation calls failed")
        config = {"provider": generator.provider_id, "params": params.to_dict()}
        for name in wants_gen:
            value = _generative_metric(name, hyps, refs, embedder)
            cfg = dict(config)
            if name == "bertscore":
                cfg["embedder"] = embedder.provider_id if embedder else None
            reports.append(
                MetricReport(task=task, metric=name, value=value, count=len(hyps),
                             failures=failures, config=cfg)
            )
    return reports


def _score_choices(items, scorer, cache):
    preds, golds = [], []
    failures = 0
    for item in items:
        if item.options is None or item.gold_index is None:
            failures += 1
            logger.warning("item %s lacks options/gold for accuracy", item.item_id)
            continue
        key = stable_digest([item.prompt, list(item.options)])
        scores = cache.get(scorer.provider_id, key) if cache else None
        if scores is None:
            try:
                scores = scorer.score_choices(item.prompt, list(item.options))
            except ProviderError as exc:
                failures += 1
                logger.warning("choice scoring failed for %s: %s", item.item_id, exc)
                continue
            if cache:
                cache.put(scorer.provider_id, key, scores)
        if len(scores) != len(item.options):
            failures += 1
            logger.warning("item %s: %d scores for %d options", item.item_id,
                           len(scores), len(item.options))
            continue
        preds.append(m.mcq_select(scores))
        golds.append(item.gold_index)
    return preds, golds, failures


def _generate(items, generator, cache, params):
    hyps, refs = [], []
    failures = 0
    for item in items:
        key = stable_digest([item.prompt, params.to_dict()])
        text = cache.get(generator.provider_id, key) if cache else None
        if text is None:
            try:
                text = generator.complete(item.prompt, params)
            except ProviderError as exc:
                failures += 1
                logger.warning("generation failed for %s: %s", item.item_id, exc)
                continue
            if cache:
                cache.put(generator.provider_id, key, text)
        hyps.append(text)
        refs.append(item.reference)
    return hyps, refs, failures


def _generative_metric(name, hyps, refs, embedder):
    if name == "bleu":
        return m.bleu(hyps, refs)
    if name == "chrf":
        return m.chrf(hyps, refs)
    if name == "rouge1":
        return 100.0 * _mean(m.rouge_n(h, r, 1).f1 for h, r in zip(hyps, refs))
    if name == "rougeL":
        return 100.0 * _mean(m.rouge_l(h, r).f1 for h, r in zip(hyps, refs))
    if name == "bertscore":
        if embedder is None:
            raise ValueError("bertscore needs an embedder provider")
        return 100.0 * _mean(m.bertscore(h, r, embedder).f1 for h, r in zip(hyps, refs))
    raise ValueError(f"unknown metric {name}")


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values)


def load_eval_items(path: str | Path, task: str | None = None) -> list[EvalItem]:
    """Eval items from a serialized instruction file (zero-shot lines),
    optionally restricted to one task kind."""
    from .corpus import load_instructions

    items = []
    for instr in load_instructions(path):
        if instr.format_kind is not FormatKind.ZERO_SHOT:
            continue
        if task is not None and instr.task.value != task:
            continue
        items.append(instruction_to_eval_item(instr))
    return items


def write_report_jsonl(reports: Sequence[MetricReport], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for report in reports:
            f.write(json.dumps(report.to_dict(), ensure_ascii=False) + "\n")


def format_report_table(reports: Sequence[MetricReport]) -> str:
    """Task-by-metric table (tab separated), one row per task."""
    tasks: list[str] = []
    metric_names: list[str] = []
    for r in reports:
        if r.task not in tasks:
            tasks.append(r.task)
        if r.metric not in metric_names:
            metric_names.append(r.metric)
    cells = {(r.task, r.metric): r.value for r in reports}
    lines = ["\t".join(["task"] + metric_names)]
    for task in tasks:
        row = [task]
        for name in metric_names:
            value = cells.get((task, name))
            row.append(f"{value:.2f}" if value is not None else "-")
        lines.append("\t".join(row))
    return "\n".join(lines)


def write_report_table(reports: Sequence[MetricReport], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report_table(reports) + "\n", encoding="utf-8")
