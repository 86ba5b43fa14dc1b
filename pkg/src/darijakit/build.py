"""Instruction building: format mixture, answer balancing, hard-coded pairs.

Every record anchors exactly one output instruction; the 80/10/10 format
ratio therefore holds over instructions and records alike. Few-shot
demonstrations and multi-turn companions reuse other records of the same
task as context, and every contributor is listed in the instruction's
provenance. All random choices run on streams derived from the pipeline
seed plus stable record identity, so parallel and serial runs agree.
"""

from __future__ import annotations

import logging
from dataclasses import replace

from .corpus import (
    Conversation,
    CorpusRecord,
    FormatKind,
    Instruction,
    MC_TASKS,
    Message,
    Provenance,
    Role,
    TaskKind,
)
from .digest import derive_rng
from .templates import Template, TemplateLibrary, render_template

logger = logging.getLogger(__name__)

DEMO_SEPARATOR = "\n\n"


class MixtureError(Exception):
    """A construction precondition does not hold."""


def _round_half_up(x: float) -> int:
    return int(x + 0.5)


def group_key(record: CorpusRecord) -> tuple:
    """Multi-turn grouping: QA shares a passage, everything else shares the
    source document."""
    passage = record.payload.get("passage") or record.payload.get("document")
    if passage:
        return ("passage", record.task.value, passage)
    return ("source", record.task.value, record.provenance.source_id)


def build_fewshot(records: list[CorpusRecord], template: Template) -> Conversation:
    """k worked demonstrations plus the final query, as one exchange.

    The last record is the query; all others are demonstrations, rendered as
    question/answer blocks separated by blank lines. The query's gold answer
    appears only in the assistant turn.
    """
    if len(records) < 3:
        raise MixtureError(f"few-shot needs k >= 2 demonstrations plus a query, got {len(records)} records")
    kinds = {r.task for r in records}
    if len(kinds) != 1:
        raise MixtureError(f"few-shot records must share a task, got {sorted(k.value for k in kinds)}")
    blocks = []
    for demo in records[:-1]:
        conv = render_template(template, demo)
        blocks.append(f"{conv.messages[0].content}\n{conv.messages[1].content}")
    query = render_template(template, records[-1])
    blocks.append(query.messages[0].content)
    return Conversation(
        messages=(
            Message(Role.USER, DEMO_SEPARATOR.join(blocks)),
            Message(Role.ASSISTANT, query.messages[1].content),
        )
    )


def build_multiturn(group: list[CorpusRecord], template: Template) -> Conversation:
    """One conversation of 2*len(group) turns over a shared context.

    For passage-bearing tasks the passage is stated once, in the first user
    turn; later turns use the template's follow-up pattern.
    """
    if len(group) < 2:
        raise MixtureError(f"multi-turn needs >= 2 records, got {len(group)}")
    kinds = {r.task for r in group}
    if len(kinds) != 1:
        raise MixtureError(f"multi-turn records must share a task, got {sorted(k.value for k in kinds)}")
    passages = {r.payload.get("passage") for r in group}
    if None not in passages and len(passages) != 1:
        raise MixtureError("multi-turn QA records must share the same passage")
    messages: list[Message] = []
    for i, record in enumerate(group):
        conv = render_template(template, record, followup=i > 0)
        messages.extend(conv.messages)
    return Conversation(messages=tuple(messages))


def compose_mixture(
    records: list[CorpusRecord],
    templates: TemplateLibrary,
    ratios: tuple[float, float, float],
    seed: int,
    *,
    k_range: tuple[int, int] = (2, 5),
    group_size_max: int = 4,
    per_task: bool = True,
) -> list[Instruction]:
    """Render records into instructions at the requested format mixture.

    ``ratios`` is (zero_shot, few_shot, multi_turn) and must sum to 1. Per
    task (or globally with per_task=False), round(ratio*N) records are
    assigned to each non-zero-shot kind, within +-1. Tasks too small to
    support a kind contribute zero of it, logged, and fall back to
    zero-shot so every record still yields exactly one instruction.
    """
    z, f, m = ratios
    if abs(z + f + m - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if k_range[0] < 2 or k_range[1] < k_range[0]:
        raise ValueError(f"k_range needs 2 <= k_min <= k_max, got {k_range}")
    groups: dict[str, list[CorpusRecord]] = {}
    for rec in records:
        key = rec.task.value if per_task else "all"
        groups.setdefault(key, []).append(rec)

    out: list[Instruction] = []
    for key in sorted(groups):
        out.extend(
            _compose_task(groups[key], templates, (z, f, m), seed, k_range, group_size_max, label=key)
        )
    return out


def _compose_task(
    recs: list[CorpusRecord],
    templates: TemplateLibrary,
    ratios: tuple[float, float, float],
    seed: int,
    k_range: tuple[int, int],
    group_size_max: int,
    label: str,
) -> list[Instruction]:
    _, f, m = ratios
    n = len(recs)
    rng = derive_rng(seed, "format-assignment", label)

    n_few = _round_half_up(f * n)
    n_multi = _round_half_up(m * n)
    if n_few + n_multi > n:
        n_multi = max(0, n - n_few)

    k_min, k_max = k_range
    task_indices: dict[TaskKind, list[int]] = {}
    for i, rec in enumerate(recs):
        task_indices.setdefault(rec.task, []).append(i)
    # few-shot demonstrations come from the same task as the query
    few_capable = [i for i, rec in enumerate(recs) if len(task_indices[rec.task]) - 1 >= k_min]

    by_group: dict[tuple, list[int]] = {}
    for i, rec in enumerate(recs):
        by_group.setdefault(group_key(rec), []).append(i)
    multi_capable = [i for i, rec in enumerate(recs) if len(by_group[group_key(rec)]) >= 2]
    if len(multi_capable) < n_multi:
        if n_multi > 0:
            logger.warning(
                "%s: only %d of %d requested multi-turn anchors have group companions",
                label, len(multi_capable), n_multi,
            )
        n_multi = len(multi_capable)
    if len(few_capable) < n_few:
        logger.warning(
            "%s: only %d of %d requested few-shot queries have enough same-task records (k >= %d)",
            label, len(few_capable), n_few, k_min,
        )
        n_few = len(few_capable)

    order = list(range(n))
    rng.shuffle(order)
    multi_set = set(multi_capable)
    few_set = set(few_capable)
    multi_anchors = set()
    for i in order:
        if len(multi_anchors) == n_multi:
            break
        if i in multi_set:
            multi_anchors.add(i)
    few_queries = set()
    for i in order:
        if len(few_queries) == n_few:
            break
        if i in few_set and i not in multi_anchors:
            few_queries.add(i)

    out: list[Instruction] = []
    for i, rec in enumerate(recs):
        rec_rng = derive_rng(seed, "build", rec.provenance.source_id, rec.provenance.original_index)
        template = templates.choose(rec.task, rec_rng)
        if i in multi_anchors:
            out.append(_multi_instruction(rec, i, recs, by_group, template, rec_rng, group_size_max))
        elif i in few_queries:
            pool = [j for j in task_indices[rec.task] if j != i]
            out.append(_fewshot_instruction(rec, pool, recs, template, rec_rng, k_min, k_max))
        else:
            conv = render_template(template, rec)
            out.append(
                Instruction(
                    conversation=conv,
                    task=rec.task,
                    format_kind=FormatKind.ZERO_SHOT,
                    provenance=(rec.provenance,),
                    meta=_zero_shot_meta(rec, template),
                )
            )
    return out


def _zero_shot_meta(rec: CorpusRecord, template: Template) -> dict:
    meta: dict = {"template_id": template.id}
    if rec.task in MC_TASKS:
        # carried through for choice-scoring evaluation
        meta["options"] = list(rec.payload["options"])
        meta["answer_index"] = int(rec.payload["answer_index"])
    return meta


def _fewshot_instruction(
    rec: CorpusRecord,
    pool: list[int],
    recs: list[CorpusRecord],
    template: Template,
    rng,
    k_min: int,
    k_max: int,
) -> Instruction:
    k = rng.randint(k_min, min(k_max, len(pool)))
    demo_idx = rng.sample(pool, k)
    demos = [recs[j] for j in demo_idx]
    conv = build_fewshot(demos + [rec], template)
    return Instruction(
        conversation=conv,
        task=rec.task,
        format_kind=FormatKind.FEW_SHOT,
        provenance=tuple(d.provenance for d in demos) + (rec.provenance,),
        meta={"template_id": template.id, "k": k},
    )


def _multi_instruction(
    rec: CorpusRecord,
    index: int,
    recs: list[CorpusRecord],
    by_group: dict[tuple, list[int]],
    template: Template,
    rng,
    group_size_max: int,
) -> Instruction:
    members = [j for j in by_group[group_key(rec)] if j != index]
    size = rng.randint(2, min(group_size_max, len(members) + 1))
    companions = [recs[j] for j in rng.sample(members, size - 1)]
    group = [rec] + companions
    conv = build_multiturn(group, template)
    return Instruction(
        conversation=conv,
        task=rec.task,
        format_kind=FormatKind.MULTI_TURN,
        provenance=tuple(r.provenance for r in group),
        meta={"template_id": template.id, "turns": len(group)},
    )


def balance_mcq(records: list[CorpusRecord], seed: int) -> list[CorpusRecord]:
    """Permute options so the gold answer lands evenly across positions.

    Over the output, per-position gold counts differ by at most one; each
    record keeps its option multiset and a consistent gold index.
    """
    for rec in records:
        if rec.task not in MC_TASKS:
            raise ValueError(f"balance_mcq got non-MC record {rec.task.value}")
        if len(rec.payload["options"]) != 4:
            raise ValueError("balance_mcq records must have exactly 4 options")
    n = len(records)
    if n == 0:
        return []
    rng = derive_rng(seed, "mcq-balance")
    base, remainder = divmod(n, 4)
    counts = [base] * 4
    for pos in rng.sample(range(4), remainder):
        counts[pos] += 1
    slots = [pos for pos in range(4) for _ in range(counts[pos])]
    rng.shuffle(slots)

    out = []
    for rec, slot in zip(records, slots):
        options = list(rec.payload["options"])
        gold = options[int(rec.payload["answer_index"])]
        rest = [o for i, o in enumerate(options) if i != int(rec.payload["answer_index"])]
        rng.shuffle(rest)
        new_options = rest[:slot] + [gold] + rest[slot:]
        payload = dict(rec.payload)
        payload["options"] = new_options
        payload["answer_index"] = slot
        out.append(replace(rec, payload=payload))
    return out


def expand_hardcoded(
    pairs: list[tuple[str, str]],
    repeat: int = 10,
    *,
    source_id: str = "hardcoded",
    license_tag: str = "",
) -> list[Instruction]:
    """Each (question, answer) pair repeated ``repeat`` times, contiguously."""
    if not pairs:
        raise ValueError("pairs must be non-empty")
    out = []
    for i, (question, answer) in enumerate(pairs):
        provenance = Provenance(source_id, i, license_tag)
        for r in range(repeat):
            out.append(
                Instruction(
                    conversation=Conversation.exchange(question, answer),
                    task=TaskKind.HARDCODED,
                    format_kind=FormatKind.ZERO_SHOT,
                    provenance=(provenance,),
                    meta={"repeat": r},
                )
            )
    return out


def records_to_zero_shot(records: list[CorpusRecord], templates: TemplateLibrary, seed: int) -> list[Instruction]:
    """Plain zero-shot rendering, used for test-split serialization."""
    out = []
    for rec in records:
        rng = derive_rng(seed, "build", rec.provenance.source_id, rec.provenance.original_index)
        template = templates.choose(rec.task, rng)
        out.append(
            Instruction(
                conversation=render_template(template, rec),
                task=rec.task,
                format_kind=FormatKind.ZERO_SHOT,
                provenance=(rec.provenance,),
                meta=_zero_shot_meta(rec, template),
            )
        )
    return out
