"""Command-line pipeline driver: build, translate, eval, judge, validate.

One config file drives everything; flags only select the subcommand and the
few per-run inputs. Exit codes: 0 success, 1 config error, 2 stage failure.
All artifacts land under the configured workdir.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .build import balance_mcq, compose_mixture, expand_hardcoded, records_to_zero_shot
from .config import ConfigError, PipelineConfig, SourceConfig, load_config
from .corpus import (
    Conversation,
    FormatKind,
    Instruction,
    MC_TASKS,
    Provenance,
    TaskKind,
    duplicate_provenance_keys,
    save_instructions,
    validate_conversation,
)
from .digest import file_digest, stable_digest
from .evaluate import (
    GENERATIVE_METRICS,
    ResponseCache,
    evaluate_task,
    format_report_table,
    load_eval_items,
    write_report_jsonl,
    write_report_table,
)
from .ingest import (
    IngestResult,
    ingest_parallel,
    ingest_qa,
    ingest_sentiment,
    ingest_summarization,
    parallel_rows,
    qa_rows,
    read_table,
    sentiment_rows,
    split_train_test,
    summary_rows,
    write_reject_log,
)
from .judge import JudgeError, JudgePair, run_judging, win_rate
from .manifest import ManifestError, RunManifest, format_subset_table
from .providers import (
    EchoProvider,
    GoldChoiceScorer,
    ProviderError,
    resolve_embedder,
    resolve_generation_provider,
    resolve_lid_provider,
)
from .segment import WhitespaceTokenizer, stories_to_records
from .templates import TemplateLibrary, builtin_templates
from .translate import (
    CallLog,
    KeywordMap,
    default_keyword_map,
    filter_empty,
    filter_language,
    filter_translation_tasks,
    replace_keywords_in_conversation,
    translate_corpus,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STAGE = 2


class StageError(Exception):
    def __init__(self, stage: str, detail: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {detail}")


def _load_templates(cfg: PipelineConfig) -> TemplateLibrary:
    if cfg.templates_path:
        return TemplateLibrary.from_file(cfg.resolve(cfg.templates_path))
    return builtin_templates()


def _build_digest(cfg: PipelineConfig, config_path: Path) -> str:
    parts = [file_digest(config_path)]
    for source in cfg.sources:
        parts.append([source.source_id, file_digest(cfg.resolve(source.path))])
    return stable_digest(parts)


def _ingest_source(cfg: PipelineConfig, source: SourceConfig) -> IngestResult:
    raws = read_table(cfg.resolve(source.path), source.format)
    split_col = source.predefined_split_column
    if source.kind == "parallel":
        if not source.directions:
            raise StageError(f"ingest:{source.source_id}", "parallel source needs 'directions'")
        rows = parallel_rows(raws, source.column_map, split_col)
        return ingest_parallel(rows, source.directions, source.source_id, source.license_tag)
    if source.kind == "sentiment":
        rows = sentiment_rows(raws, source.column_map, split_col)
        allowed = source.allowed_labels or ["positive", "negative", "neutral"]
        return ingest_sentiment(rows, allowed, source.source_id, source.license_tag)
    if source.kind == "summarization":
        rows = summary_rows(raws, source.column_map, split_col)
        return ingest_summarization(rows, source.source_id, source.license_tag)
    if source.kind == "qa":
        rows = qa_rows(raws, source.column_map, split_col)
        return ingest_qa(rows, source.source_id, source.license_tag)
    if source.kind == "story":
        id_col = source.column_map.get("story_id", "story_id")
        text_col = source.column_map.get("text", "text")
        stories = [(str(raw.get(id_col) or i), raw.get(text_col) or "") for i, raw in enumerate(raws)]
        return stories_to_records(
            stories,
            WhitespaceTokenizer(),
            cfg.mixture.seed,
            source.source_id,
            cfg.mixture.max_story_tokens,
            source.license_tag,
        )
    raise StageError(f"ingest:{source.source_id}", f"unknown kind {source.kind!r}")


def _ingest_conversations(cfg: PipelineConfig, source: SourceConfig):
    """Already-formatted conversations as pass-through instructions."""
    from .ingest import Reject

    raws = read_table(cfg.resolve(source.path), source.format)
    result = IngestResult(opportunities=len(raws))
    instructions: list[Instruction] = []
    for i, raw in enumerate(raws):
        provenance = {"source_id": source.source_id, "original_index": i}
        try:
            conv = Conversation.from_dicts(raw["messages"])
        except (KeyError, TypeError, ValueError) as exc:
            result.rejects.append(Reject(provenance, f"unparseable messages: {exc}"))
            continue
        report = validate_conversation(conv)
        if not report.ok:
            result.rejects.append(Reject(provenance, f"invalid conversation: {sorted(report.codes())}"))
            continue
        instructions.append(Instruction(
            conversation=conv,
            task=TaskKind.TRANSLATED_GENERIC,
            format_kind=FormatKind.MULTI_TURN if len(conv) > 2 else FormatKind.ZERO_SHOT,
            provenance=(Provenance(source.source_id, i, source.license_tag),),
        ))
    return instructions, result


def _balance_mc_positions(records, seed):
    """Balance gold-answer positions per MC task kind, preserving order."""
    replacements = {}
    for kind in MC_TASKS:
        subset = [r for r in records if r.task is kind]
        if subset:
            for balanced in balance_mcq(subset, seed):
                replacements[balanced.provenance.key()] = balanced
    return [replacements.get(r.provenance.key(), r) if r.task in MC_TASKS else r for r in records]


def cmd_build(cfg: PipelineConfig, config_path: Path, force: bool = False) -> int:
    workdir = cfg.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    digest = _build_digest(cfg, config_path)
    manifest_path = workdir / "manifest.json"
    if manifest_path.exists() and not force:
        try:
            previous = RunManifest.load(manifest_path)
        except (json.JSONDecodeError, KeyError):
            previous = None
        if previous and previous.config_digest == digest:
            print("up to date (config and inputs unchanged); use --force to rebuild")
            return EXIT_OK

    manifest = RunManifest(config_digest=digest, tool_version=__version__,
                           seeds={"mixture": cfg.mixture.seed})
    templates = _load_templates(cfg)
    train_records = []
    test_records = []
    passthrough_instructions: list[Instruction] = []
    subsets: list[dict] = []

    for source in cfg.sources:
        if source.kind == "conversations":
            # already-formatted conversations (e.g. the translate command's
            # output): pass through untouched, train-only, no re-templating
            passthrough, result = _ingest_conversations(cfg, source)
            if result.rejects:
                log_path = workdir / "rejects" / f"{source.source_id}.jsonl"
                write_reject_log(result.rejects, log_path)
            manifest.add_stage(f"ingest:{source.source_id}", result.opportunities,
                               len(passthrough), len(result.rejects), result.skipped)
            passthrough_instructions.extend(passthrough)
            subsets.append({"subset": source.source_id, "samples": len(passthrough),
                            "source": source.path, "tasks": ["translated_generic"]})
            continue
        if source.kind == "hardcoded":
            raws = read_table(cfg.resolve(source.path), source.format)
            q_col = source.column_map.get("question", "question")
            a_col = source.column_map.get("answer", "answer")
            try:
                pairs = [(raw[q_col], raw[a_col]) for raw in raws]
            except KeyError as exc:
                raise StageError(f"ingest:{source.source_id}", f"missing column {exc}") from exc
            expanded = expand_hardcoded(pairs, repeat=cfg.mixture.repeat,
                                        source_id=source.source_id, license_tag=source.license_tag)
            passthrough_instructions.extend(expanded)
            manifest.add_stage(f"expand:{source.source_id}", len(pairs) * cfg.mixture.repeat, len(expanded))
            subsets.append({"subset": source.source_id, "samples": len(expanded),
                            "source": source.path, "tasks": ["hardcoded"]})
            continue
        result = _ingest_source(cfg, source)
        if result.rejects:
            log_path = workdir / "rejects" / f"{source.source_id}.jsonl"
            write_reject_log(result.rejects, log_path)
            print(f"[{source.source_id}] {len(result.rejects)} rejects -> {log_path}", file=sys.stderr)
        manifest.add_stage(f"ingest:{source.source_id}", result.opportunities,
                           len(result.records), len(result.rejects), result.skipped)
        records = _balance_mc_positions(result.records, cfg.mixture.seed)
        if records:
            train, test = split_train_test(records, cfg.mixture.test_fraction, cfg.mixture.seed)
        else:
            train, test = [], []
        train_records.extend(train)
        test_records.extend(test)
        subsets.append({"subset": source.source_id, "samples": len(records),
                        "source": source.path, "tasks": sorted({r.task.value for r in records})})

    dupes = duplicate_provenance_keys(train_records + test_records)
    if dupes:
        raise StageError("ingest", f"duplicate provenance keys, first few: {dupes[:5]}")

    instructions = compose_mixture(
        train_records, templates, cfg.mixture.ratios, cfg.mixture.seed,
        k_range=cfg.mixture.k_range, per_task=cfg.mixture.per_task,
    ) if train_records else []
    manifest.add_stage("mixture", len(train_records), len(instructions))
    test_instructions = records_to_zero_shot(test_records, templates, cfg.mixture.seed)
    manifest.add_stage("render-test", len(test_records), len(test_instructions))

    n_train = save_instructions(instructions + passthrough_instructions, workdir / "train.jsonl")
    n_test = save_instructions(test_instructions, workdir / "test.jsonl")
    manifest.subsets = subsets
    manifest.finish()
    manifest.save(manifest_path)

    print(format_subset_table(subsets))
    print(f"wrote {n_train} train instructions -> {workdir / 'train.jsonl'}")
    print(f"wrote {n_test} test instructions -> {workdir / 'test.jsonl'}")
    print(f"manifest -> {manifest_path}")
    return EXIT_OK


def _filter_language_with_retry(convs, lid, expect, threshold, passes: int = 3):
    """Language filter with bounded re-tries of provider failures. Whatever
    still cannot be identified stays in the retry bucket and is persisted,
    never silently dropped."""
    result = filter_language(convs, lid, expect, threshold)
    for _ in range(passes - 1):
        if not result.retry:
            break
        again = filter_language(result.retry, lid, expect, threshold)
        result.kept.extend(again.kept)
        result.dropped.extend(again.dropped)
        result.retry = again.retry
    return result


def _dump_conversations(convs, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for conv in convs:
            f.write(json.dumps({"messages": conv.to_dicts()}, ensure_ascii=False) + "\n")


def _read_conversations(path: Path):
    """Conversations (plus optional dataset tags) from a JSONL corpus."""
    convs: list[Conversation] = []
    tags: list[str] = []
    bad = 0
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                convs.append(Conversation.from_dicts(obj["messages"]))
                tags.append(obj.get("dataset", ""))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                bad += 1
    return convs, tags, bad


def cmd_translate(cfg: PipelineConfig, config_path: Path, input_path: Path) -> int:
    workdir = cfg.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    if not input_path.exists():
        raise StageError("translate", f"input corpus not found: {input_path}")
    convs, tags, bad = _read_conversations(input_path)
    manifest = RunManifest(
        config_digest=stable_digest([file_digest(config_path), file_digest(input_path)]),
        tool_version=__version__,
    )
    manifest.add_stage("parse-input", len(convs) + bad, len(convs), rejected=bad)

    tcfg = cfg.translation
    if tcfg.exclude_sources:
        excluded = {t for t in tags if t in set(tcfg.exclude_sources)}
        kept = [c for c, t in zip(convs, tags) if t not in excluded]
        manifest.add_stage("filter:subset", len(convs), len(kept), rejected=len(convs) - len(kept))
        convs = kept

    r_empty = filter_empty(convs)
    manifest.add_stage("filter:empty", len(convs), len(r_empty.kept), rejected=len(r_empty.dropped))
    r_tasks = filter_translation_tasks(r_empty.kept)
    manifest.add_stage("filter:translation-task", len(r_empty.kept), len(r_tasks.kept),
                       rejected=len(r_tasks.dropped))
    lid = resolve_lid_provider(tcfg.lid)
    r_lang = _filter_language_with_retry(r_tasks.kept, lid, tcfg.expect_language, tcfg.threshold)
    if r_lang.retry:
        _dump_conversations(r_lang.retry, workdir / "language_retry.jsonl")
        print(f"{len(r_lang.retry)} conversations still waiting on language id -> "
              f"{workdir / 'language_retry.jsonl'}", file=sys.stderr)
    manifest.add_stage("filter:language", len(r_tasks.kept), len(r_lang.kept),
                       rejected=len(r_lang.dropped), skipped=len(r_lang.retry))

    provider = resolve_generation_provider(tcfg.provider)
    call_log = CallLog(workdir / "translate_log.jsonl")
    translated, failed = translate_corpus(
        r_lang.kept, provider, tcfg.max_in_flight, tcfg.max_retries,
        backoff_base=tcfg.backoff_base, call_log=call_log,
    )
    manifest.add_stage("translate", len(r_lang.kept), len(translated), rejected=len(failed))

    keyword_map = (KeywordMap.from_file(cfg.resolve(tcfg.keyword_map_path))
                   if tcfg.keyword_map_path else default_keyword_map())
    post = [replace_keywords_in_conversation(job.result, keyword_map) for job in translated]
    r_script = _filter_language_with_retry(post, lid, tcfg.arabic_tag, tcfg.threshold)
    if r_script.retry:
        _dump_conversations(r_script.retry, workdir / "script_retry.jsonl")
    manifest.add_stage("filter:script", len(post), len(r_script.kept),
                       rejected=len(r_script.dropped), skipped=len(r_script.retry))

    out_path = workdir / "translated.jsonl"
    with out_path.open("w", encoding="utf-8") as f:
        for i, conv in enumerate(r_script.kept):
            instr = Instruction(
                conversation=conv,
                task=TaskKind.TRANSLATED_GENERIC,
                format_kind=FormatKind.MULTI_TURN if len(conv) > 2 else FormatKind.ZERO_SHOT,
                provenance=(Provenance(input_path.stem, i),),
            )
            f.write(json.dumps(instr.to_dict(), ensure_ascii=False) + "\n")
    failures_path = workdir / "translate_failures.jsonl"
    with failures_path.open("w", encoding="utf-8") as f:
        for job in failed:
            f.write(json.dumps({"job_id": job.job_id, "error": job.error,
                                "messages": job.source.to_dicts()}, ensure_ascii=False) + "\n")

    manifest.finish()
    manifest.save(workdir / "translate_manifest.json")
    print(f"translated {len(r_script.kept)} conversations -> {out_path}")
    print(f"failed {len(failed)} -> {failures_path}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig) -> int:
    if not cfg.evaluation:
        raise StageError("eval", "no evaluation tasks configured")
    workdir = cfg.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    cache = ResponseCache(cfg.cache_dir)
    reports = []
    for task_cfg in cfg.evaluation:
        path = cfg.resolve(task_cfg.path)
        if not path.exists():
            raise StageError("eval", f"task {task_cfg.task}: test set not found: {path}")
        try:
            task_filter = TaskKind(task_cfg.task).value
        except ValueError:
            task_filter = None
        items = load_eval_items(path, task=task_filter)
        if not items:
            raise StageError("eval", f"task {task_cfg.task}: test set is empty")
        generator = scorer = embedder = None
        if any(name in GENERATIVE_METRICS for name in task_cfg.metrics):
            echo_responses = {EchoProvider.prompt_key(i.prompt): i.reference for i in items}
            generator = resolve_generation_provider(task_cfg.provider, echo_responses=echo_responses)
        if "accuracy" in task_cfg.metrics:
            if task_cfg.scorer != "gold":
                raise StageError("eval", f"task {task_cfg.task}: unknown scorer {task_cfg.scorer!r}")
            golds = {EchoProvider.prompt_key(i.prompt): i.gold_index
                     for i in items if i.gold_index is not None}
            scorer = GoldChoiceScorer(golds)
        if "bertscore" in task_cfg.metrics:
            embedder = resolve_embedder(task_cfg.embedder)
        reports.extend(
            evaluate_task(items, task_cfg.task, task_cfg.metrics,
                          generator=generator, choice_scorer=scorer, embedder=embedder, cache=cache)
        )
    write_report_table(reports, workdir / "eval_report.tsv")
    write_report_jsonl(reports, workdir / "eval_report.jsonl")
    print(format_report_table(reports))
    print(f"reports -> {workdir / 'eval_report.tsv'}")
    return EXIT_OK


def cmd_judge(cfg: PipelineConfig) -> int:
    if not cfg.judge.pairs_path:
        raise StageError("judge", "judge.pairs_path not configured")
    workdir = cfg.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    pairs_path = cfg.resolve(cfg.judge.pairs_path)
    if not pairs_path.exists():
        raise StageError("judge", f"pairs file not found: {pairs_path}")
    pairs = []
    with pairs_path.open("r", encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append(JudgePair(
                    pair_id=str(obj.get("pair_id", i)),
                    passage=obj["passage"],
                    candidate=obj["candidate"],
                    reference=obj["reference"],
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise StageError("judge", f"pairs file line {i + 1}: {exc}") from exc
    if not pairs:
        raise StageError("judge", "no pairs to judge")
    provider = resolve_generation_provider(cfg.judge.provider)
    outcomes = run_judging(
        pairs, provider,
        max_in_flight=cfg.judge.max_in_flight,
        word_limit=cfg.judge.word_limit,
        audit_path=workdir / "judge_audit.jsonl",
    )
    try:
        body = win_rate(outcomes).to_dict()
    except JudgeError:
        body = {"win_rate_percent": None, "wins": 0, "losses": 0,
                "discards": len(outcomes), "denominator": "non-discarded pairs",
                "note": "every pair was discarded"}
    report_path = workdir / "judge_report.json"
    report_path.write_text(json.dumps(body, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(body, ensure_ascii=False, indent=2))
    print(f"audit log -> {workdir / 'judge_audit.jsonl'}")
    return EXIT_OK


def cmd_validate(file_path: Path) -> int:
    if not file_path.exists():
        raise StageError("validate", f"file not found: {file_path}")
    problems = 0
    seen_keys: set[tuple[str, int]] = set()
    dup_keys = 0
    with file_path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                conv = Conversation.from_dicts(obj["messages"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                print(f"line {lineno}: unparseable ({exc})")
                problems += 1
                continue
            report = validate_conversation(conv)
            for violation in report.violations:
                print(f"line {lineno}: turn {violation.index}: {violation.code} {violation.detail}".rstrip())
                problems += 1
            # uniqueness applies to record-anchored lines; hard-coded
            # repeats and reused few-shot/multi-turn context are by design
            if obj.get("format_kind") == "zero_shot" and obj.get("task") != "hardcoded":
                for prov in obj.get("provenance", []):
                    key = (prov.get("source_id", ""), prov.get("original_index", -1))
                    if key in seen_keys:
                        dup_keys += 1
                        print(f"line {lineno}: duplicate provenance key {key}")
                    seen_keys.add(key)
    if problems or dup_keys:
        print(f"{problems + dup_keys} problem(s) found")
        return EXIT_STAGE
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darijakit",
                                     description="Build, translate, and evaluate Darija instruction corpora")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="ingest sources and build the instruction mixture")
    p_build.add_argument("--config", required=True)
    p_build.add_argument("--force", action="store_true", help="rebuild even if up to date")

    p_translate = sub.add_parser("translate", help="filter and translate an instruction corpus")
    p_translate.add_argument("--config", required=True)
    p_translate.add_argument("--input", required=True, help="JSONL corpus of {messages, dataset?}")

    p_eval = sub.add_parser("eval", help="run metrics over configured test sets")
    p_eval.add_argument("--config", required=True)

    p_judge = sub.add_parser("judge", help="debiased pairwise judging and win rate")
    p_judge.add_argument("--config", required=True)

    p_validate = sub.add_parser("validate", help="validate a serialized corpus file")
    p_validate.add_argument("file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(Path(args.file))
        config_path = Path(args.config).resolve()
        cfg = load_config(config_path)
        if args.command == "build":
            return cmd_build(cfg, config_path, force=args.force)
        if args.command == "translate":
            return cmd_translate(cfg, config_path, Path(args.input))
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "judge":
            return cmd_judge(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, ManifestError, ProviderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
