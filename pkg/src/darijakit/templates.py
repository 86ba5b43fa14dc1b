"""Instruction templates and placeholder rendering.

Templates are data ({id, task, user_pattern, assistant_pattern}), shipped in
``data/templates.json`` and swappable per run. Placeholders use ``{name}``
syntax and substitution is literal and single-pass: substituted values are
never rescanned, and braces occurring in corpus text are left untouched.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from .corpus import Conversation, CorpusRecord, REQUIRED_PAYLOAD, TaskKind

PLACEHOLDER_RE = re.compile(r"\{([a-z_][a-z0-9_]*)\}")

OPTION_LETTERS = "ABCD"

# Darija display names, definite article included.
LANGUAGE_NAMES = {
    "darija_arabic": "الدارجة",
    "darija_latin": "الدارجة",
    "msa": "العربية الفصحى",
    "english": "الإنجليزية",
    "french": "الفرنسية",
}

SCRIPT_NAMES = {
    "arabic": "العربية",
    "latin": "اللاتينية",
}

SENTIMENT_LABEL_NAMES = {
    "negative": "سلبي",
    "positive": "ايجابي",
    "neutral": "محايد",
}

# Candidate-list order in the sentiment prompt: negative line first.
SENTIMENT_ORDER = ("negative", "positive", "neutral")


class TemplateError(Exception):
    """A template file is malformed or inconsistent with its task."""


class RenderError(Exception):
    """A placeholder could not be filled from the record payload."""

    def __init__(self, placeholder: str):
        self.placeholder = placeholder
        super().__init__(f"unresolved placeholder '{placeholder}'")


@dataclass(frozen=True)
class Template:
    id: str
    task: TaskKind
    user_pattern: str
    assistant_pattern: str
    followup_user_pattern: str | None = None

    def placeholders(self) -> set[str]:
        names = set(PLACEHOLDER_RE.findall(self.user_pattern))
        names |= set(PLACEHOLDER_RE.findall(self.assistant_pattern))
        if self.followup_user_pattern:
            names |= set(PLACEHOLDER_RE.findall(self.followup_user_pattern))
        return names


# Fields derivable from the payload at render time, per task.
DERIVED_FIELDS: dict[TaskKind, tuple[str, ...]] = {
    TaskKind.TRANSLATION: ("src_lang_name", "dst_lang_name"),
    TaskKind.TRANSLITERATION: ("src_script_name", "dst_script_name"),
    TaskKind.SENTIMENT: ("label_name", "options_block"),
    TaskKind.MCQ_QA: ("options_block", "answer_letter"),
    TaskKind.MC_EXTRACTIVE_QA: ("options_block", "answer_letter"),
}


def allowed_fields(task: TaskKind) -> set[str]:
    return set(REQUIRED_PAYLOAD[task]) | set(DERIVED_FIELDS.get(task, ()))


def render_pattern(pattern: str, values: dict) -> str:
    """Single-pass literal substitution of ``{name}`` placeholders."""

    def fill(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise RenderError(name)
        return str(values[name])

    return PLACEHOLDER_RE.sub(fill, pattern)


def _without_article(name: str) -> str:
    """Drop the leading definite article of the first word so the "لل"
    prefix in the translation template assimilates correctly."""
    first, _, rest = name.partition(" ")
    if first.startswith("ال"):
        first = first[len("ال"):]
    return f"{first} {rest}".strip()


def render_values(record: CorpusRecord) -> dict:
    """Payload plus render-time derived fields (display names, option
    blocks, answer letters)."""
    values = dict(record.payload)
    task = record.task
    if task is TaskKind.TRANSLATION:
        values["src_lang_name"] = LANGUAGE_NAMES[record.payload["src_lang"]]
        values["dst_lang_name"] = _without_article(LANGUAGE_NAMES[record.payload["dst_lang"]])
    elif task is TaskKind.TRANSLITERATION:
        values["src_script_name"] = SCRIPT_NAMES[record.payload["src_script"]]
        values["dst_script_name"] = SCRIPT_NAMES[record.payload["dst_script"]]
    elif task is TaskKind.SENTIMENT:
        values["label_name"] = SENTIMENT_LABEL_NAMES[record.payload["label"]]
        offered = record.payload["labels_offered"]
        ordered = [lab for lab in SENTIMENT_ORDER if lab in offered]
        values["options_block"] = "\n".join(f"- {SENTIMENT_LABEL_NAMES[lab]}" for lab in ordered)
    elif task in (TaskKind.MCQ_QA, TaskKind.MC_EXTRACTIVE_QA):
        options = list(record.payload["options"])
        index = int(record.payload["answer_index"])
        values["options_block"] = "\n".join(
            f"{OPTION_LETTERS[i]}. {opt}" for i, opt in enumerate(options)
        )
        values["answer_letter"] = OPTION_LETTERS[index]
    return values


def render_template(template: Template, record: CorpusRecord, followup: bool = False) -> Conversation:
    """Render one record into a two-turn conversation.

    ``followup=True`` uses the follow-up user pattern (context such as a
    shared passage appears only once, in the first turn of a multi-turn
    conversation).
    """
    if template.task is not record.task:
        raise ValueError(f"template {template.id} is for {template.task.value}, record is {record.task.value}")
    values = render_values(record)
    user_pattern = template.user_pattern
    if followup and template.followup_user_pattern:
        user_pattern = template.followup_user_pattern
    user = render_pattern(user_pattern, values)
    assistant = render_pattern(template.assistant_pattern, values)
    return Conversation.exchange(user, assistant)


class TemplateLibrary:
    """Templates indexed by task, with seed-driven selection."""

    def __init__(self, templates: Iterable[Template]):
        self.by_task: dict[TaskKind, list[Template]] = {}
        for tpl in templates:
            bad = tpl.placeholders() - allowed_fields(tpl.task)
            if bad:
                raise TemplateError(
                    f"template {tpl.id}: placeholders {sorted(bad)} are not fields of {tpl.task.value}"
                )
            self.by_task.setdefault(tpl.task, []).append(tpl)

    def for_task(self, task: TaskKind) -> list[Template]:
        if task not in self.by_task:
            raise TemplateError(f"no template for task {task.value}")
        return self.by_task[task]

    def choose(self, task: TaskKind, rng) -> Template:
        candidates = self.for_task(task)
        if len(candidates) == 1:
            return candidates[0]
        return rng.choice(candidates)

    @classmethod
    def from_dicts(cls, dicts: Iterable[dict]) -> "TemplateLibrary":
        templates = [
            Template(
                id=d["id"],
                task=TaskKind(d["task"]),
                user_pattern=d["user_pattern"],
                assistant_pattern=d["assistant_pattern"],
                followup_user_pattern=d.get("followup_user_pattern"),
            )
            for d in dicts
        ]
        return cls(templates)

    @classmethod
    def from_file(cls, path: str | Path) -> "TemplateLibrary":
        with Path(path).open("r", encoding="utf-8") as f:
            data = json.load(f)
        return cls.from_dicts(data["templates"])


_builtin: TemplateLibrary | None = None


def builtin_templates() -> TemplateLibrary:
    global _builtin
    if _builtin is None:
        text = resources.files("darijakit.data").joinpath("templates.json").read_text("utf-8")
        _builtin = TemplateLibrary.from_dicts(json.loads(text)["templates"])
    return _builtin
