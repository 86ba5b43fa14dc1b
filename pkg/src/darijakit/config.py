"""Pipeline configuration: one YAML/JSON file drives everything.

Command-line flags only override config keys; reproducibility beats
convenience. Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SOURCE_KINDS = ("parallel", "sentiment", "summarization", "qa", "story", "hardcoded", "conversations")


class ConfigError(Exception):
    pass


@dataclass
class SourceConfig:
    source_id: str
    kind: str
    path: str
    format: str = "jsonl"
    column_map: dict = field(default_factory=dict)
    allowed_labels: list[str] | None = None
    predefined_split_column: str | None = None
    directions: list[tuple[str, str]] | None = None
    license_tag: str = ""


@dataclass
class MixtureConfig:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    k_range: tuple[int, int] = (2, 5)
    repeat: int = 10
    per_task: bool = True
    test_fraction: float = 0.10
    max_story_tokens: int = 2048


@dataclass
class TranslationConfig:
    provider: str = "identity"
    lid: str = "script-heuristic"
    expect_language: str = "eng"
    arabic_tag: str = "ara"
    threshold: float = 0.80
    max_in_flight: int = 25
    max_retries: int = 3
    backoff_base: float = 0.5
    keyword_map_path: str | None = None
    exclude_sources: list[str] = field(default_factory=list)


@dataclass
class EvalTaskConfig:
    task: str
    path: str
    metrics: list[str]
    provider: str = "echo"
    scorer: str = "gold"
    embedder: str = "synthetic"


@dataclass
class JudgeConfig:
    provider: str = "always-a"
    pairs_path: str | None = None
    word_limit: int = 30
    max_in_flight: int = 8


@dataclass
class PathsConfig:
    workdir: str = "work"
    cache_dir: str | None = None


@dataclass
class PipelineConfig:
    sources: list[SourceConfig] = field(default_factory=list)
    mixture: MixtureConfig = field(default_factory=MixtureConfig)
    translation: TranslationConfig = field(default_factory=TranslationConfig)
    evaluation: list[EvalTaskConfig] = field(default_factory=list)
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    templates_path: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def workdir(self) -> Path:
        return self.resolve(self.paths.workdir)

    @property
    def cache_dir(self) -> Path:
        if self.paths.cache_dir:
            return self.resolve(self.paths.cache_dir)
        return self.workdir / "cache"


KNOWN_PROVIDER_NAMES = ("echo", "identity", "always-a", "always-b")
KNOWN_PROVIDER_PREFIXES = ("http:", "https:", "subprocess:")


def _check_provider(name: str, where: str) -> None:
    if name in KNOWN_PROVIDER_NAMES or name.startswith(KNOWN_PROVIDER_PREFIXES):
        return
    raise ConfigError(f"{where}: unresolvable provider id {name!r}")


def _tupled(value, length: int, where: str) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ConfigError(f"{where}: expected a {length}-element list, got {value!r}")
    return tuple(value)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return parse_config(raw, base_dir=path.parent.resolve())


def parse_config(raw: dict, base_dir: Path) -> PipelineConfig:
    cfg = PipelineConfig(base_dir=base_dir)

    for key, want in (("sources", list), ("evaluation", list), ("mixture", dict),
                      ("translation", dict), ("judge", dict), ("paths", dict)):
        if key in raw and not isinstance(raw[key], want):
            raise ConfigError(f"{key} must be a {want.__name__}")

    for i, s in enumerate(raw.get("sources", [])):
        if not isinstance(s, dict):
            raise ConfigError(f"sources[{i}] must be a mapping")
        try:
            directions = s.get("directions")
            if directions is not None:
                directions = [tuple(_tupled(d, 2, f"sources[{i}].directions")) for d in directions]
            source = SourceConfig(
                source_id=s["source_id"],
                kind=s["kind"],
                path=s["path"],
                format=s.get("format", "jsonl"),
                column_map=s.get("column_map", {}),
                allowed_labels=s.get("allowed_labels"),
                predefined_split_column=s.get("predefined_split_column"),
                directions=directions,
                license_tag=s.get("license_tag", ""),
            )
        except KeyError as exc:
            raise ConfigError(f"sources[{i}]: missing key {exc}") from exc
        if source.kind not in SOURCE_KINDS:
            raise ConfigError(f"sources[{i}]: unknown kind {source.kind!r}")
        if any(s.source_id == source.source_id for s in cfg.sources):
            raise ConfigError(f"sources[{i}]: duplicate source_id {source.source_id!r}")
        cfg.sources.append(source)

    mix = raw.get("mixture", {})
    try:
        cfg.mixture = MixtureConfig(
            ratios=tuple(float(x) for x in _tupled(mix.get("ratios", (0.8, 0.1, 0.1)), 3, "mixture.ratios")),
            seed=int(mix.get("seed", 0)),
            k_range=tuple(int(x) for x in _tupled(mix.get("k_range", (2, 5)), 2, "mixture.k_range")),
            repeat=int(mix.get("repeat", 10)),
            per_task=bool(mix.get("per_task", True)),
            test_fraction=float(mix.get("test_fraction", 0.10)),
            max_story_tokens=int(mix.get("max_story_tokens", 2048)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mixture: {exc}") from exc
    if abs(sum(cfg.mixture.ratios) - 1.0) > 1e-9:
        raise ConfigError(f"mixture.ratios must sum to 1, got {cfg.mixture.ratios}")
    if not 0 < cfg.mixture.test_fraction < 1:
        raise ConfigError(f"mixture.test_fraction must be in (0, 1), got {cfg.mixture.test_fraction}")
    k_min, k_max = cfg.mixture.k_range
    if k_min < 2 or k_max < k_min:
        raise ConfigError(f"mixture.k_range needs 2 <= k_min <= k_max, got {cfg.mixture.k_range}")
    if cfg.mixture.repeat < 1:
        raise ConfigError("mixture.repeat must be >= 1")
    if cfg.mixture.max_story_tokens < 32:
        raise ConfigError("mixture.max_story_tokens must be >= 32")

    tr = raw.get("translation", {})
    cfg.translation = TranslationConfig(
        provider=tr.get("provider", "identity"),
        lid=tr.get("lid", "script-heuristic"),
        expect_language=tr.get("expect_language", "eng"),
        arabic_tag=tr.get("arabic_tag", "ara"),
        threshold=float(tr.get("threshold", 0.80)),
        max_in_flight=int(tr.get("max_in_flight", 25)),
        max_retries=int(tr.get("max_retries", 3)),
        backoff_base=float(tr.get("backoff_base", 0.5)),
        keyword_map_path=tr.get("keyword_map_path"),
        exclude_sources=list(tr.get("exclude_sources", [])),
    )
    _check_provider(cfg.translation.provider, "translation.provider")
    if cfg.translation.max_in_flight < 1:
        raise ConfigError("translation.max_in_flight must be >= 1")

    for i, e in enumerate(raw.get("evaluation", [])):
        try:
            task = EvalTaskConfig(
                task=e["task"],
                path=e["path"],
                metrics=list(e["metrics"]),
                provider=e.get("provider", "echo"),
                scorer=e.get("scorer", "gold"),
                embedder=e.get("embedder", "synthetic"),
            )
        except KeyError as exc:
            raise ConfigError(f"evaluation[{i}]: missing key {exc}") from exc
        _check_provider(task.provider, f"evaluation[{i}].provider")
        cfg.evaluation.append(task)

    j = raw.get("judge", {})
    cfg.judge = JudgeConfig(
        provider=j.get("provider", "always-a"),
        pairs_path=j.get("pairs_path"),
        word_limit=int(j.get("word_limit", 30)),
        max_in_flight=int(j.get("max_in_flight", 8)),
    )
    _check_provider(cfg.judge.provider, "judge.provider")

    p = raw.get("paths", {})
    cfg.paths = PathsConfig(workdir=p.get("workdir", "work"), cache_dir=p.get("cache_dir"))
    cfg.templates_path = raw.get("templates_path")

    for source in cfg.sources:
        if not cfg.resolve(source.path).exists():
            raise ConfigError(f"source {source.source_id}: file not found: {source.path}")
    return cfg
