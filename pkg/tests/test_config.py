import json

import pytest

from darijakit.config import ConfigError, load_config
from darijakit.manifest import ManifestError, RunManifest


def minimal_config(tmp_path, **overrides):
    source = tmp_path / "rows.jsonl"
    source.write_text('{"document": "d", "title": "t"}\n', encoding="utf-8")
    raw = {
        "sources": [
            {"source_id": "s1", "kind": "summarization", "path": "rows.jsonl"},
        ],
        "mixture": {"ratios": [0.8, 0.1, 0.1], "seed": 1},
        "paths": {"workdir": "out"},
    }
    raw.update(overrides)
    path = tmp_path / "config.yaml"
    import yaml

    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return path


def test_load_minimal_config(tmp_path):
    cfg = load_config(minimal_config(tmp_path))
    assert cfg.sources[0].source_id == "s1"
    assert cfg.mixture.ratios == (0.8, 0.1, 0.1)
    assert cfg.workdir == tmp_path / "out"
    assert cfg.cache_dir == tmp_path / "out" / "cache"


def test_json_config_also_loads(tmp_path):
    source = tmp_path / "rows.jsonl"
    source.write_text('{"document": "d", "title": "t"}\n', encoding="utf-8")
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "sources": [{"source_id": "s1", "kind": "summarization", "path": "rows.jsonl"}],
    }), encoding="utf-8")
    cfg = load_config(path)
    assert cfg.sources[0].kind == "summarization"


def test_ratios_must_sum_to_one(tmp_path):
    path = minimal_config(tmp_path, mixture={"ratios": [0.7, 0.2, 0.2]})
    with pytest.raises(ConfigError, match="sum to 1"):
        load_config(path)


def test_unknown_source_kind(tmp_path):
    path = minimal_config(tmp_path)
    import yaml

    raw = yaml.safe_load(path.read_text())
    raw["sources"][0]["kind"] = "tweets"
    path.write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError, match="unknown kind"):
        load_config(path)


def test_missing_source_file(tmp_path):
    path = minimal_config(tmp_path)
    import yaml

    raw = yaml.safe_load(path.read_text())
    raw["sources"][0]["path"] = "absent.jsonl"
    path.write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError, match="not found"):
        load_config(path)


def test_unresolvable_provider_id(tmp_path):
    path = minimal_config(tmp_path, translation={"provider": "quantum-brain"})
    with pytest.raises(ConfigError, match="unresolvable provider"):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nothing.yaml")


def test_manifest_conservation_check():
    manifest = RunManifest(config_digest="x", tool_version="0")
    manifest.add_stage("ok", inputs=10, outputs=7, rejected=2, skipped=1)
    manifest.check()
    manifest.add_stage("broken", inputs=10, outputs=5)
    with pytest.raises(ManifestError, match="broken"):
        manifest.check()


def test_manifest_round_trip(tmp_path):
    manifest = RunManifest(config_digest="abc", tool_version="0.1.0", seeds={"mixture": 3})
    manifest.add_stage("ingest:x", 5, 4, rejected=1)
    manifest.subsets = [{"subset": "x", "samples": 4, "source": "x.jsonl"}]
    manifest.finish()
    path = tmp_path / "manifest.json"
    manifest.save(path)
    loaded = RunManifest.load(path)
    assert loaded.config_digest == "abc"
    assert loaded.stages[0].rejected == 1
    assert loaded.subsets == manifest.subsets


def test_k_range_validation(tmp_path):
    path = minimal_config(tmp_path, mixture={"k_range": [1, 5]})
    with pytest.raises(ConfigError, match="k_range"):
        load_config(path)


def test_malformed_section_types_are_config_errors(tmp_path):
    path = minimal_config(tmp_path, sources="not-a-list")
    with pytest.raises(ConfigError, match="sources must be a list"):
        load_config(path)
    path = minimal_config(tmp_path, mixture={"ratios": ["a", "b", "c"]})
    with pytest.raises(ConfigError, match="mixture"):
        load_config(path)


def test_duplicate_source_ids_rejected(tmp_path):
    source = tmp_path / "rows.jsonl"
    source.write_text('{"document": "d", "title": "t"}\n', encoding="utf-8")
    import yaml

    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({
        "sources": [
            {"source_id": "dup", "kind": "summarization", "path": "rows.jsonl"},
            {"source_id": "dup", "kind": "summarization", "path": "rows.jsonl"},
        ],
    }), encoding="utf-8")
    with pytest.raises(ConfigError, match="duplicate source_id"):
        load_config(path)
