"""Run manifests: per-stage counts, seeds, digests, subset table.

The manifest is the audit trail for a pipeline run. Every stage obeys the
conservation law inputs == outputs + rejected + skipped; check() enforces
it before the manifest is written.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path


class ManifestError(Exception):
    pass


@dataclass
class StageCounts:
    name: str
    inputs: int
    outputs: int
    rejected: int = 0
    skipped: int = 0

    @property
    def conserved(self) -> bool:
        return self.inputs == self.outputs + self.rejected + self.skipped

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "rejected": self.rejected,
            "skipped": self.skipped,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config_digest: str
    tool_version: str
    seeds: dict = field(default_factory=dict)
    stages: list[StageCounts] = field(default_factory=list)
    subsets: list[dict] = field(default_factory=list)
    started_at: str = field(default_factory=_now)
    finished_at: str = ""
    extra: dict = field(default_factory=dict)

    def add_stage(self, name: str, inputs: int, outputs: int, rejected: int = 0, skipped: int = 0) -> StageCounts:
        stage = StageCounts(name, inputs, outputs, rejected, skipped)
        self.stages.append(stage)
        return stage

    def check(self) -> None:
        bad = [s.name for s in self.stages if not s.conserved]
        if bad:
            raise ManifestError(f"stage conservation violated: {bad}")

    def finish(self) -> None:
        self.finished_at = _now()

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "tool_version": self.tool_version,
            "seeds": self.seeds,
            "stages": [s.to_dict() for s in self.stages],
            "subsets": self.subsets,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "extra": self.extra,
        }

    def save(self, path: str | Path) -> None:
        self.check()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        manifest = cls(
            config_digest=data["config_digest"],
            tool_version=data["tool_version"],
            seeds=data.get("seeds", {}),
            subsets=data.get("subsets", []),
            started_at=data.get("started_at", ""),
            finished_at=data.get("finished_at", ""),
            extra=data.get("extra", {}),
        )
        for s in data.get("stages", []):
            manifest.stages.append(StageCounts(s["name"], s["inputs"], s["outputs"], s["rejected"], s["skipped"]))
        return manifest


def format_subset_table(subsets: list[dict]) -> str:
    """Subset / samples / source table, mirroring the dataset composition
    overview."""
    lines = ["subset\tsamples\tsource"]
    total = 0
    for row in subsets:
        lines.append(f"{row['subset']}\t{row['samples']}\t{row.get('source', '')}")
        total += row["samples"]
    lines.append(f"TOTAL\t{total}\t")
    return "\n".join(lines)
