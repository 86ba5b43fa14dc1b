"""Provider interfaces and bundled implementations.

The pipeline never embeds a language model, a language identifier, or an
embedder: all three arrive through small text-in/value-out interfaces. The
bundled implementations cover remote HTTP endpoints, local subprocesses, and
deterministic offline providers used for dry runs and acceptance checks.
"""

from __future__ import annotations

import hashlib
import math
import shlex
import subprocess
import unicodedata
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import requests


class ProviderError(Exception):
    """A provider call failed (network, subprocess, malformed reply)."""


@dataclass(frozen=True)
class GenerationParams:
    max_output_tokens: int = 4096
    temperature: float = 0.0

    def to_dict(self) -> dict:
        return {"max_output_tokens": self.max_output_tokens, "temperature": self.temperature}


GREEDY = GenerationParams(temperature=0.0)


@runtime_checkable
class GenerationProvider(Protocol):
    provider_id: str

    def complete(self, prompt: str, params: GenerationParams) -> str: ...


@runtime_checkable
class LanguageIdProvider(Protocol):
    def top_k(self, text: str, k: int = 2) -> list[tuple[str, float]]: ...


@runtime_checkable
class EmbedderProvider(Protocol):
    provider_id: str

    def embed_tokens(self, text: str) -> list[tuple[str, tuple[float, ...]]]: ...


@runtime_checkable
class ChoiceScoringProvider(Protocol):
    provider_id: str

    def score_choices(self, prompt: str, options: list[str]) -> list[float]: ...


class HttpGenerationProvider:
    """POSTs {"prompt", "params"} as JSON, expects {"text": ...} back."""

    def __init__(self, url: str, timeout: float = 120.0):
        self.url = url
        self.timeout = timeout
        self.provider_id = f"http:{url}"

    def complete(self, prompt: str, params: GenerationParams) -> str:
        try:
            resp = requests.post(
                self.url,
                json={"prompt": prompt, "params": params.to_dict()},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            body = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise ProviderError(f"http provider failed: {exc}") from exc
        if "text" not in body:
            raise ProviderError("http provider reply missing 'text'")
        return body["text"]


class SubprocessGenerationProvider:
    """Pipes the prompt to a command's stdin and reads stdout."""

    def __init__(self, command: list[str], timeout: float = 120.0):
        self.command = command
        self.timeout = timeout
        self.provider_id = "subprocess:" + " ".join(command)

    def complete(self, prompt: str, params: GenerationParams) -> str:
        try:
            proc = subprocess.run(
                self.command,
                input=prompt.encode("utf-8"),
                capture_output=True,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ProviderError(f"subprocess provider failed: {exc}") from exc
        if proc.returncode != 0:
            raise ProviderError(
                f"subprocess exited {proc.returncode}: {proc.stderr.decode('utf-8', 'replace')[:200]}"
            )
        return proc.stdout.decode("utf-8")


class EchoProvider:
    """Returns a canned response per prompt digest. The eval identity oracle:
    wired with each test item's reference so metrics can be sanity-swept."""

    provider_id = "echo"

    def __init__(self, responses: dict[str, str]):
        # prompt sha256 hex -> response
        self._responses = responses

    @staticmethod
    def prompt_key(prompt: str) -> str:
        return hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    def complete(self, prompt: str, params: GenerationParams) -> str:
        key = self.prompt_key(prompt)
        if key not in self._responses:
            raise ProviderError("echo provider has no response for this prompt")
        return self._responses[key]


class ConstantProvider:
    """Always returns the same text. Useful for judge-bias drills."""

    def __init__(self, text: str, provider_id: str = "constant"):
        self.text = text
        self.provider_id = provider_id

    def complete(self, prompt: str, params: GenerationParams) -> str:
        return self.text


class IdentityTranslationProvider:
    """Dry-run translation provider: parrots the source block back as the
    translation, wrapped in the expected tags. Lets the whole translation
    pipeline run offline."""

    provider_id = "identity"

    def complete(self, prompt: str, params: GenerationParams) -> str:
        marker = "[Source Text]"
        idx = prompt.rfind(marker)
        source = prompt[idx + len(marker):].strip() if idx >= 0 else prompt
        return f"[[Original]]\n{source}\n[[Translation]]\n{source}"


class HeuristicScriptLid:
    """Unicode-script-ratio language identifier.

    Classifies text as "ara" or "eng" by the fraction of Arabic letters among
    all letters; confidence is that fraction. Not a real language identifier,
    but enough for the Arabic-script post-filter and for offline runs. The
    tag vocabulary is {"ara", "eng"}.
    """

    def top_k(self, text: str, k: int = 2) -> list[tuple[str, float]]:
        arabic = latin = 0
        for ch in text:
            if not ch.isalpha():
                continue
            name = unicodedata.name(ch, "")
            if "ARABIC" in name:
                arabic += 1
            else:
                latin += 1
        total = arabic + latin
        p_ara = arabic / total if total else 0.0
        ranked = sorted([("ara", p_ara), ("eng", 1.0 - p_ara)], key=lambda t: -t[1])
        return ranked[:k]


class HashEmbedder:
    """Deterministic synthetic token embedder (unit-norm sha256 vectors).

    Identical tokens map to identical vectors, distinct tokens to effectively
    uncorrelated ones; no model involved. Used for metric sanity sweeps.
    """

    provider_id = "synthetic"

    def __init__(self, dim: int = 16):
        self.dim = dim

    def _vector(self, token: str) -> tuple[float, ...]:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        raw = [digest[i % len(digest)] + 1.0 for i in range(self.dim)]
        norm = math.sqrt(sum(x * x for x in raw))
        return tuple(x / norm for x in raw)

    def embed_tokens(self, text: str) -> list[tuple[str, tuple[float, ...]]]:
        tokens = text.split()
        return [(tok, self._vector(tok)) for tok in tokens]


class GoldChoiceScorer:
    """Scores the configured gold option highest. Eval harness oracle."""

    provider_id = "gold"

    def __init__(self, golds: dict[str, int]):
        # prompt sha256 hex -> gold option index
        self._golds = golds

    def score_choices(self, prompt: str, options: list[str]) -> list[float]:
        key = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        if key not in self._golds:
            raise ProviderError("gold scorer has no gold index for this prompt")
        gold = self._golds[key]
        return [1.0 if i == gold else 0.0 for i in range(len(options))]


def resolve_generation_provider(name: str, *, echo_responses: dict[str, str] | None = None):
    """Map a config provider id to an implementation.

    Supported: "echo" (needs wired responses), "identity", "always-a",
    "always-b", "http:<url>"/"https:<url>", "subprocess:<command>".
    """
    if name == "echo":
        if echo_responses is None:
            raise ValueError("echo provider needs wired responses")
        return EchoProvider(echo_responses)
    if name == "identity":
        return IdentityTranslationProvider()
    if name == "always-a":
        return ConstantProvider("Better Summary: A", provider_id="always-a")
    if name == "always-b":
        return ConstantProvider("Better Summary: B", provider_id="always-b")
    if name.startswith(("http:", "https:")):
        return HttpGenerationProvider(name)
    if name.startswith("subprocess:"):
        return SubprocessGenerationProvider(shlex.split(name[len("subprocess:"):]))
    raise ValueError(f"unknown generation provider: {name!r}")


def resolve_lid_provider(name: str) -> LanguageIdProvider:
    if name == "script-heuristic":
        return HeuristicScriptLid()
    raise ValueError(f"unknown language-id provider: {name!r}")


def resolve_embedder(name: str) -> EmbedderProvider:
    if name == "synthetic":
        return HashEmbedder()
    raise ValueError(f"unknown embedder: {name!r}")
