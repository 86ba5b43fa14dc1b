"""Deterministic text-generation metrics: BLEU, chrF, ROUGE-1/L, BERTScore,
and multiple-choice accuracy.

All corpus scores use the percent convention (0-100). Tokenization for the
word-level metrics is NFC normalization, then whitespace segmentation with
punctuation split off as separate tokens; chrF works on character n-grams
with whitespace removed, so it stays robust to the spelling variation the
word-level metrics punish.
"""

from __future__ import annotations

import logging
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .providers import EmbedderProvider

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class MetricError(Exception):
    pass


def tokenize(text: str) -> list[str]:
    """NFC normalize, then split into word tokens and single punctuation
    marks."""
    return _TOKEN_RE.findall(unicodedata.normalize("NFC", text))


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps: Sequence[str], refs: Sequence[str], max_n: int = 4, smooth_eps: float = 0.0) -> float:
    """Corpus-level BLEU, percent scale.

    Geometric mean of modified n-gram precisions (n = 1..max_n) times the
    brevity penalty. Unsmoothed by default, matching the standard corpus
    definition; ``smooth_eps`` substitutes a floor for zero precisions when
    debugging at the sentence level. Orders with no hypothesis n-grams
    anywhere in the corpus (segments shorter than max_n) are excluded from
    the mean, so identity always scores 100.
    """
    if not hyps:
        raise MetricError("empty hypothesis set")
    if len(hyps) != len(refs):
        raise MetricError(f"length mismatch: {len(hyps)} hypotheses vs {len(refs)} references")
    clipped = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_tokens = tokenize(hyp)
        ref_tokens = tokenize(ref)
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp_tokens, n)
            ref_counts = _ngram_counts(ref_tokens, n)
            totals[n - 1] += sum(hyp_counts.values())
            clipped[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    precisions = []
    for c, t in zip(clipped, totals):
        if t == 0:
            continue  # effective order: no n-grams of this length exist
        precisions.append(c / t if c > 0 else smooth_eps)
    if not precisions or any(p == 0.0 for p in precisions) or hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / len(precisions))


def _chars(text: str) -> str:
    return "".join(unicodedata.normalize("NFC", text).split())


def _char_ngrams(chars: str, n: int) -> Counter:
    return Counter(chars[i:i + n] for i in range(len(chars) - n + 1))


def chrf(hyps: Sequence[str], refs: Sequence[str], char_n: int = 6, beta: float = 2.0) -> float:
    """Corpus chrF, percent scale: F_beta over character n-gram precision
    and recall averaged across orders 1..char_n (whitespace removed).

    Orders with no n-grams on either side are excluded from the average, so
    identical strings score 100 regardless of length.
    """
    if not hyps:
        raise MetricError("empty hypothesis set")
    if len(hyps) != len(refs):
        raise MetricError(f"length mismatch: {len(hyps)} hypotheses vs {len(refs)} references")
    matches = [0] * char_n
    hyp_totals = [0] * char_n
    ref_totals = [0] * char_n
    for hyp, ref in zip(hyps, refs):
        hyp_chars = _chars(hyp)
        ref_chars = _chars(ref)
        for n in range(1, char_n + 1):
            hyp_counts = _char_ngrams(hyp_chars, n)
            ref_counts = _char_ngrams(ref_chars, n)
            hyp_totals[n - 1] += sum(hyp_counts.values())
            ref_totals[n - 1] += sum(ref_counts.values())
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    precisions = []
    recalls = []
    for m, ht, rt in zip(matches, hyp_totals, ref_totals):
        if ht + rt == 0:
            continue
        precisions.append(m / ht if ht else 0.0)
        recalls.append(m / rt if rt else 0.0)
    if not precisions:
        return 0.0
    avg_p = sum(precisions) / len(precisions)
    avg_r = sum(recalls) / len(recalls)
    if avg_p + avg_r == 0.0:
        return 0.0
    beta_sq = beta * beta
    return 100.0 * (1 + beta_sq) * avg_p * avg_r / (beta_sq * avg_p + avg_r)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


_ZERO_PRF = PRF(0.0, 0.0, 0.0)


def _prf(match: float, hyp_total: float, ref_total: float) -> PRF:
    if hyp_total == 0 or ref_total == 0:
        return _ZERO_PRF
    p = match / hyp_total
    r = match / ref_total
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f1)


def rouge_n(hyp: str, ref: str, n: int = 1) -> PRF:
    """Token n-gram overlap PRF for one pair. Degenerate (empty) inputs
    score zero rather than raising, so corpus runs survive them."""
    hyp_tokens = tokenize(hyp)
    ref_tokens = tokenize(ref)
    if not hyp_tokens or not ref_tokens:
        logger.debug("rouge_n over empty token sequence scored as 0")
        return _ZERO_PRF
    hyp_counts = _ngram_counts(hyp_tokens, n)
    ref_counts = _ngram_counts(ref_tokens, n)
    match = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    return _prf(match, sum(hyp_counts.values()), sum(ref_counts.values()))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, 1):
            curr.append(prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(hyp: str, ref: str) -> PRF:
    """Longest-common-subsequence PRF for one pair; F1 is the plain
    harmonic mean."""
    hyp_tokens = tokenize(hyp)
    ref_tokens = tokenize(ref)
    if not hyp_tokens or not ref_tokens:
        logger.debug("rouge_l over empty token sequence scored as 0")
        return _ZERO_PRF
    lcs = _lcs_length(hyp_tokens, ref_tokens)
    return _prf(lcs, len(hyp_tokens), len(ref_tokens))


def bertscore(hyp: str, ref: str, embedder: EmbedderProvider) -> PRF:
    """Greedy cosine matching over provider token embeddings.

    Precision: mean over hypothesis tokens of the best cosine against any
    reference token; recall symmetric; F1 harmonic. Vectors must be
    unit-norm (checked to 1e-6).
    """
    if not hyp.strip() or not ref.strip():
        raise MetricError("bertscore requires non-empty texts")
    try:
        hyp_embedded = embedder.embed_tokens(hyp)
        ref_embedded = embedder.embed_tokens(ref)
    except Exception as exc:
        raise MetricError(f"embedder failed: {exc}") from exc
    if not hyp_embedded or not ref_embedded:
        raise MetricError("embedder returned no tokens")
    dims = {len(vec) for _, vec in (*hyp_embedded, *ref_embedded)}
    if len(dims) != 1:
        raise MetricError(f"embedder vectors must share one dimensionality, got {sorted(dims)}")
    for _, vec in (*hyp_embedded, *ref_embedded):
        norm = math.sqrt(sum(x * x for x in vec))
        if abs(norm - 1.0) > 1e-6:
            raise MetricError(f"embedder vectors must be unit-norm, got {norm:.8f}")
    hyp_vecs = [vec for _, vec in hyp_embedded]
    ref_vecs = [vec for _, vec in ref_embedded]

    def best(v, others):
        return max(sum(a * b for a, b in zip(v, o)) for o in others)

    p = sum(best(v, ref_vecs) for v in hyp_vecs) / len(hyp_vecs)
    r = sum(best(v, hyp_vecs) for v in ref_vecs) / len(ref_vecs)
    # percent convention downstream wants [0, 1]; greedy cosines can dip
    # barely below zero only with signed embeddings
    p = max(p, 0.0)
    r = max(r, 0.0)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f1)


def mcq_select(scores: Sequence[float]) -> int:
    """Argmax over per-option continuation scores; ties break to the lowest
    index."""
    if len(scores) < 2:
        raise MetricError(f"need >= 2 option scores, got {len(scores)}")
    best_idx = 0
    best = None
    for i, s in enumerate(scores):
        if math.isnan(s) or math.isinf(s):
            raise MetricError(f"non-finite score at option {i}")
        if best is None or s > best:
            best = s
            best_idx = i
    return best_idx


def accuracy(preds: Sequence[int], golds: Sequence[int]) -> float:
    """Percent of exact index matches."""
    if len(preds) != len(golds) or not preds:
        raise MetricError(f"length mismatch or empty: {len(preds)} preds vs {len(golds)} golds")
    hits = sum(1 for p, g in zip(preds, golds) if p == g)
    return 100.0 * hits / len(preds)
