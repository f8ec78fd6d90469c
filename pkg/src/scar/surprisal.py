"""Instructional-surprisal machinery.

Perplexity from summed token log-probabilities (natural log throughout),
a smoothed unigram fallback scorer so the full pipeline runs offline,
score-file ingestion, and the conditional-mutual-information diagnostic.

Real PPL(response | instruction) comes from score files produced by the
exporter; the unigram fallback ignores the instruction and exists so that
filtering, reports, and tests need no model runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .corpus import Dataset, _iter_jsonl
from .errors import ConfigError, DuplicateIdError, SchemaError
from .stylometry import tokenize


@dataclass(frozen=True)
class LmScore:
    """Sum of natural-log token probabilities for one text."""

    id: str
    logprob_sum: float
    token_count: int

    def __post_init__(self):
        if not math.isfinite(self.logprob_sum):
            raise SchemaError(f"score {self.id!r}: logprob_sum is not finite")
        if self.logprob_sum > 0:
            raise SchemaError(f"score {self.id!r}: logprob_sum must be <= 0")
        if self.token_count < 1:
            raise SchemaError(f"score {self.id!r}: token_count must be >= 1")


class Scorer(Protocol):
    """Anything that can score a target text conditioned on a context."""

    def score(self, context: str, target: str) -> tuple[float, int]:
        """Return (logprob_sum, token_count) for target given context."""
        ...


@dataclass(frozen=True)
class CmiSample:
    """Log-probabilities needed for one conditional-mutual-information term."""

    logp_c_given_xp: float
    logp_c_given_p: float
    logp_p_given_xc: float
    logp_p_given_c: float

    def __post_init__(self):
        for name in ("logp_c_given_xp", "logp_c_given_p", "logp_p_given_xc", "logp_p_given_c"):
            if not math.isfinite(getattr(self, name)):
                raise SchemaError(f"cmi sample field {name} is not finite")


def perplexity(score: LmScore) -> float:
    """exp(mean negative log-likelihood); always >= 1 for valid scores."""
    if score.token_count == 0:
        raise ConfigError("token_count must be positive")
    return math.exp(-score.logprob_sum / score.token_count)


# Per-token log-probabilities are snapped to this dyadic grid so that any
# partial sum below ~2^23 in magnitude is exact in f64, which makes
# logprob_sum exactly additive over target concatenation.
_LOG_GRID_BITS = 30


def _quantize_log(value: float) -> float:
    return math.ldexp(round(math.ldexp(value, _LOG_GRID_BITS)), -_LOG_GRID_BITS)


@dataclass(frozen=True)
class UnigramLm:
    """Add-one smoothed unigram model over lowercased word tokens.

    P(token) = (count + 1) / (total + |vocab| + 1); the trailing +1 is a
    single shared bucket for unseen tokens, so probabilities sum to one
    over vocab plus {unseen}.
    """

    vocab: dict[str, int]
    total: int

    def prob(self, token: str) -> float:
        count = self.vocab.get(token.lower(), 0)
        return (count + 1) / (self.total + len(self.vocab) + 1)

    def logprob(self, token: str) -> float:
        return _quantize_log(math.log(self.prob(token)))


def fit_unigram(corpus: Dataset) -> UnigramLm:
    """Count lowercased response word tokens over a whole dataset."""
    counts: dict[str, int] = {}
    total = 0
    for ex in corpus:
        for token in tokenize(ex.response).word_tokens:
            key = token.lower()
            counts[key] = counts.get(key, 0) + 1
            total += 1
    if total == 0:
        raise ConfigError("corpus has no response tokens")
    return UnigramLm(vocab=counts, total=total)


def unigram_score(lm: UnigramLm, context: str, target: str, score_id: str = "") -> LmScore:
    """Score a target under the unigram fallback; the context is ignored.

    Token log-probs come from the quantized grid, so the sum is exact and
    additive over concatenation.
    """
    del context  # documented limitation of the fallback
    tokens = tokenize(target).word_tokens if target.strip() else []
    if not tokens:
        raise ConfigError("unigram_score requires a non-empty target")
    logprob = sum(lm.logprob(t) for t in tokens)
    return LmScore(id=score_id, logprob_sum=logprob, token_count=len(tokens))


class UnigramScorer:
    """Scorer-contract wrapper around a fitted UnigramLm."""

    def __init__(self, lm: UnigramLm):
        self.lm = lm

    def score(self, context: str, target: str) -> tuple[float, int]:
        s = unigram_score(self.lm, context, target)
        return s.logprob_sum, s.token_count


def load_scores(path: str | Path) -> dict[str, LmScore]:
    """Load a JSONL score table {id, logprob_sum, token_count} keyed by id."""
    table: dict[str, LmScore] = {}
    for lineno, obj in _iter_jsonl(path):
        for key in ("id", "logprob_sum", "token_count"):
            if key not in obj:
                raise SchemaError(f"line {lineno}: missing key {key}")
        sid = str(obj["id"])
        if sid in table:
            raise DuplicateIdError(f"line {lineno}: duplicate score id {sid!r}")
        lp = obj["logprob_sum"]
        tc = obj["token_count"]
        if not isinstance(lp, (int, float)) or not math.isfinite(float(lp)):
            raise SchemaError(f"line {lineno}: logprob_sum must be a finite number")
        if not isinstance(tc, int) or isinstance(tc, bool):
            raise SchemaError(f"line {lineno}: token_count must be an integer")
        try:
            table[sid] = LmScore(id=sid, logprob_sum=float(lp), token_count=tc)
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return table


def ppl_table(scores: dict[str, LmScore]) -> dict[str, float]:
    """Per-id perplexities for a loaded score table."""
    return {sid: perplexity(s) for sid, s in scores.items()}


def cmi(samples: list[CmiSample]) -> tuple[float, float]:
    """Conditional mutual information estimates from per-sample log-probs.

    Returns (i_semantic, i_form): the mean log-ratio of the conditional to
    the context-free probability for semantic tokens given form tokens,
    and vice versa.
    """
    if not samples:
        raise ConfigError("cmi requires at least one sample")
    n = len(samples)
    i_semantic = sum(s.logp_c_given_xp - s.logp_c_given_p for s in samples) / n
    i_form = sum(s.logp_p_given_xc - s.logp_p_given_c for s in samples) / n
    return i_semantic, i_form


def load_cmi_samples(path: str | Path) -> list[CmiSample]:
    """Load CMI samples from JSONL with the four log-prob keys."""
    keys = ("logp_c_given_xp", "logp_c_given_p", "logp_p_given_xc", "logp_p_given_c")
    samples: list[CmiSample] = []
    for lineno, obj in _iter_jsonl(path):
        missing = [k for k in keys if k not in obj]
        if missing:
            raise SchemaError(f"line {lineno}: missing key(s) {', '.join(missing)}")
        values = {}
        for k in keys:
            v = obj[k]
            if not isinstance(v, (int, float)):
                raise SchemaError(f"line {lineno}: {k} must be a number")
            values[k] = float(v)
        try:
            samples.append(CmiSample(**values))
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return samples


def ppl_stats(scores: list[LmScore]) -> tuple[float, float]:
    """Mean and population std of per-text perplexities."""
    if not scores:
        raise ConfigError("ppl_stats requires at least one score")
    ppls = [perplexity(s) for s in scores]
    n = len(ppls)
    mean = sum(ppls) / n
    var = sum((p - mean) ** 2 for p in ppls) / n
    return mean, math.sqrt(var)
