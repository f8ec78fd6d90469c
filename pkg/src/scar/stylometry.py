"""Linguistic-form analysis: tokenization, token classification, and the
six per-response style metrics with corpus-level consistency reports.

Tokenization rules (fixed, so metric values are stable):

* word tokens are maximal runs of letters, digits, and ASCII apostrophes;
  a run must contain at least one letter or digit;
* punctuation is counted per character over the set ``.,;:!?-()[]{}"'`/\\``
  plus em/en dashes, excluding characters absorbed into word tokens;
* sentences end at ``.``, ``!`` or ``?`` followed by whitespace and a
  capital letter, or at end of text, with an abbreviation guard list;
* a fenced code block (``` or ~~~) is one opaque token and one sentence.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib import resources

from .errors import ConfigError

# Periods directly after these (case-insensitive) never end a sentence.
ABBREVIATIONS = frozenset(
    ["e.g", "i.e", "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr",
     "etc", "vs", "cf", "fig", "al"]
)

PUNCTUATION_CHARS = frozenset(".,;:!?—–-()[]{}\"'`/\\")

_WORD_EXTRA = "'"  # apostrophe joins word tokens ("don't")

_FENCE_RE = re.compile(r"^[ \t]*(```|~~~)", re.MULTILINE)
_INLINE_CODE_RE = re.compile(r"`[^`\n]+`")
_BOLD_RE = re.compile(r"\*\*[^*\n]+?\*\*")
_BULLET_RE = re.compile(r"^[ \t]*(?:[-*•]\s|\d+\.(?:\s|$))")
_HEADER_RE = re.compile(r"^[ \t]*#+(?:\s|$)")

_VOWELS = frozenset("aeiouy")


@dataclass(frozen=True)
class TokenizedText:
    """Word tokens with sentence ranges and a punctuation tally.

    ``sentences`` holds half-open (start, end) token-index ranges that are
    disjoint, ordered, and together cover every word token. ``token_spans``
    gives each token's character span in the original text.
    """

    word_tokens: list[str]
    sentences: list[tuple[int, int]]
    punctuation_count: int
    token_spans: list[tuple[int, int]]


@dataclass(frozen=True)
class TokenSplit:
    """Word tokens partitioned into functional (form) and semantic lists."""

    functional: list[str]
    semantic: list[str]


@dataclass(frozen=True)
class StyleProfile:
    """The six linguistic-form metrics of one response."""

    ttr_functional: float
    mtld_functional: float
    avg_sentence_len: float
    punct_count: float
    flesch: float
    layout_freq: float

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not math.isfinite(value):
                raise ValueError(f"style metric {name} is not finite: {value}")
        if not 0.0 <= self.ttr_functional <= 100.0:
            raise ValueError(f"ttr_functional outside [0, 100]: {self.ttr_functional}")

    def as_dict(self) -> dict[str, float]:
        return {
            "ttr_functional": self.ttr_functional,
            "mtld_functional": self.mtld_functional,
            "avg_sentence_len": self.avg_sentence_len,
            "punct_count": self.punct_count,
            "flesch": self.flesch,
            "layout_freq": self.layout_freq,
        }


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float


@dataclass(frozen=True)
class CorpusStyleReport:
    """Per-metric mean and population standard deviation over a corpus."""

    metrics: dict[str, MetricStats]
    n_texts: int

    def to_json(self) -> str:
        payload = {
            "metrics": {
                name: {"mean": stats.mean, "std": stats.std}
                for name, stats in self.metrics.items()
            },
            "n_texts": self.n_texts,
        }
        return json.dumps(payload, sort_keys=True)

    def to_table(self) -> str:
        width = max(len(name) for name in self.metrics)
        lines = [f"{'metric'.ljust(width)}  {'mean':>12}  {'std':>12}"]
        for name, stats in self.metrics.items():
            lines.append(f"{name.ljust(width)}  {stats.mean:>12.4f}  {stats.std:>12.4f}")
        lines.append(f"n_texts = {self.n_texts}")
        return "\n".join(lines)


def _code_block_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of fenced blocks, fence lines included.

    An unclosed fence runs to the end of the text.
    """
    spans: list[tuple[int, int]] = []
    pos = 0
    while True:
        m = _FENCE_RE.search(text, pos)
        if m is None:
            break
        fence = m.group(1)
        open_start = m.start()
        line_end = text.find("\n", m.end())
        if line_end == -1:
            spans.append((open_start, len(text)))
            break
        close = re.compile(rf"^[ \t]*{re.escape(fence)}", re.MULTILINE).search(
            text, line_end + 1
        )
        if close is None:
            spans.append((open_start, len(text)))
            break
        close_end = text.find("\n", close.end())
        end = len(text) if close_end == -1 else close_end
        spans.append((open_start, end))
        pos = end
    return spans


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == _WORD_EXTRA


def _abbrev_before(text: str, period_pos: int) -> bool:
    """True when the period at ``period_pos`` follows a guarded abbreviation."""
    i = period_pos - 1
    while i >= 0 and (text[i].isalnum() or text[i] == "."):
        i -= 1
    chunk = text[i + 1 : period_pos].lower()
    return chunk in ABBREVIATIONS


def tokenize(text: str) -> TokenizedText:
    """Tokenize a response into word tokens, sentences, and punctuation."""
    if not text or not text.strip():
        raise ConfigError("cannot tokenize empty text")

    code_spans = _code_block_spans(text)
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    boundaries: list[int] = []  # token counts at which a sentence closes
    punct = 0

    def close_sentence() -> None:
        last = boundaries[-1] if boundaries else 0
        if len(tokens) > last:
            boundaries.append(len(tokens))

    pos = 0
    code_iter = iter(code_spans)
    next_code = next(code_iter, None)
    n = len(text)
    while pos < n:
        if next_code is not None and pos == next_code[0]:
            start, end = next_code
            close_sentence()  # prose before a fence ends its sentence
            tokens.append(text[start:end])
            spans.append((start, end))
            close_sentence()  # the block itself is one sentence
            pos = end
            next_code = next(code_iter, None)
            continue
        limit = next_code[0] if next_code is not None else n
        ch = text[pos]
        if _is_word_char(ch):
            run_start = pos
            has_alnum = False
            while pos < limit and _is_word_char(text[pos]):
                has_alnum = has_alnum or text[pos].isalnum()
                pos += 1
            if has_alnum:
                tokens.append(text[run_start:pos])
                spans.append((run_start, pos))
            else:
                punct += pos - run_start  # bare apostrophes count as punctuation
            continue
        if ch in PUNCTUATION_CHARS:
            punct += 1
            if ch in ".!?":
                if ch == "." and _abbrev_before(text, pos):
                    pos += 1
                    continue
                k = pos + 1
                while k < n and text[k].isspace():
                    k += 1
                if k >= n:
                    close_sentence()  # terminator at end of text
                elif k > pos + 1 and text[k].isupper():
                    close_sentence()  # whitespace then a capital
            pos += 1
            continue
        pos += 1  # whitespace and uncategorized symbols separate tokens

    close_sentence()
    starts = [0] + boundaries[:-1] if boundaries else []
    sentences = list(zip(starts, boundaries))
    return TokenizedText(
        word_tokens=tokens,
        sentences=sentences,
        punctuation_count=punct,
        token_spans=spans,
    )


def _load_lexicon() -> frozenset[str]:
    raw = resources.files("scar.data").joinpath("function_words.txt").read_text("utf-8")
    words = set()
    for line in raw.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


FUNCTION_WORDS = _load_lexicon()


def split_functional_semantic(text: str) -> TokenSplit:
    """Partition word tokens into functional and semantic lists.

    Lexicon words are functional; everything else is semantic. Tokens
    inside fenced blocks or inline backtick spans are always semantic
    (code carries content, not form).
    """
    tt = tokenize(text)
    code_regions = _code_block_spans(text)
    code_regions += [m.span() for m in _INLINE_CODE_RE.finditer(text)]

    def in_code(span: tuple[int, int]) -> bool:
        return any(span[0] >= s and span[1] <= e for s, e in code_regions)

    functional: list[str] = []
    semantic: list[str] = []
    for token, span in zip(tt.word_tokens, tt.token_spans):
        if not in_code(span) and token.lower() in FUNCTION_WORDS:
            functional.append(token)
        else:
            semantic.append(token)
    return TokenSplit(functional=functional, semantic=semantic)


def ttr(tokens: list[str]) -> float:
    """Type-token ratio as a percentage of distinct lowercased tokens."""
    if not tokens:
        raise ConfigError("ttr requires at least one token")
    return (100.0 * len({t.lower() for t in tokens})) / len(tokens)


def _mtld_directional(tokens: list[str], threshold: float) -> float:
    factors = 0.0
    types: set[str] = set()
    count = 0
    running = 1.0
    for token in tokens:
        count += 1
        types.add(token.lower())
        running = len(types) / count
        if running <= threshold:
            factors += 1.0
            types.clear()
            count = 0
            running = 1.0
    if count > 0:
        factors += (1.0 - running) / (1.0 - threshold)
    if factors == 0.0:
        return float(len(tokens))
    return len(tokens) / factors


def mtld(tokens: list[str], threshold: float = 0.72) -> float:
    """Bidirectional measure of textual lexical diversity.

    A factor closes whenever the running TTR of the current window drops
    to the threshold; the trailing partial window contributes
    (1 - final_TTR) / (1 - threshold). The score is length / factors,
    averaged over the forward and reversed scans. A direction with zero
    factors falls back to the token count.
    """
    if not tokens:
        raise ConfigError("mtld requires at least one token")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"mtld threshold must be in (0, 1), got {threshold}")
    forward = _mtld_directional(tokens, threshold)
    backward = _mtld_directional(list(reversed(tokens)), threshold)
    return (forward + backward) / 2.0


def syllable_count(word: str) -> int:
    """Vowel-group syllable heuristic (aeiouy runs, silent final e, min 1)."""
    w = word.lower()
    groups = 0
    prev_vowel = False
    for ch in w:
        is_vowel = ch in _VOWELS
        if is_vowel and not prev_vowel:
            groups += 1
        prev_vowel = is_vowel
    if w.endswith("e") and not (
        len(w) >= 3 and w.endswith("le") and w[-3] not in _VOWELS
    ):
        groups -= 1
    return max(groups, 1)


def flesch(text: str) -> float:
    """Flesch reading-ease score with the vowel-group syllable heuristic."""
    tt = tokenize(text)
    if not tt.word_tokens:
        raise ConfigError("flesch requires at least one word")
    if not tt.sentences:
        raise ConfigError("flesch requires at least one sentence")
    words = len(tt.word_tokens)
    sents = len(tt.sentences)
    syllables = sum(syllable_count(t) for t in tt.word_tokens)
    return 206.835 - 1.015 * (words / sents) - 84.6 * (syllables / words)


def avg_sentence_length(tt: TokenizedText) -> float:
    if not tt.sentences:
        raise ConfigError("avg_sentence_length requires at least one sentence")
    return len(tt.word_tokens) / len(tt.sentences)


def punctuation_count(tt: TokenizedText) -> int:
    return tt.punctuation_count


def layout_frequency(text: str, tt: TokenizedText) -> float:
    """Layout features (bullets, numbering, headers, bold spans) per sentence.

    Features are matched outside fenced code blocks.
    """
    if not tt.sentences:
        raise ConfigError("layout_frequency requires at least one sentence")
    code_regions = _code_block_spans(text)

    def in_code(pos: int) -> bool:
        return any(s <= pos < e for s, e in code_regions)

    features = 0
    offset = 0
    for line in text.split("\n"):
        if not in_code(offset) and (_BULLET_RE.match(line) or _HEADER_RE.match(line)):
            features += 1
        offset += len(line) + 1
    for m in _BOLD_RE.finditer(text):
        if not in_code(m.start()):
            features += 1
    return features / len(tt.sentences)


def style_profile(text: str) -> StyleProfile:
    """Compose the six linguistic-form metrics for one response.

    TTR and MTLD are computed over functional tokens only. A response
    with zero functional tokens takes the degenerate convention
    ttr_functional = 100, mtld_functional = 0.
    """
    tt = tokenize(text)
    if not tt.word_tokens:
        raise ConfigError("style_profile requires at least one word")
    parts = split_functional_semantic(text)
    if parts.functional:
        ttr_f = ttr(parts.functional)
        mtld_f = mtld(parts.functional)
    else:
        ttr_f, mtld_f = 100.0, 0.0
    return StyleProfile(
        ttr_functional=ttr_f,
        mtld_functional=mtld_f,
        avg_sentence_len=avg_sentence_length(tt),
        punct_count=float(punctuation_count(tt)),
        flesch=flesch(text),
        layout_freq=layout_frequency(text, tt),
    )


def _mean_std(values: list[float]) -> MetricStats:
    # Two-pass, input-order reduction: bit-reproducible for a fixed corpus.
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return MetricStats(mean=mean, std=math.sqrt(var))


def corpus_report(
    profiles: list[StyleProfile], ppl: list[float] | None = None
) -> CorpusStyleReport:
    """Mean and population std of each metric over a corpus of profiles.

    When per-text perplexities are supplied they must align with the
    profiles and are reported as an extra ``ppl`` row.
    """
    if not profiles:
        raise ConfigError("corpus_report requires at least one profile")
    if ppl is not None and len(ppl) != len(profiles):
        raise ConfigError("ppl list must align with profiles")
    metrics: dict[str, MetricStats] = {}
    for name in profiles[0].as_dict():
        metrics[name] = _mean_std([p.as_dict()[name] for p in profiles])
    if ppl is not None:
        metrics["ppl"] = _mean_std(list(ppl))
    return CorpusStyleReport(metrics=metrics, n_texts=len(profiles))
