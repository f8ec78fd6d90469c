"""Scoring held-out datasets, top-k% subset selection with deterministic
manifests, and the simple selection baselines (random, longest,
perplexity, IFD).

Every manifest ranks all examples by (score descending, id ascending) and
marks the top max(1, floor(k*N/100)) as selected, so repeated runs with
identical inputs produce byte-identical files. Baselines emit the actual
sort score they used (the perplexity baseline uses negated PPL so that
"higher score = selected" holds uniformly).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .corpus import Dataset, _lcg_shuffle
from .embeddings import EmbeddingStore
from .errors import ConfigError, MissingEntryError
from .ranker import RankerParams, score as ranker_score

BASELINE_METHODS = ("random", "longest", "perplexity", "ifd")


@dataclass(frozen=True)
class ScoredExample:
    id: str
    score: float
    rank: int
    selected: bool


@dataclass(frozen=True)
class SelectionManifest:
    method: str
    k_percent: float
    count: int
    entries: list[ScoredExample]
    config_fingerprint: str = ""

    def selected_ids(self) -> list[str]:
        return [e.id for e in self.entries if e.selected]

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "method": self.method,
                    "k_percent": self.k_percent,
                    "count": self.count,
                    "config_hash": self.config_fingerprint,
                },
                sort_keys=True,
            )
        ]
        for e in self.entries:
            lines.append(
                json.dumps(
                    {"id": e.id, "score": e.score, "rank": e.rank, "selected": e.selected},
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def select_top_k(
    scored: Mapping[str, float],
    k_percent: float,
    method: str = "scar",
    config_fingerprint: str = "",
) -> SelectionManifest:
    """Rank a score map and mark the top k% (never fewer than one) selected.

    Ties break by ascending id for determinism.
    """
    if not scored:
        raise ConfigError("select_top_k requires at least one scored example")
    if not 0.0 < k_percent <= 100.0:
        raise ConfigError(f"k_percent must be in (0, 100], got {k_percent}")
    n = len(scored)
    count = max(1, math.floor(k_percent * n / 100.0))
    ordered = sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))
    entries = [
        ScoredExample(id=eid, score=float(s), rank=rank, selected=rank <= count)
        for rank, (eid, s) in enumerate(ordered, start=1)
    ]
    return SelectionManifest(
        method=method,
        k_percent=float(k_percent),
        count=count,
        entries=entries,
        config_fingerprint=config_fingerprint,
    )


def score_dataset(
    params: RankerParams,
    store: EmbeddingStore,
    ds: Dataset,
    threads: int = 1,
) -> dict[str, float]:
    """Ranker score for every example; pure, so thread count never changes
    the result."""
    ids = [ex.id for ex in ds]
    missing = [
        eid for eid in ids if f"{eid}:x" not in store or f"{eid}:y" not in store
    ]
    if missing:
        raise MissingEntryError(
            f"missing embeddings for {len(missing)} example(s): "
            + ", ".join(missing[:5])
        )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda eid: ranker_score(params, store, eid), ids))
    else:
        values = [ranker_score(params, store, eid) for eid in ids]
    return dict(zip(ids, values))


@dataclass(frozen=True)
class BaselineAux:
    """Side inputs for the baselines; only the relevant field is required."""

    seed: int | None = None
    lengths: Mapping[str, int] | None = None
    ppl_cond: Mapping[str, float] | None = None
    ppl_uncond: Mapping[str, float] | None = None


def _require(table: Mapping | None, name: str) -> Mapping:
    if table is None:
        raise ConfigError(f"baseline requires aux {name}")
    return table


def _aux_value(table: Mapping, eid: str, name: str) -> float:
    try:
        return float(table[eid])
    except KeyError:
        raise MissingEntryError(f"aux {name} has no entry for id {eid!r}") from None


def baseline_select(
    ds: Dataset,
    method: str,
    k_percent: float,
    aux: BaselineAux,
    config_fingerprint: str = "",
) -> SelectionManifest:
    """Baseline selectors sharing select_top_k's count rule and tie-break.

    random: seeded uniform order; longest: response token count;
    perplexity: ascending conditional PPL; ifd: descending
    PPL(y|x)/PPL(y).
    """
    if method not in BASELINE_METHODS:
        raise ConfigError(f"unknown baseline method {method!r}")
    if len(ds) == 0:
        raise ConfigError("baseline_select requires a non-empty dataset")
    ids = [ex.id for ex in ds]
    scored: dict[str, float] = {}
    if method == "random":
        if aux.seed is None:
            raise ConfigError("random baseline requires aux seed")
        order = _lcg_shuffle(len(ids), aux.seed)
        for position, idx in enumerate(order):
            scored[ids[idx]] = float(len(ids) - position)
    elif method == "longest":
        lengths = _require(aux.lengths, "lengths")
        for eid in ids:
            scored[eid] = _aux_value(lengths, eid, "lengths")
    elif method == "perplexity":
        cond = _require(aux.ppl_cond, "ppl_cond")
        for eid in ids:
            scored[eid] = -_aux_value(cond, eid, "ppl_cond")
    else:  # ifd
        cond = _require(aux.ppl_cond, "ppl_cond")
        uncond = _require(aux.ppl_uncond, "ppl_uncond")
        for eid in ids:
            denom = _aux_value(uncond, eid, "ppl_uncond")
            if denom == 0:
                raise ConfigError(f"unconditional PPL for {eid!r} is zero")
            scored[eid] = _aux_value(cond, eid, "ppl_cond") / denom
    return select_top_k(
        scored, k_percent, method=method, config_fingerprint=config_fingerprint
    )
