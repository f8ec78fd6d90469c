"""Canonical data model and corpus-level transformations.

JSONL ingestion for instruction-response examples and response triplets,
exact deduplication, surprisal-deviation filtering, and deterministic
splits. Datasets are immutable after load and safe to share read-only.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from .errors import (
    ConfigError,
    DuplicateIdError,
    MissingEntryError,
    ParseError,
    SchemaError,
)

# Surprisal-deviation filter defaults: absolute tolerance on
# |PPL(ref) - PPL(human)| and a hard cap on PPL(ref).
DEFAULT_PPL_ABS_TOL = 0.15
DEFAULT_PPL_CAP = 2.5


@dataclass(frozen=True)
class Example:
    """One instruction-response pair."""

    id: str
    instruction: str
    response: str
    source: str = ""
    meta: Mapping[str, str] | None = None

    def __post_init__(self):
        if not self.id:
            raise SchemaError("example id must be non-empty")
        if not self.instruction.strip():
            raise SchemaError(f"example {self.id!r}: instruction is empty")
        if not self.response.strip():
            raise SchemaError(f"example {self.id!r}: response is empty")


@dataclass(frozen=True)
class Triplet:
    """An instruction with its human, referenced, and direct responses."""

    id: str
    instruction: str
    human: str
    referenced: str
    direct: str

    def __post_init__(self):
        if not self.id:
            raise SchemaError("triplet id must be non-empty")
        for name in ("instruction", "human", "referenced", "direct"):
            if not getattr(self, name).strip():
                raise SchemaError(f"triplet {self.id!r}: {name} is empty")

    def response(self, role: str) -> str:
        if role not in ("human", "referenced", "direct"):
            raise ConfigError(f"unknown triplet role {role!r}")
        return getattr(self, role)


@dataclass(frozen=True)
class Provenance:
    path: str
    loaded_at: float


@dataclass
class Dataset:
    """Ordered, immutable-by-convention collection of Examples."""

    examples: list[Example]
    provenance: Provenance | None = None
    _by_id: dict[str, Example] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {}
        for ex in self.examples:
            if ex.id in self._by_id:
                raise DuplicateIdError(f"duplicate example id {ex.id!r}")
            self._by_id[ex.id] = ex

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def get(self, example_id: str) -> Example:
        try:
            return self._by_id[example_id]
        except KeyError:
            raise MissingEntryError(f"no example with id {example_id!r}") from None


@dataclass
class TripletSet:
    """Ordered, immutable-by-convention collection of Triplets."""

    triplets: list[Triplet]
    provenance: Provenance | None = None
    _by_id: dict[str, Triplet] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {}
        for t in self.triplets:
            if t.id in self._by_id:
                raise DuplicateIdError(f"duplicate triplet id {t.id!r}")
            self._by_id[t.id] = t

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self) -> Iterator[Triplet]:
        return iter(self.triplets)

    def get(self, triplet_id: str) -> Triplet:
        try:
            return self._by_id[triplet_id]
        except KeyError:
            raise MissingEntryError(f"no triplet with id {triplet_id!r}") from None


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/val/test partition specification."""

    train_fraction: float
    val_fraction: float
    test_fraction: float
    seed: int

    def __post_init__(self):
        for f in (self.train_fraction, self.val_fraction, self.test_fraction):
            if not 0.0 <= f <= 1.0:
                raise ConfigError(f"split fraction {f} outside [0, 1]")
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"split fractions sum to {total}, expected 1")


@dataclass(frozen=True)
class DedupReport:
    removed: list[str]
    kept_map: dict[str, str]

    def to_json(self) -> str:
        return json.dumps(
            {"removed": self.removed, "kept_map": self.kept_map}, sort_keys=True
        )


@dataclass(frozen=True)
class FilterReport:
    kept: int
    removed: int
    removed_ids: list[str]

    def to_json(self) -> str:
        return json.dumps(
            {"kept": self.kept, "removed": self.removed, "removed_ids": self.removed_ids},
            sort_keys=True,
        )


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (1-based line number, parsed object) for non-blank lines."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"input file not found: {p}")
    with p.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line=lineno)
            yield lineno, obj


def _require_keys(obj: dict, keys: tuple[str, ...], lineno: int) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise SchemaError(f"line {lineno}: missing key(s) {', '.join(missing)}")


def load_examples(path: str | Path) -> Dataset:
    """Load a Dataset from JSONL with keys id, instruction, response.

    Optional keys ``source`` (string tag) and ``meta`` (string map) are
    preserved. Order is file order; errors carry line numbers.
    """
    examples: list[Example] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        _require_keys(obj, ("id", "instruction", "response"), lineno)
        ex_id = str(obj["id"])
        if ex_id in seen:
            raise DuplicateIdError(
                f"duplicate id {ex_id!r} on lines {seen[ex_id]} and {lineno}"
            )
        seen[ex_id] = lineno
        meta = obj.get("meta")
        if meta is not None and not isinstance(meta, dict):
            raise SchemaError(f"line {lineno}: meta must be an object")
        try:
            examples.append(
                Example(
                    id=ex_id,
                    instruction=str(obj["instruction"]),
                    response=str(obj["response"]),
                    source=str(obj.get("source", "")),
                    meta={str(k): str(v) for k, v in meta.items()} if meta else None,
                )
            )
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return Dataset(examples, provenance=Provenance(str(path), time.time()))


def load_triplets(path: str | Path) -> TripletSet:
    """Load a TripletSet from JSONL with keys id, instruction, human, referenced, direct."""
    triplets: list[Triplet] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        _require_keys(obj, ("id", "instruction", "human", "referenced", "direct"), lineno)
        t_id = str(obj["id"])
        if t_id in seen:
            raise DuplicateIdError(
                f"duplicate id {t_id!r} on lines {seen[t_id]} and {lineno}"
            )
        seen[t_id] = lineno
        try:
            triplets.append(
                Triplet(
                    id=t_id,
                    instruction=str(obj["instruction"]),
                    human=str(obj["human"]),
                    referenced=str(obj["referenced"]),
                    direct=str(obj["direct"]),
                )
            )
        except SchemaError as exc:
            raise SchemaError(f"line {lineno}: {exc}") from None
    return TripletSet(triplets, provenance=Provenance(str(path), time.time()))


def save_examples(ds: Dataset, path: str | Path) -> None:
    """Write a Dataset back to JSONL, preserving field values and order."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in ds:
            rec: dict = {"id": ex.id, "instruction": ex.instruction, "response": ex.response}
            if ex.source:
                rec["source"] = ex.source
            if ex.meta:
                rec["meta"] = dict(ex.meta)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def save_triplets(ts: TripletSet, path: str | Path) -> None:
    """Write a TripletSet back to JSONL, preserving field values and order."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in ts:
            rec = {
                "id": t.id,
                "instruction": t.instruction,
                "human": t.human,
                "referenced": t.referenced,
                "direct": t.direct,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _normalize_for_dedup(text: str) -> str:
    # Collapse whitespace runs to single spaces, trim; case is preserved on
    # purpose (case changes are a stylistic signal).
    return " ".join(text.split())


def dedup_exact(ds: Dataset) -> tuple[Dataset, DedupReport]:
    """Drop later records whose (instruction, response) duplicates an earlier one.

    Duplicate detection is exact after whitespace normalization. The first
    occurrence is kept; the report maps each removed id to the kept id.
    """
    kept: list[Example] = []
    first_by_key: dict[tuple[str, str], str] = {}
    removed: list[str] = []
    kept_map: dict[str, str] = {}
    for ex in ds:
        key = (_normalize_for_dedup(ex.instruction), _normalize_for_dedup(ex.response))
        if key in first_by_key:
            removed.append(ex.id)
            kept_map[ex.id] = first_by_key[key]
        else:
            first_by_key[key] = ex.id
            kept.append(ex)
    return Dataset(kept, provenance=ds.provenance), DedupReport(removed, kept_map)


def filter_surprisal_deviation(
    ts: TripletSet,
    ppl: Mapping[str, float],
    abs_tol: float = DEFAULT_PPL_ABS_TOL,
    cap: float = DEFAULT_PPL_CAP,
) -> tuple[TripletSet, FilterReport]:
    """Keep triplets whose referenced response tracks the human one in perplexity.

    ``ppl`` maps "<triplet-id>:r" and "<triplet-id>:h" to PPL(response | instruction).
    A triplet is kept iff |PPL_r - PPL_h| <= abs_tol and PPL_r <= cap.
    """
    if abs_tol <= 0 or cap <= 0:
        raise ConfigError("abs_tol and cap must be positive")
    kept: list[Triplet] = []
    removed_ids: list[str] = []
    for t in ts:
        try:
            ppl_r = ppl[f"{t.id}:r"]
            ppl_h = ppl[f"{t.id}:h"]
        except KeyError as exc:
            raise MissingEntryError(f"no PPL entry for {exc.args[0]!r}") from None
        if abs(ppl_r - ppl_h) <= abs_tol and ppl_r <= cap:
            kept.append(t)
        else:
            removed_ids.append(t.id)
    report = FilterReport(kept=len(kept), removed=len(removed_ids), removed_ids=removed_ids)
    return TripletSet(kept, provenance=ts.provenance), report


# 64-bit LCG (Knuth MMIX constants) used for the split shuffle so that the
# permutation is reproducible across platforms and numpy versions.
_LCG_MULT = 6364136223846793005
_LCG_INC = 1442695040888963407
_LCG_MASK = (1 << 64) - 1


def _lcg_next(state: int) -> int:
    return (state * _LCG_MULT + _LCG_INC) & _LCG_MASK


def _lcg_shuffle(n: int, seed: int) -> list[int]:
    """Fisher-Yates permutation of range(n) driven by the LCG above."""
    order = list(range(n))
    state = seed & _LCG_MASK
    for i in range(n - 1, 0, -1):
        state = _lcg_next(state)
        j = state % (i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def split(ts: TripletSet, spec: SplitSpec) -> tuple[TripletSet, TripletSet, TripletSet]:
    """Deterministically shuffle and partition a TripletSet.

    Counts are floor(fraction * N) for val and test; the remainder goes to
    train. The same (ts, spec) always yields identical splits.
    """
    n = len(ts)
    order = _lcg_shuffle(n, spec.seed)
    shuffled = [ts.triplets[i] for i in order]
    n_train = int(spec.train_fraction * n)
    n_val = int(spec.val_fraction * n)
    n_test = int(spec.test_fraction * n)
    n_train += n - (n_train + n_val + n_test)
    train = shuffled[:n_train]
    val = shuffled[n_train : n_train + n_val]
    test = shuffled[n_train + n_val :]
    return (
        TripletSet(train, provenance=ts.provenance),
        TripletSet(val, provenance=ts.provenance),
        TripletSet(test, provenance=ts.provenance),
    )
