"""Embedding records, the SCAREMB1 binary store, a deterministic toy
provider, and the synthetic-triplet generator used for desk-scale checks.

Store layout (little-endian throughout)::

    magic   8 bytes  b"SCAREMB1"
    version u32      1
    dim     u32      vector length M
    count   u64      number of records
    record  u16 id-byte-length, id UTF-8 bytes, M f32 cls, M f32 pooled

Vectors are stored f32 and promoted to f64 for computation. Store keys
follow the "<record-id>:<role>" convention (roles: x instruction,
y dataset response, d/r/h triplet responses).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .corpus import Triplet, TripletSet
from .errors import ConfigError, DuplicateIdError, MissingEntryError, StoreError
from .stylometry import tokenize

MAGIC = b"SCAREMB1"
VERSION = 1
_HEADER = struct.Struct("<8sIIQ")
_IDLEN = struct.Struct("<H")

ROLE_INSTRUCTION = "x"
ROLE_RESPONSE = "y"
TRIPLET_ROLES = ("d", "r", "h")


def store_key(record_id: str, role: str) -> str:
    return f"{record_id}:{role}"


@dataclass(frozen=True)
class EmbeddingRecord:
    """Per-text CLS vector and max-pooled token vector."""

    id: str
    cls: np.ndarray
    pooled: np.ndarray

    def __post_init__(self):
        if self.cls.shape != self.pooled.shape or self.cls.ndim != 1:
            raise ConfigError(f"record {self.id!r}: cls/pooled shape mismatch")
        if not (np.isfinite(self.cls).all() and np.isfinite(self.pooled).all()):
            raise ConfigError(f"record {self.id!r}: non-finite embedding values")


class EmbeddingStore:
    """In-memory, immutable view of an embedding collection."""

    def __init__(self, records: Iterable[EmbeddingRecord]):
        self._records: list[EmbeddingRecord] = list(records)
        if not self._records:
            raise ConfigError("embedding store requires at least one record")
        self.dim = int(self._records[0].cls.shape[0])
        self._index: dict[str, EmbeddingRecord] = {}
        for rec in self._records:
            if rec.cls.shape[0] != self.dim:
                raise ConfigError(
                    f"record {rec.id!r} has dim {rec.cls.shape[0]}, store dim {self.dim}"
                )
            if rec.id in self._index:
                raise DuplicateIdError(f"duplicate embedding id {rec.id!r}")
            self._index[rec.id] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        return iter(self._records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._index

    def get(self, record_id: str) -> EmbeddingRecord:
        try:
            return self._index[record_id]
        except KeyError:
            raise MissingEntryError(f"no embedding for id {record_id!r}") from None

    def ids(self) -> list[str]:
        return [r.id for r in self._records]


def write_store(records: Iterable[EmbeddingRecord], path: str | Path) -> None:
    """Write records to the SCAREMB1 binary format."""
    recs = list(records)
    store = EmbeddingStore(recs)  # validates dims, uniqueness, finiteness
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, store.dim, len(recs)))
        for rec in recs:
            id_bytes = rec.id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ConfigError(f"record id too long: {rec.id[:32]!r}...")
            fh.write(_IDLEN.pack(len(id_bytes)))
            fh.write(id_bytes)
            fh.write(np.asarray(rec.cls, dtype="<f4").tobytes())
            fh.write(np.asarray(rec.pooled, dtype="<f4").tobytes())


def open_store(path: str | Path) -> EmbeddingStore:
    """Read and validate a SCAREMB1 file; any structural defect raises."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"store file not found: {p}")
    data = p.read_bytes()
    if len(data) < _HEADER.size:
        raise StoreError("truncated header")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise StoreError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StoreError(f"unsupported version {version}")
    if dim < 1:
        raise StoreError(f"invalid dimension {dim}")
    offset = _HEADER.size
    vec_bytes = 4 * dim
    records: list[EmbeddingRecord] = []
    seen: set[str] = set()
    for _ in range(count):
        if offset + _IDLEN.size > len(data):
            raise StoreError("truncated record header")
        (id_len,) = _IDLEN.unpack_from(data, offset)
        offset += _IDLEN.size
        end = offset + id_len + 2 * vec_bytes
        if id_len == 0 or end > len(data):
            raise StoreError("truncated or malformed record")
        try:
            rec_id = data[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError:
            raise StoreError("record id is not valid UTF-8") from None
        offset += id_len
        cls = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += vec_bytes
        pooled = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        offset += vec_bytes
        if rec_id in seen:
            raise StoreError(f"duplicate record id {rec_id!r}")
        seen.add(rec_id)
        if not (np.isfinite(cls).all() and np.isfinite(pooled).all()):
            raise StoreError(f"non-finite values in record {rec_id!r}")
        records.append(EmbeddingRecord(id=rec_id, cls=cls, pooled=pooled))
    if offset != len(data):
        raise StoreError(f"{len(data) - offset} trailing bytes after last record")
    return EmbeddingStore(records)


def _token_slot(token: str, seed: int, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(
        f"{seed}:{token}".encode("utf-8"), digest_size=8
    ).digest()
    value = int.from_bytes(digest, "little")
    index = (value >> 1) % dim
    sign = 1.0 if value & 1 else -1.0
    return index, sign


def toy_embed(text: str, dim: int, seed: int) -> EmbeddingRecord:
    """Deterministic feature-hashed embedding; no model runtime needed.

    Each word token hashes to an (index, sign) slot. The cls vector is the
    L2-normalized accumulation; pooled is the per-dimension max over the
    per-token signed one-hot vectors.
    """
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    tokens = tokenize(text).word_tokens
    if not tokens:
        raise ConfigError("toy_embed requires text with at least one token")
    acc = np.zeros(dim, dtype=np.float64)
    pooled = np.full(dim, -np.inf, dtype=np.float64)
    for token in tokens:
        index, sign = _token_slot(token.lower(), seed, dim)
        acc[index] += sign
        one_hot = np.zeros(dim, dtype=np.float64)
        one_hot[index] = sign
        pooled = np.maximum(pooled, one_hot)
    norm = float(np.linalg.norm(acc))
    if norm > 0.0:
        cls = acc / norm
    else:
        cls = np.zeros(dim, dtype=np.float64)
        cls[0] = 1.0  # deterministic fallback when token signs cancel
    return EmbeddingRecord(id="", cls=cls, pooled=pooled)


def embed_texts(
    items: Iterable[tuple[str, str]], dim: int, seed: int
) -> list[EmbeddingRecord]:
    """toy_embed over (store-key, text) pairs, preserving order."""
    records = []
    for key, text in items:
        rec = toy_embed(text, dim, seed)
        records.append(EmbeddingRecord(id=key, cls=rec.cls, pooled=rec.pooled))
    return records


@dataclass(frozen=True)
class SyntheticStyleConfig:
    """Controls for the synthetic triplet generator.

    Alignment noise is the scale of the Gaussian added to the instruction
    vector before renormalizing; the human response ignores the instruction
    entirely. Direct and referenced pooled vectors share one global form
    center, human pooled vectors get per-triplet centers.
    """

    dim: int
    n_triplets: int
    seed: int
    align_noise_direct: float = 0.05
    align_noise_referenced: float = 0.3
    form_noise: float = 0.05

    def __post_init__(self):
        if self.dim < 2 or self.n_triplets < 1:
            raise ConfigError("dim must be >= 2 and n_triplets >= 1")
        for name in ("align_noise_direct", "align_noise_referenced", "form_noise"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.align_noise_direct >= self.align_noise_referenced:
            raise ConfigError(
                "align_noise_direct must be smaller than align_noise_referenced"
            )


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def make_synthetic_tripletset(
    cfg: SyntheticStyleConfig,
) -> tuple[TripletSet, EmbeddingStore, list[str]]:
    """Generate placeholder triplets plus embeddings a correct ranker can order.

    Direct responses align tightly with their instruction, referenced ones
    loosely, human ones not at all; direct and referenced share a form
    center while human form vectors scatter. Returns the triplet set, the
    store (keys "<id>:x|d|r|h"), and the instruction key list.
    """
    rng = np.random.default_rng(cfg.seed)
    shared_center = _unit(rng.standard_normal(cfg.dim))
    records: list[EmbeddingRecord] = []
    triplets: list[Triplet] = []
    instruction_ids: list[str] = []
    for i in range(cfg.n_triplets):
        tid = f"syn{i:05d}"
        u = _unit(rng.standard_normal(cfg.dim))
        direct_cls = _unit(u + cfg.align_noise_direct * rng.standard_normal(cfg.dim))
        referenced_cls = _unit(
            u + cfg.align_noise_referenced * rng.standard_normal(cfg.dim)
        )
        human_cls = _unit(rng.standard_normal(cfg.dim))
        human_center = _unit(rng.standard_normal(cfg.dim))
        direct_pooled = shared_center + cfg.form_noise * rng.standard_normal(cfg.dim)
        referenced_pooled = shared_center + cfg.form_noise * rng.standard_normal(cfg.dim)
        human_pooled = human_center + cfg.form_noise * rng.standard_normal(cfg.dim)
        x_key = store_key(tid, ROLE_INSTRUCTION)
        records.append(EmbeddingRecord(id=x_key, cls=u, pooled=u.copy()))
        records.append(EmbeddingRecord(id=store_key(tid, "d"), cls=direct_cls, pooled=direct_pooled))
        records.append(
            EmbeddingRecord(id=store_key(tid, "r"), cls=referenced_cls, pooled=referenced_pooled)
        )
        records.append(EmbeddingRecord(id=store_key(tid, "h"), cls=human_cls, pooled=human_pooled))
        instruction_ids.append(x_key)
        triplets.append(
            Triplet(
                id=tid,
                instruction=f"synthetic instruction {i}",
                human=f"synthetic human response {i}",
                referenced=f"synthetic referenced response {i}",
                direct=f"synthetic direct response {i}",
            )
        )
    return TripletSet(triplets), EmbeddingStore(records), instruction_ids
