import struct

import numpy as np
import pytest

from scar.embeddings import (
    EmbeddingRecord,
    SyntheticStyleConfig,
    make_synthetic_tripletset,
    open_store,
    toy_embed,
    write_store,
)
from scar.errors import ConfigError, DuplicateIdError, MissingEntryError, StoreError


def _random_records(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    return [
        EmbeddingRecord(
            id=f"rec{i}",
            cls=rng.standard_normal(dim).astype(np.float32).astype(np.float64),
            pooled=rng.standard_normal(dim).astype(np.float32).astype(np.float64),
        )
        for i in range(n)
    ]


class TestStoreFormat:
    def test_round_trip_bit_identical(self, tmp_path):
        records = _random_records(7, 12)
        path = tmp_path / "emb.bin"
        write_store(records, path)
        store = open_store(path)
        assert store.dim == 12 and len(store) == 7
        for original in records:
            loaded = store.get(original.id)
            assert np.array_equal(loaded.cls, original.cls)
            assert np.array_equal(loaded.pooled, original.pooled)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "emb.bin"
        write_store(_random_records(2, 4), path)
        data = bytearray(path.read_bytes())
        data[:8] = b"XXXXXXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(StoreError, match="magic"):
            open_store(path)

    def test_declared_count_too_high(self, tmp_path):
        path = tmp_path / "emb.bin"
        write_store(_random_records(4, 4), path)
        data = bytearray(path.read_bytes())
        struct.pack_into("<Q", data, 16, 5)  # claim five records, file has four
        path.write_bytes(bytes(data))
        with pytest.raises(StoreError):
            open_store(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "emb.bin"
        write_store(_random_records(2, 4), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(StoreError, match="trailing"):
            open_store(path)

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "emb.bin"
        write_store(_random_records(1, 4), path)
        data = bytearray(path.read_bytes())
        struct.pack_into("<I", data, 8, 2)
        path.write_bytes(bytes(data))
        with pytest.raises(StoreError, match="version"):
            open_store(path)

    def test_duplicate_ids_rejected_on_write(self, tmp_path):
        recs = _random_records(2, 4)
        dup = [recs[0], EmbeddingRecord(id="rec0", cls=recs[1].cls, pooled=recs[1].pooled)]
        with pytest.raises(DuplicateIdError):
            write_store(dup, tmp_path / "emb.bin")

    def test_nan_rejected_at_record_construction(self):
        bad = np.array([np.nan, 1.0])
        with pytest.raises(ConfigError):
            EmbeddingRecord(id="x", cls=bad, pooled=bad)

    def test_missing_id_lookup(self, tmp_path):
        path = tmp_path / "emb.bin"
        write_store(_random_records(1, 4), path)
        store = open_store(path)
        with pytest.raises(MissingEntryError):
            store.get("missing")

    def test_header_corruption_fuzz(self, tmp_path):
        path = tmp_path / "emb.bin"
        write_store(_random_records(3, 6, seed=5), path)
        pristine = path.read_bytes()
        rng = np.random.default_rng(123)
        for _ in range(200):
            data = bytearray(pristine)
            offset = int(rng.integers(0, 24))
            old = data[offset]
            new = int(rng.integers(0, 256))
            if new == old:
                new = (new + 1) % 256
            data[offset] = new
            path.write_bytes(bytes(data))
            with pytest.raises(StoreError):
                open_store(path)


class TestToyEmbed:
    def test_deterministic(self):
        a = toy_embed("a deterministic sample text", dim=16, seed=3)
        b = toy_embed("a deterministic sample text", dim=16, seed=3)
        assert np.array_equal(a.cls, b.cls)
        assert np.array_equal(a.pooled, b.pooled)

    def test_unit_norm_cls(self):
        rec = toy_embed("tokens spread across dimensions here", dim=32, seed=0)
        assert abs(np.linalg.norm(rec.cls) - 1.0) < 1e-6

    def test_different_seed_changes_embedding(self):
        a = toy_embed("same text", dim=32, seed=1)
        b = toy_embed("same text", dim=32, seed=2)
        assert not np.array_equal(a.cls, b.cls)

    def test_empty_text_rejected(self):
        with pytest.raises(ConfigError):
            toy_embed("  ", dim=8, seed=0)

    def test_random_text_pairs_rarely_aligned(self):
        # hash-uniformity check: unrelated bags of words should not align
        rng = np.random.default_rng(42)
        vocab = [f"w{i}" for i in range(500)]
        worst = 0.0
        for _ in range(100):
            t1 = " ".join(rng.choice(vocab, size=50))
            t2 = " ".join(rng.choice(vocab, size=50))
            if t1 == t2:
                continue
            a = toy_embed(t1, dim=64, seed=9)
            b = toy_embed(t2, dim=64, seed=9)
            cos = float(a.cls @ b.cls)
            worst = max(worst, abs(cos))
        assert worst < 0.9


class TestSyntheticGenerator:
    def test_alignment_ordering(self):
        cfg = SyntheticStyleConfig(dim=32, n_triplets=500, seed=1)
        ts, store, instruction_ids = make_synthetic_tripletset(cfg)
        cos_d, cos_r = [], []
        for t in ts:
            u = store.get(f"{t.id}:x").cls
            cos_d.append(float(u @ store.get(f"{t.id}:d").cls))
            cos_r.append(float(u @ store.get(f"{t.id}:r").cls))
        assert np.mean(cos_d) > np.mean(cos_r)

    def test_seed_determinism(self):
        cfg = SyntheticStyleConfig(dim=16, n_triplets=20, seed=7)
        _, store_a, _ = make_synthetic_tripletset(cfg)
        _, store_b, _ = make_synthetic_tripletset(cfg)
        for rec_a, rec_b in zip(store_a, store_b):
            assert rec_a.id == rec_b.id
            assert np.array_equal(rec_a.cls, rec_b.cls)
            assert np.array_equal(rec_a.pooled, rec_b.pooled)

    def test_all_finite_and_dimensional(self):
        cfg = SyntheticStyleConfig(dim=24, n_triplets=10, seed=3)
        ts, store, instruction_ids = make_synthetic_tripletset(cfg)
        assert len(store) == 4 * len(ts)
        assert len(instruction_ids) == len(ts)
        for rec in store:
            assert rec.cls.shape == (24,)
            assert np.isfinite(rec.cls).all() and np.isfinite(rec.pooled).all()

    def test_invalid_scales_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticStyleConfig(dim=8, n_triplets=5, seed=0, align_noise_direct=0.5,
                                 align_noise_referenced=0.3)
        with pytest.raises(ConfigError):
            SyntheticStyleConfig(dim=8, n_triplets=5, seed=0, form_noise=0.0)

    def test_margin_shrinks_as_direct_noise_approaches_referenced(self):
        margins = []
        for eps_d in (0.05, 0.15, 0.25):
            cfg = SyntheticStyleConfig(
                dim=32, n_triplets=400, seed=11,
                align_noise_direct=eps_d, align_noise_referenced=0.3,
            )
            ts, store, _ = make_synthetic_tripletset(cfg)
            gap = []
            for t in ts:
                u = store.get(f"{t.id}:x").cls
                gap.append(
                    float(u @ store.get(f"{t.id}:d").cls)
                    - float(u @ store.get(f"{t.id}:r").cls)
                )
            margins.append(np.mean(gap))
        assert margins[0] > margins[1] > margins[2]
