"""Binary format contracts: embedding blocks and checkpoints."""

import struct

import numpy as np
import pytest

from idlx.errors import DataError, UsageError
from idlx.serialize import (
    load_checkpoint,
    read_embeddings,
    save_checkpoint,
    write_embeddings,
)


class TestEmbeddingBlock:
    def test_layout(self, tmp_path):
        rng = np.random.default_rng(0)
        matrix = rng.normal(size=(3, 4)).astype(np.float32)
        b, i = tmp_path / "e.bin", tmp_path / "e.ids.txt"
        write_embeddings(b, i, ["a", "b", "c"], matrix)
        blob = b.read_bytes()
        assert blob[:4] == b"IDLX"
        assert blob[4] == 1
        count, dim = struct.unpack("<II", blob[5:13])
        assert (count, dim) == (3, 4)
        assert len(blob) == 13 + 4 * 12
        assert i.read_text(encoding="utf-8") == "a\nb\nc\n"

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        matrix = rng.normal(size=(5, 7))
        b, i = tmp_path / "e.bin", tmp_path / "e.ids.txt"
        ids = [f"s{k}" for k in range(5)]
        write_embeddings(b, i, ids, matrix)
        got_ids, got = read_embeddings(b, i)
        assert got_ids == ids
        np.testing.assert_allclose(got, matrix, atol=1e-6)  # float32 storage

    def test_id_count_mismatch_rejected(self, tmp_path):
        with pytest.raises(UsageError):
            write_embeddings(tmp_path / "e.bin", tmp_path / "e.ids.txt", ["a"], np.zeros((2, 2)))

    def test_bad_magic_rejected(self, tmp_path):
        b = tmp_path / "bad.bin"
        b.write_bytes(b"NOPE" + bytes(20))
        (tmp_path / "bad.ids.txt").write_text("", encoding="utf-8")
        with pytest.raises(DataError):
            read_embeddings(b, tmp_path / "bad.ids.txt")

    def test_truncated_rejected(self, tmp_path):
        b, i = tmp_path / "e.bin", tmp_path / "e.ids.txt"
        write_embeddings(b, i, ["a", "b"], np.zeros((2, 3)))
        b.write_bytes(b.read_bytes()[:-4])
        with pytest.raises(DataError):
            read_embeddings(b, i)


class TestCheckpoint:
    def test_round_trip_values_and_meta(self, tmp_path):
        rng = np.random.default_rng(2)
        params = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=(2,)), "s": np.array(1.5)}
        meta = {"kind": "demo", "note": "x"}
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, meta, params)
        got_meta, got = load_checkpoint(path)
        assert got_meta == meta
        assert list(got) == ["w", "b", "s"]
        for k in params:
            np.testing.assert_allclose(got[k], params[k], atol=1e-6)

    def test_save_load_save_byte_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        params = {"a": rng.normal(size=(4, 4)), "b": rng.normal(size=(8,))}
        p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
        save_checkpoint(p1, {"kind": "demo"}, params)
        meta, blocks = load_checkpoint(p1)
        save_checkpoint(p2, meta, blocks)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, {}, {"x": np.zeros(2)})
        assert path.read_bytes()[:8] == b"IDLXCKPT"

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, {}, {"x": np.zeros(2)})
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(DataError):
            load_checkpoint(path)
