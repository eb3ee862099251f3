"""Binary file formats: embedding blocks and parameter checkpoints.

Embedding block: magic ``IDLX``, version byte, u32 count, u32 dim
(little-endian), then count x dim little-endian float32 values. Sentence
ids live in a parallel UTF-8 text file, one id per line.

Checkpoint: magic ``IDLXCKPT``, version byte, u32 header length, a JSON
header (shapes and metadata), then raw little-endian float32 parameter
blocks in header order. Save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError, UsageError

EMBED_MAGIC = b"IDLX"
CKPT_MAGIC = b"IDLXCKPT"
FORMAT_VERSION = 1


def write_embeddings(bin_path, ids_path, ids, matrix) -> None:
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise UsageError("embedding matrix must be 2-D (count x dim)")
    if len(ids) != matrix.shape[0]:
        raise UsageError(f"{len(ids)} ids for {matrix.shape[0]} embedding rows")
    with open(bin_path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes(order="C"))
    with open(ids_path, "w", encoding="utf-8") as fh:
        for sid in ids:
            fh.write(str(sid) + "\n")


def read_embeddings(bin_path, ids_path) -> tuple[list[str], np.ndarray]:
    try:
        blob = open(bin_path, "rb").read()
    except OSError as e:
        raise DataError(f"cannot read embeddings {bin_path}: {e}") from e
    if blob[:4] != EMBED_MAGIC:
        raise DataError(f"{bin_path} is not an embedding block (bad magic)")
    version = blob[4]
    if version != FORMAT_VERSION:
        raise DataError(f"{bin_path} has unsupported version {version}")
    count, dim = struct.unpack("<II", blob[5:13])
    expected = 13 + 4 * count * dim
    if len(blob) != expected:
        raise DataError(f"{bin_path} truncated: {len(blob)} bytes, expected {expected}")
    matrix = np.frombuffer(blob[13:], dtype="<f4").reshape(count, dim).astype(np.float64)
    try:
        with open(ids_path, "r", encoding="utf-8") as fh:
            ids = [line.rstrip("\n") for line in fh if line.strip()]
    except OSError as e:
        raise DataError(f"cannot read embedding ids {ids_path}: {e}") from e
    if len(ids) != count:
        raise DataError(f"{ids_path} lists {len(ids)} ids for {count} embeddings")
    return ids, matrix


def save_checkpoint(path, meta: dict, params: dict[str, np.ndarray]) -> None:
    """Write a checkpoint; ``meta`` must be JSON-serializable."""
    header = {
        "version": FORMAT_VERSION,
        "meta": meta,
        "params": [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in params.items()],
    }
    header_bytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for value in params.values():
            fh.write(np.asarray(value, dtype="<f4").tobytes(order="C"))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        blob = open(path, "rb").read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:8] != CKPT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    version = blob[8]
    if version != FORMAT_VERSION:
        raise DataError(f"{path} has unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<I", blob[9:13])
    try:
        header = json.loads(blob[13 : 13 + header_len].decode("utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path} has a corrupt header") from e
    offset = 13 + header_len
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(blob):
            raise DataError(f"{path} truncated while reading {entry['name']}")
        arr = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape).astype(np.float64)
        params[entry["name"]] = arr
        offset = end
    if offset != len(blob):
        raise DataError(f"{path} has {len(blob) - offset} trailing bytes")
    return header["meta"], params
