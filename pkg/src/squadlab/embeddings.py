"""Contextual-embedding providers standing in for a pretrained encoder.

Two providers feed the layer stack: a file-backed fixture store and a
deterministic hash-based pseudo-embedder.  Both are frozen inputs; no
gradient flows into them.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SQEM"
VERSION = 1


class EmbeddingError(KeyError):
    pass


@dataclass
class EmbeddingMatrix:
    qid: str
    feature_index: int
    matrix: np.ndarray  # [seq_len, d_model] fp64


def _hash_u64(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def _hashed_vector(d: int, *parts) -> np.ndarray:
    gen = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(_hash_u64(*parts))))
    return gen.uniform(-1.0, 1.0, d)


class PseudoEmbedder:
    """Deterministic function of (token string, position, seed).

    Each token hash selects a base vector; a fixed positional vector is
    mixed in so the same token differs across positions.  Integer hashing
    only, so the stream is platform-independent.
    """

    POSITION_SCALE = 0.25

    def __init__(self, d_model: int, seed: int):
        if d_model <= 0:
            raise ValueError(f"d_model must be positive, got {d_model}")
        self.d_model = d_model
        self.seed = int(seed)
        self._token_cache = {}
        self._pos_cache = {}

    def _token_vec(self, token: str) -> np.ndarray:
        v = self._token_cache.get(token)
        if v is None:
            v = _hashed_vector(self.d_model, "tok", self.seed, token)
            self._token_cache[token] = v
        return v

    def _pos_vec(self, position: int) -> np.ndarray:
        v = self._pos_cache.get(position)
        if v is None:
            v = _hashed_vector(self.d_model, "pos", position)
            self._pos_cache[position] = v
        return v

    def embed(self, feature) -> EmbeddingMatrix:
        rows = [
            self._token_vec(tok) + self.POSITION_SCALE * self._pos_vec(i)
            for i, tok in enumerate(feature.tokens)
        ]
        return EmbeddingMatrix(
            qid=feature.qid,
            feature_index=feature.feature_index,
            matrix=np.asarray(rows, dtype=np.float64),
        )

    def __call__(self, feature) -> np.ndarray:
        return self.embed(feature).matrix


def pseudo_embed(feature, d_model: int, seed: int) -> EmbeddingMatrix:
    return PseudoEmbedder(d_model, seed).embed(feature)


class CharEmbeddingTable:
    """Frozen character -> fp64 vector map with an unknown-character fallback."""

    def __init__(self, d_char: int, seed: int = 0):
        self.d_char = d_char
        self.seed = int(seed)
        self._cache = {}

    def vector(self, ch: str) -> np.ndarray:
        v = self._cache.get(ch)
        if v is None:
            v = _hashed_vector(self.d_char, "char", self.seed, ch)
            self._cache[ch] = v
        return v


# -- fixture file ---------------------------------------------------------


def save_embedding_fixture(path, matrices) -> None:
    """Binary: header {magic, version, d_model, count}, then per record
    {qid len + bytes, feature_index, seq_len, row-major fp64 LE}."""
    matrices = list(matrices)
    d_model = matrices[0].matrix.shape[1] if matrices else 0
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, d_model, len(matrices)))
        for m in matrices:
            if m.matrix.shape[1] != d_model:
                raise ValueError(
                    f"({m.qid}, {m.feature_index}) has width "
                    f"{m.matrix.shape[1]}, fixture width is {d_model}"
                )
            qb = m.qid.encode("utf-8")
            f.write(struct.pack("<I", len(qb)))
            f.write(qb)
            f.write(struct.pack("<II", m.feature_index, m.matrix.shape[0]))
            f.write(np.ascontiguousarray(m.matrix, dtype="<f8").tobytes())


class EmbeddingStore:
    """Lookup by (qid, feature_index) over a loaded fixture file."""

    def __init__(self, d_model: int, records: dict):
        self.d_model = d_model
        self._records = records

    def get(self, qid: str, feature_index: int) -> EmbeddingMatrix:
        key = (qid, feature_index)
        if key not in self._records:
            raise EmbeddingError(f"no embedding for (qid={qid!r}, "
                                 f"feature_index={feature_index})")
        return self._records[key]

    def __call__(self, feature) -> np.ndarray:
        m = self.get(feature.qid, feature.feature_index)
        if m.matrix.shape[0] != len(feature.tokens):
            raise EmbeddingError(
                f"embedding for (qid={feature.qid!r}, "
                f"feature_index={feature.feature_index}) has seq_len "
                f"{m.matrix.shape[0]}, feature has {len(feature.tokens)} tokens"
            )
        return m.matrix


def load_embedding_fixture(path) -> EmbeddingStore:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        version, d_model, count = struct.unpack("<III", f.read(12))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        records = {}
        for _ in range(count):
            (qlen,) = struct.unpack("<I", f.read(4))
            qid = f.read(qlen).decode("utf-8")
            feature_index, seq_len = struct.unpack("<II", f.read(8))
            raw = f.read(seq_len * d_model * 8)
            matrix = np.frombuffer(raw, dtype="<f8").reshape(seq_len, d_model)
            records[(qid, feature_index)] = EmbeddingMatrix(
                qid=qid, feature_index=feature_index,
                matrix=matrix.astype(np.float64),
            )
    return EmbeddingStore(d_model, records)
