"""Fixed-length span and tuple representations.

Two providers sit behind the same contract:

* :class:`HashProvider` embeds token sequences with signed character-trigram
  feature hashing (FNV-1a 64). Deterministic across platforms and runs.
* :class:`FileProvider` serves vectors computed elsewhere (e.g. by a
  pretrained encoder) from JEMB files.

A span embedding is a ``4 x d`` matrix: the word, its forward bigram, its
forward trigram (both clipped at the end of the text line) and a document
level visual vector. A tuple embedding is ``n x d``, one row per attribute.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from .doc_model import Document, Schema, Tuple
from .errors import DimensionError, FormatError, ValidationError

DEFAULT_DIM = 768
UNK = "[UNK]"
VISUAL_TOKEN = "VIS"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 16)
def _token_features(token: str, d: int) -> tuple:
    """(index, sign) contributions of one token's boundary-marked trigrams."""
    s = "^" + token.lower() + "$"
    feats = []
    for k in range(len(s) - 2):
        h = fnv1a_64(s[k:k + 3].encode("utf-8"))
        sign = -1.0 if h >> 63 else 1.0
        feats.append((h % d, sign))
    return tuple(feats)


def embed_text(tokens, d: int) -> np.ndarray:
    """Signed trigram-hash embedding of a token sequence, L2-normalized."""
    if d < 8:
        raise DimensionError(f"embedding dimension must be >= 8, got {d}")
    v = np.zeros(d)
    for tok in tokens:
        for idx, sign in _token_features(tok, d):
            v[idx] += sign
    norm = np.sqrt(np.dot(v, v))
    if norm > 0:
        v /= norm
    return v


def attribute_tokens(name: str, value) -> list[str]:
    """Token sequence of one attribute: its name followed by the value tokens."""
    if value is None:
        return [name, UNK]
    if isinstance(value, tuple):
        value = " ".join(value)
    return [name] + value.split()


def span_token_windows(doc: Document, word_index: int) -> tuple[list, list, list]:
    """Word, forward bigram and forward trigram token lists, clipped at the line end."""
    n = doc.n_words
    if not 0 <= word_index < n:
        raise IndexError(f"word index {word_index} out of range for {doc.doc_id!r} ({n} words)")
    words = doc.words
    lines = doc.word_lines
    line = lines[word_index]
    window = [words[word_index].text_data]
    for k in (1, 2):
        j = word_index + k
        if j < n and lines[j] == line:
            window.append(words[j].text_data)
        else:
            break
    return window[:1], window[:2], window[:3]


class HashProvider:
    kind = "hash"

    def __init__(self, d: int = DEFAULT_DIM):
        if d < 8:
            raise DimensionError(f"embedding dimension must be >= 8, got {d}")
        self.d = d

    def text_rows(self, doc: Document, word_index: int) -> np.ndarray:
        return np.stack([embed_text(w, self.d) for w in span_token_windows(doc, word_index)])

    def visual_row(self, doc: Document) -> np.ndarray:
        return embed_text([VISUAL_TOKEN, doc.doc_id], self.d)

    def tuple_rows(self, schema: Schema, t: Tuple) -> np.ndarray:
        return np.stack([embed_text(attribute_tokens(a, v), self.d)
                         for a, v in zip(schema.attributes, t.values)])


class FileProvider:
    """Serves externally computed vectors.

    ``spans`` maps ``span_key(doc_id, i)`` to a matrix whose first three rows
    are the word/bigram/trigram vectors (a fourth row, if present, is ignored in
    favour of ``visual``). ``visual`` maps ``doc_id`` to a ``1 x d`` matrix and
    ``tuples`` maps tuple ids to ``n x d`` matrices.
    """
    kind = "file"

    def __init__(self, d: int, spans: Mapping, tuples: Mapping, visual: Mapping | None = None):
        self.d = d
        self.spans = spans
        self.tuples = tuples
        self.visual = visual or {}

    @classmethod
    def from_paths(cls, d, spans_path=None, tuples_path=None, visual_path=None):
        load = lambda p: read_embedding_file(p, expect_d=d) if p else {}
        return cls(d, load(spans_path), load(tuples_path), load(visual_path))

    def text_rows(self, doc, word_index):
        key = span_key(doc.doc_id, word_index)
        try:
            m = self.spans[key]
        except KeyError:
            raise KeyError(f"no stored span vectors for {key!r}") from None
        if m.shape[0] < 3:
            raise ValidationError(f"span record {key!r} has {m.shape[0]} rows, need 3")
        return np.asarray(m[:3], dtype=np.float64)

    def visual_row(self, doc):
        if doc.doc_id in self.visual:
            return np.asarray(self.visual[doc.doc_id][0], dtype=np.float64)
        m = self.spans.get(span_key(doc.doc_id, 0))
        if m is not None and m.shape[0] >= 4:
            return np.asarray(m[3], dtype=np.float64)
        raise KeyError(f"no stored visual vector for {doc.doc_id!r}")

    def tuple_rows(self, schema, t):
        m = self.tuples[t.tuple_id]
        if m.shape[0] != schema.arity:
            raise DimensionError(f"tuple {t.tuple_id!r}: {m.shape[0]} rows, schema arity {schema.arity}")
        return np.asarray(m, dtype=np.float64)


@dataclass
class EmbeddingProviderConfig:
    kind: str = "hash"
    d: int = DEFAULT_DIM
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("hash", "file"):
            raise ValidationError(f"unknown provider kind {self.kind!r}")
        if self.d < 8:
            raise ValidationError(f"embedding dimension must be >= 8, got {self.d}")

    def build(self):
        if self.kind == "hash":
            return HashProvider(self.d)
        return FileProvider.from_paths(self.d, self.paths.get("spans"),
                                       self.paths.get("tuples"), self.paths.get("visual"))


def encode_span(doc: Document, word_index: int, provider) -> np.ndarray:
    """4 x d span matrix: word, bigram, trigram, document visual row."""
    rows = provider.text_rows(doc, word_index)
    return np.vstack([rows, provider.visual_row(doc)[None, :]])


def encode_document(doc: Document, provider) -> np.ndarray:
    """All span matrices of a document, shape (n_words, 4, d)."""
    if doc.n_words == 0:
        return np.zeros((0, 4, provider.d))
    visual = provider.visual_row(doc)
    out = np.empty((doc.n_words, 4, provider.d))
    for i in range(doc.n_words):
        out[i, :3] = provider.text_rows(doc, i)
        out[i, 3] = visual
    return out


def encode_tuple(schema: Schema, t: Tuple, provider) -> np.ndarray:
    if len(t.values) != schema.arity:
        raise ValidationError(f"tuple {t.tuple_id!r} has {len(t.values)} values, "
                              f"schema arity is {schema.arity}")
    return provider.tuple_rows(schema, t)


def span_key(doc_id: str, word_index: int) -> str:
    return f"{doc_id}#{word_index}"


def split_span_key(key: str) -> tuple[str, int]:
    doc_id, _, idx = key.rpartition("#")
    return doc_id, int(idx)


# ---------------------------------------------------------------------------
# JEMB: "JEMB" u32 version u32 d u32 count, then per record
# u16 id_len, id bytes, u32 rows, rows*d float32; little-endian throughout.

_JEMB_MAGIC = b"JEMB"
_JEMB_VERSION = 1


def write_embedding_file(records: Mapping, path, d: int | None = None):
    if d is None:
        d = next(iter(records.values())).shape[1] if records else 0
    buf = io.BytesIO()
    buf.write(_JEMB_MAGIC)
    buf.write(struct.pack("<III", _JEMB_VERSION, d, len(records)))
    for key, m in records.items():
        m = np.asarray(m)
        if m.ndim != 2 or m.shape[1] != d:
            raise DimensionError(f"record {key!r} has shape {m.shape}, expected (rows, {d})")
        kb = key.encode("utf-8")
        if len(kb) > 0xFFFF:
            raise ValidationError(f"record id too long: {key[:40]!r}...")
        buf.write(struct.pack("<H", len(kb)))
        buf.write(kb)
        buf.write(struct.pack("<I", m.shape[0]))
        buf.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def read_embedding_file(path, expect_d: int | None = None) -> dict:
    with open(path, "rb") as f:
        data = f.read()
    return parse_embedding_bytes(data, expect_d)


def parse_embedding_bytes(data: bytes, expect_d: int | None = None) -> dict:
    if len(data) < 16 or data[:4] != _JEMB_MAGIC:
        raise FormatError("not a JEMB file (bad magic)")
    version, d, count = struct.unpack_from("<III", data, 4)
    if version != _JEMB_VERSION:
        raise FormatError(f"unsupported JEMB version {version}")
    if expect_d is not None and d != expect_d:
        raise DimensionError(f"JEMB dimension {d} does not match configured dimension {expect_d}")
    out = {}
    pos = 16
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            if pos + klen > len(data):
                raise FormatError("truncated JEMB record id")
            key = data[pos:pos + klen].decode("utf-8")
            pos += klen
            (rows,) = struct.unpack_from("<I", data, pos)
            pos += 4
            nbytes = rows * d * 4
            if pos + nbytes > len(data):
                raise FormatError(f"truncated JEMB record {key!r}")
            m = np.frombuffer(data, dtype="<f4", count=rows * d, offset=pos).reshape(rows, d)
            pos += nbytes
            if key in out:
                raise FormatError(f"duplicate JEMB record id {key!r}")
            out[key] = m.astype(np.float32)
    except struct.error:
        raise FormatError("truncated JEMB file") from None
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after JEMB records")
    return out
