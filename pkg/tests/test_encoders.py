import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from juno.doc_model import Schema, Tuple
from juno.encoders import (UNK, EmbeddingProviderConfig, FileProvider, HashProvider,
                           attribute_tokens, embed_text, encode_document, encode_span,
                           encode_tuple, fnv1a_64, parse_embedding_bytes, read_embedding_file,
                           span_key, span_token_windows, split_span_key, write_embedding_file)
from juno.errors import DimensionError, FormatError
from juno.synth import _layout


def make_doc(lines, doc_id="d"):
    return _layout(doc_id, [(ln, False) for ln in lines])[0]


class TestHashing:
    @pytest.mark.parametrize("data, expected", [
        (b"", 0xCBF29CE484222325),
        (b"a", 0xAF63DC4C8601EC8C),
        (b"foobar", 0x85944171F73967E8),
    ])
    def test_fnv_reference_vectors(self, data, expected):
        assert fnv1a_64(data) == expected

    def test_embedding_is_unit_and_case_insensitive(self):
        v = embed_text(["Pasta", "Bar"], 64)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        np.testing.assert_array_equal(v, embed_text(["pasta", "bar"], 64))

    def test_trigram_counts(self):
        # "ab" -> "^ab$" has trigrams "^ab" and "ab$"
        v = embed_text(["ab"], 1 << 20)
        assert np.count_nonzero(v) == 2

    def test_dimension_floor(self):
        with pytest.raises(DimensionError):
            embed_text(["x"], 4)

    @given(st.lists(st.text(min_size=1, max_size=8), min_size=1, max_size=5),
           st.sampled_from([8, 16, 64, 768]))
    @settings(max_examples=60, deadline=None)
    def test_deterministic_and_normalized(self, tokens, d):
        a, b = embed_text(tokens, d), embed_text(list(tokens), d)
        np.testing.assert_array_equal(a, b)
        n = np.linalg.norm(a)
        assert n == pytest.approx(1.0) or n == 0.0


class TestSpans:
    def test_windows_clip_at_line_end(self):
        doc = make_doc([["a", "b", "c"], ["d", "e"]])
        assert span_token_windows(doc, 0) == (["a"], ["a", "b"], ["a", "b", "c"])
        assert span_token_windows(doc, 1) == (["b"], ["b", "c"], ["b", "c"])
        assert span_token_windows(doc, 2) == (["c"], ["c"], ["c"])
        assert span_token_windows(doc, 3) == (["d"], ["d", "e"], ["d", "e"])

    def test_span_matrix_rows(self):
        doc = make_doc([["alpha", "beta"]], doc_id="poster")
        prov = HashProvider(32)
        F = encode_span(doc, 0, prov)
        assert F.shape == (4, 32)
        np.testing.assert_array_equal(F[0], embed_text(["alpha"], 32))
        np.testing.assert_array_equal(F[1], embed_text(["alpha", "beta"], 32))
        np.testing.assert_array_equal(F[3], embed_text(["VIS", "poster"], 32))
        np.testing.assert_array_equal(encode_document(doc, prov)[0], F)

    def test_empty_document(self):
        assert encode_document(make_doc([]), HashProvider(16)).shape == (0, 4, 16)

    def test_span_key_round_trip(self):
        assert split_span_key(span_key("a#b", 12)) == ("a#b", 12)


class TestTuples:
    def test_missing_and_multivalued(self):
        schema = Schema(("cast", "studio"))
        t = Tuple("7", (("ann lee", "bo ray"), None))
        F = encode_tuple(schema, t, HashProvider(16))
        assert F.shape == (2, 16)
        np.testing.assert_array_equal(F[0], embed_text(["cast", "ann", "lee", "bo", "ray"], 16))
        np.testing.assert_array_equal(F[1], embed_text(["studio", UNK], 16))
        assert attribute_tokens("x", None) == ["x", UNK]


class TestJemb:
    def test_round_trip_float32(self, tmp_path):
        rng = np.random.default_rng(0)
        recs = {"a": rng.normal(size=(4, 8)), "ünï": rng.normal(size=(2, 8))}
        write_embedding_file(recs, tmp_path / "x.jemb")
        back = read_embedding_file(tmp_path / "x.jemb", expect_d=8)
        assert list(back) == ["a", "ünï"]
        for k in recs:
            np.testing.assert_array_equal(back[k], recs[k].astype(np.float32))

    def test_header_layout(self, tmp_path):
        write_embedding_file({"k": np.ones((1, 8))}, tmp_path / "h.jemb")
        data = (tmp_path / "h.jemb").read_bytes()
        assert data[:4] == b"JEMB"
        assert struct.unpack_from("<III", data, 4) == (1, 8, 1)
        assert struct.unpack_from("<H", data, 16) == (1,)
        assert len(data) == 16 + 2 + 1 + 4 + 8 * 4

    def test_truncation(self, tmp_path):
        write_embedding_file({"k": np.ones((3, 8))}, tmp_path / "t.jemb")
        data = (tmp_path / "t.jemb").read_bytes()
        for cut in (3, 17, len(data) - 1):
            with pytest.raises(FormatError):
                parse_embedding_bytes(data[:cut])

    def test_bad_magic_and_dim(self, tmp_path):
        write_embedding_file({"k": np.ones((1, 8))}, tmp_path / "m.jemb")
        data = (tmp_path / "m.jemb").read_bytes()
        with pytest.raises(FormatError):
            parse_embedding_bytes(b"XEMB" + data[4:])
        with pytest.raises(DimensionError):
            parse_embedding_bytes(data, expect_d=16)


class TestFileProvider:
    def test_matches_hash_provider(self, tmp_path):
        doc = make_doc([["one", "two", "three"]], doc_id="fp")
        hp = HashProvider(16)
        spans = {span_key("fp", i): m for i, m in enumerate(encode_document(doc, hp))}
        write_embedding_file(spans, tmp_path / "s.jemb")
        fp = EmbeddingProviderConfig("file", 16, {"spans": str(tmp_path / "s.jemb")}).build()
        assert isinstance(fp, FileProvider)
        np.testing.assert_allclose(encode_document(doc, fp), encode_document(doc, hp), atol=1e-7)
