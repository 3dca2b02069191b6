import json

import pytest
from hypothesis import given, settings, strategies as st

from juno.doc_model import (COLUMN, LINE, PAGE, PARAGRAPH, WORD, BBox, ImageElement,
                            doc_from_obj, doc_to_obj, dumps_doc, load_table, parse_doc_json,
                            parse_hocr, table_to_rows)
from juno.errors import ParseError, ValidationError


def hocr(body, page_bbox="0 0 1000 1000", image='"scan.png"'):
    return ("<html><body><div class=\"ocr_page\" "
            f"title='image {image}; bbox {page_bbox}'>{body}</div></body></html>").encode()


def word(text, bbox):
    return f'<span class="ocrx_word" title="bbox {bbox}; x_wconf 95">{text}</span>'


def line(*words, bbox="0 0 900 100"):
    return f'<span class="ocr_line" title="bbox {bbox}">{"".join(words)}</span>'


def par(*lines, bbox="0 0 900 500"):
    return f'<p class="ocr_par" title="bbox {bbox}">{"".join(lines)}</p>'


def carea(*pars, bbox="0 0 950 900"):
    return f'<div class="ocr_carea" title="bbox {bbox}">{"".join(pars)}</div>'


class TestHocr:
    def test_single_word_geometry(self):
        doc = parse_hocr(hocr(carea(par(line(word("Pasta", "10 20 60 40"))))), doc_id="menu")
        assert doc.n_words == 1
        w = doc.words[0]
        assert (w.text_data, w.x, w.y, w.w, w.h) == ("Pasta", 10, 20, 50, 20)
        assert doc.image_ref == "scan.png"
        assert doc.layout.count(PAGE) == 1 and doc.layout.count(WORD) == 1

    def test_zero_words(self):
        doc = parse_hocr(hocr(""), doc_id="blank")
        assert doc.n_words == 0
        assert doc.layout.count(PAGE) == 1
        assert doc.layout.count(LINE) == 0

    def test_three_lines_two_words(self):
        lines = [line(word(f"w{r}a", f"{10} {100 * r + 10} {50} {100 * r + 40}"),
                      word(f"w{r}b", f"{60} {100 * r + 10} {120} {100 * r + 40}"),
                      bbox=f"0 {100 * r} 900 {100 * r + 50}") for r in range(3)]
        doc = parse_hocr(hocr(carea(par(*lines))), doc_id="grid")
        assert [w.text_data for w in doc.words] == ["w0a", "w0b", "w1a", "w1b", "w2a", "w2b"]
        assert doc.layout.count(LINE) == 3
        assert doc.word_lines == (0, 0, 1, 1, 2, 2)
        assert doc.layout.check_enclosure() == []

    def test_missing_levels_are_synthesized(self):
        # words directly under the page still sit at depth five
        doc = parse_hocr(hocr(word("alone", "5 5 50 30")), doc_id="flat")
        assert doc.n_words == 1
        for lvl in (COLUMN, PARAGRAPH, LINE):
            assert doc.layout.count(lvl) == 1
        assert all(leaf.level == WORD for leaf in doc.layout.word_leaves())

    def test_word_without_bbox_is_skipped_with_warning(self):
        body = carea(par(line('<span class="ocrx_word">ghost</span>', word("real", "1 1 9 9"))))
        doc = parse_hocr(hocr(body), doc_id="d")
        assert [w.text_data for w in doc.words] == ["real"]
        assert doc.warnings

    def test_unclosed_tag_raises(self):
        with pytest.raises(ParseError):
            parse_hocr(b'<html><body><div class="ocr_page" title="bbox 0 0 10 10"><span>')

    def test_no_page_raises(self):
        with pytest.raises(ParseError):
            parse_hocr(b"<html><body><p>text</p></body></html>")

    def test_image_regions_are_kept(self):
        body = '<div class="ocr_photo" title="bbox 100 100 300 300"></div>' + \
            carea(par(line(word("cap", "10 10 40 30"))))
        doc = parse_hocr(hocr(body), doc_id="pic")
        images = [e for e in doc.elements if isinstance(e, ImageElement)]
        assert len(images) == 1
        assert images[0].pixel_ref.crop == (100, 100, 300, 300)
        assert doc.n_words == 1

    def test_lenient_enclosure_grows_parent(self):
        body = carea(par(line(word("wide", "10 10 990 30"), bbox="10 10 100 30")))
        doc = parse_hocr(hocr(body), doc_id="wide")
        assert doc.layout.check_enclosure() == []
        assert doc.warnings


def _doc_obj(words):
    return {"doc_id": "j1", "image_ref": None, "pages": [{
        "bbox": [0, 0, 1000, 1000], "columns": [{
            "bbox": [0, 0, 1000, 1000], "paragraphs": [{
                "bbox": [0, 0, 1000, 1000], "lines": [{
                    "bbox": [0, 0, 1000, 100], "words": words}]}]}]}]}


class TestCanonicalJson:
    def test_round_trip(self):
        obj = _doc_obj([{"bbox": [1, 2, 30, 40], "text": "hello"}])
        doc = doc_from_obj(obj)
        assert doc_to_obj(doc) == obj
        assert parse_doc_json(dumps_doc(doc)) == doc

    def test_enclosure_violation_names_path(self):
        obj = _doc_obj([{"bbox": [1, 2, 30, 400], "text": "tall"}])
        with pytest.raises(ValidationError, match=r"lines\[0\]\.words\[0\]\.bbox"):
            doc_from_obj(obj)

    def test_unknown_field(self):
        obj = _doc_obj([])
        obj["extra"] = 1
        with pytest.raises(ValidationError, match="extra"):
            doc_from_obj(obj)

    def test_invalid_json(self):
        with pytest.raises(ParseError):
            parse_doc_json(b"{not json")

    @given(st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=6), max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, texts):
        words = [{"bbox": [10 * k, 0, 10 * k + 9, 50], "text": t} for k, t in enumerate(texts)]
        doc = doc_from_obj(_doc_obj(words))
        assert [w.text_data for w in doc.words] == texts
        assert doc_from_obj(json.loads(dumps_doc(doc))) == doc


class TestBBox:
    def test_union_and_contains(self):
        a, b = BBox(0, 0, 10, 10), BBox(5, 5, 20, 8)
        u = a.union(b)
        assert u == BBox(0, 0, 20, 10)
        assert u.contains(a) and u.contains(b) and not a.contains(b)


class TestTable:
    def test_load_schema_and_values(self):
        rows = [{"id": "a", "name": "Pasta", "tags": ["x", "y"], "price": 3.5},
                {"id": "b", "name": None, "tags": []}]
        schema, tuples = load_table(json.dumps(rows))
        assert schema.attributes == ("id", "name", "price", "tags")
        assert [t.tuple_id for t in tuples] == ["a", "b"]
        assert tuples[0].values == ("a", "Pasta", "3.5", ("x", "y"))
        assert tuples[1].values == ("b", None, None, None)

    def test_row_index_ids(self):
        _, tuples = load_table(b'[{"k": 1}, {"k": 2}]')
        assert [t.tuple_id for t in tuples] == ["0", "1"]

    def test_duplicate_id(self):
        with pytest.raises(ValidationError, match="duplicate"):
            load_table(b'[{"id": 1}, {"id": 1}]')

    @pytest.mark.parametrize("raw", [b'{"a": 1}', b"[]", b"[{}]", b"[1]"])
    def test_rejects(self, raw):
        with pytest.raises(ValidationError):
            load_table(raw)

    def test_rows_round_trip(self):
        rows = [{"a": "x", "b": ["p", "q"]}, {"a": None, "b": ["r"]}]
        schema, tuples = load_table(json.dumps(rows))
        assert table_to_rows(schema, tuples) == rows
