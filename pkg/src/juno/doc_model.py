"""Document and relational-table data model.

A document is a nested set ``{V, H}``: ``V`` is the ordered list of atomic
elements (words and image regions) and ``H`` a five-level layout tree
(page > column > paragraph > line > word) whose word leaves point into ``V``.
Documents come from hOCR markup or from the canonical JSON layout format;
tables come from a JSON array of flat objects.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from html.parser import HTMLParser
from typing import Iterator, Union

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

LEVELS = ("page", "column", "paragraph", "line", "word")
PAGE, COLUMN, PARAGRAPH, LINE, WORD = range(5)

# children key of each level in the canonical JSON format
_JSON_CHILDREN = ("columns", "paragraphs", "lines", "words")


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def w(self):
        return self.x1 - self.x0

    @property
    def h(self):
        return self.y1 - self.y0

    def contains(self, other: "BBox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)

    def union(self, other: "BBox") -> "BBox":
        return BBox(min(self.x0, other.x0), min(self.y0, other.y0),
                    max(self.x1, other.x1), max(self.y1, other.y1))

    def as_list(self) -> list:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class TextElement:
    text_data: str
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not self.text_data.strip():
            raise ValidationError("text element has empty text_data")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"text element {self.text_data!r} has non-positive size")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"text element {self.text_data!r} has negative origin")

    @property
    def bbox(self) -> BBox:
        return BBox(self.x, self.y, self.x + self.w, self.y + self.h)


@dataclass(frozen=True)
class PixelRef:
    path: str | None
    crop: tuple  # (x0, y0, x1, y1) in page pixels


@dataclass(frozen=True)
class ImageElement:
    pixel_ref: PixelRef
    x: float
    y: float
    w: float
    h: float


Element = Union[TextElement, ImageElement]


@dataclass(frozen=True)
class LayoutNode:
    level: int
    bbox: BBox
    children: tuple = ()
    element: int | None = None  # index into Document.elements, word leaves only

    @property
    def level_name(self) -> str:
        return LEVELS[self.level]

    def walk(self) -> Iterator["LayoutNode"]:
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass(frozen=True)
class LayoutTree:
    pages: tuple = ()

    def walk(self) -> Iterator[LayoutNode]:
        for p in self.pages:
            yield from p.walk()

    def word_leaves(self) -> list[LayoutNode]:
        return [n for n in self.walk() if n.level == WORD]

    def count(self, level: int) -> int:
        return sum(1 for n in self.walk() if n.level == level)

    def check_enclosure(self) -> list[str]:
        """Return a description of every node whose box misses a child box."""
        bad = []

        def visit(node, path):
            for k, c in enumerate(node.children):
                cpath = f"{path}/{c.level_name}[{k}]"
                if not node.bbox.contains(c.bbox):
                    bad.append(cpath)
                visit(c, cpath)

        for k, p in enumerate(self.pages):
            visit(p, f"page[{k}]")
        return bad


@dataclass(frozen=True)
class Document:
    doc_id: str
    elements: tuple
    layout: LayoutTree
    image_ref: str | None = None
    warnings: tuple = field(default=(), compare=False)

    @cached_property
    def word_indices(self) -> tuple:
        """Indices into ``elements`` of the word leaves, in reading order."""
        return tuple(leaf.element for leaf in self.layout.word_leaves())

    @property
    def words(self) -> list[TextElement]:
        return [self.elements[i] for i in self.word_indices]

    @property
    def n_words(self) -> int:
        return len(self.word_indices)

    @cached_property
    def word_lines(self) -> tuple:
        """Line ordinal of each word (reading order); n-grams never cross lines."""
        out = []
        line_no = -1
        for node in self.layout.walk():
            if node.level == LINE:
                line_no += 1
            elif node.level == WORD:
                out.append(line_no)
        return tuple(out)


# ---------------------------------------------------------------------------
# hOCR

_HOCR_LEVEL = {
    "ocr_page": PAGE,
    "ocr_carea": COLUMN,
    "ocr_par": PARAGRAPH,
    "ocr_line": LINE,
    "ocr_header": LINE,
    "ocr_caption": LINE,
    "ocr_textfloat": LINE,
    "ocrx_word": WORD,
}
_HOCR_IMAGE = {"ocr_image", "ocr_photo", "ocr_graphic"}
_VOID_TAGS = {"area", "base", "br", "col", "embed", "hr", "img", "input",
              "link", "meta", "param", "source", "track", "wbr"}


class _Raw:
    __slots__ = ("level", "bbox", "children", "text", "image", "props")

    def __init__(self, level, bbox, props, image=False):
        self.level = level
        self.bbox = bbox
        self.props = props
        self.children = []
        self.text = []
        self.image = image


def _parse_title(title: str) -> dict:
    props = {}
    for part in title.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, rest = part.partition(" ")
        props[key] = rest.strip()
    return props


def _bbox_from_props(props: dict) -> BBox | None:
    raw = props.get("bbox")
    if raw is None:
        return None
    try:
        x0, y0, x1, y1 = (int(v) for v in raw.split())
    except ValueError:
        return None
    return BBox(x0, y0, x1, y1)


class _HocrHandler(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.stack: list[tuple[str, _Raw | None]] = []
        self.pages: list[_Raw] = []
        self.orphans = 0

    def _enclosing(self):
        for _, node in reversed(self.stack):
            if node is not None:
                return node
        return None

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        classes = (attrs.get("class") or "").split()
        node = None
        level = next((_HOCR_LEVEL[c] for c in classes if c in _HOCR_LEVEL), None)
        is_image = any(c in _HOCR_IMAGE for c in classes)
        if level is not None or is_image:
            props = _parse_title(attrs.get("title") or "")
            node = _Raw(level, _bbox_from_props(props), props, image=is_image and level is None)
            parent = self._enclosing()
            if parent is None:
                if node.level == PAGE:
                    self.pages.append(node)
                else:
                    self.orphans += 1
            elif parent.level == WORD:
                raise ParseError(f"hOCR element {classes} nested inside a word")
            else:
                parent.children.append(node)
        if tag not in _VOID_TAGS:
            self.stack.append((tag, node))

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)
        if tag not in _VOID_TAGS:
            self.stack.pop()

    def handle_endtag(self, tag):
        if tag in _VOID_TAGS:
            return
        if not self.stack or self.stack[-1][0] != tag:
            open_tag = self.stack[-1][0] if self.stack else None
            raise ParseError(f"malformed hOCR: </{tag}> closes <{open_tag}> "
                             f"at line {self.getpos()[0]}")
        self.stack.pop()

    def handle_data(self, data):
        for _, node in reversed(self.stack):
            if node is not None:
                if node.level == WORD:
                    node.text.append(data)
                return


class _TreeBuilder:
    """Turns raw parsed nodes into a strict five-level tree."""

    def __init__(self, lenient: bool):
        self.lenient = lenient
        self.elements: list = []
        self.warnings: list[str] = []
        self.page_box: BBox | None = None
        self.image_path: str | None = None

    def page(self, raw: _Raw, path: str) -> LayoutNode:
        self.page_box = raw.bbox
        node = self._node(raw, PAGE, path)
        if node is None:  # page without a usable bbox or words
            box = raw.bbox or BBox(0, 0, 1, 1)
            return LayoutNode(PAGE, box)
        return node

    def _node(self, raw: _Raw, level: int, path: str) -> LayoutNode | None:
        if level == WORD:
            return self._word(raw, path)
        children = []
        run: list[_Raw] = []

        def flush():
            if run:
                syn = _Raw(level + 1, None, {})
                syn.children = list(run)
                child = self._node(syn, level + 1, f"{path}/~{LEVELS[level + 1]}")
                if child is not None:
                    children.append(child)
                run.clear()

        for k, c in enumerate(raw.children):
            if c.image:
                self._image(c, f"{path}/image[{k}]")
                continue
            if c.level <= level:
                raise ParseError(f"{path}: {LEVELS[c.level]} nested inside {LEVELS[level]}")
            if c.level == level + 1:
                flush()
                child = self._node(c, level + 1, f"{path}/{LEVELS[c.level]}[{k}]")
                if child is not None:
                    children.append(child)
            else:
                run.append(c)
        flush()
        if not children and level != PAGE:
            return None
        box = raw.bbox
        for c in children:
            if box is None:
                box = c.bbox
            elif not box.contains(c.bbox):
                if not self.lenient:
                    raise ValidationError(f"{path}: child bbox {c.bbox.as_list()} "
                                          f"outside parent {box.as_list()}")
                self.warnings.append(f"{path}: bbox grown to enclose children")
                box = box.union(c.bbox)
        if box is None:
            return None
        return LayoutNode(level, box, tuple(children))

    def _word(self, raw: _Raw, path: str) -> LayoutNode | None:
        text = "".join(raw.text).strip()
        box = raw.bbox
        if box is None:
            self.warnings.append(f"{path}: word without bbox skipped")
            return None
        if not text:
            self.warnings.append(f"{path}: empty word skipped")
            return None
        if box.w <= 0 or box.h <= 0 or box.x0 < 0 or box.y0 < 0:
            self.warnings.append(f"{path}: degenerate word bbox skipped")
            return None
        self.elements.append(TextElement(text, box.x0, box.y0, box.w, box.h))
        return LayoutNode(WORD, box, (), len(self.elements) - 1)

    def _image(self, raw: _Raw, path: str):
        box = raw.bbox
        if box is None or box.w <= 0 or box.h <= 0:
            self.warnings.append(f"{path}: image without usable bbox skipped")
            return
        if self.page_box is not None and not self.page_box.contains(box):
            self.warnings.append(f"{path}: image outside page bounds skipped")
            return
        ref = PixelRef(self.image_path, tuple(box.as_list()))
        self.elements.append(ImageElement(ref, box.x0, box.y0, box.w, box.h))


def parse_hocr(html_bytes: bytes, doc_id: str | None = None) -> Document:
    """Parse hOCR markup into a Document.

    Class mapping: ocr_page -> page, ocr_carea -> column, ocr_par -> paragraph,
    ocr_line (and header/caption/textfloat) -> line, ocrx_word -> word. Levels
    missing from the markup are filled with synthetic nodes so every word sits
    at depth five. Words without a bbox are dropped and reported in
    ``Document.warnings``.
    """
    if isinstance(html_bytes, str):
        text = html_bytes
    else:
        try:
            text = html_bytes.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"hOCR is not valid UTF-8: {e}") from None
    handler = _HocrHandler()
    handler.feed(text)
    handler.close()
    if handler.stack:
        raise ParseError(f"malformed hOCR: unclosed <{handler.stack[-1][0]}>")
    if not handler.pages:
        raise ParseError("hOCR contains no ocr_page element")

    builder = _TreeBuilder(lenient=True)
    pages = []
    image_ref = None
    for k, raw in enumerate(handler.pages):
        image = raw.props.get("image")
        if image:
            image = image.strip('"')
            image_ref = image_ref or image
        builder.image_path = image
        pages.append(builder.page(raw, f"page[{k}]"))
    if handler.orphans:
        builder.warnings.append(f"{handler.orphans} hOCR elements outside any page skipped")
    if doc_id is None:
        doc_id = handler.pages[0].props.get("ppageno") or "doc"
    for w in builder.warnings:
        log.debug("%s: %s", doc_id, w)
    return Document(doc_id, tuple(builder.elements), LayoutTree(tuple(pages)),
                    image_ref, tuple(builder.warnings))


# ---------------------------------------------------------------------------
# canonical JSON


def _json_bbox(obj, path):
    if not isinstance(obj, dict) or "bbox" not in obj:
        raise ValidationError(f"{path}.bbox: missing")
    b = obj["bbox"]
    if (not isinstance(b, list) or len(b) != 4
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in b)):
        raise ValidationError(f"{path}.bbox: expected [x0, y0, x1, y1] numbers, got {b!r}")
    box = BBox(*b)
    if box.w <= 0 or box.h <= 0:
        raise ValidationError(f"{path}.bbox: non-positive width or height {b!r}")
    if box.x0 < 0 or box.y0 < 0:
        raise ValidationError(f"{path}.bbox: negative coordinates {b!r}")
    return box


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: expected an object")
    extra = set(obj) - set(allowed)
    if extra:
        raise ValidationError(f"{path}: unknown field(s) {sorted(extra)}")


def parse_doc_json(json_bytes) -> Document:
    """Parse the canonical layout JSON; every parent bbox must enclose its children."""
    try:
        obj = json.loads(json_bytes)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"invalid JSON: {e}") from None
    return doc_from_obj(obj)


def doc_from_obj(obj) -> Document:
    _check_keys(obj, ("doc_id", "image_ref", "pages"), "document")
    doc_id = obj.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise ValidationError("doc_id: expected a non-empty string")
    image_ref = obj.get("image_ref")
    if image_ref is not None and not isinstance(image_ref, str):
        raise ValidationError("image_ref: expected a string or null")
    pages_obj = obj.get("pages")
    if not isinstance(pages_obj, list):
        raise ValidationError("pages: expected a list")

    elements: list[TextElement] = []

    def build(o, level, path):
        if level == WORD:
            _check_keys(o, ("bbox", "text"), path)
            box = _json_bbox(o, path)
            text = o.get("text")
            if not isinstance(text, str) or not text.strip():
                raise ValidationError(f"{path}.text: expected a non-empty string")
            elements.append(TextElement(text, box.x0, box.y0, box.w, box.h))
            return LayoutNode(WORD, box, (), len(elements) - 1)
        key = _JSON_CHILDREN[level]
        _check_keys(o, ("bbox", key), path)
        box = _json_bbox(o, path)
        kids_obj = o.get(key, [])
        if not isinstance(kids_obj, list):
            raise ValidationError(f"{path}.{key}: expected a list")
        kids = []
        for k, c in enumerate(kids_obj):
            cpath = f"{path}.{key}[{k}]"
            child = build(c, level + 1, cpath)
            if not box.contains(child.bbox):
                raise ValidationError(f"{cpath}.bbox: {child.bbox.as_list()} lies outside "
                                      f"parent bbox {box.as_list()}")
            kids.append(child)
        return LayoutNode(level, box, tuple(kids))

    pages = tuple(build(p, PAGE, f"pages[{k}]") for k, p in enumerate(pages_obj))
    return Document(doc_id, tuple(elements), LayoutTree(pages), image_ref)


def doc_to_obj(doc: Document) -> dict:
    """Canonical JSON object for a document (image elements are not serialized)."""

    def emit(node):
        out = {"bbox": node.bbox.as_list()}
        if node.level == WORD:
            out["text"] = doc.elements[node.element].text_data
        else:
            out[_JSON_CHILDREN[node.level]] = [emit(c) for c in node.children]
        return out

    return {"doc_id": doc.doc_id, "image_ref": doc.image_ref,
            "pages": [emit(p) for p in doc.layout.pages]}


def normalize_doc_obj(obj: dict) -> dict:
    """Fill defaults and fix key order without validating."""

    def norm(o, level):
        out = {"bbox": list(o["bbox"])}
        if level == WORD:
            out["text"] = o["text"]
        else:
            key = _JSON_CHILDREN[level]
            out[key] = [norm(c, level + 1) for c in o.get(key, [])]
        return out

    return {"doc_id": obj["doc_id"], "image_ref": obj.get("image_ref"),
            "pages": [norm(p, PAGE) for p in obj["pages"]]}


def dumps_doc(doc: Document) -> str:
    return json.dumps(doc_to_obj(doc), ensure_ascii=False, separators=(",", ":"))


# ---------------------------------------------------------------------------
# relational tables

Value = Union[None, str, tuple]


@dataclass(frozen=True)
class Schema:
    attributes: tuple

    def __post_init__(self):
        if len(self.attributes) < 1:
            raise ValidationError("schema must have at least one attribute")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValidationError("schema attribute names must be unique")

    @property
    def arity(self) -> int:
        return len(self.attributes)


@dataclass(frozen=True)
class Tuple:
    tuple_id: str
    values: tuple

    def is_missing(self, i: int) -> bool:
        return self.values[i] is None


def _scalar(v, where):
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return json.dumps(v)
    raise ValidationError(f"{where}: unsupported value type {type(v).__name__}")


def _value(v, where) -> Value:
    if v is None:
        return None
    if isinstance(v, list):
        items = tuple(_scalar(x, where) for x in v if x is not None)
        return items or None
    return _scalar(v, where)


def load_table(json_bytes) -> tuple[Schema, list[Tuple]]:
    """Load a table stored as a JSON array of flat objects.

    The schema is the sorted union of keys. ``null`` becomes missing, arrays
    become multi-valued attributes. Tuple ids come from the ``id`` key when
    present, otherwise from the row index.
    """
    try:
        rows = json.loads(json_bytes)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"invalid JSON: {e}") from None
    if not isinstance(rows, list):
        raise ValidationError("table root must be a JSON array")
    keys = set()
    for r, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ValidationError(f"row {r}: expected an object")
        keys.update(row)
    if not keys:
        raise ValidationError("table has no attributes (empty schema)")
    schema = Schema(tuple(sorted(keys)))

    tuples = []
    seen = set()
    for r, row in enumerate(rows):
        if "id" in row and row["id"] is not None:
            tid = _scalar(row["id"], f"row {r}.id")
        else:
            tid = str(r)
        if tid in seen:
            raise ValidationError(f"row {r}: duplicate tuple id {tid!r}")
        seen.add(tid)
        values = tuple(_value(row.get(a), f"row {r}.{a}") for a in schema.attributes)
        tuples.append(Tuple(tid, values))
    return schema, tuples


def table_to_rows(schema: Schema, tuples: list[Tuple]) -> list[dict]:
    rows = []
    for t in tuples:
        row = {}
        for a, v in zip(schema.attributes, t.values):
            row[a] = list(v) if isinstance(v, tuple) else v
        rows.append(row)
    return rows
