"""Planted-correlation synthetic corpus.

Generator (all draws from one ``numpy.random.default_rng(seed)``):

1. Vocabulary: pseudo-words of 3-4 consonant-vowel syllables plus an
   optional final consonant, all distinct. First names, last names, title
   words, studio words and distractor words come from disjoint pools.
2. Table: ``n_tuples`` rows with attributes ``cast`` (two names,
   multi-valued), ``director`` (a name), ``genres`` (two of 12,
   multi-valued), ``studio`` (2 words, null with probability 0.1) and
   ``title`` (3 words). Tuple ids are row indices (no ``id`` key).
3. Documents: ``n_docs`` distinct gold tuples are sampled without
   replacement; ids are ``synthetic-movie-poster-document-NNNNN``. Each
   document has a title line, a director line, one line per cast member and
   2-3 distractor lines of 3-5 distractor words; lines after the title are
   shuffled. With ``doc_words`` set, distractor words are added or
   trailing lines trimmed until the document has exactly that many words.
4. Triplets: documents are visited round robin; each visit labels one not yet
   used word that was copied from the gold tuple (title, director or cast
   word). The first ``n_triplets`` are the training split, the next ``n_val``
   the validation split. Negatives come from :func:`sample_negative`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import TrainingTriplet, sample_negative
from .doc_model import BBox, Document, LayoutNode, LayoutTree, TextElement, PAGE, COLUMN, PARAGRAPH, LINE, WORD

_CONS = np.array(list("bcdfghjklmnprstvz"))
_VOWELS = np.array(list("aeiou"))
GENRES = ["action", "comedy", "drama", "horror", "thriller", "western", "romance",
          "crime", "fantasy", "musical", "mystery", "documentary"]

PAGE_W, PAGE_H = 1200, 2000
LINE_H, CHAR_W, GAP = 28, 14, 12


@dataclass
class SynthCorpus:
    docs: list
    rows: list
    gold: dict
    train: list
    val: list
    seed: int


class _Vocab:
    def __init__(self, rng):
        self.rng = rng
        self.used: set = set(GENRES)

    def word(self) -> str:
        while True:
            n = int(self.rng.integers(3, 5))
            w = "".join(_CONS[self.rng.integers(len(_CONS))] + _VOWELS[self.rng.integers(len(_VOWELS))]
                        for _ in range(n))
            if self.rng.random() < 0.5:
                w += _CONS[self.rng.integers(len(_CONS))]
            if w not in self.used:
                self.used.add(w)
                return w

    def pool(self, size):
        return np.array([self.word() for _ in range(size)])


def _name(rng, first, last):
    return f"{first[rng.integers(len(first))]} {last[rng.integers(len(last))]}"


def generate(n_docs=100, n_tuples=1000, seed=7, n_triplets=200, n_val=50,
             doc_words: int | None = None) -> SynthCorpus:
    if n_docs > n_tuples:
        raise ValueError("need at least as many tuples as documents")
    rng = np.random.default_rng(seed)
    vocab = _Vocab(rng)
    first = vocab.pool(max(100, 2 * n_tuples))
    last = vocab.pool(max(100, 2 * n_tuples))
    title_words = vocab.pool(max(300, 3 * n_tuples))
    studio_words = vocab.pool(40)
    distract = vocab.pool(400)

    rows = []
    for _ in range(n_tuples):
        rows.append({
            "cast": [_name(rng, first, last), _name(rng, first, last)],
            "director": _name(rng, first, last),
            "genres": [str(g) for g in rng.choice(GENRES, 2, replace=False)],
            "studio": None if rng.random() < 0.1 else " ".join(rng.choice(studio_words, 2)),
            "title": " ".join(rng.choice(title_words, 3, replace=False)),
        })

    gold_rows = rng.choice(n_tuples, n_docs, replace=False)
    docs, gold, planted = [], {}, {}
    for k, r in enumerate(gold_rows):
        doc_id = f"synthetic-movie-poster-document-{k:05d}"
        row = rows[int(r)]
        entity_lines = [row["director"].split()] + [a.split() for a in row["cast"]]
        noise_lines = [rng.choice(distract, int(rng.integers(3, 6))).tolist()
                       for _ in range(int(rng.integers(2, 4)))]
        tagged = [(ln, True) for ln in entity_lines] + [(ln, False) for ln in noise_lines]
        tagged = [tagged[i] for i in rng.permutation(len(tagged))]
        lines = [(row["title"].split(), True)] + tagged
        if doc_words is not None:
            lines = _fit_length(lines, doc_words, rng, distract)
        doc, entity_idx = _layout(doc_id, lines)
        docs.append(doc)
        gold[doc_id] = str(int(r))
        planted[doc_id] = [entity_idx[i] for i in rng.permutation(len(entity_idx))]

    ids = [str(i) for i in range(n_tuples)]
    labelled = []
    cursor = {d.doc_id: 0 for d in docs}
    while len(labelled) < n_triplets + n_val:
        progressed = False
        for d in docs:
            c = cursor[d.doc_id]
            if c < len(planted[d.doc_id]) and len(labelled) < n_triplets + n_val:
                pos = gold[d.doc_id]
                labelled.append(TrainingTriplet(d.doc_id, planted[d.doc_id][c], pos,
                                                sample_negative(ids, pos, rng)))
                cursor[d.doc_id] = c + 1
                progressed = True
        if not progressed:
            break
    return SynthCorpus(docs, rows, gold, labelled[:n_triplets], labelled[n_triplets:], seed)


def _fit_length(lines, target, rng, distract):
    total = sum(len(ln) for ln, _ in lines)
    while total < target:
        n = int(min(rng.integers(3, 6), target - total))
        lines.append((rng.choice(distract, n).tolist(), False))
        total += n
    while total > target:
        ln, tag = lines[-1]
        drop = min(len(ln), total - target)
        if drop == len(ln):
            lines.pop()
        else:
            lines[-1] = (ln[:len(ln) - drop], tag)
        total -= drop
    return lines


def _layout(doc_id, lines):
    """Lay lines out top to bottom, two paragraphs in one column."""
    elements, entity_idx = [], []
    line_nodes = []
    y = 40
    for words, is_entity in lines:
        x = 40
        leaves = []
        for w in words:
            box = BBox(x, y, x + CHAR_W * len(w), y + LINE_H)
            elements.append(TextElement(w, box.x0, box.y0, box.w, box.h))
            if is_entity:
                entity_idx.append(len(elements) - 1)
            leaves.append(LayoutNode(WORD, box, (), len(elements) - 1))
            x = box.x1 + GAP
        if leaves:
            line_nodes.append(LayoutNode(LINE, _union(leaves), tuple(leaves)))
        y += LINE_H + 10
    paras = [line_nodes[:1], line_nodes[1:]]
    para_nodes = tuple(LayoutNode(PARAGRAPH, _union(p), tuple(p)) for p in paras if p)
    if para_nodes:
        col = LayoutNode(COLUMN, _union(para_nodes), para_nodes)
        page = LayoutNode(PAGE, BBox(0, 0, PAGE_W, max(PAGE_H, y + 40)), (col,))
    else:
        page = LayoutNode(PAGE, BBox(0, 0, PAGE_W, PAGE_H))
    return Document(doc_id, tuple(elements), LayoutTree((page,)), f"{doc_id}.png"), entity_idx


def _union(nodes):
    box = nodes[0].bbox
    for n in nodes[1:]:
        box = box.union(n.bbox)
    return box
