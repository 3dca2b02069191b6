import json

import numpy as np
import pytest

from juno import synth
from juno.alignment import ProjectionModel
from juno.doc_model import load_table
from juno.encoders import HashProvider, encode_document, encode_tuple


class Encoded:
    """A synthetic corpus run through the hash provider."""

    def __init__(self, corpus, d):
        self.corpus = corpus
        self.schema, self.tuples = load_table(json.dumps(corpus.rows))
        prov = HashProvider(d)
        self.d = d
        self.docs = [(doc.doc_id, encode_document(doc, prov)) for doc in corpus.docs]
        self.ids = [t.tuple_id for t in self.tuples]
        self.T = np.stack([encode_tuple(self.schema, t, prov) for t in self.tuples])
        self.missing = np.array([[v is None for v in t.values] for t in self.tuples])
        self.span_lookup = {(doc_id, i): m[i] for doc_id, m in self.docs for i in range(len(m))}
        self.tuple_lookup = dict(zip(self.ids, self.T))


def encode_corpus(n_docs, n_tuples, seed=7, d=64, n_triplets=200, n_val=50, doc_words=None):
    c = synth.generate(n_docs, n_tuples, seed, n_triplets, n_val, doc_words)
    return Encoded(c, d)


@pytest.fixture(scope="session")
def small_corpus():
    return encode_corpus(20, 120, seed=3, d=32, n_triplets=40, n_val=10)


@pytest.fixture
def identity32():
    return ProjectionModel.identity(32)


# ---------------------------------------------------------------------------
# acceptance reporting: one line per criterion in the terminal summary


class _Criterion:
    def __init__(self, record_property, number, title, budget_s):
        self.record = record_property
        self.number, self.title, self.budget_s = number, title, budget_s
        self.detail = ""

    def __enter__(self):
        import time
        self.record("criterion", (self.number, self.title))
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time
        elapsed = time.perf_counter() - self.t0
        budget = f" (budget {self.budget_s:g} s)" if self.budget_s else ""
        self.record("criterion_detail", f"{elapsed:.2f} s{budget}; {self.detail}".rstrip("; "))
        if exc_type is None and self.budget_s is not None:
            assert elapsed < self.budget_s, f"took {elapsed:.1f} s, budget {self.budget_s} s"
        return False


@pytest.fixture
def criterion(record_property):
    return lambda number, title, budget_s=None: _Criterion(record_property, number, title, budget_s)


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props or rep.when not in ("call", "setup"):
                continue
            num, title = props["criterion"]
            ok = rep.outcome == "passed"
            if num not in rows or not ok:
                rows[num] = (ok, title, props.get("criterion_detail", ""))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(rows):
        ok, title, detail = rows[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
