"""Precision / recall / F1 at k, label-efficiency curves and pruning benchmarks.

Recall here is the rate of documents that receive a non-empty answer, not IR
recall: the matcher always returns something for a non-empty document, so
recall is 1 unless documents are empty or missing from the results.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .alignment import TrainConfig, train
from .attention_index import build_index, training_matches
from .errors import ValidationError
from .pipeline import MatchOptions, PreparedTable, match_corpus, match_document

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 20)


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def truncate_percent(x: float) -> float:
    """Express a fraction as a percentage truncated (not rounded) to 2 decimals."""
    return math.floor(round(x * 10000, 6)) / 100


@dataclass
class EvalReport:
    per_k: dict                  # k -> {"precision", "recall", "f1"}
    mean_latency_ms: float
    mean_comparisons: float
    corpus_size: int
    missing: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"per_k": {str(k): v for k, v in self.per_k.items()},
                "mean_latency_ms": self.mean_latency_ms,
                "mean_comparisons": self.mean_comparisons,
                "corpus_size": self.corpus_size,
                "missing": self.missing}

    def rows(self):
        """(k, precision%, recall%, f1%) with percentages truncated to 2 decimals."""
        return [(k, truncate_percent(v["precision"]), truncate_percent(v["recall"]),
                 truncate_percent(v["f1"])) for k, v in sorted(self.per_k.items())]


def evaluate(results, gold: dict, ks=DEFAULT_KS) -> EvalReport:
    """Score match results against ``gold`` (doc_id -> tuple_id).

    precision@k is the fraction of gold documents whose top-k ranking holds
    the gold tuple. Documents absent from ``results`` count as misses.
    """
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks or ks[0] < 1:
        raise ValidationError("k values must be positive")
    by_doc = {r.doc_id: r for r in results}
    missing = sorted(d for d in gold if d not in by_doc)
    for d in missing:
        log.warning("document %s has a gold label but no match result", d)
    n = len(gold)
    per_k = {}
    for k in ks:
        hits = nonempty = 0
        for doc_id, tid in gold.items():
            r = by_doc.get(doc_id)
            if r is None:
                continue
            nonempty += bool(r.ranking)
            hits += tid in [x.tuple_id for x in r.ranking[:k]]
        p = hits / n if n else 0.0
        rec = nonempty / n if n else 0.0
        per_k[k] = {"precision": p, "recall": rec, "f1": f1_score(p, rec)}
    scored = [by_doc[d] for d in gold if d in by_doc]
    lat = float(np.mean([r.latency_ms for r in scored])) if scored else 0.0
    comp = float(np.mean([r.comparisons for r in scored])) if scored else 0.0
    return EvalReport(per_k, lat, comp, n, missing)


def read_gold(path) -> dict:
    gold = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                gold[obj["doc_id"]] = obj["tuple_id"]
    return gold


def write_gold(gold: dict, path):
    with open(path, "w", encoding="utf-8") as f:
        for doc_id in sorted(gold):
            f.write(json.dumps({"doc_id": doc_id, "tuple_id": gold[doc_id]}) + "\n")


# ---------------------------------------------------------------------------


def label_efficiency_curve(pool, val, sizes, span_lookup, tuple_ids, tuple_matrices, missing,
                           docs, gold, cfg: TrainConfig | None = None,
                           options: MatchOptions | None = None, seed: int = 0,
                           threads: int | None = 1) -> dict:
    """F1@1 of a freshly trained model and index per training-set size.

    Subsets are nested prefixes of one seeded permutation of ``pool``.
    """
    sizes = [int(s) for s in sizes]
    if len(set(sizes)) != len(sizes):
        raise ValidationError("duplicate training sizes")
    if any(s < 1 or s > len(pool) for s in sizes):
        raise ValidationError(f"sizes must lie in [1, {len(pool)}]")
    cfg = cfg or TrainConfig(seed=seed)
    order = np.random.default_rng(seed).permutation(len(pool))
    tuple_lookup = dict(zip(tuple_ids, tuple_matrices))
    curve = {}
    for size in sizes:
        subset = [pool[i] for i in order[:size]]
        model = train(subset, val, span_lookup, tuple_lookup, cfg).model
        index = build_index(training_matches(subset, span_lookup, tuple_lookup, model),
                            tuple_ids, tuple_matrices, missing, model)
        table = PreparedTable(tuple_ids, tuple_matrices, model, missing)
        results = match_corpus(docs, table, model, index, options, threads)
        curve[size] = evaluate(results, gold, (1,)).per_k[1]["f1"]
        log.info("label efficiency: %d triplets -> F1@1 %.4f", size, curve[size])
    return curve


@dataclass
class BenchRow:
    db_size: int
    comparisons_pruned: float
    comparisons_unpruned: float
    latency_pruned_ms: float
    latency_unpruned_ms: float

    @property
    def comparison_ratio(self):
        return self.comparisons_unpruned / self.comparisons_pruned if self.comparisons_pruned else math.inf

    @property
    def latency_ratio(self):
        return self.latency_unpruned_ms / self.latency_pruned_ms if self.latency_pruned_ms else math.inf

    def to_json(self):
        return {"db_size": self.db_size, "comparisons_pruned": self.comparisons_pruned,
                "comparisons_unpruned": self.comparisons_unpruned,
                "latency_pruned_ms": self.latency_pruned_ms,
                "latency_unpruned_ms": self.latency_unpruned_ms,
                "comparison_ratio": self.comparison_ratio, "latency_ratio": self.latency_ratio}


def bench_pruning(docs, tuple_ids, tuple_matrices, missing, model, index, db_sizes,
                  options: MatchOptions | None = None) -> list[BenchRow]:
    """Per-document mean comparisons and latency with and without pruning,
    on the first ``db_size`` tuples of the table."""
    opts = options or MatchOptions()
    rows = []
    for n in db_sizes:
        if n < 1 or n > len(tuple_ids):
            raise ValidationError(f"db size {n} outside [1, {len(tuple_ids)}]")
        table = PreparedTable(tuple_ids[:n], tuple_matrices[:n], model, missing[:n])
        index.assignment_matrix(table.ids)
        stats = {}
        for attn in (True, False):
            o = MatchOptions(opts.k_spans, opts.k_tuples, opts.top_k, attn, opts.use_visual)
            comps, lats = [], []
            for doc_id, spans in docs:
                t0 = time.perf_counter()
                r = match_document(doc_id, spans, table, model, index, o)
                lats.append(1000 * (time.perf_counter() - t0))
                comps.append(r.comparisons)
            stats[attn] = (float(np.mean(comps)), float(np.mean(lats)))
        rows.append(BenchRow(n, stats[True][0], stats[False][0], stats[True][1], stats[False][1]))
    return rows
