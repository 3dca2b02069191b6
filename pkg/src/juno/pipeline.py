"""End-to-end matching: prune spans and tuples with the attention index,
align the survivors, and vote spans up to a document-level ranking."""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .alignment import ProjectionModel, canon, project_tuple, select_pair
from .attention_index import (K_SPANS, K_TUPLES, AttentionIndex, attend_spans,
                              attend_tuples, mean_abs_cdist)
from .errors import DimensionError, ValidationError


@dataclass
class MatchOptions:
    k_spans: int = K_SPANS
    k_tuples: int = K_TUPLES
    top_k: int | None = None
    use_attention: bool = True
    use_visual: bool = True

    def __post_init__(self):
        if self.k_spans < 0 or self.k_tuples < 0:
            raise ValidationError("k_spans and k_tuples must be non-negative")
        if self.top_k is not None and self.top_k < 1:
            raise ValidationError("top_k must be at least 1")


@dataclass
class SpanWinner:
    span_index: int
    tuple_id: str
    distance: float
    attr_index: int
    span_row: int


@dataclass
class RankedTuple:
    tuple_id: str
    votes: int
    distance: float       # best (smallest) span distance
    distance_sum: float


@dataclass
class MatchResult:
    doc_id: str
    ranking: list
    span_winners: list = field(default_factory=list)
    comparisons: int = 0
    latency_ms: float = 0.0
    n_spans: int = 0

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "ranking": [{"tuple_id": r.tuple_id, "votes": r.votes, "distance": r.distance,
                         "distance_sum": r.distance_sum} for r in self.ranking],
            "comparisons": self.comparisons,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MatchResult":
        ranking = [RankedTuple(r["tuple_id"], r["votes"], r["distance"],
                               r.get("distance_sum", r["distance"])) for r in obj["ranking"]]
        return cls(obj["doc_id"], ranking, comparisons=obj.get("comparisons", 0),
                   latency_ms=obj.get("latency_ms", 0.0))

    @property
    def top(self) -> list[str]:
        return [r.tuple_id for r in self.ranking]


class PreparedTable:
    """Projected tuple matrices in table order plus tie-break ranks.

    ``tuple_matrices`` is (T, n, d) raw; ``missing`` is a (T, n) mask.
    """

    def __init__(self, tuple_ids, tuple_matrices, model: ProjectionModel, missing=None):
        if len(tuple_ids) == 0:
            raise ValidationError("cannot match against an empty table")
        F = np.asarray(tuple_matrices, dtype=np.float64)
        if F.shape[-1] != model.d:
            raise DimensionError(f"tuple embeddings have dimension {F.shape[-1]}, "
                                 f"model has {model.d}")
        self.ids = list(tuple_ids)
        self.n = F.shape[1]
        self.projected = project_tuple(F, model)
        self.flat = self.projected.reshape(-1, model.d)
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self.rank = np.empty(len(self.ids), dtype=np.int64)
        self.rank[order] = np.arange(len(self.ids))
        self.missing = (np.zeros(F.shape[:2], dtype=bool) if missing is None
                        else np.asarray(missing, dtype=bool))

    def __len__(self):
        return len(self.ids)

    def best(self, Fp_w: np.ndarray, cand: np.ndarray | None = None) -> tuple[int, float, int, int]:
        """Winning tuple (table position), its distance and (i*, j*) among ``cand``."""
        if cand is None:
            rows = self.flat
            cand = np.arange(len(self.ids))
        else:
            rows = self.projected[cand].reshape(-1, self.flat.shape[1])
        D = canon(mean_abs_cdist(Fp_w, rows)).reshape(4, len(cand), self.n)
        per_tuple = D.min(axis=(0, 2))
        w = np.lexsort((self.rank[cand], per_tuple))[0]
        j, i = select_pair(D[:, w, :])
        return int(cand[w]), float(per_tuple[w]), i, j


def aggregate(winners) -> list[RankedTuple]:
    """Majority vote; ties by smaller summed distance, then tuple id."""
    votes: dict = {}
    for w in winners:
        v = votes.setdefault(w.tuple_id, [0, 0.0, np.inf])
        v[0] += 1
        v[1] += w.distance
        v[2] = min(v[2], w.distance)
    ranked = sorted(votes.items(), key=lambda kv: (-kv[1][0], float(canon(kv[1][1])), kv[0]))
    return [RankedTuple(tid, n, float(best), float(canon(total)))
            for tid, (n, total, best) in ranked]


def match_document(doc_id: str, spans: np.ndarray, table: PreparedTable, model: ProjectionModel,
                   index: AttentionIndex | None = None,
                   options: MatchOptions | None = None) -> MatchResult:
    """Match one document's span matrices (W, 4, d) against the table."""
    opts = options or MatchOptions()
    t0 = time.perf_counter()
    spans = np.asarray(spans, dtype=np.float64)
    if len(spans) and spans.shape[1:] != (4, model.d):
        raise DimensionError(f"span matrices have shape {spans.shape[1:]}, expected (4, {model.d})")
    if not opts.use_visual and len(spans):
        spans = spans.copy()
        spans[:, 3] = 0.0
    if len(spans) == 0:
        return MatchResult(doc_id, [], latency_ms=1000 * (time.perf_counter() - t0))
    if opts.use_attention and index is None:
        raise ValidationError("attention is enabled but no index was given")

    if opts.use_attention:
        retained = attend_spans(spans, index, opts.k_spans).retained
        assign = index.assignment_matrix(table.ids)
    else:
        retained = np.arange(len(spans))
    projected = spans[retained] @ model.W_doc.T + model.b_doc

    winners = []
    comparisons = 0
    cache: dict = {}
    for s, Fp_w in zip(retained, projected):
        cand = None
        if opts.use_attention:
            key = Fp_w.tobytes()
            cand = cache.get(key)
            if cand is None:
                cand = attend_tuples(Fp_w, index, assign, opts.k_tuples).retained
                cache[key] = cand
            if len(cand) == 0:
                continue
            comparisons += len(cand)
        else:
            comparisons += len(table)
        pos, dist, i, j = table.best(Fp_w, cand)
        winners.append(SpanWinner(int(s), table.ids[pos], dist, i, j))

    ranking = aggregate(winners)
    if opts.top_k is not None:
        ranking = ranking[:opts.top_k]
    return MatchResult(doc_id, ranking, winners, comparisons,
                       1000 * (time.perf_counter() - t0), len(spans))


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("JUNO_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def match_corpus(docs, table: PreparedTable, model: ProjectionModel,
                 index: AttentionIndex | None = None, options: MatchOptions | None = None,
                 threads: int | None = None) -> list[MatchResult]:
    """Match ``(doc_id, spans)`` pairs independently; results sorted by doc id."""
    docs = sorted(docs, key=lambda x: x[0])
    ids = [d for d, _ in docs]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate doc ids in corpus")
    threads = resolve_threads(threads)
    run = lambda item: match_document(item[0], item[1], table, model, index, options)
    if threads == 1 or len(docs) < 2:
        return [run(x) for x in docs]
    if index is not None:
        index.assignment_matrix(table.ids)  # warm the shared cache before fan-out
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, docs))


def latency_stats(results) -> dict:
    lat = np.array([r.latency_ms for r in results]) if results else np.zeros(0)
    comp = np.array([r.comparisons for r in results]) if results else np.zeros(0)
    if lat.size == 0:
        return {"n": 0}
    return {"n": int(lat.size), "mean_ms": float(lat.mean()), "p50_ms": float(np.median(lat)),
            "max_ms": float(lat.max()), "mean_comparisons": float(comp.mean())}


def write_results(results, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            f.write(json.dumps(r.to_json(), sort_keys=False) + "\n")


def read_results(path) -> list[MatchResult]:
    with open(path, encoding="utf-8") as f:
        return [MatchResult.from_json(json.loads(line)) for line in f if line.strip()]
