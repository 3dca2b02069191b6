"""Bi-directional attention index used to prune spans and tuples before
pairwise alignment.

Two centroid stores are keyed by the attribute index that won the alignment
of each training match: ``V_D`` holds flattened raw span matrices (4*d) and
``V_T`` holds projected attribute rows (d). Each key's points are compressed
with DBSCAN; noise points survive as singleton centroids.
"""
from __future__ import annotations

import io
import json
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .alignment import (ProjectionModel, align_distance, canon, project_span,
                        project_tuple)
from .errors import DimensionError, FormatError, ValidationError

K_SPANS = 25
K_TUPLES = 100
DEFAULT_MIN_PTS = 2
EPS_MEDIAN_FACTOR = 0.5


def mean_abs_cdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return cdist(A, B, "cityblock") / A.shape[1]


def cluster_dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN under the mean-absolute-difference metric.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Points are scanned in index order, so cluster labels follow
    the smallest core index of each cluster and a border point joins the first
    cluster that reaches it. Noise is labelled -1.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    if min_pts < 1:
        raise ValidationError("min_pts must be at least 1")
    X = np.asarray(points, dtype=np.float64)
    n = len(X)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    X = X.reshape(n, -1)
    within = canon(mean_abs_cdist(X, X)) <= eps
    neighbors = [np.flatnonzero(row) for row in within]
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    cluster = 0
    for p in range(n):
        if labels[p] != -1 or not core[p]:
            continue
        labels[p] = cluster
        queue = deque([p])
        while queue:
            q = queue.popleft()
            if not core[q]:
                continue
            for r in neighbors[q]:
                if labels[r] == -1:
                    labels[r] = cluster
                    queue.append(r)
        cluster += 1
    return labels


def default_eps(points) -> float:
    """Half the median pairwise distance of a point set."""
    X = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    if len(X) < 2:
        return 1.0
    D = mean_abs_cdist(X, X)
    med = float(np.median(D[np.triu_indices(len(X), k=1)]))
    return max(EPS_MEDIAN_FACTOR * med, 1e-12)


def centroids_from_labels(X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cluster means in label order, then noise points as singletons in index order."""
    out = [X[labels == c].mean(axis=0) for c in range(int(labels.max(initial=-1)) + 1)]
    out.extend(X[k] for k in np.flatnonzero(labels == -1))
    return np.array(out).reshape(len(out), X.shape[1])


# ---------------------------------------------------------------------------
# distance normalization and k-max


def normalize_distances(C) -> np.ndarray:
    """Map distances to [0, 1] likelihoods: min -> 1, max -> 0.

    When all distances are equal every entry is 1.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.size == 0:
        return C.copy()
    lo, hi = C.min(), C.max()
    if hi == lo:
        return np.ones_like(C)
    return 1.0 - (C - lo) / (hi - lo)


def top_k_indices(scores, k: int) -> np.ndarray:
    """Indices of the k largest scores (ties to the smaller index), ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    k = max(0, min(k, len(scores)))
    order = np.lexsort((np.arange(len(scores)), -scores))
    return np.sort(order[:k])


def k_max_attention(scores, k: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    out = np.zeros_like(scores)
    keep = top_k_indices(scores, k)
    out[keep] = scores[keep]
    return out


@dataclass
class AttentionVector:
    scores: np.ndarray    # masked likelihoods, aligned to spans or tuples
    retained: np.ndarray  # indices kept by k-max, ascending
    distances: np.ndarray | None = None


def _attend(C, k):
    scores = normalize_distances(C)
    keep = top_k_indices(scores, k)
    masked = np.zeros_like(scores)
    masked[keep] = scores[keep]
    return AttentionVector(masked, keep, np.asarray(C, dtype=np.float64))


# ---------------------------------------------------------------------------
# index


@dataclass
class TrainingMatch:
    span: np.ndarray   # raw 4 x d span matrix
    tuple_id: str
    attr_index: int    # i* of the gold pair


@dataclass
class AttentionIndex:
    d: int
    vd: dict                       # key -> (C, 4d) centroids
    vt: dict                       # key -> (C, d) centroids
    assignment: dict               # tuple_id -> tuple of (key, ordinal)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._vd_all = _stack(self.vd, 4 * self.d)
        offsets, total = {}, 0
        for key in sorted(self.vt):
            offsets[key] = total
            total += len(self.vt[key])
        self._vt_offsets = offsets
        self._vt_all = _stack(self.vt, self.d)
        self._assign_cache: dict = {}

    @property
    def keys(self):
        return sorted(set(self.vd) | set(self.vt))

    def n_centroids(self) -> tuple[int, int]:
        return len(self._vd_all), len(self._vt_all)

    def assignment_matrix(self, tuple_ids) -> np.ndarray:
        """(T, K) global V_T centroid indices per tuple and key, -1 where unassigned."""
        cache_key = tuple(tuple_ids)
        hit = self._assign_cache.get(cache_key)
        if hit is not None:
            return hit
        keys = sorted(self.vt)
        col = {k: c for c, k in enumerate(keys)}
        A = np.full((len(tuple_ids), max(len(keys), 1)), -1, dtype=np.int64)
        for r, tid in enumerate(tuple_ids):
            for key, ordinal in self.assignment.get(tid, ()):
                A[r, col[key]] = self._vt_offsets[key] + ordinal
        self._assign_cache = {cache_key: A}
        return A

    # -- serialization -------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_JIDX_MAGIC)
        buf.write(struct.pack("<III", _JIDX_VERSION, self.d, 4 * self.d))
        for store in (self.vd, self.vt):
            buf.write(struct.pack("<I", len(store)))
            for key in sorted(store):
                C = store[key]
                buf.write(struct.pack("<II", key, len(C)))
                buf.write(np.ascontiguousarray(C, dtype="<f4").tobytes())
        rows = [(tid, key, o) for tid in sorted(self.assignment)
                for key, o in self.assignment[tid]]
        buf.write(struct.pack("<I", len(rows)))
        for tid, key, o in rows:
            tb = tid.encode("utf-8")
            buf.write(struct.pack("<H", len(tb)))
            buf.write(tb)
            buf.write(struct.pack("<II", key, o))
        meta = json.dumps(self.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf.write(struct.pack("<I", len(meta)))
        buf.write(meta)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttentionIndex":
        if len(data) < 16 or data[:4] != _JIDX_MAGIC:
            raise FormatError("not a JIDX index (bad magic)")
        try:
            version, d, d4 = struct.unpack_from("<III", data, 4)
            if version != _JIDX_VERSION:
                raise FormatError(f"unsupported JIDX version {version}")
            if d4 != 4 * d:
                raise FormatError(f"JIDX span dimension {d4} is not 4*{d}")
            pos = 16
            stores = []
            for width in (d4, d):
                (nkeys,) = struct.unpack_from("<I", data, pos)
                pos += 4
                store = {}
                for _ in range(nkeys):
                    key, count = struct.unpack_from("<II", data, pos)
                    pos += 8
                    nbytes = count * width * 4
                    if pos + nbytes > len(data):
                        raise FormatError("truncated JIDX centroid block")
                    store[key] = np.frombuffer(data, "<f4", count * width, pos).reshape(count, width).astype(np.float64)
                    pos += nbytes
                stores.append(store)
            (nrows,) = struct.unpack_from("<I", data, pos)
            pos += 4
            assignment: dict = {}
            for _ in range(nrows):
                (tlen,) = struct.unpack_from("<H", data, pos)
                pos += 2
                tid = data[pos:pos + tlen].decode("utf-8")
                pos += tlen
                key, o = struct.unpack_from("<II", data, pos)
                pos += 8
                assignment.setdefault(tid, []).append((key, o))
            (mlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + mlen > len(data):
                raise FormatError("truncated JIDX metadata")
            meta = json.loads(data[pos:pos + mlen].decode("utf-8"))
            pos += mlen
        except struct.error:
            raise FormatError("truncated JIDX index") from None
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"corrupt JIDX index: {e}") from None
        if pos != len(data):
            raise FormatError("trailing bytes after JIDX index")
        return cls(d, stores[0], stores[1], {k: tuple(v) for k, v in assignment.items()}, meta)

    def save(self, path):
        from .alignment import _atomic_write
        _atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "AttentionIndex":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


_JIDX_MAGIC = b"JIDX"
_JIDX_VERSION = 1


def _stack(store, width):
    if not store:
        return np.zeros((0, width))
    return np.concatenate([store[k] for k in sorted(store)]).reshape(-1, width)


def training_matches(triplets, span_lookup, tuple_lookup, model: ProjectionModel) -> list[TrainingMatch]:
    """Gold (span, tuple) pairs with the winning attribute index of their alignment."""
    out = []
    seen = set()
    for t in triplets:
        key = (t.doc_id, t.word_index, t.positive)
        if key in seen:
            continue
        seen.add(key)
        F_w = np.asarray(span_lookup[(t.doc_id, t.word_index)], dtype=np.float64)
        F_t = np.asarray(tuple_lookup[t.positive], dtype=np.float64)
        _, _, i = align_distance(project_span(F_w, model), project_tuple(F_t, model))
        out.append(TrainingMatch(F_w, t.positive, i))
    return out


def _compress(X, eps, min_pts):
    if len(X) == 1:
        return X.copy(), None
    e = default_eps(X) if eps is None else eps
    return centroids_from_labels(X, cluster_dbscan(X, e, min_pts)), e


def build_index(matches, tuple_ids, tuple_matrices, missing, model: ProjectionModel,
                eps: float | None = None, min_pts: int = DEFAULT_MIN_PTS) -> AttentionIndex:
    """Build V_D / V_T from training matches and assign every tuple's rows to
    their nearest V_T centroid under the matching key.

    ``tuple_matrices`` is (T, n, d) raw tuple embeddings aligned with
    ``tuple_ids``; ``missing`` is a (T, n) boolean mask of missing attributes.
    ``eps=None`` uses half the median pairwise distance per key.
    """
    if not matches:
        raise ValidationError("cannot build an index from zero training matches")
    d = model.d
    by_key: dict = {}
    tid_row = {tid: r for r, tid in enumerate(tuple_ids)}
    projected = project_tuple(np.asarray(tuple_matrices, dtype=np.float64), model)
    for m in matches:
        if m.span.shape != (4, d):
            raise DimensionError(f"span matrix shape {m.span.shape}, expected (4, {d})")
        if m.tuple_id not in tid_row:
            raise ValidationError(f"training match refers to unknown tuple {m.tuple_id!r}")
        by_key.setdefault(m.attr_index, []).append(m)

    vd, vt, eps_used = {}, {}, {}
    for key in sorted(by_key):
        group = by_key[key]
        span_pts = np.stack([m.span.reshape(-1) for m in group])
        tup_pts = np.stack([projected[tid_row[m.tuple_id], key] for m in group])
        vd[key], e_d = _compress(span_pts, eps, min_pts)
        vt[key], e_t = _compress(tup_pts, eps, min_pts)
        eps_used[str(key)] = [e_d, e_t]

    assignment: dict = {}
    miss = np.asarray(missing, dtype=bool)
    for key in sorted(vt):
        rows = np.flatnonzero(~miss[:, key]) if miss.size else np.arange(len(tuple_ids))
        if len(rows) == 0:
            continue
        D = canon(mean_abs_cdist(projected[rows, key], vt[key]))
        nearest = np.argmin(D, axis=1)
        for r, o in zip(rows, nearest):
            assignment.setdefault(tuple_ids[r], []).append((key, int(o)))
    meta = {"eps": eps, "eps_used": eps_used, "min_pts": min_pts,
            "model_sha256": model.checksum(), "n_matches": len(matches)}
    return AttentionIndex(d, vd, vt, {k: tuple(v) for k, v in assignment.items()}, meta)


def span_distances(spans: np.ndarray, index: AttentionIndex) -> np.ndarray:
    """Per span, the minimum distance of its flattened raw matrix to any V_D centroid."""
    flat = np.asarray(spans, dtype=np.float64).reshape(len(spans), -1)
    if len(flat) == 0:
        return np.zeros(0)
    return canon(mean_abs_cdist(flat, index._vd_all)).min(axis=1)


def attend_spans(spans: np.ndarray, index: AttentionIndex, k: int = K_SPANS) -> AttentionVector:
    """A_D over a document's spans, k-max filtered."""
    return _attend(span_distances(spans, index), k)


def tuple_distances(Fp_w: np.ndarray, index: AttentionIndex, assign: np.ndarray) -> np.ndarray:
    """Per tuple, the distance of its closest assigned V_T centroid to any
    projected span row; unassigned tuples get the largest observed distance."""
    cd = canon(mean_abs_cdist(Fp_w, index._vt_all)).min(axis=0)
    padded = np.append(cd, np.inf)
    C = padded[np.where(assign >= 0, assign, len(cd))].min(axis=1)
    finite = np.isfinite(C)
    if not finite.all():
        C[~finite] = C[finite].max() if finite.any() else 0.0
    return C


def attend_tuples(Fp_w: np.ndarray, index: AttentionIndex, assign: np.ndarray,
                  k: int = K_TUPLES) -> AttentionVector:
    """A_T over the table for one projected span, k-max filtered.

    ``assign`` comes from :meth:`AttentionIndex.assignment_matrix` for the
    table's tuple order.
    """
    return _attend(tuple_distances(Fp_w, index, assign), k)
