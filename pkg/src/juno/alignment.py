"""Shared-space alignment: per-modality affine projections, the min-over-pairs
span/tuple distance, the triplet objective and its subgradient, and an Adam
training loop with early stopping.
"""
from __future__ import annotations

import hashlib
import io
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, TrainingError, ValidationError

log = logging.getLogger(__name__)

# Distances are compared after rounding to this many decimals so that
# mathematically tied distances compare equal whatever the summation order.
TIE_DECIMALS = 12


def canon(x):
    return np.round(x, TIE_DECIMALS)


@dataclass(eq=False)
class ProjectionModel:
    W_doc: np.ndarray
    b_doc: np.ndarray
    W_tup: np.ndarray
    b_tup: np.ndarray

    def __post_init__(self):
        d = self.W_doc.shape[0]
        for name in ("W_doc", "W_tup"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")
        for name in ("b_doc", "b_tup"):
            if getattr(self, name).shape != (d,):
                raise DimensionError(f"{name} must have length {d}")
        for name in self.param_names:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} has non-finite entries")

    param_names = ("W_doc", "b_doc", "W_tup", "b_tup")

    @property
    def d(self) -> int:
        return self.W_doc.shape[0]

    @classmethod
    def identity(cls, d: int) -> "ProjectionModel":
        return cls(np.eye(d), np.zeros(d), np.eye(d), np.zeros(d))

    @classmethod
    def init(cls, d: int, seed: int = 0) -> "ProjectionModel":
        """Identity plus U(-0.01/sqrt(d), 0.01/sqrt(d)) noise, zero bias."""
        rng = np.random.default_rng(seed)
        a = 0.01 / math.sqrt(d)
        W_doc = np.eye(d) + rng.uniform(-a, a, (d, d))
        W_tup = np.eye(d) + rng.uniform(-a, a, (d, d))
        return cls(W_doc, np.zeros(d), W_tup, np.zeros(d)).as_float32()

    def params(self) -> dict:
        return {k: getattr(self, k) for k in self.param_names}

    def copy(self) -> "ProjectionModel":
        return ProjectionModel(**{k: v.copy() for k, v in self.params().items()})

    def as_float32(self) -> "ProjectionModel":
        """Round every parameter to float32 so checkpoints round-trip exactly."""
        return ProjectionModel(**{k: v.astype(np.float32).astype(np.float64)
                                  for k, v in self.params().items()})

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_JPRJ_MAGIC)
        buf.write(struct.pack("<II", _JPRJ_VERSION, self.d))
        for k in self.param_names:
            buf.write(np.ascontiguousarray(getattr(self, k), dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProjectionModel":
        if len(data) < 12 or data[:4] != _JPRJ_MAGIC:
            raise FormatError("not a JPRJ checkpoint (bad magic)")
        version, d = struct.unpack_from("<II", data, 4)
        if version != _JPRJ_VERSION:
            raise FormatError(f"unsupported JPRJ version {version}")
        expected = 12 + 4 * (2 * d * d + 2 * d)
        if len(data) != expected:
            raise FormatError(f"JPRJ size {len(data)} bytes, expected {expected} for d={d}")
        arr = np.frombuffer(data, dtype="<f4", offset=12).astype(np.float64)
        dd = d * d
        return cls(arr[:dd].reshape(d, d).copy(), arr[dd:dd + d].copy(),
                   arr[dd + d:2 * dd + d].reshape(d, d).copy(), arr[2 * dd + d:].copy())

    def save(self, path):
        _atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "ProjectionModel":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


_JPRJ_MAGIC = b"JPRJ"
_JPRJ_VERSION = 1


def _atomic_write(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _check_dim(F, d):
    if F.shape[-1] != d:
        raise DimensionError(f"embedding dimension {F.shape[-1]} does not match model dimension {d}")


def project_span(F_w: np.ndarray, m: ProjectionModel) -> np.ndarray:
    _check_dim(F_w, m.d)
    return F_w @ m.W_doc.T + m.b_doc


def project_tuple(F_t: np.ndarray, m: ProjectionModel) -> np.ndarray:
    _check_dim(F_t, m.d)
    return F_t @ m.W_tup.T + m.b_tup


def row_distance(u, v) -> float:
    """Mean absolute difference between two rows."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(np.mean(np.abs(u - v)))


def pair_distances(Fp_w: np.ndarray, Fp_t: np.ndarray) -> np.ndarray:
    """(4, n) matrix of row distances between projected span and tuple rows."""
    return np.abs(Fp_w[:, None, :] - Fp_t[None, :, :]).mean(axis=-1)


def select_pair(D: np.ndarray) -> tuple[int, int]:
    """(j*, i*) of the smallest entry of a (spans rows x attributes) distance
    matrix; ties go to the smallest attribute index, then smallest span row."""
    flat = np.argmin(canon(D).T)
    i, j = divmod(int(flat), D.shape[0])
    return j, i


def align_distance(Fp_w: np.ndarray, Fp_t: np.ndarray) -> tuple[float, int, int]:
    """Minimum row distance over all span-row / attribute-row pairs.

    Returns ``(distance, j*, i*)`` with ``j*`` the span row and ``i*`` the
    attribute index of the minimizing pair.
    """
    if Fp_w.shape[-1] != Fp_t.shape[-1]:
        raise DimensionError("span and tuple matrices have different dimensions")
    D = pair_distances(Fp_w, Fp_t)
    j, i = select_pair(D)
    return float(canon(D[j, i])), j, i


def match_tuple_bruteforce(Fp_w: np.ndarray, projected_tuples: dict) -> tuple[str, float, int, int]:
    """Scan every tuple; ties go to the lexicographically smallest tuple id."""
    best = None
    for tid in sorted(projected_tuples):
        dist, j, i = align_distance(Fp_w, projected_tuples[tid])
        if best is None or dist < best[1]:
            best = (tid, dist, j, i)
    if best is None:
        raise ValidationError("cannot match against an empty table")
    return best


# ---------------------------------------------------------------------------
# triplet objective


@dataclass(frozen=True)
class TrainingTriplet:
    doc_id: str
    word_index: int
    positive: str
    negative: str

    def __post_init__(self):
        if self.positive == self.negative:
            raise ValidationError(f"triplet {self.doc_id}#{self.word_index}: "
                                  "positive and negative tuple are the same")


def triplet_loss(F_w, F_t_pos, F_t_neg, m: ProjectionModel, lam: float,
                 hinge_margin: float | None = None) -> float:
    """``d(w, t) - lam * d(w, t')`` on projected matrices, optionally clamped
    below at ``-hinge_margin``."""
    Fp_w = project_span(F_w, m)
    Dp = pair_distances(Fp_w, project_tuple(F_t_pos, m))
    Dn = pair_distances(Fp_w, project_tuple(F_t_neg, m))
    loss = Dp[select_pair(Dp)] - lam * Dn[select_pair(Dn)]
    if hinge_margin is not None:
        loss = max(loss, -hinge_margin)
    return float(loss)


def loss_gradient(F_w, F_t_pos, F_t_neg, m: ProjectionModel, lam: float,
                  hinge_margin: float | None = None) -> dict:
    """Subgradient of :func:`triplet_loss` with respect to the four parameters.

    Only the minimizing row pair of each term is differentiated; coordinates
    with a zero difference contribute nothing.
    """
    loss, grads = _batch_loss_grad(F_w[None], F_t_pos[None], F_t_neg[None], m, lam, hinge_margin)
    return grads


def _batch_loss_grad(S, P, Q, m, lam, hinge_margin):
    """Mean loss and gradient over a batch. S: (B,4,d), P/Q: (B,n,d)."""
    B, _, d = S.shape
    Sp = S @ m.W_doc.T + m.b_doc
    Pp = P @ m.W_tup.T + m.b_tup
    Qp = Q @ m.W_tup.T + m.b_tup
    rows = np.arange(B)

    def term(Tp):
        diff = Sp[:, :, None, :] - Tp[:, None, :, :]          # (B,4,n,d)
        D = np.abs(diff).mean(axis=-1)                         # (B,4,n)
        n = D.shape[2]
        flat = np.argmin(canon(D).transpose(0, 2, 1).reshape(B, -1), axis=1)
        i, j = np.divmod(flat, D.shape[1])
        return D[rows, j, i], np.sign(diff[rows, j, i]) / d, j, i

    dp, sp, jp, ip = term(Pp)
    dn, sn, jn, i_n = term(Qp)
    losses = dp - lam * dn
    active = np.ones(B)
    if hinge_margin is not None:
        clamped = losses < -hinge_margin
        active[clamped] = 0.0
        losses = np.maximum(losses, -hinge_margin)
    sp = sp * active[:, None] / B
    sn = sn * (lam * active)[:, None] / B
    Xp, Xn = S[rows, jp], S[rows, jn]
    Pi, Qi = P[rows, ip], Q[rows, i_n]
    grads = {
        "W_doc": sp.T @ Xp - sn.T @ Xn,
        "b_doc": sp.sum(axis=0) - sn.sum(axis=0),
        "W_tup": -(sp.T @ Pi) + sn.T @ Qi,
        "b_tup": -sp.sum(axis=0) + sn.sum(axis=0),
    }
    return float(losses.mean()), grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lam: float = 0.025
    epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-4
    weight_decay: float = 1e-2
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    patience: int = 3
    seed: int = 0
    hinge_margin: float | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lam <= 0:
            raise ValidationError("lambda must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch size must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValidationError("learning rate must be positive, weight decay non-negative")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValidationError("Adam betas must lie in [0, 1)")
        if self.patience < 0:
            raise ValidationError("patience must be non-negative")
        if self.hinge_margin is not None and self.hinge_margin < 0:
            raise ValidationError("hinge_margin must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: ProjectionModel
    log: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def initial_val_loss(self):
        return self.log[0]["val_loss"]

    @property
    def best_val_loss(self):
        return self.log[self.best_epoch]["val_loss"]


class Adam:
    """Bias-corrected Adam with decoupled weight decay."""

    def __init__(self, params: dict, lr, betas, eps, weight_decay):
        self.lr, self.eps, self.wd = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p -= self.lr * (update + self.wd * p)


def _gather(triplets, span_lookup, tuple_lookup):
    try:
        S = np.stack([span_lookup[(t.doc_id, t.word_index)] for t in triplets]).astype(np.float64)
        P = np.stack([tuple_lookup[t.positive] for t in triplets]).astype(np.float64)
        Q = np.stack([tuple_lookup[t.negative] for t in triplets]).astype(np.float64)
    except KeyError as e:
        raise ValidationError(f"unresolvable triplet reference {e}") from None
    return S, P, Q


def _mean_loss(S, P, Q, m, cfg, chunk=256):
    total = 0.0
    for a in range(0, len(S), chunk):
        loss, _ = _batch_loss_grad(S[a:a + chunk], P[a:a + chunk], Q[a:a + chunk],
                                   m, cfg.lam, cfg.hinge_margin)
        total += loss * len(S[a:a + chunk])
    return total / len(S)


def train(train_triplets, val_triplets, span_lookup, tuple_lookup,
          cfg: TrainConfig | None = None, model: ProjectionModel | None = None) -> TrainResult:
    """Fit the projection model on triplets with Adam and early stopping.

    ``span_lookup`` maps ``(doc_id, word_index)`` to a 4 x d span matrix and
    ``tuple_lookup`` maps tuple ids to n x d matrices. Returns the model with
    the best validation loss; ``log[0]`` holds the losses before any update.
    """
    cfg = cfg or TrainConfig()
    if not train_triplets:
        raise ValidationError("training corpus is empty")
    if not val_triplets:
        raise ValidationError("validation split is empty")
    S, P, Q = _gather(train_triplets, span_lookup, tuple_lookup)
    Sv, Pv, Qv = _gather(val_triplets, span_lookup, tuple_lookup)
    d = S.shape[-1]
    m = (model.copy() if model is not None else ProjectionModel.init(d, cfg.seed))
    _check_dim(S, m.d)

    def checked(x, what, epoch):
        if not math.isfinite(x):
            raise TrainingError(f"non-finite {what} loss at epoch {epoch}; the objective is "
                                "unbounded below, consider setting hinge_margin")
        return x

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(m.params(), cfg.lr, cfg.betas, cfg.adam_eps, cfg.weight_decay)
    val = checked(_mean_loss(Sv, Pv, Qv, m, cfg), "validation", 0)
    log_rows = [{"epoch": 0, "train_loss": checked(_mean_loss(S, P, Q, m, cfg), "training", 0),
                 "val_loss": val}]
    best, best_epoch, best_model = val, 0, m.copy()
    bad = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(S))
        total = 0.0
        for a in range(0, len(order), cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            loss, grads = _batch_loss_grad(S[idx], P[idx], Q[idx], m, cfg.lam, cfg.hinge_margin)
            checked(loss, "training", epoch)
            total += loss * len(idx)
            opt.step(m.params(), grads)
        val = checked(_mean_loss(Sv, Pv, Qv, m, cfg), "validation", epoch)
        log_rows.append({"epoch": epoch, "train_loss": total / len(S), "val_loss": val})
        log.info("epoch %d train %.6f val %.6f", epoch, total / len(S), val)
        if val < best:
            best, best_epoch, best_model = val, epoch, m.copy()
            bad = 0
        else:
            bad += 1
            # patience=0 behaves like 1: stop at the first non-improving epoch
            if bad >= max(cfg.patience, 1):
                break
    return TrainResult(best_model.as_float32(), log_rows, best_epoch)


def sample_negative(tuple_ids, positive_id: str, rng) -> str:
    """Uniform draw over tuple ids other than ``positive_id``.

    ``rng`` is a numpy Generator (advanced in place) or an integer seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    ids = list(tuple_ids)
    try:
        pos = ids.index(positive_id)
    except ValueError:
        raise ValidationError(f"positive tuple {positive_id!r} not in table") from None
    if len(ids) < 2:
        raise ValidationError("need at least two tuples to sample a negative")
    r = int(rng.integers(len(ids) - 1))
    return ids[r + 1] if r >= pos else ids[r]
