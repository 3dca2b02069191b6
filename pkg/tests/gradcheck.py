"""Finite-difference oracle for the triplet subgradient, shared by the unit
and acceptance suites."""
import numpy as np

from juno.alignment import ProjectionModel, loss_gradient, pair_distances, triplet_loss

H = 1e-5


def _well_separated(F_w, P, Q, m, margin=1e-3):
    """True when each term's argmin pair is unique by ``margin`` and no
    coordinate of the winning differences sits near zero."""
    Sp = F_w @ m.W_doc.T + m.b_doc
    for T in (P, Q):
        Tp = T @ m.W_tup.T + m.b_tup
        D = pair_distances(Sp, Tp)
        flat = np.sort(D.ravel())
        if flat[1] - flat[0] < margin:
            return False
        j, i = np.unravel_index(np.argmin(D), D.shape)
        if np.min(np.abs(Sp[j] - Tp[i])) < margin:
            return False
    return True


def random_instance(rng, d=8, n=3, lam=0.025):
    while True:
        F_w = rng.normal(size=(4, d))
        P, Q = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        a = 0.3
        m = ProjectionModel(np.eye(d) + rng.uniform(-a, a, (d, d)), rng.normal(0, 0.1, d),
                            np.eye(d) + rng.uniform(-a, a, (d, d)), rng.normal(0, 0.1, d))
        if _well_separated(F_w, P, Q, m):
            return F_w, P, Q, m, lam


def numeric_gradient(F_w, P, Q, m, lam, h=H):
    out = {}
    for name in m.param_names:
        p = getattr(m, name)
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = triplet_loss(F_w, P, Q, m, lam)
            p[idx] = old - h
            down = triplet_loss(F_w, P, Q, m, lam)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def relative_error(F_w, P, Q, m, lam):
    ga = loss_gradient(F_w, P, Q, m, lam)
    gn = numeric_gradient(F_w, P, Q, m, lam)
    a = np.concatenate([ga[k].ravel() for k in m.param_names])
    b = np.concatenate([gn[k].ravel() for k in m.param_names])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))
