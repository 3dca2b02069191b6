"""Exhaustive density-reachability labelling, written independently of the
library's queue-based scan."""
import itertools

import numpy as np


def oracle_labels(X, eps, min_pts):
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    dist = [[np.mean(np.abs(X[a] - X[b])) for b in range(n)] for a in range(n)]
    near = [[b for b in range(n) if round(dist[a][b], 12) <= eps] for a in range(n)]
    core = [len(near[a]) >= min_pts for a in range(n)]

    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in itertools.combinations(range(n), 2):
        if core[a] and core[b] and b in near[a]:
            ra, rb = find(a), find(b)
            parent[max(ra, rb)] = min(ra, rb)

    roots = sorted({min(c for c in range(n) if core[c] and find(c) == find(a))
                    for a in range(n) if core[a]})
    label_of_root = {find(r): k for k, r in enumerate(roots)}
    labels = np.full(n, -1)
    for a in range(n):
        if core[a]:
            labels[a] = label_of_root[find(a)]
    for a in range(n):
        if not core[a]:
            reach = [label_of_root[find(c)] for c in near[a] if core[c]]
            if reach:
                labels[a] = min(reach)
    return labels


def random_instance(rng):
    n = int(rng.integers(1, 51))
    d = int(rng.integers(1, 5))
    centers = rng.normal(0, 4, size=(int(rng.integers(1, 5)), d))
    X = centers[rng.integers(len(centers), size=n)] + rng.normal(0, 0.6, size=(n, d))
    eps = float(rng.uniform(0.2, 1.5))
    min_pts = int(rng.integers(1, 6))
    return X, eps, min_pts
