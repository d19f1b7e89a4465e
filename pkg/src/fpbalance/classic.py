"""SMOTE and ADASYN written from scratch for flattened recurrence plots.

Random draw order (relied on by the tests' interpolation oracle): for a batch
of ``m`` synthetic samples, first ``rng.integers(0, k, size=m)`` picks which of
the base point's neighbours to use, then ``rng.random(m)`` gives the
interpolation weights. Each synthetic is ``x + lam * (x_nn - x)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import BaseOversampler, OversampleRequest
from .errors import KTooLarge, TooFewSamples

__all__ = [
    "NeighborIndex",
    "OversampleRequest",
    "knn",
    "neighbor_table",
    "interpolate",
    "smote",
    "adasyn",
    "adasyn_ratios",
    "adasyn_counts",
    "SMOTE",
    "ADASYN",
]


@dataclass
class NeighborIndex:
    query: int
    ids: np.ndarray
    distances: np.ndarray


def _sq_dists(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = points - q
    return np.einsum("ij,ij->i", diff, diff)


def knn(points, query: int, k: int) -> NeighborIndex:
    """The ``k`` nearest points to ``points[query]``, itself excluded.

    Ties go to the lower index.
    """
    points = np.asarray(points, dtype=np.float64)
    if k >= len(points) or k < 1:
        raise KTooLarge(f"k={k} needs at least {k + 1} points, got {len(points)}")
    d2 = _sq_dists(points, points[query])
    d2[query] = np.inf
    order = np.argsort(d2, kind="stable")[:k]
    return NeighborIndex(query, order, np.sqrt(d2[order]))


def neighbor_table(queries: np.ndarray, points: np.ndarray, k: int, self_offset: int = 0) -> np.ndarray:
    """Row ``i`` holds the ``k`` nearest ``points`` to ``queries[i]``.

    ``queries[i]`` is assumed to be ``points[self_offset + i]`` and is excluded.
    """
    if k >= len(points) or k < 1:
        raise KTooLarge(f"k={k} needs at least {k + 1} points, got {len(points)}")
    table = np.empty((len(queries), k), dtype=np.int64)
    for i, q in enumerate(queries):
        d2 = _sq_dists(points, q)
        d2[self_offset + i] = np.inf
        table[i] = np.argsort(d2, kind="stable")[:k]
    return table


def interpolate(x, x_nn, lam):
    return x + lam * (x_nn - x)


def _interpolate_batch(X, nn, base, rng) -> np.ndarray:
    pick = rng.integers(0, nn.shape[1], size=len(base))
    lam = rng.random(len(base))
    partner = nn[base, pick]
    return interpolate(X[base], X[partner], lam[:, None])


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def smote(minority, n_new: int, k: int = 5, seed=0) -> np.ndarray:
    """``n_new`` SMOTE samples; base points are visited round-robin."""
    X = np.asarray(minority, dtype=np.float64)
    if len(X) < 2:
        raise TooFewSamples(f"SMOTE needs at least 2 minority samples, got {len(X)}")
    if n_new <= 0:
        return np.empty((0, X.shape[1]))
    k = min(k, len(X) - 1)
    nn = neighbor_table(X, X, k)
    base = np.arange(n_new) % len(X)
    return _interpolate_batch(X, nn, base, _as_rng(seed))


def adasyn_ratios(minority, majority, k: int = 5) -> np.ndarray:
    """Number of majority points among each minority point's ``k`` neighbours.

    Neighbours are searched in the combined minority + majority set. Dividing
    by ``k`` gives the ADASYN difficulty ratio ``r_i``.
    """
    X_min = np.asarray(minority, dtype=np.float64)
    X_maj = np.asarray(majority, dtype=np.float64).reshape(-1, X_min.shape[1])
    combined = np.concatenate([X_min, X_maj])
    k = min(k, len(combined) - 1)
    nn = neighbor_table(X_min, combined, k)
    return (nn >= len(X_min)).sum(axis=1)


def adasyn_counts(weights, G: int) -> np.ndarray:
    """Split ``G`` samples proportionally to ``weights`` so they sum to ``G`` exactly.

    Floors are taken first and the leftover goes one apiece to the largest
    weights (lower index on ties). All-zero weights fall back to uniform.
    """
    w = np.asarray(weights)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if w.sum() == 0:
        w = np.ones(len(w), dtype=np.int64)
    if np.issubdtype(w.dtype, np.integer):
        g = (w.astype(np.int64) * int(G)) // int(w.sum())
    else:
        g = np.floor(w / w.sum() * G + 1e-9).astype(np.int64)
        g = np.minimum(g, G)
    residue = int(G - g.sum())
    order = np.argsort(-w, kind="stable")
    g[order[:residue]] += 1
    return g


def adasyn(minority, majority_pool, n_new: int, k: int = 5, seed=0) -> np.ndarray:
    """``n_new`` ADASYN samples, concentrated where majority neighbours are dense."""
    X = np.asarray(minority, dtype=np.float64)
    if len(X) < 2:
        raise TooFewSamples(f"ADASYN needs at least 2 minority samples, got {len(X)}")
    if n_new <= 0:
        return np.empty((0, X.shape[1]))
    delta = adasyn_ratios(X, majority_pool, k)
    g = adasyn_counts(delta, n_new)
    nn = neighbor_table(X, X, min(k, len(X) - 1))
    base = np.repeat(np.arange(len(X)), g)
    return _interpolate_batch(X, nn, base, _as_rng(seed))


class SMOTE(BaseOversampler):
    """Synthetic Minority Over-sampling TEchnique.

    Parameters
    ----------
    k_neighbors : int, default=5
        Minority neighbours used for interpolation (reduced for tiny classes).
    sampling_strategy : "auto" or dict, default="auto"
        ``"auto"`` balances all classes to the largest one; a dict maps
        label to its desired final count.
    random_state : int, default=0
    """

    def __init__(self, k_neighbors=5, sampling_strategy="auto", random_state=0):
        self.k_neighbors = k_neighbors
        self.sampling_strategy = sampling_strategy
        self.random_state = random_state

    def _generate(self, X, y, label, n_new, seed_seq):
        return smote(X[y == label], n_new, self.k_neighbors, np.random.default_rng(seed_seq))


class ADASYN(BaseOversampler):
    """Adaptive synthetic sampling.

    All other classes form the majority pool when counting neighbours.
    Parameters are as for :class:`SMOTE` (``n_neighbors`` replaces
    ``k_neighbors``).
    """

    def __init__(self, n_neighbors=5, sampling_strategy="auto", random_state=0):
        self.n_neighbors = n_neighbors
        self.sampling_strategy = sampling_strategy
        self.random_state = random_state

    def _generate(self, X, y, label, n_new, seed_seq):
        return adasyn(X[y == label], X[y != label], n_new, self.n_neighbors, np.random.default_rng(seed_seq))


def oversample_request(X, y, req: OversampleRequest, method: str = "smote"):
    """Functional entry point: balance ``(X, y)`` according to ``req``."""
    est = (SMOTE(req.k, req.target_per_class or "auto", req.seed) if method == "smote"
           else ADASYN(req.k, req.target_per_class or "auto", req.seed))
    return est.fit_resample(X, y)
