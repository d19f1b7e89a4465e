"""Soft-margin RBF SVM solved with SMO, combined one-vs-one for many classes.

The binary solver follows the usual dual formulation

    min_a  1/2 a^T Q a - e^T a    s.t.  y^T a = 0,  0 <= a_i <= C,

with ``Q_ij = y_i y_j K(x_i, x_j)``. Working pairs come from the
maximal-violating-pair rule with second-order choice of the partner, and the
solver stops once the KKT violation drops below ``tol``.
"""
from __future__ import annotations

import warnings
from collections import OrderedDict
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ConfigurationError, SingleClass
from .serialization import load_container, save_container

TAU = 1e-12


def rbf(u, v, gamma: float) -> float:
    d = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A, B, gamma: float) -> np.ndarray:
    A, B = np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


def scale_gamma(X) -> float:
    var = float(np.asarray(X, dtype=np.float64).var())
    if var == 0.0:
        raise ConfigurationError("gamma='scale' is undefined for a constant training set")
    return 1.0 / (X.shape[1] * var)


class KernelRows:
    """LRU cache of RBF kernel rows for one training matrix."""

    def __init__(self, X, gamma: float, cache_mb: float = 200.0):
        self.X = X
        self.gamma = gamma
        self.sq = np.einsum("ij,ij->i", X, X)
        self.capacity = max(2, int(cache_mb * 2**20 // (8 * max(len(X), 1))))
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def __getitem__(self, i: int) -> np.ndarray:
        row = self._rows.get(i)
        if row is not None:
            self._rows.move_to_end(i)
            return row
        d2 = self.sq[i] + self.sq - 2.0 * (self.X @ self.X[i])
        row = np.exp(-self.gamma * np.maximum(d2, 0.0))
        row[i] = 1.0
        self._rows[i] = row
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return row


@dataclass
class SMOResult:
    alpha: np.ndarray
    rho: float
    n_iter: int
    converged: bool


def smo(kernel_rows, y, C: float = 1.0, tol: float = 1e-3, max_iter: int = 10_000_000) -> SMOResult:
    """Solve one binary dual problem; ``kernel_rows[i]`` returns row ``K[i, :]``."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.ones(n)  # K(x, x) = 1 for the RBF kernel
    pos = y > 0
    converged = False
    it = 0
    while it < max_iter:
        minus_yG = -y * G
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        if not up.any() or not low.any():
            converged = True
            break
        cand = np.where(up, minus_yG, -np.inf)
        i = int(np.argmax(cand))
        g_max = cand[i]
        g_min = np.min(np.where(low, minus_yG, np.inf))
        if g_max - g_min < tol:
            converged = True
            break
        K_i = kernel_rows[i]
        b = g_max - minus_yG
        ok = low & (b > 0)
        quad = QD[i] + QD - 2.0 * K_i
        quad = np.where(quad > 0, quad, TAU)
        obj = np.where(ok, -(b * b) / quad, np.inf)
        j = int(np.argmin(obj))
        K_j = kernel_rows[j]
        it += 1

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            q = QD[i] + QD[j] - 2.0 * K_i[j]
            q = q if q > 0 else TAU
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            new_i, new_j = ai + delta, aj + delta
            if diff > 0:
                if new_j < 0:
                    new_j, new_i = 0.0, diff
            elif new_i < 0:
                new_i, new_j = 0.0, -diff
            if diff > 0:
                if new_i > C:
                    new_i, new_j = C, C - diff
            elif new_j > C:
                new_j, new_i = C, C + diff
        else:
            q = QD[i] + QD[j] - 2.0 * K_i[j]
            q = q if q > 0 else TAU
            delta = (G[i] - G[j]) / q
            total = ai + aj
            new_i, new_j = ai - delta, aj + delta
            if total > C:
                if new_i > C:
                    new_i, new_j = C, total - C
            elif new_j < 0:
                new_j, new_i = 0.0, total
            if total > C:
                if new_j > C:
                    new_j, new_i = C, total - C
            elif new_i < 0:
                new_i, new_j = 0.0, total
        alpha[i], alpha[j] = new_i, new_j
        # Q_ik = y_i y_k K_ik
        G += y * (y[i] * (new_i - ai) * K_i + y[j] * (new_j - aj) * K_j)

    return SMOResult(alpha, _rho(alpha, y, G, C), it, converged)


def _rho(alpha, y, G, C) -> float:
    yG = y * G
    at_upper, at_lower = alpha >= C, alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yG[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)


def dual_objective(alpha, y, K) -> float:
    """``sum(a) - 1/2 (a*y)^T K (a*y)``; larger is better."""
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


def ovo_vote(decisions, pairs, n_classes: int) -> np.ndarray:
    """Class index per row from pairwise decision values.

    ``decisions[:, p] > 0`` is a vote for ``pairs[p][0]``, otherwise for
    ``pairs[p][1]``. Ties in vote count go to the larger sum of |decision|
    over the pairs a class won, then to the lower class index.
    """
    dec = np.atleast_2d(np.asarray(decisions, dtype=np.float64))
    votes = np.zeros((len(dec), n_classes), dtype=np.int64)
    conf = np.zeros((len(dec), n_classes))
    for p, (a, b) in enumerate(pairs):
        win_a = dec[:, p] > 0
        mag = np.abs(dec[:, p])
        votes[:, a] += win_a
        votes[:, b] += ~win_a
        conf[:, a] += np.where(win_a, mag, 0.0)
        conf[:, b] += np.where(win_a, 0.0, mag)
    tied = votes == votes.max(axis=1, keepdims=True)
    conf = np.where(tied, conf, -np.inf)
    best = tied & (conf == conf.max(axis=1, keepdims=True))
    return np.argmax(best, axis=1)


@dataclass
class PairModel:
    classes: tuple[int, int]
    support: np.ndarray  # indices into the training rows
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    intercept: float  # -rho
    n_iter: int
    converged: bool

    def decision(self, X, gamma: float) -> np.ndarray:
        return rbf_matrix(X, self.support_vectors, gamma) @ self.dual_coef + self.intercept


class SVC(ClassifierMixin, BaseEstimator):
    """RBF-kernel support vector classifier (one-vs-one, SMO).

    Parameters
    ----------
    C : float, default=1.0
    gamma : "scale", "auto" or float, default="scale"
        ``"scale"`` uses ``1 / (n_features * X.var())``.
    tol : float, default=1e-3
        Stopping tolerance on the maximal KKT violation.
    max_iter : int, default=-1
        Cap on SMO iterations per pair; -1 means ``max(10**7, 100 * n)``.
    cache_size : float, default=200
        Kernel row cache in megabytes.
    random_state : ignored
        Present for API compatibility; the working-set rule is deterministic.
    """

    def __init__(self, C=1.0, gamma="scale", tol=1e-3, max_iter=-1, cache_size=200, random_state=None):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter
        self.cache_size = cache_size
        self.random_state = random_state

    def _gamma(self, X) -> float:
        if self.gamma == "scale":
            return scale_gamma(X)
        if self.gamma == "auto":
            return 1.0 / X.shape[1]
        gamma = float(self.gamma)
        if gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        return gamma

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.C <= 0:
            raise ConfigurationError("C must be positive")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise SingleClass("need at least two classes to fit an SVM")
        self.gamma_ = self._gamma(X)
        self.n_features_in_ = X.shape[1]
        self.pairs_ = []
        for a, b in combinations(range(len(self.classes_)), 2):
            idx = np.flatnonzero((y == self.classes_[a]) | (y == self.classes_[b]))
            yy = np.where(y[idx] == self.classes_[a], 1.0, -1.0)
            cap = self.max_iter if self.max_iter > 0 else max(10_000_000, 100 * len(idx))
            res = smo(KernelRows(X[idx], self.gamma_, self.cache_size), yy, self.C, self.tol, cap)
            sv = np.flatnonzero(res.alpha > 0)
            self.pairs_.append(PairModel((a, b), idx[sv], X[idx[sv]], res.alpha[sv] * yy[sv], -res.rho,
                                         res.n_iter, res.converged))
        self.converged_ = all(p.converged for p in self.pairs_)
        if not self.converged_:
            warnings.warn("SMO hit the iteration cap before meeting the KKT tolerance", ConvergenceWarning)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Pairwise decision values, one column per class pair (lexicographic)."""
        check_is_fitted(self, "pairs_")
        X = check_array(X, dtype=np.float64)
        return np.column_stack([p.decision(X, self.gamma_) for p in self.pairs_])

    def predict(self, X) -> np.ndarray:
        dec = self.decision_function(X)
        return self.classes_[ovo_vote(dec, [p.classes for p in self.pairs_], len(self.classes_))]

    # -- persistence ------------------------------------------------------- #

    def save(self, path) -> None:
        check_is_fitted(self, "pairs_")
        manifest = {
            "kind": "svc",
            "params": self.get_params(),
            "gamma": self.gamma_,
            "classes": self.classes_.tolist(),
            "n_features": self.n_features_in_,
            "pairs": [
                {"classes": list(p.classes), "intercept": p.intercept, "n_iter": p.n_iter,
                 "converged": p.converged, "support": p.support.tolist()}
                for p in self.pairs_
            ],
        }
        arrays = {}
        for k, p in enumerate(self.pairs_):
            arrays[f"pair{k}/support_vectors"] = p.support_vectors
            arrays[f"pair{k}/dual_coef"] = p.dual_coef
        save_container(path, manifest, arrays)

    @classmethod
    def load(cls, path) -> "SVC":
        manifest, arrays = load_container(path)
        model = cls(**manifest["params"])
        model.gamma_ = manifest["gamma"]
        model.classes_ = np.array(manifest["classes"])
        model.n_features_in_ = manifest["n_features"]
        model.pairs_ = [
            PairModel(tuple(meta["classes"]), np.array(meta["support"], dtype=np.int64),
                      arrays[f"pair{k}/support_vectors"], arrays[f"pair{k}/dual_coef"],
                      meta["intercept"], meta["n_iter"], meta["converged"])
            for k, meta in enumerate(manifest["pairs"])
        ]
        model.converged_ = all(p.converged for p in model.pairs_)
        return model
