"""Shared machinery for oversamplers with an imbalanced-learn style API."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_X_y


@dataclass
class OversampleRequest:
    """Desired final count per label, neighbour count and seed."""

    target_per_class: dict[int, int] = field(default_factory=dict)
    k: int = 5
    seed: int = 0


def class_seed(seed: int, label: int) -> np.random.SeedSequence:
    # one independent stream per class keeps results identical however classes are scheduled
    return np.random.SeedSequence([int(seed), int(label)])


def balance_targets(y, sampling_strategy="auto") -> dict[int, int]:
    """Final count per class: ``"auto"`` lifts every class to the largest count."""
    labels, counts = np.unique(y, return_counts=True)
    current = {int(c): int(n) for c, n in zip(labels, counts)}
    if isinstance(sampling_strategy, str):
        if sampling_strategy != "auto":
            raise ValueError(f"unknown sampling_strategy {sampling_strategy!r}")
        top = max(current.values())
        return {c: top for c in current}
    targets = dict(current)
    for c, n in dict(sampling_strategy).items():
        c = int(c)
        if c not in current:
            raise ValueError(f"label {c} not present in y")
        if n < current[c]:
            raise ValueError(f"target {n} for label {c} is below its current count {current[c]}")
        targets[c] = int(n)
    return targets


class BaseOversampler(BaseEstimator):
    """Appends synthetic rows until every class reaches its target count.

    Subclasses implement ``_generate(X, y, label, n_new, seed_seq)`` returning
    an ``(n_new, d)`` array for one class. After ``fit_resample`` the
    attributes ``synthetic_mask_`` and ``n_synthetic_`` describe what was added.
    """

    def _generate(self, X, y, label, n_new, seed_seq):  # pragma: no cover
        raise NotImplementedError

    def _prepare(self, X, y):
        """Hook for models fitted once on the whole set (e.g. a conditional VAE)."""

    def fit_resample(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        targets = balance_targets(y, self.sampling_strategy)
        needed = {c: targets[c] - int(np.sum(y == c)) for c in sorted(targets)}
        self.n_synthetic_ = {c: n for c, n in needed.items() if n > 0}
        X_parts, y_parts = [X], [y]
        if self.n_synthetic_:
            self._prepare(X, y)
        for c, n in self.n_synthetic_.items():
            X_new = self._generate(X, y, c, n, class_seed(self.random_state, c))
            X_parts.append(np.asarray(X_new, dtype=np.float64).reshape(n, X.shape[1]))
            y_parts.append(np.full(n, c, dtype=np.int64))
        X_res, y_res = np.concatenate(X_parts), np.concatenate(y_parts)
        self.synthetic_mask_ = np.arange(len(y_res)) >= len(y)
        return X_res, y_res
