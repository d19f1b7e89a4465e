"""Fingerprint ingestion, scaling, recurrence plots, splitting and imbalancing.

Raw RSS fingerprints (dBm) are min-max scaled per beacon into [0, 1] and then
turned into recurrence plots ``R[i, j] = |x_i - x_j|``. Everything downstream
(oversamplers, generative models, the SVM) consumes those plots, usually
flattened to ``n * n`` vectors.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import (
    BadGeometry,
    ClassTooSmall,
    DomainError,
    EmptyFile,
    EmptyInput,
    MalformedRow,
    RatioTooLarge,
    UnknownLabel,
)

#: RSS substituted for a missing or undetected beacon reading.
SENTINEL_DBM = -110.0
RSS_FLOOR_DBM = -110.0
RSS_CEIL_DBM = -30.0
DEFAULT_N_BEACONS = 30
DEFAULT_N_SPACES = 6


@dataclass
class RawFingerprint:
    rss: np.ndarray
    label: int


@dataclass
class Fingerprint:
    x: np.ndarray
    label: int


@dataclass
class RecurrencePlot:
    r: np.ndarray
    label: int


@dataclass
class ScalingParams:
    min: np.ndarray
    max: np.ndarray


@dataclass
class LabeledSet:
    """Stack of recurrence plots with labels.

    ``X`` has shape ``(N, n, n)``. ``synthetic`` flags rows produced by an
    oversampler; it defaults to all False.
    """

    X: np.ndarray
    y: np.ndarray
    role: str = "train"
    synthetic: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim == 2:
            n = int(round(math.sqrt(self.X.shape[1])))
            self.X = self.X.reshape(len(self.X), n, n)
        if len(self.X) != len(self.y):
            raise ValueError("X and y differ in length")
        if self.synthetic is None:
            self.synthetic = np.zeros(len(self.y), dtype=bool)
        else:
            self.synthetic = np.asarray(self.synthetic, dtype=bool)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.y, return_counts=True)
        return {int(k): int(v) for k, v in zip(labels, counts)}

    @property
    def flat(self) -> np.ndarray:
        return self.X.reshape(len(self.X), -1)

    @property
    def plots(self) -> list[RecurrencePlot]:
        return [RecurrencePlot(r, int(c)) for r, c in zip(self.X, self.y)]

    @classmethod
    def from_plots(cls, plots: Sequence[RecurrencePlot], role: str = "train") -> "LabeledSet":
        if not plots:
            raise EmptyInput("no plots")
        return cls(np.stack([p.r for p in plots]), np.array([p.label for p in plots]), role)

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx)
        return LabeledSet(self.X[idx], self.y[idx], self.role, self.synthetic[idx])

    def save(self, path) -> None:
        np.savez(path, X=self.X, y=self.y, synthetic=self.synthetic, role=np.array(self.role))

    @classmethod
    def load(cls, path) -> "LabeledSet":
        with np.load(path) as data:
            return cls(data["X"], data["y"], str(data["role"]), data["synthetic"])


# --------------------------------------------------------------------------- #
# CSV ingestion
# --------------------------------------------------------------------------- #


@dataclass
class CsvSchema:
    """Column layout of a fingerprint CSV.

    The default layout is ``rss_0 .. rss_{n-1}, label``. Other public datasets
    can be read by listing their RSS column names and label column; cells
    matching ``missing`` become the sentinel reading.
    """

    n: int = DEFAULT_N_BEACONS
    n_classes: int = DEFAULT_N_SPACES
    rss_columns: list[str] | None = None
    label_column: str = "label"
    missing: tuple[str, ...] = ("", "nan", "NaN", "NA")
    sentinel: float = SENTINEL_DBM

    def columns(self) -> list[str]:
        if self.rss_columns is not None:
            return list(self.rss_columns)
        return [f"rss_{i}" for i in range(self.n)]


def load_csv(path, schema: CsvSchema | None = None) -> list[RawFingerprint]:
    schema = schema or CsvSchema()
    rss_cols = schema.columns()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path}: file is empty")
        header = [h.strip() for h in header]
        missing_cols = [c for c in rss_cols + [schema.label_column] if c not in header]
        if missing_cols:
            raise MalformedRow(f"{path}: header lacks columns {missing_cols[:5]}")
        rss_idx = [header.index(c) for c in rss_cols]
        label_idx = header.index(schema.label_column)

        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            rss = np.empty(len(rss_idx))
            for k, i in enumerate(rss_idx):
                cell = row[i].strip()
                if cell in schema.missing:
                    rss[k] = schema.sentinel
                    continue
                try:
                    rss[k] = float(cell)
                except ValueError:
                    raise MalformedRow(f"{path}:{lineno}: non-numeric RSS {cell!r}") from None
            try:
                label = int(row[label_idx].strip())
            except ValueError:
                raise MalformedRow(f"{path}:{lineno}: bad label {row[label_idx]!r}") from None
            if not 0 <= label < schema.n_classes:
                raise UnknownLabel(f"{path}:{lineno}: label {label} outside [0, {schema.n_classes - 1}]")
            out.append(RawFingerprint(rss, label))
    if not out:
        raise EmptyFile(f"{path}: no data rows")
    return out


def write_csv(path, fingerprints: Iterable[RawFingerprint]) -> None:
    fingerprints = list(fingerprints)
    n = len(fingerprints[0].rss)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"rss_{i}" for i in range(n)] + ["label"])
        for fp in fingerprints:
            writer.writerow([repr(float(v)) for v in fp.rss] + [int(fp.label)])


def stack_raw(fingerprints: Sequence[RawFingerprint]) -> tuple[np.ndarray, np.ndarray]:
    if not fingerprints:
        raise EmptyInput("no fingerprints")
    X = np.stack([np.asarray(f.rss, dtype=np.float64) for f in fingerprints])
    y = np.array([f.label for f in fingerprints], dtype=np.int64)
    return X, y


# --------------------------------------------------------------------------- #
# Scaling and recurrence plots
# --------------------------------------------------------------------------- #


def fit_scaling(train: Sequence[RawFingerprint] | np.ndarray) -> ScalingParams:
    """Per-beacon min/max over the training rows.

    A constant beacon gets ``max = min + 1`` so it scales to 0 everywhere.
    """
    if len(train) == 0:
        raise EmptyInput("cannot fit scaling on an empty training set")
    X = train if isinstance(train, np.ndarray) else stack_raw(train)[0]
    lo = X.min(axis=0).astype(np.float64)
    hi = X.max(axis=0).astype(np.float64)
    degenerate = hi == lo
    hi[degenerate] = lo[degenerate] + 1.0
    return ScalingParams(lo, hi)


def scale_rss(X: np.ndarray, p: ScalingParams) -> np.ndarray:
    return np.clip((X - p.min) / (p.max - p.min), 0.0, 1.0)


def standardize(raw: RawFingerprint, p: ScalingParams) -> Fingerprint:
    return Fingerprint(scale_rss(np.asarray(raw.rss, dtype=np.float64), p), raw.label)


def recurrence_matrix(x: np.ndarray) -> np.ndarray:
    """``|x_i - x_j|`` for one vector (shape ``(n,)``) or a batch ``(N, n)``."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(np.isnan(x)):
        raise DomainError("recurrence plots need components in [0, 1]")
    return np.abs(x[..., :, None] - x[..., None, :])


def to_recurrence_plot(f: Fingerprint) -> RecurrencePlot:
    return RecurrencePlot(recurrence_matrix(f.x), f.label)


class MinMaxRSSScaler(TransformerMixin, BaseEstimator):
    """Per-beacon min-max scaling into [0, 1], clamping unseen extremes."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.params_ = fit_scaling(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return scale_rss(X, self.params_)


class RecurrencePlotTransformer(TransformerMixin, BaseEstimator):
    """Turn scaled fingerprints ``(N, n)`` into recurrence plots.

    Parameters
    ----------
    flatten : bool, default=True
        Return ``(N, n*n)`` rows instead of ``(N, n, n)`` matrices.
    """

    def __init__(self, flatten: bool = True):
        self.flatten = flatten

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        R = recurrence_matrix(X)
        return R.reshape(len(R), -1) if self.flatten else R


# --------------------------------------------------------------------------- #
# Splitting and imbalancing
# --------------------------------------------------------------------------- #


def stratified_split_indices(labels, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise ClassTooSmall(f"class {c} has {len(idx)} sample(s); need at least 2")
        idx = rng.permutation(idx)
        k = int(math.floor(len(idx) * train_fraction))
        train_idx.append(idx[:k])
        test_idx.append(idx[k:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def split_train_test(plots, train_fraction: float = 0.8, seed: int = 0) -> tuple[LabeledSet, LabeledSet]:
    """Stratified shuffle-split; each class sends ``floor(count * fraction)`` to train."""
    data = plots if isinstance(plots, LabeledSet) else LabeledSet.from_plots(plots)
    tr, te = stratified_split_indices(data.y, train_fraction, seed)
    train, test = data.subset(tr), data.subset(te)
    train.role, test.role = "train", "test"
    return train, test


def make_imbalanced(train: LabeledSet, minority: Iterable[int], ratio: int, seed: int) -> LabeledSet:
    """Randomly downsample each minority class to ``floor(majority / ratio)``."""
    minority = {int(m) for m in minority}
    counts = train.class_counts
    if not minority or not minority < set(counts):
        raise ValueError(f"minority {sorted(minority)} must be a proper nonempty subset of {sorted(counts)}")
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    majority_count = max(v for k, v in counts.items() if k not in minority)
    keep = majority_count // ratio
    if keep == 0:
        raise RatioTooLarge(f"ratio 1:{ratio} leaves no samples from a majority of {majority_count}")

    rng = np.random.default_rng(seed)
    kept = []
    for c in sorted(counts):
        idx = np.flatnonzero(train.y == c)
        if c in minority and keep < len(idx):
            idx = np.sort(rng.choice(idx, size=keep, replace=False))
        kept.append(idx)
    return train.subset(np.sort(np.concatenate(kept)))


def prepare_sets(
    raw: Sequence[RawFingerprint], train_fraction: float = 0.8, seed: int = 0
) -> tuple[LabeledSet, LabeledSet, ScalingParams]:
    """Split raw fingerprints, fit scaling on the train part, build plot sets."""
    X, y = stack_raw(raw)
    tr, te = stratified_split_indices(y, train_fraction, seed)
    params = fit_scaling(X[tr])
    train = LabeledSet(recurrence_matrix(scale_rss(X[tr], params)), y[tr], "train")
    test = LabeledSet(recurrence_matrix(scale_rss(X[te], params)), y[te], "test")
    return train, test, params


# --------------------------------------------------------------------------- #
# Synthetic corpus
# --------------------------------------------------------------------------- #


def _default_spaces() -> list[list[float]]:
    # three "floors" stacked along y, two 12 m x 12 m structures per floor
    spaces = []
    for floor in range(3):
        y0 = floor * 26.0
        spaces.append([0.0, y0, 12.0, y0 + 12.0])
        spaces.append([18.0, y0, 30.0, y0 + 12.0])
    return spaces


def _default_beacons() -> list[list[float]]:
    beacons = []
    for floor in range(3):
        y0 = floor * 26.0
        for x0 in (0.0, 18.0):
            beacons += [[x0 + 2, y0 + 2], [x0 + 10, y0 + 2], [x0 + 2, y0 + 10], [x0 + 10, y0 + 10]]
        beacons += [[15.0, y0 + 3], [15.0, y0 + 9]]
    return beacons


@dataclass
class CorpusConfig:
    """Log-distance path-loss generator settings (JSON keys match field names)."""

    spaces: list[list[float]] = field(default_factory=_default_spaces)
    beacons: list[list[float]] = field(default_factory=_default_beacons)
    samples_per_space: int = 600
    eta: float = 2.5
    sigma_db: float = 4.0
    p0_dbm: float = -59.0
    d0_m: float = 1.0

    @classmethod
    def from_json(cls, path) -> "CorpusConfig":
        return cls(**json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "spaces": self.spaces,
            "beacons": self.beacons,
            "samples_per_space": self.samples_per_space,
            "eta": self.eta,
            "sigma_db": self.sigma_db,
            "p0_dbm": self.p0_dbm,
            "d0_m": self.d0_m,
        }


def path_loss_rss(distance, p0_dbm: float, eta: float, d0_m: float) -> np.ndarray:
    d = np.maximum(np.asarray(distance, dtype=np.float64), d0_m)
    return p0_dbm - 10.0 * eta * np.log10(d / d0_m)


def synth_corpus(config: CorpusConfig | None = None, seed: int = 0, n: int | None = None) -> list[RawFingerprint]:
    """Draw fingerprints from a log-distance path-loss model with shadowing.

    Each sample comes from a receiver placed uniformly at random inside its
    space's rectangle; readings are clipped to [-110, -30] dBm.
    """
    cfg = config or CorpusConfig()
    spaces = np.asarray(cfg.spaces, dtype=np.float64)
    beacons = np.asarray(cfg.beacons, dtype=np.float64)
    if spaces.ndim != 2 or spaces.shape[1] != 4 or len(spaces) == 0:
        raise BadGeometry("spaces must be a list of [x0, y0, x1, y1] rectangles")
    if np.any(spaces[:, 2] <= spaces[:, 0]) or np.any(spaces[:, 3] <= spaces[:, 1]):
        raise BadGeometry("every space rectangle needs positive width and height")
    if beacons.ndim != 2 or beacons.shape[1] != 2 or len(beacons) == 0:
        raise BadGeometry("beacons must be a list of [x, y] positions")
    if n is not None and len(beacons) != n:
        raise BadGeometry(f"{len(beacons)} beacons given, expected {n}")
    if cfg.samples_per_space < 1:
        raise BadGeometry("samples_per_space must be positive")

    rng = np.random.default_rng(seed)
    out = []
    for label, (x0, y0, x1, y1) in enumerate(spaces):
        m = cfg.samples_per_space
        pts = np.column_stack([rng.uniform(x0, x1, m), rng.uniform(y0, y1, m)])
        dist = np.linalg.norm(pts[:, None, :] - beacons[None, :, :], axis=-1)
        rss = path_loss_rss(dist, cfg.p0_dbm, cfg.eta, cfg.d0_m)
        rss = rss + rng.normal(0.0, cfg.sigma_db, size=rss.shape) if cfg.sigma_db > 0 else rss
        rss = np.clip(rss, RSS_FLOOR_DBM, RSS_CEIL_DBM)
        out.extend(RawFingerprint(row, label) for row in rss)
    return out
