"""Experiment orchestration: imbalance, oversample, classify, report.

Every random step takes an integer seed derived from the master seed through
``numpy.random.SeedSequence`` spawn keys, so any trial can be rerun on its own:

    corpus                  (0,)
    experiment (count c)    (c,)                  picks the minority sets
    trial t                 (c, t, stage)         split, imbalance, one per method
    retry of a stage        (c, t, stage, 1)
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from math import comb
from pathlib import Path

import numpy as np

from .classic import ADASYN, SMOTE
from .classifier import SVC
from .dataset import CorpusConfig, LabeledSet, load_csv, make_imbalanced, prepare_sets, synth_corpus
from .errors import NonFiniteLoss, TooManyTrials
from .generative import CVAEOversampler, VAEOversampler
from .metrics import GROUPS, METRICS, GroupReport, evaluate, relative_report

log = logging.getLogger("fpbalance")

METHODS = ("smote", "adasyn", "vae", "cvae")
STAGES = {"split": 0, "imbalance": 1, "smote": 2, "adasyn": 3, "vae": 4, "cvae": 5}
UNDEFINED = "—"
COLUMNS = [f"{g}_{m}" for g in GROUPS for m in METRICS]


def derive_seed(master: int, *path: int) -> int:
    return int(np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path)).generate_state(1)[0])


def trial_seeds(master: int, count: int, trial: int) -> dict[str, int]:
    seeds = {name: derive_seed(master, count, trial, k) for name, k in STAGES.items()}
    seeds.update({f"{name}_retry": derive_seed(master, count, trial, STAGES[name], 1) for name in METHODS})
    return seeds


@dataclass
class ExperimentPlan:
    """Everything a run depends on besides the corpus itself.

    ``pinned`` maps a minority count to explicit label sets used before any
    random draw. ``scale`` is the number of synthetic samples per space.
    """

    n_classes: int = 6
    minority_counts: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    trials: int = 3
    ratio: int = 100
    seed: int = 0
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    epochs: int = 500
    scale: int = 600
    train_fraction: float = 0.8
    average: str = "macro"
    pinned: dict[int, list[list[int]]] = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)
    corpus_csv: str | None = None

    def __post_init__(self):
        self.pinned = {int(k): [sorted(int(c) for c in s) for s in v] for k, v in self.pinned.items()}
        unknown = set(self.methods) - set(METHODS) - {"none"}
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if any(not 1 <= c < self.n_classes for c in self.minority_counts):
            raise ValueError(f"minority counts must lie in [1, {self.n_classes - 1}]")
        if self.trials < 1 or self.ratio < 1 or self.epochs < 1 or self.scale < 1:
            raise ValueError("trials, ratio, epochs and scale must be positive")
        if self.average not in ("macro", "micro"):
            raise ValueError("average must be 'macro' or 'micro'")

    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(**{**self.corpus, "samples_per_space": self.scale})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def pick_minority_sets(count: int, trials: int, K: int = 6, seed: int = 0, pinned=None) -> list[tuple[int, ...]]:
    """``trials`` distinct label sets of size ``count``.

    Pinned sets come first; the rest are drawn uniformly without replacement
    from the remaining subsets.
    """
    if not 1 <= count <= K - 1:
        raise ValueError(f"count must lie in [1, {K - 1}]")
    if trials > comb(K, count):
        raise TooManyTrials(f"only {comb(K, count)} distinct sets of size {count} exist among {K} classes")
    chosen = []
    for s in pinned or []:
        s = tuple(sorted(int(c) for c in s))
        if len(s) != count or len(set(s)) != count or min(s) < 0 or max(s) >= K:
            raise ValueError(f"pinned set {s} is not a size-{count} subset of range({K})")
        if s in chosen:
            raise ValueError(f"pinned set {s} repeats")
        chosen.append(s)
    chosen = chosen[:trials]
    rest = [s for s in combinations(range(K), count) if s not in chosen]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(rest), size=trials - len(chosen), replace=False)
    return chosen + [rest[i] for i in picks]


def make_oversampler(method: str, seed: int, epochs: int = 500, n_classes: int | None = None):
    if method == "smote":
        return SMOTE(random_state=seed)
    if method == "adasyn":
        return ADASYN(random_state=seed)
    if method == "vae":
        return VAEOversampler(epochs=epochs, random_state=seed)
    if method == "cvae":
        return CVAEOversampler(epochs=epochs, n_classes=n_classes, random_state=seed)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class TrialResult:
    count: int
    trial: int
    minority: list[int]
    seeds: dict[str, int]
    baseline: GroupReport
    reports: dict[str, GroupReport | None] = field(default_factory=dict)
    relative: dict[str, dict | None] = field(default_factory=dict)
    n_synthetic: dict[str, int] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)
    retried: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "trial": self.trial,
            "minority": list(self.minority),
            "seeds": self.seeds,
            "baseline": self.baseline.to_dict(),
            "reports": {m: None if r is None else r.to_dict() for m, r in self.reports.items()},
            "relative": self.relative,
            "n_synthetic": self.n_synthetic,
            "failed": self.failed,
            "retried": self.retried,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialResult":
        return cls(
            d["count"], d["trial"], d["minority"], d["seeds"], GroupReport.from_dict(d["baseline"]),
            {m: None if r is None else GroupReport.from_dict(r) for m, r in d["reports"].items()},
            d["relative"], d.get("n_synthetic", {}), d.get("failed", {}), d.get("retried", []),
        )


def _class_counts_equal(y) -> bool:
    return len(set(np.unique(y, return_counts=True)[1].tolist())) == 1


def run_trial(train: LabeledSet, test: LabeledSet, minority, methods, seeds: dict[str, int], ratio: int = 100,
              epochs: int = 500, average: str = "macro", count: int = 0, trial: int = 0,
              model_dir=None) -> TrialResult:
    """Imbalance ``train``, score the baseline, then each oversampler, on ``test``."""
    minority = sorted(int(c) for c in minority)
    K = int(max(train.y.max(), test.y.max())) + 1
    imb = make_imbalanced(train, minority, ratio, seeds["imbalance"])
    X, y = imb.flat, imb.y
    baseline = evaluate(test.y, SVC().fit(X, y).predict(test.flat), K, minority, average)
    result = TrialResult(count, trial, minority, dict(seeds), baseline)
    log.info("count=%d trial=%d minority=%s seeds=%s", count, trial, minority, seeds)

    for method in methods:
        if method == "none":
            result.reports[method] = baseline
            result.relative[method] = relative_report(baseline, baseline)
            continue
        attempts = [seeds[method], seeds[f"{method}_retry"]]
        for attempt, seed in enumerate(attempts):
            try:
                sampler = make_oversampler(method, seed, epochs, K)
                X_res, y_res = sampler.fit_resample(X, y)
                break
            except NonFiniteLoss as exc:
                log.warning("%s failed with seed %d: %s", method, seed, exc)
                if attempt == 0:
                    result.retried.append(method)
                else:
                    result.failed[method] = str(exc)
        if method in result.failed:
            result.reports[method] = result.relative[method] = None
            continue
        if not _class_counts_equal(y_res):
            raise RuntimeError(f"{method} left the classes unbalanced")
        if model_dir is not None:
            _save_generators(sampler, Path(model_dir), f"count{count}_trial{trial}_{method}")
        report = evaluate(test.y, SVC().fit(X_res, y_res).predict(test.flat), K, minority, average)
        result.reports[method] = report
        result.relative[method] = relative_report(report, baseline)
        result.n_synthetic[method] = int(len(y_res) - len(y))
    return result


def _save_generators(sampler, model_dir: Path, stem: str) -> None:
    model_dir.mkdir(parents=True, exist_ok=True)
    if hasattr(sampler, "models_"):
        for label, model in sampler.models_.items():
            model.save(model_dir / f"{stem}_class{label}.fpm")
    elif hasattr(sampler, "model_"):
        sampler.model_.save(model_dir / f"{stem}.fpm")


def load_corpus(plan: ExperimentPlan):
    if plan.corpus_csv:
        return load_csv(plan.corpus_csv)
    return synth_corpus(plan.corpus_config(), seed=derive_seed(plan.seed, 0))


def _run_job(plan: ExperimentPlan, raw, count: int, trial: int, minority, model_dir) -> TrialResult:
    seeds = trial_seeds(plan.seed, count, trial)
    train, test, _ = prepare_sets(raw, plan.train_fraction, seeds["split"])
    return run_trial(train, test, minority, plan.methods, seeds, plan.ratio, plan.epochs, plan.average,
                     count, trial, model_dir)


def plan_jobs(plan: ExperimentPlan) -> list[tuple[int, int, tuple[int, ...]]]:
    jobs = []
    for count in plan.minority_counts:
        sets = pick_minority_sets(count, plan.trials, plan.n_classes, derive_seed(plan.seed, count),
                                  plan.pinned.get(count))
        log.info("count=%d minority sets=%s", count, sets)
        jobs += [(count, t, s) for t, s in enumerate(sets)]
    return jobs


def run_plan(plan: ExperimentPlan, out_dir, raw=None, jobs: int = 1, save_models: bool = False) -> list[TrialResult]:
    """Run every trial of ``plan`` and write reports into ``out_dir``.

    Each trial's JSON is written as soon as it finishes; ``results.csv`` and
    ``results.txt`` are rendered once all trials are in.
    """
    out = Path(out_dir)
    trials_dir = out / "trials"
    trials_dir.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
    raw = load_corpus(plan) if raw is None else raw
    model_dir = out / "models" if save_models else None
    todo = plan_jobs(plan)

    def collect(tr: TrialResult):
        path = trials_dir / f"count{tr.count}_trial{tr.trial}.json"
        path.write_text(json.dumps(tr.to_dict(), indent=2, sort_keys=True))
        return tr

    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            futures = [pool.submit(_run_job, plan, raw, c, t, s, model_dir) for c, t, s in todo]
            results = [collect(f.result()) for f in futures]
    else:
        results = [collect(_run_job(plan, raw, c, t, s, model_dir)) for c, t, s in todo]
    render_reports(results, out, plan.methods)
    return results


def load_trials(out_dir) -> list[TrialResult]:
    paths = sorted(Path(out_dir, "trials").glob("count*_trial*.json"))
    return [TrialResult.from_dict(json.loads(p.read_text())) for p in paths]


def aggregate(results: list[TrialResult], methods) -> list[dict]:
    """Mean relative change per (minority count, method) across trials.

    Failed trials are left out. A cell is undefined (``None``) when any
    remaining trial has an undefined value there or no trial succeeded.
    """
    rows = []
    for count in sorted({r.count for r in results}):
        group = sorted((r for r in results if r.count == count), key=lambda r: r.trial)
        for method in methods:
            rel = [r.relative[method] for r in group if r.relative.get(method) is not None]
            cells = []
            for g in GROUPS:
                for m in METRICS:
                    vals = [d[g][m] for d in rel]
                    cells.append(None if not vals or any(v is None for v in vals) else float(np.mean(vals)))
            rows.append({"count": count, "method": method, "trials": len(rel), "cells": cells})
    return rows


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["minority_count", "method", "trials", *COLUMNS])
    for row in rows:
        w.writerow([row["count"], row["method"], row["trials"],
                    *(UNDEFINED if v is None else f"{v:.6f}" for v in row["cells"])])
    return buf.getvalue()


def format_table(rows) -> str:
    """Aligned text table of relative changes in percent."""
    cw = 10
    head1 = f"{'':<8}{'':<8}{'':>7}" + "".join(f"{g.capitalize():^{3 * cw}}" for g in GROUPS)
    head2 = f"{'count':<8}{'method':<8}{'trials':>7}" + "".join(f"{m.capitalize():>{cw}}" for _ in GROUPS for m in METRICS)
    lines = [head1.rstrip(), head2, "-" * len(head2)]
    for row in rows:
        cells = "".join(f"{UNDEFINED if v is None else f'{100 * v:+.2f}%':>{cw}}" for v in row["cells"])
        lines.append(f"{row['count']:<8}{row['method']:<8}{row['trials']:>7}{cells}")
    return "\n".join(lines) + "\n"


def render_reports(results: list[TrialResult], out_dir, methods) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = aggregate(results, methods)
    csv_path, txt_path = out / "results.csv", out / "results.txt"
    csv_path.write_text(format_csv(rows), encoding="utf-8")
    txt_path.write_text(format_table(rows), encoding="utf-8")
    return csv_path, txt_path
