import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpbalance import harness
from fpbalance.cli import main
from fpbalance.dataset import CorpusConfig, prepare_sets, synth_corpus
from fpbalance.errors import NonFiniteLoss, TooManyTrials
from fpbalance.harness import (
    COLUMNS,
    UNDEFINED,
    ExperimentPlan,
    TrialResult,
    aggregate,
    derive_seed,
    format_csv,
    load_trials,
    pick_minority_sets,
    run_plan,
    run_trial,
    trial_seeds,
)
from fpbalance.metrics import relative_change


@pytest.fixture(scope="module")
def small_sets():
    raw = synth_corpus(CorpusConfig(samples_per_space=60), seed=0)
    train, test, _ = prepare_sets(raw, 0.8, 0)
    return train, test


def test_pinned_sets():
    pinned = [[0, 1, 2, 3, 5], [0, 1, 3, 4, 5], [0, 1, 2, 3, 4]]
    assert pick_minority_sets(5, 3, 6, 0, pinned) == [(0, 1, 2, 3, 5), (0, 1, 3, 4, 5), (0, 1, 2, 3, 4)]


def test_singletons_and_pigeonhole():
    sets = pick_minority_sets(1, 3, 6, seed=4)
    assert len(set(sets)) == 3 and all(len(s) == 1 for s in sets)
    with pytest.raises(TooManyTrials):
        pick_minority_sets(5, 7, 6, 0)
    with pytest.raises(ValueError):
        pick_minority_sets(6, 1, 6, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_minority_sets_properties(count, trials, seed):
    from math import comb

    trials = min(trials, comb(6, count))
    sets = pick_minority_sets(count, trials, 6, seed)
    assert len(sets) == trials == len(set(sets))
    assert all(len(s) == count and len(set(s)) == count and max(s) < 6 for s in sets)
    assert sets == pick_minority_sets(count, trials, 6, seed)


def test_partial_pinning_fills_with_draws():
    sets = pick_minority_sets(2, 3, 6, 1, pinned=[[4, 1]])
    assert sets[0] == (1, 4) and len(set(sets)) == 3


def test_seed_hierarchy():
    s = trial_seeds(7, 1, 0)
    assert s == trial_seeds(7, 1, 0)
    assert len(set(s.values())) == len(s)
    assert s != trial_seeds(7, 1, 1) and s != trial_seeds(8, 1, 0)
    assert derive_seed(7, 1, 0, 2) == s["smote"]


def test_method_none_gives_zero_change(small_sets):
    train, test = small_sets
    tr = run_trial(train, test, [0], ["none"], trial_seeds(0, 1, 0), ratio=10)
    assert tr.reports["none"] == tr.baseline
    for g in tr.relative["none"].values():
        for v in g.values():
            assert v == 0 or v is None


def test_ratio_one_changes_nothing(small_sets):
    train, test = small_sets
    tr = run_trial(train, test, [2], ["smote", "adasyn"], trial_seeds(0, 1, 0), ratio=1)
    for m in ("smote", "adasyn"):
        assert tr.n_synthetic[m] == 0
        assert tr.reports[m] == tr.baseline


def test_relative_changes_recompute_from_absolutes(small_sets):
    train, test = small_sets
    tr = run_trial(train, test, [1], ["smote"], trial_seeds(0, 1, 0), ratio=10)
    back = TrialResult.from_dict(json.loads(json.dumps(tr.to_dict())))
    for g, metrics in back.relative["smote"].items():
        for m, v in metrics.items():
            base = back.baseline[g, m]
            if base == 0:
                assert v is None
            else:
                assert v == relative_change(back.reports["smote"][g, m], base)


def test_retry_then_fail(small_sets, monkeypatch):
    train, test = small_sets
    calls = []
    real = harness.make_oversampler

    class Exploding:
        def fit_resample(self, X, y):
            raise NonFiniteLoss("nan")

    def fake(method, seed, epochs=500, n_classes=None):
        calls.append((method, seed))
        if method == "vae":
            return Exploding()
        if method == "cvae" and len(calls) == 1:
            return Exploding()
        return real("smote", seed)

    monkeypatch.setattr(harness, "make_oversampler", fake)
    seeds = trial_seeds(0, 1, 0)
    tr = run_trial(train, test, [0], ["cvae", "vae"], seeds, ratio=10)
    assert calls[:2] == [("cvae", seeds["cvae"]), ("cvae", seeds["cvae_retry"])]
    assert tr.retried == ["cvae", "vae"]
    assert "vae" in tr.failed and "cvae" not in tr.failed
    assert tr.reports["vae"] is None and tr.reports["cvae"] is not None
    rows = aggregate([tr], ["cvae", "vae"])
    assert rows[1]["trials"] == 0 and rows[1]["cells"] == [None] * 9


def _fake_trial(count, trial, rel):
    base = {g: {"precision": 0.5, "recall": 0.5, "f1": 0.5} for g in ("minority", "majority", "overall")}
    from fpbalance.metrics import GroupReport

    return TrialResult(count, trial, [0], {}, GroupReport.from_dict(base), {"smote": GroupReport.from_dict(base)},
                       {"smote": rel})


def test_aggregate_is_per_trial_then_mean():
    rels = []
    for v in (0.1, 0.2, 0.6):
        rels.append({g: {"precision": v, "recall": -v, "f1": None if g == "majority" and v == 0.6 else v}
                     for g in ("minority", "majority", "overall")})
    rows = aggregate([_fake_trial(1, t, r) for t, r in enumerate(rels)], ["smote"])
    (row,) = rows
    assert row["trials"] == 3
    assert row["cells"][0] == pytest.approx(0.3)
    assert row["cells"][1] == pytest.approx(-0.3)
    assert row["cells"][5] is None
    text = format_csv(rows)
    assert text.splitlines()[0].split(",") == ["minority_count", "method", "trials", *COLUMNS]
    assert text.splitlines()[1].split(",")[3 + 5] == UNDEFINED


def test_plan_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        ExperimentPlan(methods=["gan"])
    with pytest.raises(ValueError):
        ExperimentPlan(minority_counts=[6])
    plan = ExperimentPlan(pinned={"5": [[0, 1, 2, 3, 5]]}, trials=1)
    assert plan.pinned == {5: [[0, 1, 2, 3, 5]]}
    (tmp_path / "p.json").write_text(json.dumps(plan.to_dict()))
    assert ExperimentPlan.from_json(tmp_path / "p.json") == plan


def _tiny_plan(**kw):
    base = dict(minority_counts=[1], trials=1, methods=["smote"], scale=40, ratio=10, seed=3)
    base.update(kw)
    return ExperimentPlan(**base)


def test_run_plan_single_row_and_determinism(tmp_path):
    results = run_plan(_tiny_plan(), tmp_path / "a")
    run_plan(_tiny_plan(), tmp_path / "b")
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    rows = list(csv.reader(a.decode().splitlines()))
    assert len(rows) == 2 and rows[1][:3] == ["1", "smote", "1"]
    txt = (tmp_path / "a" / "results.txt").read_text()
    for word in ("Minority", "Majority", "Overall", "Precision", "Recall", "F1"):
        assert word in txt
    assert len(results) == 1
    assert load_trials(tmp_path / "a")[0].to_dict() == results[0].to_dict()
    assert (tmp_path / "a" / "trials" / "count1_trial0.json").exists()


def test_parallel_jobs_match_serial(tmp_path):
    plan = _tiny_plan(minority_counts=[1, 2], methods=["smote", "adasyn"])
    run_plan(plan, tmp_path / "s")
    run_plan(plan, tmp_path / "p", jobs=2)
    assert (tmp_path / "s" / "results.csv").read_bytes() == (tmp_path / "p" / "results.csv").read_bytes()


def test_generative_methods_in_plan_and_saved_models(tmp_path):
    run_plan(_tiny_plan(methods=["vae", "cvae"], epochs=1), tmp_path, save_models=True)
    names = sorted(p.name for p in (tmp_path / "models").iterdir())
    assert names[0].startswith("count1_trial0_cvae") and any("vae_class" in n for n in names)


def test_cli_end_to_end(tmp_path, capsys):
    corpus = tmp_path / "c.csv"
    assert main(["gen", "--out", str(corpus), "--scale", "30", "--seed", "1"]) == 0
    assert main(["prep", "--input", str(corpus), "--out", str(tmp_path / "prep")]) == 0
    assert main(["train-gen", "--train", str(tmp_path / "prep" / "train.npz"), "--method", "vae", "--labels", "0",
                 "--epochs", "1", "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "vae_class0.fpm").exists()
    cfg = tmp_path / "plan.json"
    cfg.write_text(json.dumps({"trials": 2, "methods": ["smote"]}))
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--corpus", str(corpus), "--minority-counts", "1", "--ratio", "5",
                 "--out", str(out)]) == 0
    first = (out / "results.csv").read_bytes()
    assert json.loads((out / "plan.json").read_text())["trials"] == 2
    (out / "results.csv").unlink()
    assert main(["report", "--out", str(out)]) == 0
    assert (out / "results.csv").read_bytes() == first
    assert "smote" in capsys.readouterr().out


@pytest.mark.slow
def test_smoke_trial_desk_scale():
    raw = synth_corpus(CorpusConfig(samples_per_space=600), seed=11)
    train, test, _ = prepare_sets(raw, 0.8, 0)
    tr = run_trial(train, test, [3], ["smote"], trial_seeds(11, 1, 0), ratio=100)
    assert tr.relative["smote"]["minority"]["f1"] > 0
    assert np.isfinite(tr.reports["smote"]["overall", "f1"])
