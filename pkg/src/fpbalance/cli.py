"""Command line entry point: ``fpbalance {gen,prep,train-gen,run,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import CorpusConfig, LabeledSet, load_csv, prepare_sets, synth_corpus, write_csv
from .generative import TrainConfig, train
from .harness import METHODS, ExperimentPlan, load_trials, render_reports, run_plan


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_gen(args) -> int:
    cfg = CorpusConfig.from_json(args.config) if args.config else CorpusConfig()
    if args.scale:
        cfg.samples_per_space = args.scale
    raw = synth_corpus(cfg, seed=args.seed)
    write_csv(args.out, raw)
    print(f"wrote {len(raw)} fingerprints to {args.out}")
    return 0


def cmd_prep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, test_set, params = prepare_sets(load_csv(args.input), args.fraction, args.seed)
    train_set.save(out / "train.npz")
    test_set.save(out / "test.npz")
    (out / "scaling.json").write_text(json.dumps({"min": params.min.tolist(), "max": params.max.tolist()}))
    print(f"train {len(train_set)} / test {len(test_set)} plots written to {out}")
    return 0


def cmd_train_gen(args) -> int:
    data = LabeledSet.load(args.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed)
    progress = (lambda h: print(f"epoch {h['epoch']}: loss {h['loss']:.4f}")) if args.verbose else None
    if args.method == "cvae":
        model = train(data.X, data.y, cfg, label_dim=int(data.y.max()) + 1, callback=progress)
        model.save(out / "cvae.fpm")
        print(f"saved {out / 'cvae.fpm'}")
        return 0
    labels = args.labels if args.labels is not None else sorted(data.class_counts)
    for label in labels:
        cfg.seed = int(np.random.SeedSequence([args.seed, label]).generate_state(1)[0])
        model = train(data.X[data.y == label], config=cfg, callback=progress)
        model.save(out / f"vae_class{label}.fpm")
        print(f"saved {out / f'vae_class{label}.fpm'}")
    return 0


def _plan_from_args(args) -> ExperimentPlan:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {
        "seed": args.seed,
        "ratio": args.ratio,
        "minority_counts": args.minority_counts,
        "trials": args.trials,
        "methods": args.methods,
        "epochs": args.epochs,
        "scale": args.scale,
        "corpus_csv": args.corpus,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentPlan.from_dict(base)


def cmd_run(args) -> int:
    plan = _plan_from_args(args)
    run_plan(plan, args.out, jobs=args.jobs, save_models=args.save_models)
    print((Path(args.out) / "results.txt").read_text(), end="")
    return 0


def cmd_report(args) -> int:
    results = load_trials(args.out)
    if not results:
        print(f"no trial files under {args.out}/trials", file=sys.stderr)
        return 1
    plan_file = Path(args.out, "plan.json")
    if args.methods:
        methods = args.methods
    elif plan_file.exists():
        methods = json.loads(plan_file.read_text())["methods"]
    else:
        methods = list(dict.fromkeys(m for r in results for m in r.relative))
    render_reports(results, args.out, methods)
    print(Path(args.out, "results.txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpbalance", description="Oversampling benchmark for fingerprint positioning")
    p.add_argument("-v", "--verbose", action="store_true", help="log seeds and progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic fingerprint corpus as CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=int, help="samples per space (default 600)")
    g.add_argument("--config", help="JSON file with corpus settings")
    g.set_defaults(func=cmd_gen)

    pr = sub.add_parser("prep", help="split a CSV corpus and build recurrence plots")
    pr.add_argument("--input", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--fraction", type=float, default=0.8, help="train share of each class")
    pr.set_defaults(func=cmd_prep)

    t = sub.add_parser("train-gen", help="fit VAE (one per class) or CVAE models")
    t.add_argument("--train", required=True, help="train.npz from `prep`")
    t.add_argument("--method", choices=["vae", "cvae"], default="cvae")
    t.add_argument("--labels", type=_int_list, help="VAE classes to model (default: all)")
    t.add_argument("--epochs", type=int, default=500)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_gen)

    r = sub.add_parser("run", help="execute an experiment plan")
    r.add_argument("--config", help="JSON file mirroring ExperimentPlan")
    r.add_argument("--seed", type=int)
    r.add_argument("--ratio", type=int)
    r.add_argument("--minority-counts", type=_int_list)
    r.add_argument("--trials", type=int)
    r.add_argument("--methods", type=_str_list, help=f"comma list from {','.join(METHODS)},none")
    r.add_argument("--epochs", type=int)
    r.add_argument("--scale", type=int, help="samples per space of the synthetic corpus")
    r.add_argument("--corpus", help="CSV corpus to use instead of the generator")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--save-models", action="store_true")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="re-render tables from per-trial JSON")
    rep.add_argument("--out", required=True)
    rep.add_argument("--methods", type=_str_list)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
