"""Command-line interface.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .features import (DatasetError, LabeledSample, UnlabeledSample, load_dataset, save_dataset,
                       split_dataset, stack)
from .gradcheck import CHECKS, run_gradcheck
from .harness import (ExperimentConfig, dumps_reports, reports_csv, run_ablations, run_baseline_comparison,
                      run_main_experiment, run_size_sweep)
from .simulator import ScenarioConfig, generate_dataset
from .training import TrainConfig, fit, load_model, save_model

GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; suppressed defaults keep a value
    # given before the subcommand from being reset
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(None), help="random seed")
    p.add_argument("--config", type=Path, default=d(None), help="JSON config file")
    p.add_argument("--out", type=Path, default=d(None), help="output file or directory")
    p.add_argument("--format", choices=("json", "csv"), default=d("csv"), help="dataset/prediction file format")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = _Parser(prog="switchdiag", description="Switchgear condition diagnosis with radius-gated "
                     "semi-supervised prototypes.", parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--hidden", action="store_true", help="also write the unlabeled pool's true labels")

    t = sub.add_parser("train", parents=[common], help="train a model on a dataset directory")
    t.add_argument("--data", type=Path, required=True, help="directory written by 'simulate'")

    p = sub.add_parser("predict", parents=[common], help="label feature vectors with a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True, help="input dataset file")

    e = sub.add_parser("experiment", parents=[common], help="run an experiment suite")
    e.add_argument("kind", choices=("main", "ablate", "sweep", "baselines"))
    e.add_argument("--seeds", type=int, default=None, help="number of seeds, 0..N-1")
    e.add_argument("--sizes", default="200,150,100,50", help="labeled sizes for the sweep")

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    g.add_argument("--points", type=int, default=20)
    return parser


def _read_json(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from None


def _ext(fmt: str) -> str:
    return ".json" if fmt == "json" else ".csv"


def cmd_simulate(args) -> int:
    cfg = ScenarioConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(cfg)
    ext = _ext(args.format)
    files = {"labeled": f"labeled{ext}", "test": f"test{ext}", "unlabeled": f"unlabeled{ext}"}
    save_dataset(list(ds.train), out / files["labeled"], args.format)
    save_dataset(list(ds.test), out / files["test"], args.format)
    save_dataset(list(ds.unlabeled), out / files["unlabeled"], args.format)
    if args.hidden:
        files["hidden"] = "hidden_labels.csv"
        with open(out / files["hidden"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "label"])
            for s, y in zip(ds.unlabeled, ds.hidden_labels):
                w.writerow([s.id, int(y)])
    manifest = {
        "files": files,
        "counts": {"labeled": len(ds.train), "test": len(ds.test), "unlabeled": len(ds.unlabeled)},
        "scenario": cfg.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(ds.train)} labeled, {len(ds.test)} test, {len(ds.unlabeled)} unlabeled to {out}")
    return 0


def _data_file(data: Path, stem: str, fmt: str) -> Path | None:
    manifest = data / "manifest.json"
    if manifest.exists():
        name = json.loads(manifest.read_text(encoding="utf-8"))["files"].get(stem)
        return None if name is None else data / name
    path = data / f"{stem}{_ext(fmt)}"
    return path if path.exists() else None


def cmd_train(args) -> int:
    cfg = TrainConfig.from_dict(_read_json(args.config))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is None:
        raise UsageError("train needs --out <model.json>")
    labeled_path = _data_file(args.data, "labeled", args.format)
    if labeled_path is None:
        raise UsageError(f"no labeled dataset in {args.data}")
    records = load_dataset(labeled_path)
    labeled = [r for r in records if isinstance(r, LabeledSample)]
    unlabeled = [r for r in records if isinstance(r, UnlabeledSample)]
    extra = _data_file(args.data, "unlabeled", args.format)
    if extra is not None:
        unlabeled += [UnlabeledSample(r.x, r.id) for r in load_dataset(extra)]
    split = split_dataset(labeled, unlabeled, {"support": 0.5, "query": 0.5}, cfg.seed)
    if not cfg.semi_supervised:
        split = split.with_unlabeled([])
    model = fit(split, cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, args.out)
    msg = f"trained on {len(labeled)} labeled + {len(split.unlabeled)} unlabeled; saved {args.out}"
    test_path = _data_file(args.data, "test", args.format)
    if test_path is not None:
        test = [r for r in load_dataset(test_path) if isinstance(r, LabeledSample)]
        if test:
            pred, _ = model.predict_batch(stack(test))
            acc = float(np.mean(pred == np.array([int(r.y) for r in test])))
            msg += f"; test accuracy {acc:.4f}"
    print(msg)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    records = load_dataset(args.inp)
    if not records:
        raise DatasetError("empty dataset")
    labels, P = model.predict_batch(stack(records))
    classes = model.prototypes.classes
    rows = [{"id": r.id, "label": int(k), **{f"p{c}": float(p) for c, p in zip(classes, probs)}}
            for r, k, probs in zip(records, labels, P)]
    if args.format == "json":
        text = json.dumps(rows, indent=1) + "\n"
    else:
        lines = [",".join(["id", "label"] + [f"p{c}" for c in classes])]
        lines += [",".join([row["id"], str(row["label"])] + [repr(row[f"p{c}"]) for c in classes]) for row in rows]
        text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, encoding="utf-8")
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_dict(_read_json(args.config))
    if args.seeds is not None:
        if args.seeds < 1:
            raise UsageError("--seeds must be at least 1")
        first = 0 if args.seed is None else args.seed
        cfg = replace(cfg, seeds=tuple(range(first, first + args.seeds)))
    elif args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    out = args.out or Path("results")
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "sweep":
        try:
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"bad --sizes {args.sizes!r}") from None
        result = run_size_sweep(cfg, sizes)
        (out / "sweep.csv").write_text(result.to_csv(), encoding="utf-8")
        for (m, size), (mean, sd) in sorted(result.summary().items(), key=lambda kv: (kv[0][0], -kv[0][1])):
            print(f"{m:4s} size={size:4d} mean={mean:.4f} std={sd:.4f}")
        return 0
    if args.kind == "main":
        reports = list(run_main_experiment(cfg))
    elif args.kind == "ablate":
        reports = [r for _, r in run_ablations(cfg)]
    else:
        reports = run_baseline_comparison(cfg)
    (out / "report.json").write_text(dumps_reports(reports), encoding="utf-8")
    (out / "report.csv").write_text(reports_csv(reports), encoding="utf-8")
    timing = {r.name: r.wall_clock for r in reports}
    (out / "timing.json").write_text(json.dumps(timing, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    for r in reports:
        print(f"{r.name:16s} mean={r.mean:.4f} std={r.std:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(points=args.points, seed=0 if args.seed is None else args.seed)
    ok = True
    for name in CHECKS:
        r = results[name]
        passed = r["max_rel_error"] < GRADCHECK_TOLERANCE
        ok &= passed
        print(f"{name:18s} max_rel_error={r['max_rel_error']:.3e} checked={r['checked']} "
              f"{'ok' if passed else 'FAIL'}")
    if args.out is not None:
        args.out.write_text(json.dumps(results, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return 0 if ok else 2


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "experiment": cmd_experiment,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"switchdiag: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure: report without a traceback
        print(f"switchdiag: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
