"""Command-line runner: ``prefopt {gen,train,sweep,verify}``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .datagen import Dataset, ScenarioSpec, generate, load_jsonl, make_assumption_satisfying_policies
from .errors import ConfigurationError, DatasetError, TrainingDiverged
from .metrics import CSV_COLUMNS, accuracy, judge_compare
from .optim import TrainConfig, train
from .policy import PolicyTable
from .reward import GroundTruth
from .verify import CHECKS, FAULTS, run_checks, violation_report

log = logging.getLogger("prefopt")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
DEFAULT_GRID = "0,0.1,0.3,0.5,1"

TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
SCENARIO_KEYS = {f.name for f in fields(ScenarioSpec)}
RUN_KEYS = {"eval_interval", "holdout_k", "grid", "seeds", "dataset", "out", "init", "judge_mode"}
ALIASES = {"lambda": "lam", "lr": "learning_rate"}


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a flat JSON object")
    out = {}
    for k, v in raw.items():
        k = ALIASES.get(k, k)
        if k not in TRAIN_KEYS | SCENARIO_KEYS | RUN_KEYS:
            raise UsageError(f"unknown config key {k!r}")
        out[k] = v
    return out


def _settings(args) -> dict:
    """Config-file values overridden by any flag the user actually passed."""
    merged = _load_config(args.config)
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "func", "overwrite", "list"):
            merged[k] = v
    return merged


def _scenario(s: dict) -> ScenarioSpec:
    kw = {k: s[k] for k in SCENARIO_KEYS if k in s}
    try:
        spec = ScenarioSpec(**kw)
        spec.validate()
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid scenario: {e}")
    return spec


def _train_config(s: dict, **override) -> TrainConfig:
    kw = {k: s[k] for k in TRAIN_KEYS if k in s}
    kw.update(override)
    try:
        return TrainConfig(**kw).validate()
    except TypeError as e:
        raise UsageError(f"invalid training config: {e}")


def _prepare_out(path, overwrite: bool) -> Path:
    if path is None:
        raise UsageError("--out is required")
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise UsageError(f"{out} is not empty; pass --overwrite to reuse it")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data(s: dict, seed=None) -> tuple[Dataset, GroundTruth | None]:
    """Dataset from ``dataset`` (with an optional ground_truth.json beside it) or a fresh scenario."""
    if s.get("dataset"):
        path = Path(s["dataset"])
        if not path.is_file():
            raise UsageError(f"dataset not found: {path}")
        ds = load_jsonl(path)
        gt_path = path.parent / "ground_truth.json"
        gt = GroundTruth.load(gt_path) if gt_path.is_file() else None
        if gt is not None and gt.rewards.shape != (ds.num_queries, ds.num_responses):
            raise UsageError(f"{gt_path} does not match the dataset dimensions")
        return ds, gt
    spec = _scenario(s if seed is None else {**s, "seed": seed})
    gt, ds = generate(spec)
    return ds, gt


def _policies(ds: Dataset, gt: GroundTruth | None, beta: float, init: str):
    """Reference and starting policy.

    ``init="auto"`` starts from assumption-satisfying augmented rows when the
    ground truth is known; base rows always start at the reference.
    """
    if init not in ("auto", "reference"):
        raise UsageError(f"--init must be 'auto' or 'reference', got {init!r}")
    if gt is not None and init == "auto":
        start, ref = make_assumption_satisfying_policies(gt, beta, base_scale=0.0)
        return ref, start
    ref = PolicyTable.uniform(ds.num_queries, ds.num_responses)
    return ref, ref


def _fmt(v):
    return "" if v is None else v


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    s = _settings(args)
    spec = _scenario(s)
    out = _prepare_out(s.get("out"), args.overwrite)
    gt, ds = generate(spec)
    ds.write_jsonl(out / "dataset.jsonl")
    gt.save(out / "ground_truth.json")
    (out / "scenario.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    print(len(ds))
    return EXIT_OK


def _run_training(cfg: TrainConfig, ds, gt, s, out: Path | None):
    ref, start = _policies(ds, gt, cfg.beta, s.get("init", "auto"))
    eval_interval = s.get("eval_interval")
    rows, reports = [], []
    ckpt = None
    if out is not None:
        ckpt = out / "checkpoints"
        ckpt.mkdir(exist_ok=True)

    def on_eval(state, report):
        reports.append(report)
        rows.append(report.csv_row())
        if ckpt is not None:
            stem = f"step_{state.step:06d}"
            state.policy.save(ckpt / f"{stem}.json")
            meta = {"step": state.step, "config_hash": cfg.config_hash(), "metrics": report.to_dict()}
            (ckpt / f"{stem}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")

    state = train(cfg, ds, ref, [on_eval], eval_interval=eval_interval, init=start)
    final = reports[-1]
    if gt is not None:
        mode = s.get("judge_mode", "sample")
        final.win_rate, final.tie_rate, final.lose_rate = judge_compare(
            state.policy, ref, gt, range(ds.num_queries), mode=mode, seed=cfg.seed)
    return state, ref, rows, final


def cmd_train(args) -> int:
    s = _settings(args)
    cfg = _train_config(s)
    ds, gt = _data(s)
    out = _prepare_out(s.get("out"), args.overwrite)
    (out / "config.json").write_text(json.dumps({"train": cfg.to_dict(), "config_hash": cfg.config_hash(),
                                                 "dataset": s.get("dataset"), "eval_interval": s.get("eval_interval"),
                                                 "init": s.get("init", "auto")}, indent=2) + "\n")
    state, _, rows, final = _run_training(cfg, ds, gt, s, out)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)
    state.policy.save(out / "policy.json")
    print(json.dumps(final.to_dict()))
    return EXIT_OK


def _parse_grid(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        try:
            vals = [float(v) for v in str(text).split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad --grid {text!r}")
    if not vals or any(v < 0 for v in vals):
        raise UsageError("--grid needs non-negative lambda values")
    return sorted(set(vals))


def select_lambda(results) -> float | None:
    """Best held-out accuracy; ties go to the smallest lambda."""
    ok = [(r["lambda"], r["holdout_accuracy"]) for r in results if r["status"] == "ok"]
    if not ok:
        return None
    best = max(a for _, a in ok)
    return min(lam for lam, a in ok if a == best)


SWEEP_COLUMNS = ("lambda", "status", "holdout_accuracy", "holdout_aug_accuracy") + CSV_COLUMNS[1:] + (
    "win_rate", "tie_rate", "lose_rate")


def _sweep_one(s, seed, grid, k, out):
    ds, gt = _data(s, seed)
    if not s.get("dataset"):
        # generated tuples come grouped by query; a tabular policy cannot score unseen queries
        ds = ds.subset(np.random.default_rng(seed).permutation(len(ds)))
    if k >= len(ds):
        raise UsageError(f"--holdout-k {k} leaves no training tuples (dataset has {len(ds)})")
    held, rest = ds.subset(range(k)), ds.subset(range(k, len(ds)))
    method = s.get("method", "sr-dpo")
    if method in ("dpo", "ipo"):
        method = "sr-" + method
    results = []
    for lam in grid:
        row = {"lambda": lam, "status": "ok"}
        try:
            cfg = _train_config(s, method=method, lam=lam, seed=seed)
            state, ref, _, final = _run_training(cfg, rest, gt, s, None)
            row["holdout_accuracy"] = accuracy(state.policy, ref, held)
            row["holdout_aug_accuracy"] = accuracy(state.policy, ref, held, augmented=True)
            row.update({c: v for c, v in final.to_dict().items() if c in SWEEP_COLUMNS})
        except TrainingDiverged as e:
            log.error("lambda=%g diverged: %s", lam, e)
            row["status"] = f"diverged at step {e.step}"
        results.append(row)
    chosen = select_lambda(results)
    path = out / f"sweep_seed{seed}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in results:
            w.writerow([_fmt(r.get(c)) for c in SWEEP_COLUMNS])
    return {"seed": seed, "selected_lambda": chosen, "summary": path.name,
            "failed": [r["lambda"] for r in results if r["status"] != "ok"]}


def cmd_sweep(args) -> int:
    s = _settings(args)
    grid = _parse_grid(s.get("grid", DEFAULT_GRID))
    k = int(s.get("holdout_k", 50))
    if k < 1:
        raise UsageError("--holdout-k must be positive")
    seeds = [int(v) for v in str(s["seeds"]).split(",")] if s.get("seeds") else [int(s.get("seed", 0))]
    _train_config(s, method="sr-dpo", lam=0.0)  # fail fast on bad shared settings
    out = _prepare_out(s.get("out"), args.overwrite)
    summaries = [_sweep_one(s, seed, grid, k, out) for seed in seeds]
    (out / "selection.json").write_text(json.dumps(summaries, indent=2) + "\n")
    for summ in summaries:
        print(json.dumps(summ))
    if all(summ["selected_lambda"] is None for summ in summaries):
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.list:
        for name in CHECKS:
            print(name)
        return EXIT_OK
    seed = 0 if args.seed is None else args.seed
    names = None
    if args.checks:
        names = [n.strip() for n in args.checks.split(",") if n.strip()]
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            raise UsageError(f"unknown checks {unknown}; see --list")
    results = run_checks(seed, names, fault=args.fault)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  worst={r.worst:.3g}  "
              f"tol={r.tolerance:.0e}  n={r.instances}  {r.seconds:.2f}s")
    report = violation_report(results, seed, args.fault)
    if not report["passed"]:
        print(json.dumps(report))
        return EXIT_VERIFY
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_common(p):
    p.add_argument("--config", help="flat JSON file of field values; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--overwrite", action="store_true", help="allow a non-empty output directory")


def _add_scenario(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--num-queries", dest="num_queries", type=int)
    g.add_argument("--num-responses", dest="num_responses", type=int)
    g.add_argument("--tuples-per-query", dest="tuples_per_query", type=int)
    g.add_argument("--distribution", dest="reward_distribution",
                   help='e.g. "uniform(0,1)", "gaussian(0,1)", "two_cluster(0.1,3.0,0.5)"')
    g.add_argument("--label-noise", dest="label_noise", type=float)
    g.add_argument("--prompt-gain", dest="prompt_gain", type=float)


def _add_training(p):
    g = p.add_argument_group("training")
    g.add_argument("--dataset", help="JSONL dataset; a ground_truth.json beside it is picked up")
    g.add_argument("--method", choices=("dpo", "ipo", "sr-dpo", "sr-ipo"))
    g.add_argument("--beta", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--lr", dest="learning_rate", type=float)
    g.add_argument("--grad-clip", dest="grad_clip_norm", type=float)
    g.add_argument("--rmsprop-decay", dest="rmsprop_decay", type=float)
    g.add_argument("--rmsprop-epsilon", dest="rmsprop_epsilon", type=float)
    g.add_argument("--eval-interval", dest="eval_interval", type=int)
    g.add_argument("--init", choices=("auto", "reference"))
    g.add_argument("--judge-mode", dest="judge_mode", choices=("argmax", "sample"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic preference dataset")
    _add_common(p)
    _add_scenario(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one policy")
    _add_common(p)
    _add_scenario(p)
    _add_training(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train across a lambda grid and pick lambda on held-out tuples")
    _add_common(p)
    _add_scenario(p)
    _add_training(p)
    p.add_argument("--grid", help=f'comma-separated lambdas (default "{DEFAULT_GRID}")')
    p.add_argument("--holdout-k", dest="holdout_k", type=int, help="held-out leading tuples (default 50)")
    p.add_argument("--seeds", help="comma-separated seeds; one summary file per seed")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the self-check suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--list", action="store_true", help="print check names and exit")
    p.add_argument("--checks", help="comma-separated subset of checks")
    p.add_argument("--fault", choices=FAULTS, help="inject a known fault to exercise the checks")
    p.set_defaults(func=cmd_verify)
    return parser


def _configure_logging():
    level = os.environ.get("PREFOPT_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"PREFOPT_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on bad usage
    try:
        _configure_logging()
        return args.func(args)
    except (UsageError, ConfigurationError, DatasetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
