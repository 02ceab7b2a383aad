"""Command-line entry point for scripted, reproducible runs.

One subcommand per pipeline stage. Every run is driven by a JSON config
file; flag overrides are limited to the master seed, paths, worker count,
and verbosity so a config plus a seed fully determines the outputs.

Exit codes: 0 success, 1 usage/config error, 2 missing or bad input data,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import BaselineError
from .benchmark import BenchmarkConfig, BenchmarkError, run_benchmark, report_bytes
from .descriptors import DescriptorError
from .meta import (
    ContextVector,
    MetaError,
    TaskDataset,
    adapt_unseen,
    calibrate_interval,
    meta_train,
    predict,
)
from .network import NetworkError
from .numerics import NumericsError
from .store import (
    StoreError,
    bank_from_bytes,
    load_checkpoint,
    mae,
    project_cost,
    read_cost_sheet,
    read_pair_table,
    save_checkpoint,
    write_bank,
    write_pair_table,
)
from .world import WorldError, build_world
from . import benchmark as benchmark_mod

log = logging.getLogger("shifteval")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

SPLIT_NAMES = ("train", "val", "adapt", "calib", "test")


class CliDataError(RuntimeError):
    pass


def _load_config(path: str) -> BenchmarkConfig:
    p = Path(path)
    if not p.exists():
        raise CliDataError(f"missing config file: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliDataError(f"config is not valid JSON: {exc}")
    try:
        return BenchmarkConfig.from_dict(raw)
    except TypeError as exc:
        raise _usage_error(f"config schema violation: {exc}")


def _usage_error(msg: str) -> SystemExit:
    print(f"error: {msg}", file=sys.stderr)
    return SystemExit(EXIT_USAGE)


def _apply_seed(config: BenchmarkConfig, args) -> BenchmarkConfig:
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    return config


def _out_dir(args, create: bool = True) -> Path:
    out = Path(args.out)
    if create:
        out.mkdir(parents=True, exist_ok=True)
    return out


def _refuse_overwrite(paths, force: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise _usage_error(
            f"refusing to overwrite existing outputs (use --force): {', '.join(existing)}"
        )


def _require(path: Path) -> Path:
    if not path.exists():
        raise CliDataError(f"missing input: {path}")
    return path


def _world_total(config: BenchmarkConfig) -> int:
    if config.world_size is not None:
        return config.world_size
    return config.pool_size + config.n_unseen


def _compute_split_pairs(config: BenchmarkConfig, jobs: int):
    world_cfg = replace(
        config.world, n_models=_world_total(config), seed=config.master_seed
    )
    world = build_world(world_cfg)
    return world, benchmark_mod.compute_split_pairs(world, config, jobs=jobs)


def cmd_gen_world(args) -> int:
    config = _apply_seed(_load_config(args.config), args)
    out = _out_dir(args)
    bank_dir = out / "banks"
    _refuse_overwrite([out / "world_config.json", bank_dir], args.force)
    if bank_dir.exists():
        shutil.rmtree(bank_dir)
    bank_dir.mkdir(parents=True)
    world_cfg = replace(
        config.world, n_models=_world_total(config), seed=config.master_seed
    )
    world = build_world(world_cfg)
    for model in world.models:
        write_bank(bank_dir / f"{model.model_id}.mevb", model.source_bank.samples)
    (out / "world_config.json").write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    log.info("world with %d models written to %s", len(world.models), out)
    return EXIT_OK


def cmd_make_pairs(args) -> int:
    config = _apply_seed(_load_config(args.config), args)
    out = _out_dir(args)
    targets = [out / f"pairs_{name}.csv" for name in SPLIT_NAMES]
    _refuse_overwrite(targets, args.force)
    _, split_pairs = _compute_split_pairs(config, args.jobs)
    for name, path in zip(SPLIT_NAMES, targets):
        pairs = [p for idx in sorted(split_pairs) for p in split_pairs[idx][name]]
        write_pair_table(path, pairs)
    log.info("pair tables written to %s", out)
    return EXIT_OK


def _tasks_from_table(path: Path) -> list[TaskDataset]:
    pairs = read_pair_table(_require(path))
    by_model: dict[str, list] = {}
    for p in pairs:
        by_model.setdefault(p.model_id, []).append(p)
    return [TaskDataset(mid, ps) for mid, ps in sorted(by_model.items())]


def cmd_meta_train(args) -> int:
    config = _apply_seed(_load_config(args.config), args)
    out = _out_dir(args)
    _refuse_overwrite([out / "checkpoint.mevc"], args.force)
    train_tasks = _tasks_from_table(out / "pairs_train.csv")
    val_tasks = _tasks_from_table(out / "pairs_val.csv")
    # The reference pool is the first pool_size model ids; later ids are
    # the held-out unseen models and must stay out of meta-training.
    shared = sorted({t.model_id for t in train_tasks} & {t.model_id for t in val_tasks})
    pool_ids = set(shared[: config.pool_size])
    train_tasks = [t for t in train_tasks if t.model_id in pool_ids]
    val_tasks = [t for t in val_tasks if t.model_id in pool_ids]
    meta_cfg = replace(config.meta, seed=config.master_seed)
    state = meta_train(train_tasks, val_tasks, meta_cfg)
    (out / "checkpoint.mevc").write_bytes(save_checkpoint(state))
    (out / "training_log.json").write_text(
        json.dumps(
            {"val_mae": state.val_mae_log, "best_epoch": state.best_epoch},
            sort_keys=True,
        )
        + "\n"
    )
    log.info("checkpoint written (best epoch %d)", state.best_epoch)
    return EXIT_OK


def _load_state(out: Path):
    return load_checkpoint(_require(out / "checkpoint.mevc").read_bytes())


def _unseen_pairs(out: Path, split: str, model: str | None) -> dict[str, list]:
    pairs = read_pair_table(_require(out / f"pairs_{split}.csv"))
    by_model: dict[str, list] = {}
    for p in pairs:
        if model is None or p.model_id == model:
            by_model.setdefault(p.model_id, []).append(p)
    return by_model


def cmd_adapt(args) -> int:
    config = _apply_seed(_load_config(args.config), args)
    out = _out_dir(args)
    state = _load_state(out)
    by_model = _unseen_pairs(out, "adapt", args.model)
    targets = {mid: out / f"context_{mid}.json" for mid in by_model if mid not in state.contexts}
    if not targets:
        raise CliDataError("no unseen-model adaptation pairs found")
    _refuse_overwrite(targets.values(), args.force)
    for mid, path in sorted(targets.items()):
        ctx, trace = adapt_unseen(
            state, by_model[mid], model_id=mid, seed=config.master_seed
        )
        path.write_text(
            json.dumps(
                {"model_id": mid, "trace": trace, "values": ctx.values.tolist()},
                sort_keys=True,
            )
            + "\n"
        )
    log.info("adapted %d contexts", len(targets))
    return EXIT_OK


def cmd_predict(args) -> int:
    config = _apply_seed(_load_config(args.config), args)
    out = _out_dir(args)
    state = _load_state(out)
    test_by_model = _unseen_pairs(out, "test", args.model)
    calib_by_model = _unseen_pairs(out, "calib", args.model)
    reports = {}
    for mid, test_pairs in sorted(test_by_model.items()):
        ctx_path = out / f"context_{mid}.json"
        if mid in state.contexts:
            ctx = state.contexts[mid]
            trace = []
        else:
            blob = json.loads(_require(ctx_path).read_text())
            ctx = ContextVector(model_id=mid, values=np.array(blob["values"]))
            trace = blob["trace"]
        delta = calibrate_interval(
            state, ctx, calib_by_model.get(mid, []), config.conformal_alpha
        )
        rows = []
        for p in test_pairs:
            est = predict(state, ctx, p.descriptor)
            rows.append(
                {
                    "workload_id": p.workload_id,
                    "estimate": est,
                    "interval": [max(est - delta, 0.0), min(est + delta, 1.0)],
                }
            )
        reports[mid] = {
            "model_id": mid,
            "alpha": config.conformal_alpha,
            "delta": delta,
            "adaptation_trace": trace,
            "predictions": rows,
        }
    target = out / "predictions.json"
    _refuse_overwrite([target], args.force)
    target.write_text(json.dumps(reports, sort_keys=True) + "\n")
    log.info("predictions for %d models written", len(reports))
    return EXIT_OK


def cmd_baseline(args) -> int:
    config = _apply_seed(_load_config(args.config), args)
    out = _out_dir(args)
    state = _load_state(out)
    adapt_by = _unseen_pairs(out, "adapt", args.model)
    calib_by = _unseen_pairs(out, "calib", args.model)
    test_by = _unseen_pairs(out, "test", args.model)
    results = {}
    for mid, test_pairs in sorted(test_by.items()):
        bank_pairs = adapt_by.get(mid, []) + calib_by.get(mid, [])
        if not bank_pairs:
            raise CliDataError(f"no labeled bank pairs for model {mid}")
        results[mid] = benchmark_mod._baseline_rows(
            state, bank_pairs, test_pairs, config.baseline_ks, mid
        )
    target = out / "baselines.json"
    _refuse_overwrite([target], args.force)
    target.write_text(json.dumps(results, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    config = _apply_seed(_load_config(args.config), args)
    out = _out_dir(args)
    _refuse_overwrite([out / "report.json", out / "checkpoint.mevc"], args.force)
    report, _ = run_benchmark(config, out_dir=out, jobs=args.jobs)
    if report["summary"]:
        log.info(
            "benchmark done: meta MAE %.4f, KNN %.4f, Top-k %.4f",
            report["summary"]["meta_mae"],
            report["summary"]["knn_mae"],
            report["summary"]["topk_mae"],
        )
    return EXIT_OK


def cmd_cost(args) -> int:
    sheet = read_cost_sheet(_require(Path(args.config)))
    total, within = project_cost(sheet)
    print(f"total={total!r} within_budget={within} budget={sheet.budget!r}")
    if args.out:
        out = _out_dir(args)
        target = out / "cost.json"
        _refuse_overwrite([target], args.force)
        target.write_text(
            json.dumps(
                {"total": total, "within_budget": within, "budget": sheet.budget},
                sort_keys=True,
            )
            + "\n"
        )
    return EXIT_OK


def cmd_verify(args) -> int:
    out = Path(args.out)
    if not out.exists():
        raise CliDataError(f"missing output directory: {out}")
    problems = []
    ckpt = out / "checkpoint.mevc"
    if ckpt.exists():
        try:
            load_checkpoint(ckpt.read_bytes())
            log.info("checkpoint checksums OK")
        except StoreError as exc:
            problems.append(f"checkpoint: {exc}")
    bank_dir = out / "banks"
    if bank_dir.exists():
        for path in sorted(bank_dir.glob("*.mevb")):
            try:
                bank_from_bytes(path.read_bytes())
            except StoreError as exc:
                problems.append(f"{path.name}: {exc}")
    report_path = out / "report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text())
        config = BenchmarkConfig.from_dict(report["config"])
        with tempfile.TemporaryDirectory() as tmp:
            regen, _ = run_benchmark(config, out_dir=tmp, jobs=args.jobs)
        if report_bytes(regen) != report_path.read_bytes():
            problems.append("report regeneration mismatch")
        else:
            log.info("report regenerates bit-exactly")
    if problems:
        for p in problems:
            print(f"FAIL {p}", file=sys.stderr)
        return EXIT_DATA
    print("verify OK")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this tool reserves 2 for data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="shifteval",
        description="Label-free accuracy estimation benchmark pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-world": cmd_gen_world,
        "make-pairs": cmd_make_pairs,
        "meta-train": cmd_meta_train,
        "adapt": cmd_adapt,
        "predict": cmd_predict,
        "baseline": cmd_baseline,
        "benchmark": cmd_benchmark,
        "cost": cmd_cost,
        "verify": cmd_verify,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        if name != "verify":
            p.add_argument("--config", required=True, help="JSON run config (CSV for cost)")
        p.add_argument("--out", required=name != "cost", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--jobs", type=int, default=1, help="worker parallelism bound")
        p.add_argument("--force", action="store_true", help="allow overwriting outputs")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name in ("adapt", "predict", "baseline"):
            p.add_argument("--model", default=None, help="restrict to one model id")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except CliDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BenchmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (
        NumericsError,
        DescriptorError,
        NetworkError,
        MetaError,
        BaselineError,
        WorldError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
