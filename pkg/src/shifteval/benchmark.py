"""End-to-end benchmark: synthetic world -> meta-training -> unseen-model
evaluation against the retrieval baselines.

Per master seed the harness builds a world, splits every model's
workloads into disjoint meta-train / meta-val / adapt / calibration /
test partitions, meta-trains on the reference pool, then for each
held-out model adapts a context, calibrates a conformal interval, and
scores point predictions against KNN and Top-k on the identical test
pairs. The report is a canonical JSON document that embeds the full
config and seeds; wall-clock timings go to a sidecar file so reports
stay byte-reproducible.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .baselines import BankEntry, DescriptorBank, knn_estimate, topk_estimate
from .meta import (
    ContextVector,
    EvalPair,
    MetaConfig,
    MetaState,
    TaskDataset,
    adapt_unseen,
    calibrate_interval,
    meta_train,
    predict,
)
from .descriptors import apply_normalizer
from .store import canonical_json, mae, save_checkpoint, write_pair_table
from .world import (
    World,
    WorldConfig,
    Workload,
    build_world,
    draw_shift_spec,
    make_task_dataset,
    sample_workload,
)
import hashlib
from pathlib import Path

__all__ = ["BenchmarkConfig", "run_benchmark", "report_bytes"]

REPORT_SCHEMA_VERSION = 1


class BenchmarkError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class BenchmarkConfig:
    world: WorldConfig = WorldConfig()
    meta: MetaConfig = MetaConfig()
    pool_size: int = 24
    n_unseen: int = 4
    # Total models drawn in the world; defaults to pool_size + n_unseen.
    # Setting it larger keeps the unseen models (always the last
    # n_unseen) fixed while the reference pool shrinks.
    world_size: int | None = None
    workloads_per_model: int = 120
    workload_n: int = 1000
    n_projections: int = 128
    partition: tuple[float, float, float, float, float] = (0.5, 0.2, 0.1, 0.1, 0.1)
    baseline_ks: tuple[int, ...] = (1, 3, 5, 10)
    conformal_alpha: float = 0.1
    master_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("mean_scale", "cov_scale", "translation_range", "cov_shift_range",
                    "prior_drift_range", "noise_range"):
            d["world"][key] = list(d["world"][key])
        d["meta"]["hidden"] = list(d["meta"]["hidden"])
        d["meta"]["betas"] = list(d["meta"]["betas"])
        d["partition"] = list(d["partition"])
        d["baseline_ks"] = list(d["baseline_ks"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        d = dict(d)
        w = dict(d.pop("world", {}))
        for key in ("mean_scale", "cov_scale", "translation_range", "cov_shift_range",
                    "prior_drift_range", "noise_range"):
            if key in w:
                w[key] = tuple(w[key])
        m = dict(d.pop("meta", {}))
        if "hidden" in m:
            m["hidden"] = tuple(m["hidden"])
        if "betas" in m:
            m["betas"] = tuple(m["betas"])
        if "partition" in d:
            d["partition"] = tuple(d["partition"])
        if "baseline_ks" in d:
            d["baseline_ks"] = tuple(d["baseline_ks"])
        return cls(world=WorldConfig(**w), meta=MetaConfig(**m), **d)


def _partition_counts(total: int, ratios) -> list[int]:
    counts = [int(np.floor(total * r)) for r in ratios]
    counts[0] += total - sum(counts)
    return counts


def _model_workloads(world: World, model_idx: int, config: BenchmarkConfig) -> list[Workload]:
    ss = np.random.SeedSequence(config.master_seed, spawn_key=(1, model_idx))
    rng = np.random.default_rng(ss)
    model_id = world.models[model_idx].model_id
    workloads = []
    for j in range(config.workloads_per_model):
        spec = draw_shift_spec(world, rng)
        wl_seed = int(rng.integers(0, 2**62))
        workloads.append(
            sample_workload(
                world, spec, config.workload_n, wl_seed,
                workload_id=f"{model_id}-wl-{j:04d}",
            )
        )
    return workloads


def compute_split_pairs(
    world: World, config: BenchmarkConfig, jobs: int = 1
) -> dict[int, dict[str, list[EvalPair]]]:
    """Descriptor/accuracy pairs for every model, keyed by split name.

    Per-model work is pure, so it may fan out over up to ``jobs`` worker
    threads; results merge in model order regardless of completion order.
    """
    counts = _partition_counts(config.workloads_per_model, config.partition)
    edges = np.cumsum([0, *counts])
    split_names = ("train", "val", "adapt", "calib", "test")
    n_total = len(world.models)
    needed = sorted(
        set(range(config.pool_size)) | set(range(n_total - config.n_unseen, n_total))
    )

    def one_model(idx: int) -> dict[str, list[EvalPair]]:
        workloads = _model_workloads(world, idx, config)
        per_split = {}
        for name, lo, hi in zip(split_names, edges[:-1], edges[1:]):
            subset = workloads[lo:hi]
            per_split[name] = (
                make_task_dataset(world, world.models[idx], subset, config.n_projections).pairs
                if subset
                else []
            )
        return per_split

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one_model, needed))
    else:
        results = [one_model(i) for i in needed]
    return dict(zip(needed, results))


def _pairs_digest(pairs: list[EvalPair]) -> str:
    h = hashlib.sha256()
    for p in pairs:
        h.update(p.workload_id.encode())
        h.update(np.array([p.descriptor.sd_f, p.descriptor.sd_m, p.descriptor.sd_sw,
                           p.true_metric]).tobytes())
    return h.hexdigest()


def _baseline_rows(
    state: MetaState, bank_pairs: list[EvalPair], test_pairs: list[EvalPair],
    ks, model_id: str,
) -> dict:
    norm = state.normalizer
    bank = DescriptorBank(
        entries=[
            BankEntry(apply_normalizer(norm, p.descriptor), p.true_metric,
                      p.model_id, p.workload_id)
            for p in bank_pairs
        ]
    )
    queries = [apply_normalizer(norm, p.descriptor) for p in test_pairs]
    truths = [p.true_metric for p in test_pairs]
    out = {}
    for method, fn in (("knn", knn_estimate), ("topk", topk_estimate)):
        best = None
        for k in ks:
            if k > len(bank.entries):
                continue
            ests = [fn(q, bank, k) for q in queries]
            err = mae(ests, truths)
            if best is None or err < best["mae"]:
                best = {"method": method, "model_id": model_id, "k": k, "mae": err,
                        "mean_prediction": float(np.mean(ests))}
        out[method] = best
    return out


def run_benchmark(
    config: BenchmarkConfig, out_dir=None, jobs: int = 1
) -> tuple[dict, MetaState | None]:
    """Run the full pipeline; returns (report, meta_state).

    When ``out_dir`` is given, writes report.json, checkpoint.mevc, pair
    tables, and a timings.json sidecar. On failure, a failure marker with
    the stage tag is flushed before the error propagates.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    stage = "config"
    try:
        n_total = (
            config.world_size
            if config.world_size is not None
            else config.pool_size + config.n_unseen
        )
        if n_total < config.pool_size + config.n_unseen:
            raise BenchmarkError("config", "world_size smaller than pool plus unseen")
        world_cfg = replace(config.world, n_models=n_total, seed=config.master_seed)
        meta_cfg = replace(config.meta, seed=config.master_seed)

        stage = "world"
        t0 = time.perf_counter()
        world = build_world(world_cfg)
        timings["world"] = time.perf_counter() - t0

        stage = "pairs"
        t0 = time.perf_counter()
        split_names = ("train", "val", "adapt", "calib", "test")
        split_pairs = compute_split_pairs(world, config, jobs=jobs)
        timings["pairs"] = time.perf_counter() - t0

        stage = "meta-train"
        t0 = time.perf_counter()
        train_tasks = [
            TaskDataset(world.models[i].model_id, split_pairs[i]["train"])
            for i in range(config.pool_size)
        ]
        val_tasks = [
            TaskDataset(world.models[i].model_id, split_pairs[i]["val"])
            for i in range(config.pool_size)
        ]
        meta_state = meta_train(train_tasks, val_tasks, meta_cfg) if config.pool_size else None
        timings["meta-train"] = time.perf_counter() - t0

        stage = "evaluate"
        t0 = time.perf_counter()
        per_model_rows = []
        traces = []
        for idx in range(n_total - config.n_unseen, n_total):
            model_id = world.models[idx].model_id
            adapt_pairs = split_pairs[idx]["adapt"]
            calib_pairs = split_pairs[idx]["calib"]
            test_pairs = split_pairs[idx]["test"]
            adapt_seed = int(
                np.random.default_rng(
                    np.random.SeedSequence(config.master_seed, spawn_key=(2, idx))
                ).integers(0, 2**62)
            )
            ctx, trace = adapt_unseen(meta_state, adapt_pairs, model_id=model_id,
                                      seed=adapt_seed)
            traces.append({"model_id": model_id, "trace": trace})
            delta = calibrate_interval(meta_state, ctx, calib_pairs, config.conformal_alpha)
            ests = [predict(meta_state, ctx, p.descriptor) for p in test_pairs]
            truths = [p.true_metric for p in test_pairs]
            zero_ctx = ContextVector(model_id=model_id,
                                     values=np.zeros(meta_cfg.ctx_dim))
            zero_ests = [predict(meta_state, zero_ctx, p.descriptor) for p in test_pairs]
            coverage = float(np.mean(np.abs(np.array(ests) - np.array(truths)) <= delta))
            digest = _pairs_digest(test_pairs)
            row = {
                "model_id": model_id,
                "meta": {
                    "mae": mae(ests, truths),
                    "mean_prediction": float(np.mean(ests)),
                    "coverage": coverage,
                    "delta": delta,
                    "alpha": config.conformal_alpha,
                },
                "zero_context_mae": mae(zero_ests, truths),
                "baselines": _baseline_rows(
                    meta_state, adapt_pairs + calib_pairs, test_pairs,
                    config.baseline_ks, model_id,
                ),
                "test_pairs_sha256": digest,
                "n_test": len(test_pairs),
            }
            per_model_rows.append(row)
        timings["evaluate"] = time.perf_counter() - t0

        stage = "report"
        notes = []
        if not per_model_rows:
            notes.append("no unseen models configured; per-model section empty")
        summary = {}
        if per_model_rows:
            summary = {
                "meta_mae": float(np.mean([r["meta"]["mae"] for r in per_model_rows])),
                "zero_context_mae": float(
                    np.mean([r["zero_context_mae"] for r in per_model_rows])
                ),
                "knn_mae": float(
                    np.mean([r["baselines"]["knn"]["mae"] for r in per_model_rows])
                ),
                "topk_mae": float(
                    np.mean([r["baselines"]["topk"]["mae"] for r in per_model_rows])
                ),
                "coverage": float(np.mean([r["meta"]["coverage"] for r in per_model_rows])),
            }
        report = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": config.to_dict(),
            "master_seed": config.master_seed,
            "per_model": per_model_rows,
            "adaptation_traces": traces,
            "summary": summary,
            "notes": notes,
            "val_mae_log": meta_state.val_mae_log if meta_state is not None else [],
        }

        if out is not None:
            (out / "report.json").write_bytes(report_bytes(report))
            if meta_state is not None:
                (out / "checkpoint.mevc").write_bytes(save_checkpoint(meta_state))
            for name in split_names:
                pairs = [p for idx in sorted(split_pairs) for p in split_pairs[idx][name]]
                write_pair_table(out / f"pairs_{name}.csv", pairs)
            (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
        return report, meta_state
    except BenchmarkError:
        raise
    except Exception as exc:
        if out is not None:
            (out / "FAILED").write_text(f"stage={stage}\nerror={exc}\n")
        raise BenchmarkError(stage, str(exc)) from exc


def report_bytes(report: dict) -> bytes:
    return (canonical_json(report) + "\n").encode("utf-8")
