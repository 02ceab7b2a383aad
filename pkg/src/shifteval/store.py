"""Metrics, the generation-budget cost model, and persistence formats.

Formats are canonical so determinism checks can compare bytes:

* embedding banks: magic ``MEVB``, u16 version, u64 n, u64 d, then
  row-major little-endian float32,
* checkpoints: magic ``MEVC``, u32 manifest length, a sorted-key JSON
  manifest (schema version, shapes, seeds, config echo, blob offsets and
  sha256 checksums), then one flat little-endian float32 blob,
* pair tables and cost sheets: comma-separated text with fixed headers,
* configs and reports: UTF-8 JSON with stable key ordering.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .descriptors import DescriptorNormalizer, ShiftDescriptor
from .meta import ContextVector, EvalPair, MetaConfig, MetaState
from .network import EvaluatorParams, OptimizerState

__all__ = [
    "StoreError",
    "mae",
    "CostRow",
    "CostSheet",
    "project_cost",
    "write_bank",
    "read_bank",
    "bank_to_bytes",
    "bank_from_bytes",
    "write_pair_table",
    "read_pair_table",
    "save_checkpoint",
    "load_checkpoint",
    "canonical_json",
    "write_cost_sheet",
    "read_cost_sheet",
]

BANK_MAGIC = b"MEVB"
CHECKPOINT_MAGIC = b"MEVC"
BANK_VERSION = 1
CHECKPOINT_VERSION = 1


class StoreError(ValueError):
    pass


def mae(estimates, truths) -> float:
    """Mean absolute error between estimates and true metrics."""
    e = np.asarray(estimates, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if e.size == 0 or e.shape != t.shape:
        raise StoreError("estimates and truths must be nonempty and equal length")
    return float(np.mean(np.abs(e - t)))


# --------------------------------------------------------------------------
# Cost model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CostRow:
    unit_id: str
    modality: str
    n_gen: int
    n_val: int
    n_exec: int


@dataclass
class CostSheet:
    rows: list[CostRow]
    unit_costs: dict[str, tuple[float, float, float]]  # modality -> (gen, val, exec)
    budget: float


def project_cost(sheet: CostSheet) -> tuple[float, bool]:
    """Exact generation/validation/execution cost and budget verdict."""
    total = 0.0
    for row in sheet.rows:
        if min(row.n_gen, row.n_val, row.n_exec) < 0:
            raise StoreError(f"negative counts in unit {row.unit_id}")
        if row.modality not in sheet.unit_costs:
            raise StoreError(f"no unit costs for modality {row.modality!r}")
        c_gen, c_val, c_exec = sheet.unit_costs[row.modality]
        if min(c_gen, c_val, c_exec) < 0:
            raise StoreError(f"negative unit costs for modality {row.modality!r}")
        total += row.n_gen * c_gen + row.n_val * c_val + row.n_exec * c_exec
    return total, total <= sheet.budget


def write_cost_sheet(path, sheet: CostSheet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["budget", repr(float(sheet.budget))])
        w.writerow(["modality", "c_gen", "c_val", "c_exec"])
        for modality in sorted(sheet.unit_costs):
            c = sheet.unit_costs[modality]
            w.writerow([modality, repr(float(c[0])), repr(float(c[1])), repr(float(c[2]))])
        w.writerow(["unit_id", "modality", "n_gen", "n_val", "n_exec"])
        for row in sheet.rows:
            w.writerow([row.unit_id, row.modality, row.n_gen, row.n_val, row.n_exec])


def read_cost_sheet(path) -> CostSheet:
    with open(path, newline="") as fh:
        lines = list(csv.reader(fh))
    try:
        if lines[0][0] != "budget":
            raise StoreError("cost sheet missing budget row")
        budget = float(lines[0][1])
        if lines[1] != ["modality", "c_gen", "c_val", "c_exec"]:
            raise StoreError("cost sheet missing modality header")
        unit_costs = {}
        i = 2
        while i < len(lines) and lines[i][0] != "unit_id":
            mod = lines[i]
            unit_costs[mod[0]] = (float(mod[1]), float(mod[2]), float(mod[3]))
            i += 1
        if i >= len(lines) or lines[i] != ["unit_id", "modality", "n_gen", "n_val", "n_exec"]:
            raise StoreError("cost sheet missing unit header")
        rows = [
            CostRow(r[0], r[1], int(r[2]), int(r[3]), int(r[4])) for r in lines[i + 1 :] if r
        ]
    except (IndexError, ValueError) as exc:
        raise StoreError(f"malformed cost sheet: {exc}") from exc
    return CostSheet(rows=rows, unit_costs=unit_costs, budget=budget)


# --------------------------------------------------------------------------
# Embedding banks
# --------------------------------------------------------------------------


def bank_to_bytes(matrix) -> bytes:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise StoreError("bank matrix must be 2-D")
    header = BANK_MAGIC + struct.pack("<HQQ", BANK_VERSION, m.shape[0], m.shape[1])
    return header + np.ascontiguousarray(m, dtype="<f4").tobytes()


def bank_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 22 or data[:4] != BANK_MAGIC:
        raise StoreError("not a bank file")
    version, n, d = struct.unpack("<HQQ", data[4:22])
    if version != BANK_VERSION:
        raise StoreError(f"unsupported bank version {version}")
    expected = 22 + 4 * n * d
    if len(data) != expected:
        raise StoreError("truncated bank blob")
    flat = np.frombuffer(data, dtype="<f4", offset=22)
    return flat.reshape(n, d).astype(np.float64)


def write_bank(path, matrix) -> None:
    with open(path, "wb") as fh:
        fh.write(bank_to_bytes(matrix))


def read_bank(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return bank_from_bytes(fh.read())


# --------------------------------------------------------------------------
# Pair tables
# --------------------------------------------------------------------------

PAIR_HEADER = [
    "model_id",
    "workload_id",
    "source_id",
    "target_id",
    "sd_f",
    "sd_m",
    "sd_sw",
    "seed",
    "true_metric",
]


def write_pair_table(path, pairs: list[EvalPair]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PAIR_HEADER)
        for p in pairs:
            d = p.descriptor
            w.writerow(
                [
                    p.model_id,
                    p.workload_id,
                    d.source_id,
                    d.target_id,
                    repr(d.sd_f),
                    repr(d.sd_m),
                    repr(d.sd_sw),
                    d.seed,
                    repr(p.true_metric),
                ]
            )


def read_pair_table(path) -> list[EvalPair]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PAIR_HEADER:
            raise StoreError("unexpected pair-table header")
        pairs = []
        for row in reader:
            if not row:
                continue
            sd = ShiftDescriptor(
                sd_f=float(row[4]),
                sd_m=float(row[5]),
                sd_sw=float(row[6]),
                source_id=row[2],
                target_id=row[3],
                seed=int(row[7]),
            )
            pairs.append(
                EvalPair(
                    descriptor=sd,
                    true_metric=float(row[8]),
                    model_id=row[0],
                    workload_id=row[1],
                )
            )
    return pairs


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _config_to_dict(config: MetaConfig) -> dict:
    d = asdict(config)
    d["hidden"] = list(d["hidden"])
    d["betas"] = list(d["betas"])
    return d


def _config_from_dict(d: dict) -> MetaConfig:
    d = dict(d)
    d["hidden"] = tuple(d["hidden"])
    d["betas"] = tuple(d["betas"])
    return MetaConfig(**d)


def save_checkpoint(state: MetaState) -> bytes:
    """Serialize a MetaState; arrays are stored as little-endian float32."""
    blobs: list[tuple[str, np.ndarray]] = []
    for i, w in enumerate(state.params.weights):
        blobs.append((f"weight_{i}", w))
    for i, b in enumerate(state.params.biases):
        blobs.append((f"bias_{i}", b))
    for mid in sorted(state.contexts):
        blobs.append((f"ctx/{mid}", state.contexts[mid].values))
    blobs.append(("norm_means", state.normalizer.means))
    blobs.append(("norm_stds", state.normalizer.stds))
    opt = state.opt_state
    for i, m in enumerate(opt.m_weights):
        blobs.append((f"opt_mw_{i}", m))
    for i, m in enumerate(opt.m_biases):
        blobs.append((f"opt_mb_{i}", m))
    for i, v in enumerate(opt.v_weights):
        blobs.append((f"opt_vw_{i}", v))
    for i, v in enumerate(opt.v_biases):
        blobs.append((f"opt_vb_{i}", v))

    payload = io.BytesIO()
    manifest_blobs = []
    for name, arr in blobs:
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest_blobs.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": payload.tell(),
                "length": len(raw),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        )
        payload.write(raw)

    manifest = {
        "schema_version": CHECKPOINT_VERSION,
        "config": _config_to_dict(state.config),
        "context_ids": sorted(state.contexts),
        "normalizer_fitted_on": state.normalizer.fitted_on,
        "opt": {
            "step": opt.step,
            "base_lr": opt.base_lr,
            "betas": list(opt.betas),
            "weight_decay": opt.weight_decay,
            "total_steps": opt.total_steps,
            "eps": opt.eps,
        },
        "val_mae_log": state.val_mae_log,
        "best_epoch": state.best_epoch,
        "blobs": manifest_blobs,
    }
    manifest_bytes = canonical_json(manifest).encode("utf-8")
    return (
        CHECKPOINT_MAGIC
        + struct.pack("<I", len(manifest_bytes))
        + manifest_bytes
        + payload.getvalue()
    )


def load_checkpoint(data: bytes) -> MetaState:
    """Parse checkpoint bytes, refusing on any checksum or size mismatch."""
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise StoreError("not a checkpoint")
    (mlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + mlen:
        raise StoreError("truncated manifest")
    try:
        manifest = json.loads(data[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreError("corrupt manifest") from exc
    if manifest.get("schema_version") != CHECKPOINT_VERSION:
        raise StoreError(f"checkpoint version mismatch: {manifest.get('schema_version')}")
    payload = data[8 + mlen :]

    arrays: dict[str, np.ndarray] = {}
    for blob in manifest["blobs"]:
        start, length = blob["offset"], blob["length"]
        raw = payload[start : start + length]
        if len(raw) != length:
            raise StoreError(f"truncated blob {blob['name']}")
        if hashlib.sha256(raw).hexdigest() != blob["sha256"]:
            raise StoreError(f"checksum failure in blob {blob['name']}")
        arrays[blob["name"]] = (
            np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(blob["shape"])
        )

    config = _config_from_dict(manifest["config"])
    dims = config.net_dims()
    n_layers = len(dims.hidden) + 1
    params = EvaluatorParams(
        dims=dims,
        weights=[arrays[f"weight_{i}"] for i in range(n_layers)],
        biases=[arrays[f"bias_{i}"] for i in range(n_layers)],
    )
    contexts = {
        mid: ContextVector(model_id=mid, values=arrays[f"ctx/{mid}"])
        for mid in manifest["context_ids"]
    }
    normalizer = DescriptorNormalizer(
        means=arrays["norm_means"],
        stds=arrays["norm_stds"],
        fitted_on=manifest["normalizer_fitted_on"],
    )
    opt_meta = manifest["opt"]
    opt_state = OptimizerState(
        m_weights=[arrays[f"opt_mw_{i}"] for i in range(n_layers)],
        m_biases=[arrays[f"opt_mb_{i}"] for i in range(n_layers)],
        v_weights=[arrays[f"opt_vw_{i}"] for i in range(n_layers)],
        v_biases=[arrays[f"opt_vb_{i}"] for i in range(n_layers)],
        step=opt_meta["step"],
        base_lr=opt_meta["base_lr"],
        betas=tuple(opt_meta["betas"]),
        weight_decay=opt_meta["weight_decay"],
        total_steps=opt_meta["total_steps"],
        eps=opt_meta["eps"],
    )
    return MetaState(
        params=params,
        contexts=contexts,
        normalizer=normalizer,
        opt_state=opt_state,
        config=config,
        val_mae_log=list(manifest["val_mae_log"]),
        best_epoch=manifest["best_epoch"],
    )
