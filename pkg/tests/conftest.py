"""Shared fixtures: tiny synthetic supervision pairs and a small trained
evaluator state that several suites reuse."""

import numpy as np
import pytest

from shifteval.descriptors import compose_descriptor
from shifteval.meta import EvalPair, MetaConfig, TaskDataset, meta_train


def make_pair(sd, truth, model_id="m0", workload_id="w0"):
    d = compose_descriptor(sd[0], sd[1], sd[2], "src", workload_id, seed=0)
    return EvalPair(descriptor=d, true_metric=truth, model_id=model_id, workload_id=workload_id)


def synth_tasks(n_models=3, n_pairs=40, seed=0, offsets=None):
    """Tasks with a smooth descriptor -> metric response plus per-model offsets."""
    rng = np.random.default_rng(seed)
    if offsets is None:
        offsets = np.linspace(-0.08, 0.08, n_models)
    tasks = []
    for m in range(n_models):
        pairs = []
        for j in range(n_pairs):
            sd = rng.uniform(0.1, 4.0, size=3)
            truth = 1.0 / (1.0 + np.exp(0.9 * sd[0] - 0.4 * sd[1] - 1.2)) + offsets[m]
            truth = float(np.clip(truth, 0.02, 0.98))
            pairs.append(make_pair(sd, truth, f"m{m}", f"m{m}-w{j}"))
        tasks.append(TaskDataset(f"m{m}", pairs))
    return tasks


TINY_CONFIG = MetaConfig(
    ctx_dim=16,
    hidden=(16, 8),
    epochs=40,
    patience=15,
    alpha_outer=5e-3,
    b_train=16,
    b_val=16,
    b_adapt=16,
    seed=0,
)


@pytest.fixture(scope="session")
def tiny_state():
    train = synth_tasks(n_models=3, n_pairs=40, seed=0)
    val = synth_tasks(n_models=3, n_pairs=15, seed=1)
    return meta_train(train, val, TINY_CONFIG)
