"""Label-free accuracy estimation for unseen models via meta-learned
evaluation over distribution-shift descriptors."""

from .baselines import DescriptorBank, RetrievalBaseline, knn_estimate, topk_estimate
from .benchmark import BenchmarkConfig, run_benchmark
from .descriptors import (
    DescriptorNormalizer,
    EmbeddingBank,
    ShiftDescriptor,
    compose_descriptor,
    compute_descriptor,
    fit_normalizer,
    frechet_term,
    mahalanobis_term,
    sliced_wasserstein_term,
)
from .estimator import MetaAccuracyEstimator
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
from .numerics import GaussianSummary, fit_gaussian_summary, spd_solve, spd_sqrt, sym_eigen
from .store import CostRow, CostSheet, load_checkpoint, mae, project_cost, save_checkpoint
from .world import (
    ShiftSpec,
    SynthModel,
    World,
    WorldConfig,
    Workload,
    build_world,
    make_task_dataset,
    sample_workload,
    true_accuracy_oracle,
)

__version__ = "0.1.0"
