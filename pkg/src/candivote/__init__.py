"""Online class-incremental learning with candidate voting at inference.

The package trains a single growing linear head over streaming feature
embeddings, keeps a capacity-bounded exemplar memory filled by an online
mean-proximity sampler, and predicts by letting each learned task nominate a
candidate class that a distance-based task prior then weights.

Library entry points: ContinualLearner for stateful use, run_experiment for
whole configured runs. The same engine is exposed over HTTP (service.create_app)
and through the `candivote` command line.
"""

__version__ = "0.1.0"

from .classifier import SingleHeadClassifier, TrainBatch, build_pair_batch
from .config import RunConfig, SynthSpec, config_from_dict, load_config_file
from .data import (
    EmbeddingDataset,
    EmbeddingRecord,
    SynthConfig,
    generate_synthetic,
    load_embeddings,
    load_embeddings_csv,
    make_task_split,
    save_embeddings,
    save_embeddings_csv,
    stream_task,
)
from .engine import ContinualLearner
from .errors import CandivoteError, ConfigError, DataError, NumericError
from .exemplars import (
    AugmentConfig,
    ClassStore,
    Exemplar,
    ExemplarSet,
    StorageReport,
    augment,
    load_exemplars,
    masks,
    observe,
    online_mean_update,
    rebalance,
    sample_exemplars,
    save_exemplars,
    storage_bytes,
)
from .harness import (
    BiasReport,
    MetricsReport,
    StepMetrics,
    avg_last,
    bias_report,
    confusion,
    emit,
    recompute_metrics,
    run_experiment,
)
from .numeric import RngStream, derive_seed
from .voting import (
    CandidateSlate,
    VoteParams,
    estimate_beta_pilot,
    pnn_prior,
    predict,
    select_candidates,
    vote,
)

__all__ = [
    "__version__",
    "AugmentConfig",
    "BiasReport",
    "CandidateSlate",
    "CandivoteError",
    "ClassStore",
    "ConfigError",
    "ContinualLearner",
    "DataError",
    "EmbeddingDataset",
    "EmbeddingRecord",
    "Exemplar",
    "ExemplarSet",
    "MetricsReport",
    "NumericError",
    "RngStream",
    "RunConfig",
    "SingleHeadClassifier",
    "StepMetrics",
    "StorageReport",
    "SynthConfig",
    "SynthSpec",
    "TrainBatch",
    "VoteParams",
    "augment",
    "avg_last",
    "bias_report",
    "build_pair_batch",
    "config_from_dict",
    "confusion",
    "derive_seed",
    "emit",
    "estimate_beta_pilot",
    "generate_synthetic",
    "load_config_file",
    "load_embeddings",
    "load_embeddings_csv",
    "load_exemplars",
    "make_task_split",
    "masks",
    "observe",
    "online_mean_update",
    "pnn_prior",
    "predict",
    "rebalance",
    "recompute_metrics",
    "run_experiment",
    "sample_exemplars",
    "save_embeddings",
    "save_embeddings_csv",
    "save_exemplars",
    "select_candidates",
    "storage_bytes",
    "stream_task",
    "vote",
]
