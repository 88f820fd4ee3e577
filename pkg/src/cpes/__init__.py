"""Class-relevant patch embedding selection: a few-shot classification
head operating on precomputed (or synthetic) embedding stores.
"""

from .episodes import Episode, EpisodeSpec, build_prototype, sample_episode
from .errors import CpesError
from .harness import (
    EvalReport,
    RunConfig,
    SweepReport,
    evaluate,
    export_masks,
    sweep_distance,
    sweep_m,
    train,
)
from .numerics import Rng64, cosine, cross_entropy, rng_split, softmax
from .scoring import (
    Gradients,
    MlpHead,
    OptimizerConfig,
    ScheduleKind,
    episode_loss_and_grads,
    load_head,
    mlp_forward,
    optimizer_step,
    save_head,
    score_matrix,
)
from .selection import (
    DistanceKind,
    FusedRepresentation,
    SelectionResult,
    fuse,
    select_top,
    similarity_sequence,
)
from .store import (
    EmbeddingRecord,
    EmbeddingStore,
    SyntheticConfig,
    generate_synthetic,
    read_store,
    write_store,
)

__all__ = [
    "CpesError",
    "DistanceKind",
    "EmbeddingRecord",
    "EmbeddingStore",
    "Episode",
    "EpisodeSpec",
    "EvalReport",
    "FusedRepresentation",
    "Gradients",
    "MlpHead",
    "OptimizerConfig",
    "Rng64",
    "RunConfig",
    "ScheduleKind",
    "SelectionResult",
    "SweepReport",
    "SyntheticConfig",
    "build_prototype",
    "cosine",
    "cross_entropy",
    "episode_loss_and_grads",
    "evaluate",
    "export_masks",
    "fuse",
    "generate_synthetic",
    "load_head",
    "mlp_forward",
    "optimizer_step",
    "read_store",
    "rng_split",
    "sample_episode",
    "save_head",
    "score_matrix",
    "select_top",
    "similarity_sequence",
    "softmax",
    "sweep_distance",
    "sweep_m",
    "train",
    "write_store",
]
