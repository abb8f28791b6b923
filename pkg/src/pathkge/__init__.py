"""Translation-based knowledge-graph embeddings with path regularization.

Pipeline: load a triple dataset, mirror every train fact with an inverse
relation, mine 2-hop relation paths with per-pair resource flows, train
embeddings in stages (translation warm start, projected refinement with
optional path regularization), then rank entities for link prediction.
"""

from pathkge.evaluator import (
    EvalError,
    RankReport,
    RankResult,
    evaluate,
    rank_entities,
    tie_rank,
)
from pathkge.kgdata import (
    DatasetError,
    KnowledgeGraph,
    Triple,
    Vocab,
    augment_inverse,
    classify_relations,
    load_dataset,
)
from pathkge.models import (
    ModelError,
    ModelParams,
    compose_path,
    path_energy,
    score_ptransr,
    score_transe,
    score_transr,
)
from pathkge.paths import (
    PathError,
    PathTable,
    build_path_table,
    enumerate_paths,
    pcra_resource,
)
from pathkge.trainer import TrainConfig, TrainError, train
from pathkge.cli import SyntheticKGSpec, SynthError, generate_synthetic_kg

__version__ = "0.1.0"

__all__ = [
    "DatasetError",
    "EvalError",
    "KnowledgeGraph",
    "ModelError",
    "ModelParams",
    "PathError",
    "PathTable",
    "RankReport",
    "RankResult",
    "SynthError",
    "SyntheticKGSpec",
    "TrainConfig",
    "TrainError",
    "Triple",
    "Vocab",
    "augment_inverse",
    "build_path_table",
    "classify_relations",
    "compose_path",
    "enumerate_paths",
    "evaluate",
    "generate_synthetic_kg",
    "load_dataset",
    "path_energy",
    "pcra_resource",
    "rank_entities",
    "score_ptransr",
    "score_transe",
    "score_transr",
    "tie_rank",
    "train",
    "__version__",
]
