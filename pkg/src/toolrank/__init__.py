"""Per-user LLM agents that weight and rerank full-ranking recommendation tools."""

from .agent import (
    AgentState,
    IntentMemory,
    LearningRates,
    RecToolMemory,
    optimize_agents,
    optimize_user,
)
from .catalog import BehaviorSequence, Catalog, Dataset, IngestError, SplitConfig, ingest, split_views
from .ensemble import EnsembleModel, apply_ensemble, blend, train_ensemble
from .evaluation import EvalReport, VdcgParams, evaluate_run, ndcg_at_k, recall_at_k, vdcg_at_k
from .rectools import ScoreVector, normalize_scores, top_k, train_tool
from .rerank import aggregate, final_ranking, fuse, hallucination_filter, refine

__version__ = "0.1.0"

__all__ = [
    "AgentState", "IntentMemory", "LearningRates", "RecToolMemory", "optimize_agents", "optimize_user",
    "BehaviorSequence", "Catalog", "Dataset", "IngestError", "SplitConfig", "ingest", "split_views",
    "EnsembleModel", "apply_ensemble", "blend", "train_ensemble",
    "EvalReport", "VdcgParams", "evaluate_run", "ndcg_at_k", "recall_at_k", "vdcg_at_k",
    "ScoreVector", "normalize_scores", "top_k", "train_tool",
    "aggregate", "final_ranking", "fuse", "hallucination_filter", "refine",
]
