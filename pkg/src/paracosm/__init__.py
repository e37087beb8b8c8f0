"""Training-free zero-shot composed image retrieval.

A composed query (reference image + modification text) is answered by
generating the image the text implies, describing it, fusing those with the
raw text into one query vector, and cosine-ranking it against gallery
features that blend each real photo with a generated synthetic counterpart.
All generative and embedding models are pluggable HTTP backends with a
deterministic in-process mock, so the full system runs and verifies at desk
scale.
"""

from .backends import Backends, BackendDescriptor, ImageArtifact, build_backends
from .config import AblationConfig, load_ablation_grid, load_run_config
from .datasets import QueryRecord, generate_toy_benchmark, load_circo, load_cirr, load_fashioniq
from .fusion import (
    EmbeddingVector,
    GalleryFeature,
    QueryFeature,
    RankedResult,
    cosine_similarity,
    fuse_gallery,
    fuse_query,
    l2_normalize,
    rank_subset,
    rank_topk,
)
from .metrics import EvalReport, evaluate, map_at_k, recall_at_k, recall_subset_at_k
from .pipeline import CostReport, QueryBundle, preprocess_gallery, process_query, retrieve
from .store import FeatureStore, read_store, refuse_gallery, write_store

__version__ = "0.1.0"

__all__ = [
    "AblationConfig",
    "BackendDescriptor",
    "Backends",
    "CostReport",
    "EmbeddingVector",
    "EvalReport",
    "FeatureStore",
    "GalleryFeature",
    "ImageArtifact",
    "QueryBundle",
    "QueryFeature",
    "QueryRecord",
    "RankedResult",
    "build_backends",
    "cosine_similarity",
    "evaluate",
    "fuse_gallery",
    "fuse_query",
    "generate_toy_benchmark",
    "l2_normalize",
    "load_ablation_grid",
    "load_circo",
    "load_cirr",
    "load_fashioniq",
    "load_run_config",
    "map_at_k",
    "preprocess_gallery",
    "process_query",
    "rank_subset",
    "rank_topk",
    "read_store",
    "recall_at_k",
    "recall_subset_at_k",
    "refuse_gallery",
    "retrieve",
    "write_store",
]
