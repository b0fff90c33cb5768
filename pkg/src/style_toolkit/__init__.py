"""Text-driven latent manipulation toolkit.

Three editing methods over pluggable generator/embedder backends:

* per-image latent optimization with a joint-embedding loss,
* prompt-specific residual mappers over coarse/medium/fine latent groups,
* input-agnostic global directions in style space with strength and
  disentanglement controls,

plus an artifact store, an HTTP service, and a CLI.
"""

from .backends import (
    BackendBundle,
    ImageTensor,
    JointEmbedding,
    ManipulationBackend,
    QuadraticSurrogateBackend,
    ToyLinearBackend,
    load_backend,
    register_backend_kind,
)
from .directions import (
    INTERACTIVE_DEFAULTS,
    ChannelStats,
    DirectionQuery,
    PromptSpec,
    apply_global,
    assemble_direction,
    beta_from_k,
    channel_relevance,
    direction_for_query,
    direction_from_k,
    encode_prompt_pair,
    precompute_channel_stats,
)
from .geometry import (
    LatentGeometry,
    StyleCode,
    StyleDirection,
    WPlusCode,
    add_direction,
    merge_wplus,
    split_wplus,
)
from .mapper import (
    MapperConfig,
    MapperModel,
    apply_mapper,
    direction_similarity_report,
    mapper_forward,
    mapper_loss,
    train_mapper,
)
from .optimizer import ObjectiveTerms, OptimizeConfig, OptimizeTrace, objective, optimize_latent
from .store import ArtifactKey, ArtifactStore
from .templates import TemplateBank

__version__ = "0.1.0"

__all__ = [
    "ArtifactKey",
    "ArtifactStore",
    "BackendBundle",
    "ChannelStats",
    "DirectionQuery",
    "ImageTensor",
    "INTERACTIVE_DEFAULTS",
    "JointEmbedding",
    "LatentGeometry",
    "ManipulationBackend",
    "MapperConfig",
    "MapperModel",
    "ObjectiveTerms",
    "OptimizeConfig",
    "OptimizeTrace",
    "PromptSpec",
    "QuadraticSurrogateBackend",
    "StyleCode",
    "StyleDirection",
    "TemplateBank",
    "ToyLinearBackend",
    "WPlusCode",
    "add_direction",
    "apply_global",
    "apply_mapper",
    "assemble_direction",
    "beta_from_k",
    "channel_relevance",
    "direction_for_query",
    "direction_from_k",
    "direction_similarity_report",
    "encode_prompt_pair",
    "load_backend",
    "mapper_forward",
    "mapper_loss",
    "merge_wplus",
    "objective",
    "optimize_latent",
    "precompute_channel_stats",
    "register_backend_kind",
    "split_wplus",
    "train_mapper",
    "__version__",
]
