"""Multi-channel video-language retrieval with a two-axis model design space:
video as continuous features or retrieved text tokens, fused by a multimodal
transformer or by the contrastive text model itself."""

from .embeddings import Embedding, EmbeddingMatrix, dot_scores, l2_normalize, mean_pool
from .encoders import PrecomputedFeatureStore, SyntheticEncoderPair, VideoFeatures
from .fusion import FusionConfig, FusionModel, FusionVariant
from .objectives import loss_gradient_check, nce_loss, symmetric_loss
from .token_retrieval import Vocabulary, build_vocabulary, retrieve_tokens, tokenize_video
from .training import TrainConfig, fewshot_subsample, train

__all__ = [
    "Embedding", "EmbeddingMatrix", "dot_scores", "l2_normalize", "mean_pool",
    "PrecomputedFeatureStore", "SyntheticEncoderPair", "VideoFeatures",
    "FusionConfig", "FusionModel", "FusionVariant",
    "loss_gradient_check", "nce_loss", "symmetric_loss",
    "Vocabulary", "build_vocabulary", "retrieve_tokens", "tokenize_video",
    "TrainConfig", "fewshot_subsample", "train",
]
