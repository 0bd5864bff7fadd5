from .augment import AugmentationConfig, augment, augment_batch
from .encoder import (
    EncoderConfig,
    EncoderParams,
    backbone_forward,
    embed_batch,
    encoder_backward,
    encoder_forward,
    frozen_random_embedder,
    init_encoder,
)
from .ntxent import nt_xent_loss
from .store import EmbeddingStore
from .train import ContrastiveConfig, ContrastiveResult, embed_tiles, train_contrastive

__all__ = [
    "AugmentationConfig",
    "ContrastiveConfig",
    "ContrastiveResult",
    "EmbeddingStore",
    "EncoderConfig",
    "EncoderParams",
    "augment",
    "augment_batch",
    "backbone_forward",
    "embed_batch",
    "embed_tiles",
    "encoder_backward",
    "encoder_forward",
    "frozen_random_embedder",
    "init_encoder",
    "nt_xent_loss",
    "train_contrastive",
]
