from .blocks import (LayerNorm, FeedForward, ChannelAttention, WindowAttention, PromptCrossAttention,
                     TransposedSelfAttentionBlock, SpatialSelfAttentionBlock, PromptCrossAttentionBlock)
from .genlv import ModelConfig, MODEL_VARIANTS, model_variant, GenLV, PromptEncoder, build_model, count_params
