"""Cross-attention fusion, prediction heads and baseline fusion strategies."""

from castmm.fusion.baselines import (
    ConcatFusion,
    ContrastiveHeads,
    DescFusion,
    concat_fuse,
    contrastive_loss,
    desc_fuse,
)
from castmm.fusion.cross_attention import (
    AttentionMap,
    CrossAttentionLayer,
    FusionOutput,
    FusionStack,
    cross_attention_layer,
    fuse,
    read_attention_dump,
    write_attention_dump,
)
from castmm.fusion.heads import MNPHead, RegressionHead, mean_pool, mnp_head, regression_head
from castmm.fusion.models import VARIANTS, CastModel, ModelConfig, build_model
