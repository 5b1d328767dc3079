"""End-to-end models: CAST and the comparison variants.

All models share parameter prefixes (``structure.``, ``text.``) so encoder
weights transfer between variants by name.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import asdict, dataclass

import torch
from torch import nn

from castmm.batch import Batch
from castmm.crystal import N_ELEMENTS
from castmm.encoders.structure import StructureEncoder
from castmm.encoders.text import TextEncoder
from castmm.fusion.baselines import ConcatFusion, ContrastiveHeads, DescFusion
from castmm.fusion.cross_attention import FusionOutput, FusionStack
from castmm.fusion.heads import MNPHead, RegressionHead, pool_flat
from castmm.nn.core import cross_entropy_masked, mae
from castmm.nn.layers import MLP, init_parameters

VARIANTS = (
    "graph-only",
    "text-only",
    "concat",
    "concat-frozen",
    "contrastive",
    "desc-concat",
    "cast-base",
    "cast",
)


@dataclass(frozen=True)
class ModelConfig:
    node_dim: int = 128
    text_dim: int = 768
    text_layers: int = 2
    text_heads: int = 12
    mp_blocks: int = 3
    rbf_dim: int = 16
    cutoff: float = 5.0
    fusion_layers: int = 4
    fusion_heads: int = 8
    attn_dim: int = 128
    ffn_dim: int = 512
    proj_dim: int = 128
    temperature: float = 0.07
    vocab_size: int = 0
    desc_dim: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class _Base(nn.Module):
    freeze_text = False

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg

    def set_text_frozen(self, frozen: bool) -> None:
        self.freeze_text = frozen
        if hasattr(self, "text"):
            for p in self.text.parameters():
                p.requires_grad_(not frozen)

    def encode_text(self, batch: Batch) -> torch.Tensor:
        ctx = torch.no_grad() if self.freeze_text else nullcontext()
        with ctx:
            return self.text(batch.text.ids, batch.text.allowed)

    def loss(self, batch: Batch) -> torch.Tensor:
        return mae(self.predict(batch), batch.targets)


def _structure(cfg):
    return StructureEncoder(cfg.node_dim, cfg.mp_blocks, cfg.rbf_dim)


def _text(cfg):
    if cfg.vocab_size <= 0:
        raise ValueError("model config needs vocab_size")
    return TextEncoder(cfg.vocab_size, cfg.text_dim, cfg.text_layers, cfg.text_heads)


class CastModel(_Base):
    """Structure encoder -> cross-attention fusion over text tokens -> head.

    ``task`` selects the masked-element classification head ("mnp") or the
    pooled regression head ("regression").
    """

    def __init__(self, cfg: ModelConfig, task: str = "regression"):
        super().__init__(cfg)
        self.task = task
        self.structure = _structure(cfg)
        self.text = _text(cfg)
        self.fusion = FusionStack(
            cfg.node_dim, cfg.text_dim, cfg.fusion_layers, cfg.fusion_heads, cfg.attn_dim, cfg.ffn_dim
        )
        if task == "mnp":
            self.mnp_head = MNPHead(cfg.node_dim, N_ELEMENTS)
        elif task == "regression":
            self.reg_head = RegressionHead(cfg.node_dim)
        else:
            raise ValueError(f"unknown task {task!r}")

    def fuse(self, batch: Batch, record: bool = False) -> FusionOutput:
        g = batch.graphs
        nodes = g.to_padded(self.structure(g, batch.node_mask))
        text = self.encode_text(batch)
        return self.fusion(nodes, text, batch.text.allowed, record)

    def mnp_logits(self, batch: Batch) -> torch.Tensor:
        """Logits for the masked nodes, in flat batch order."""
        g = batch.graphs
        out = self.fuse(batch).fused_nodes
        flat = out[g.graph_index, g.node_slot]
        return self.mnp_head(flat[batch.node_mask])

    def predict(self, batch: Batch) -> torch.Tensor:
        out = self.fuse(batch).fused_nodes
        return self.reg_head(out, batch.graphs.node_valid())

    def loss(self, batch: Batch) -> torch.Tensor:
        if self.task == "mnp":
            logits = self.mnp_logits(batch)
            labels = batch.graphs.elements[batch.node_mask]
            return cross_entropy_masked(logits, labels, torch.ones(len(labels), dtype=torch.bool))
        return super().loss(batch)


class GraphOnlyModel(_Base):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.structure = _structure(cfg)
        self.mlp = MLP(cfg.node_dim, cfg.node_dim, 1)

    def predict(self, batch):
        g = batch.graphs
        return self.mlp(pool_flat(self.structure(g), g.graph_index, g.counts)).squeeze(-1)


class TextOnlyModel(_Base):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.text = _text(cfg)
        self.mlp = MLP(cfg.text_dim, cfg.node_dim, 1)

    def predict(self, batch):
        return self.mlp(self.encode_text(batch)[:, 0]).squeeze(-1)


class ConcatModel(_Base):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.structure = _structure(cfg)
        self.text = _text(cfg)
        self.head = ConcatFusion(cfg.node_dim, cfg.text_dim)

    def predict(self, batch):
        g = batch.graphs
        pooled = pool_flat(self.structure(g), g.graph_index, g.counts)
        return self.head(pooled, self.encode_text(batch)[:, 0])


class DescModel(_Base):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        if cfg.desc_dim <= 0:
            raise ValueError("model config needs desc_dim")
        self.structure = _structure(cfg)
        self.head = DescFusion(cfg.node_dim, cfg.desc_dim)

    def predict(self, batch):
        if batch.descriptors is None:
            raise ValueError("batch has no descriptor vectors")
        g = batch.graphs
        pooled = pool_flat(self.structure(g), g.graph_index, g.counts)
        return self.head(pooled, batch.descriptors)


class ContrastiveModel(_Base):
    """Two-tower structure/text pretraining with symmetric InfoNCE."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.structure = _structure(cfg)
        self.text = _text(cfg)
        self.heads = ContrastiveHeads(cfg.node_dim, cfg.text_dim, cfg.proj_dim, cfg.temperature)

    def loss(self, batch):
        g = batch.graphs
        pooled = pool_flat(self.structure(g), g.graph_index, g.counts)
        return self.heads(pooled, self.encode_text(batch)[:, 0])


def build_model(kind: str, cfg: ModelConfig, seed: int = 0, dtype=torch.float64) -> _Base:
    """``kind`` is a regression variant name, "mnp" or "contrastive-pretrain"."""
    if kind == "mnp":
        model = CastModel(cfg, task="mnp")
    elif kind in ("cast", "cast-base"):
        model = CastModel(cfg, task="regression")
    elif kind in ("graph-only", "contrastive"):
        model = GraphOnlyModel(cfg)
    elif kind == "text-only":
        model = TextOnlyModel(cfg)
    elif kind in ("concat", "concat-frozen"):
        model = ConcatModel(cfg)
    elif kind == "desc-concat":
        model = DescModel(cfg)
    elif kind == "contrastive-pretrain":
        model = ContrastiveModel(cfg)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    init_parameters(model, seed)
    model.to(dtype)
    if kind == "concat-frozen":
        model.set_text_frozen(True)
    return model
