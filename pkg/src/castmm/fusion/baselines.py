"""Instance-level fusion baselines: concatenation, descriptors, contrastive."""

from __future__ import annotations

import math

import torch
from torch import nn

from castmm.nn.core import activation, concat_last_dim, cross_entropy_masked, matmul
from castmm.nn.layers import MLP, Linear


class ConcatFusion(nn.Module):
    """Pooled nodes || projected [CLS] state -> 2-layer MLP -> scalar."""

    def __init__(self, node_dim: int, text_dim: int):
        super().__init__()
        self.text_proj = Linear(text_dim, node_dim)
        self.mlp = MLP(2 * node_dim, node_dim, 1)

    def forward(self, pooled_nodes: torch.Tensor, cls_state: torch.Tensor) -> torch.Tensor:
        return self.mlp(concat_last_dim(pooled_nodes, self.text_proj(cls_state))).squeeze(-1)


class DescFusion(nn.Module):
    """Descriptor -> linear -> SiLU, concatenated with pooled nodes -> MLP -> scalar."""

    def __init__(self, node_dim: int, desc_dim: int):
        super().__init__()
        self.desc_dim = desc_dim
        self.desc_proj = Linear(desc_dim, node_dim)
        self.mlp = MLP(2 * node_dim, node_dim, 1)

    def project(self, desc: torch.Tensor) -> torch.Tensor:
        if desc.shape[-1] != self.desc_dim:
            raise ValueError(f"descriptor has {desc.shape[-1]} fields, model expects {self.desc_dim}")
        return activation(self.desc_proj(desc), "silu")

    def forward(self, pooled_nodes: torch.Tensor, desc: torch.Tensor) -> torch.Tensor:
        return self.mlp(concat_last_dim(pooled_nodes, self.project(desc))).squeeze(-1)


def concat_fuse(pooled_nodes, cls_state, params: ConcatFusion) -> torch.Tensor:
    return params(pooled_nodes, cls_state)


def desc_fuse(pooled_nodes, descriptor, params: DescFusion) -> torch.Tensor:
    return params(pooled_nodes, descriptor)


def _unit_rows(x: torch.Tensor) -> torch.Tensor:
    return x / torch.sqrt((x * x).sum(dim=-1, keepdim=True))


def contrastive_loss(graph_pools: torch.Tensor, text_pools: torch.Tensor, temperature) -> torch.Tensor:
    """Symmetric InfoNCE over cosine-similarity logits scaled by 1/temperature."""
    b = graph_pools.shape[0]
    if b < 2:
        raise ValueError("contrastive_loss needs a batch of at least 2")
    logits = matmul(_unit_rows(graph_pools), _unit_rows(text_pools).T) / temperature
    labels = torch.arange(b)
    every = torch.ones(b, dtype=torch.bool)
    return 0.5 * (cross_entropy_masked(logits, labels, every) + cross_entropy_masked(logits.T, labels, every))


class ContrastiveHeads(nn.Module):
    def __init__(self, node_dim: int, text_dim: int, proj_dim: int = 128, temperature: float = 0.07):
        super().__init__()
        self.graph_proj = Linear(node_dim, proj_dim)
        self.text_proj = Linear(text_dim, proj_dim)
        # learnable log(1/temperature)
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1.0 / temperature)))

    @property
    def temperature(self) -> torch.Tensor:
        return torch.exp(-self.logit_scale)

    def forward(self, pooled_nodes, cls_state):
        return contrastive_loss(self.graph_proj(pooled_nodes), self.text_proj(cls_state), self.temperature)
