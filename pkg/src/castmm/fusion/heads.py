"""Single-linear classification (masked element) and regression heads."""

from __future__ import annotations

import torch
from torch import nn

from castmm.crystal import N_ELEMENTS
from castmm.nn.layers import Linear


def mean_pool(nodes: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
    """(B, N, d) -> (B, d), averaging only rows where ``valid`` is set."""
    if valid is None:
        return nodes.mean(dim=-2)
    w = valid.to(nodes.dtype)[..., None]
    return (nodes * w).sum(dim=-2) / w.sum(dim=-2)


def pool_flat(h: torch.Tensor, graph_index: torch.Tensor, counts: torch.Tensor) -> torch.Tensor:
    """Mean over the flat node rows of each graph: (Ntot, d) -> (B, d)."""
    out = h.new_zeros(len(counts), h.shape[-1]).index_add(0, graph_index, h)
    return out / counts.to(h.dtype)[:, None]


class MNPHead(nn.Module):
    def __init__(self, dim: int, n_classes: int = N_ELEMENTS):
        super().__init__()
        self.proj = Linear(dim, n_classes)

    def forward(self, fused_rows: torch.Tensor) -> torch.Tensor:
        return self.proj(fused_rows)


class RegressionHead(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.proj = Linear(dim, 1)

    def forward(self, fused: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        return self.proj(mean_pool(fused, valid)).squeeze(-1)


def mnp_head(fused: torch.Tensor, masked_idx, head: MNPHead) -> torch.Tensor:
    """Logits (|masked_idx|, E) for the masked rows of a single sample's (N, d) nodes."""
    idx = torch.as_tensor(list(masked_idx), dtype=torch.long)
    if idx.numel() == 0:
        raise ValueError("mnp_head needs at least one masked node")
    return head(fused.index_select(0, idx))


def regression_head(fused: torch.Tensor, head: RegressionHead) -> torch.Tensor:
    """Scalar prediction for a single sample's (N, d) nodes."""
    return head(fused[None])[0]
