"""Message-passing encoder over periodic crystal graphs."""

from __future__ import annotations

from typing import TYPE_CHECKING, Iterable

import torch
from torch import nn

from castmm.crystal import N_ELEMENTS, PeriodicGraph
from castmm.nn.core import activation, concat_last_dim
from castmm.nn.layers import MLP, Embedding, LayerNorm

if TYPE_CHECKING:
    from castmm.batch import GraphBatch

MASK_ELEMENT = N_ELEMENTS  # extra row of the element table


class MessageBlock(nn.Module):
    """Edge-conditioned messages, mean aggregation, residual update."""

    def __init__(self, dim: int, rbf_dim: int):
        super().__init__()
        self.message = MLP(dim + rbf_dim, dim, dim)
        self.update = MLP(2 * dim, dim, dim)
        self.ln = LayerNorm(dim)

    def forward(self, h, src, dst, rbf, inv_degree):
        # node i collects from each neighbour j over edge (i, j)
        msg = self.message(concat_last_dim(h.index_select(0, dst), rbf))
        agg = h.new_zeros(h.shape).index_add(0, src, msg) * inv_degree
        return h + self.update(concat_last_dim(self.ln(h), agg))


class StructureEncoder(nn.Module):
    def __init__(self, dim: int = 128, n_blocks: int = 3, rbf_dim: int = 16, n_elements: int = N_ELEMENTS):
        super().__init__()
        self.dim = dim
        self.n_elements = n_elements
        self.elements = Embedding(n_elements + 1, dim)
        self.blocks = nn.ModuleList([MessageBlock(dim, rbf_dim) for _ in range(n_blocks)])
        self.ln_out = LayerNorm(dim)

    def forward(self, graphs: "GraphBatch", node_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Node embeddings (Ntot, dim); masked nodes enter as the MASK element."""
        elem = graphs.elements
        if node_mask is not None:
            elem = torch.where(node_mask, torch.full_like(elem, self.n_elements), elem)
        h = self.elements(elem)
        deg = torch.bincount(graphs.src, minlength=len(elem)).to(h.dtype)
        inv_degree = (1.0 / deg.clamp(min=1.0))[:, None]
        for blk in self.blocks:
            h = blk(h, graphs.src, graphs.dst, graphs.rbf, inv_degree)
        return self.ln_out(activation(h, "silu"))


def encode_structure(graph: PeriodicGraph, encoder: StructureEncoder, mask_set: Iterable[int] = ()) -> torch.Tensor:
    """Node embedding matrix (N, dim) for a single graph."""
    from castmm.batch import collate_graphs

    dtype = encoder.elements.table.dtype
    gb = collate_graphs([graph], dtype)
    return encoder(gb, gb.global_mask([list(mask_set)]))
