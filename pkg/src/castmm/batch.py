"""Per-sample tensors and their collation into padded batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from castmm.crystal import PeriodicGraph
from castmm.encoders.vocab import PAD, TokenSequence


@dataclass
class Sample:
    id: str
    graph: PeriodicGraph
    tokens: TokenSequence
    target: float = 0.0
    descriptor: np.ndarray | None = None


@dataclass
class GraphBatch:
    elements: torch.Tensor  # (Ntot,)
    graph_index: torch.Tensor  # (Ntot,) sample of each node
    node_slot: torch.Tensor  # (Ntot,) position of node inside its sample
    src: torch.Tensor  # (E,)
    dst: torch.Tensor  # (E,)
    rbf: torch.Tensor  # (E, K)
    counts: torch.Tensor  # (B,)

    @property
    def n_graphs(self) -> int:
        return len(self.counts)

    @property
    def n_max(self) -> int:
        return int(self.counts.max())

    def node_valid(self) -> torch.Tensor:
        return torch.arange(self.n_max)[None, :] < self.counts[:, None]

    def to_padded(self, h: torch.Tensor) -> torch.Tensor:
        out = h.new_zeros(self.n_graphs, self.n_max, h.shape[-1])
        return out.index_put((self.graph_index, self.node_slot), h)

    def offsets(self) -> torch.Tensor:
        return torch.cumsum(self.counts, 0) - self.counts

    def global_mask(self, mask_sets: Sequence[Sequence[int]] | None) -> torch.Tensor:
        m = torch.zeros(len(self.elements), dtype=torch.bool)
        if mask_sets is None:
            return m
        off = self.offsets()
        for b, idx in enumerate(mask_sets):
            for i in idx:
                if not 0 <= int(i) < int(self.counts[b]):
                    raise IndexError(f"mask index {i} out of range for graph {b} with {int(self.counts[b])} nodes")
                m[off[b] + int(i)] = True
        return m


@dataclass
class TextBatch:
    ids: torch.Tensor  # (B, T)
    allowed: torch.Tensor  # (B, T)


@dataclass
class Batch:
    ids: list[str]
    graphs: GraphBatch
    text: TextBatch
    targets: torch.Tensor
    descriptors: torch.Tensor | None = None
    node_mask: torch.Tensor | None = None  # (Ntot,) bool, nodes hidden for MNP


def collate_graphs(graphs: Sequence[PeriodicGraph], dtype=torch.float64) -> GraphBatch:
    counts = np.array([g.n_nodes for g in graphs], dtype=np.int64)
    offs = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return GraphBatch(
        elements=torch.from_numpy(np.concatenate([g.node_elements for g in graphs])),
        graph_index=torch.from_numpy(np.repeat(np.arange(len(graphs)), counts)),
        node_slot=torch.from_numpy(np.concatenate([np.arange(c) for c in counts])),
        src=torch.from_numpy(np.concatenate([g.src + o for g, o in zip(graphs, offs)])),
        dst=torch.from_numpy(np.concatenate([g.dst + o for g, o in zip(graphs, offs)])),
        rbf=torch.from_numpy(np.concatenate([g.edge_features for g in graphs])).to(dtype),
        counts=torch.from_numpy(counts),
    )


def collate_tokens(seqs: Sequence[TokenSequence], length: int | None = None) -> TextBatch:
    t = length or max(len(s) for s in seqs)
    ids = np.full((len(seqs), t), PAD, dtype=np.int64)
    allowed = np.zeros((len(seqs), t), dtype=bool)
    for b, s in enumerate(seqs):
        ids[b, : len(s)] = s.ids
        allowed[b, : len(s)] = s.attention_allowed
    return TextBatch(torch.from_numpy(ids), torch.from_numpy(allowed))


def collate(samples: Sequence[Sample], dtype=torch.float64) -> Batch:
    desc = None
    if all(s.descriptor is not None for s in samples):
        desc = torch.from_numpy(np.stack([s.descriptor for s in samples])).to(dtype)
    return Batch(
        ids=[s.id for s in samples],
        graphs=collate_graphs([s.graph for s in samples], dtype),
        text=collate_tokens([s.tokens for s in samples]),
        targets=torch.tensor([s.target for s in samples], dtype=dtype),
        descriptors=desc,
    )
