"""Node-queries-text cross-attention stack with optional attention recording."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from castmm.nn.attention import MultiHeadAttention
from castmm.nn.core import activation
from castmm.nn.layers import LayerNorm, Linear


class CrossAttentionLayer(nn.Module):
    """Pre-norm block: ``x + Attn(LN(x), text)`` then ``x + FFN(LN(x))``."""

    def __init__(self, node_dim: int, text_dim: int, attn_dim: int = 128, n_heads: int = 8, ffn_dim: int = 512):
        super().__init__()
        self.ln_attn = LayerNorm(node_dim)
        self.attn = MultiHeadAttention(node_dim, text_dim, attn_dim, n_heads)
        self.ln_ffn = LayerNorm(node_dim)
        self.ff1 = Linear(node_dim, ffn_dim)
        self.ff2 = Linear(ffn_dim, node_dim)

    def forward(self, nodes, text, text_allowed=None):
        a, weights = self.attn(self.ln_attn(nodes), text, text_allowed)
        x = nodes + a
        x = x + self.ff2(activation(self.ff1(self.ln_ffn(x)), "gelu"))
        return x, weights


@dataclass
class FusionOutput:
    fused_nodes: torch.Tensor  # (B, N, node_dim)
    attention: list[torch.Tensor] | None = None  # per layer, (B, H, N, T)

    def attention_map(self, b: int = 0, n_nodes: int | None = None, n_tokens: int | None = None) -> "AttentionMap":
        if self.attention is None:
            raise ValueError("attention was not recorded")
        vals = torch.stack([w[b] for w in self.attention]).detach().cpu().numpy()
        return AttentionMap(vals[:, :, :n_nodes, :n_tokens].astype(np.float64))


class FusionStack(nn.Module):
    def __init__(
        self,
        node_dim: int = 128,
        text_dim: int = 768,
        n_layers: int = 4,
        n_heads: int = 8,
        attn_dim: int = 128,
        ffn_dim: int = 512,
    ):
        super().__init__()
        self.layers = nn.ModuleList(
            [CrossAttentionLayer(node_dim, text_dim, attn_dim, n_heads, ffn_dim) for _ in range(n_layers)]
        )

    def forward(self, nodes, text, text_allowed=None, record: bool = False) -> FusionOutput:
        maps = [] if record else None
        x = nodes
        for layer in self.layers:
            x, w = layer(x, text, text_allowed)
            if record:
                maps.append(w.detach().clone())
        return FusionOutput(x, maps)


def cross_attention_layer(nodes, text, layer: CrossAttentionLayer, record: bool = False):
    """Single-sample form: nodes (N, dn), text (T, dt)."""
    out, w = layer(nodes[None], text[None])
    return (out[0], w[0].detach()) if record else (out[0], None)


def fuse(nodes, text, stack: FusionStack, record: bool = False) -> FusionOutput:
    """Single-sample form: nodes (N, dn), text (T, dt)."""
    out = stack(nodes[None], text[None], None, record)
    return FusionOutput(out.fused_nodes[0], None if out.attention is None else [w[0:1] for w in out.attention])


@dataclass
class AttentionMap:
    """Attention weights, layers x heads x nodes x tokens."""

    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=-1)

    def layer_head(self, layer: int, head: int) -> np.ndarray:
        return self.values[layer, head]


_ATTN_MAGIC = b"CASTATTN"


def write_attention_dump(path, sample_id: str, amap: AttentionMap, tokens: list[str]) -> None:
    """JSON header (sample id, layer/head/node/token counts, token strings) + float64 LE payload."""
    L, H, N, T = amap.shape
    if len(tokens) != T:
        raise ValueError(f"{len(tokens)} token strings for {T} attention columns")
    header = json.dumps(
        {"sample_id": sample_id, "layers": L, "heads": H, "n_nodes": N, "n_tokens": T, "tokens": list(tokens),
         "dtype": "<f8"}
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_ATTN_MAGIC + struct.pack("<Q", len(header)) + header)
        fh.write(np.ascontiguousarray(amap.values, dtype="<f8").tobytes())


def read_attention_dump(path) -> tuple[dict, AttentionMap]:
    data = Path(path).read_bytes()
    if data[:8] != _ATTN_MAGIC:
        raise ValueError(f"{path}: not an attention dump")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n])
    shape = (header["layers"], header["heads"], header["n_nodes"], header["n_tokens"])
    vals = np.frombuffer(data[16 + n :], dtype="<f8").reshape(shape).astype(np.float64)
    return header, AttentionMap(vals)
