"""Parameterised layers and name-keyed deterministic initialisation."""

from __future__ import annotations

import math
import zlib

import numpy as np
import torch
from torch import nn

from castmm.nn.core import activation, add, layer_norm, matmul


class Linear(nn.Module):
    """``y = x @ weight (+ bias)`` with ``weight`` stored as (in, out)."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_in, d_out))
        self.bias = nn.Parameter(torch.empty(d_out)) if bias else None

    def forward(self, x):
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class LayerNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gain = nn.Parameter(torch.empty(d))
        self.bias = nn.Parameter(torch.empty(d))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(nn.Module):
    def __init__(self, n: int, d: int):
        super().__init__()
        self.table = nn.Parameter(torch.empty(n, d))

    def forward(self, idx):
        return self.table.index_select(0, idx.reshape(-1)).reshape(*idx.shape, self.table.shape[1])


class MLP(nn.Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int, act: str = "silu"):
        super().__init__()
        self.fc1 = Linear(d_in, d_hidden)
        self.fc2 = Linear(d_hidden, d_out)
        self.act = act

    def forward(self, x):
        return self.fc2(activation(self.fc1(x), self.act))


def name_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


@torch.no_grad()
def init_parameters(module: nn.Module, seed: int, prefix: str = "") -> None:
    """Initialise every parameter from a generator keyed on (seed, full name).

    Weights and embedding tables: U(-1/sqrt(fan_in), 1/sqrt(fan_in)), where an
    embedding's fan-in is its width. Biases zero, layer-norm gains one.
    Scalar parameters keep their constructor value.
    """
    for name, p in module.named_parameters():
        if p.dim() == 0:
            continue  # scalars are set by their owning module
        full = prefix + name
        leaf = full.rsplit(".", 1)[-1]
        if leaf == "bias":
            p.zero_()
        elif leaf == "gain":
            p.fill_(1.0)
        else:
            fan_in = p.shape[0] if leaf == "weight" else p.shape[-1]
            bound = 1.0 / math.sqrt(fan_in)
            g = torch.Generator().manual_seed(name_seed(seed, full))
            p.copy_(torch.rand(p.shape, generator=g, dtype=torch.float64) * (2 * bound) - bound)
