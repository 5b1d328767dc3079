"""Differentiable primitives on top of torch autograd.

Every layer in the package is composed from these functions so that the
numerical contracts (stable softmax, masked losses, shape errors) live in
one place.
"""

from __future__ import annotations

import os
from typing import Iterable

import torch
import torch.nn.functional as F

_DTYPES = {"float64": torch.float64, "float32": torch.float32, "64": torch.float64, "32": torch.float32}


class ShapeError(ValueError):
    pass


def resolve_dtype(precision: str | None = None) -> torch.dtype:
    """Config precision, overridden by the CAST_PRECISION environment variable."""
    p = os.environ.get("CAST_PRECISION") or precision or "float64"
    try:
        return _DTYPES[str(p)]
    except KeyError:
        raise ValueError(f"unknown precision {p!r}") from None


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(f"add shape mismatch: {tuple(a.shape)} + {tuple(b.shape)}") from None
    return a + b


def scale(a: torch.Tensor, s: float) -> torch.Tensor:
    return a * s


def concat_last_dim(*xs: torch.Tensor) -> torch.Tensor:
    lead = {tuple(x.shape[:-1]) for x in xs}
    if len(lead) != 1:
        raise ShapeError(f"concat shape mismatch: {[tuple(x.shape) for x in xs]}")
    return torch.cat(xs, dim=-1)


def softmax_rows(m: torch.Tensor, allowed: torch.Tensor | None = None) -> torch.Tensor:
    """Softmax over the last axis; entries where ``allowed`` is False get weight 0.

    Every row must keep at least one allowed entry.
    """
    if allowed is not None:
        m = m.masked_fill(~allowed, float("-inf"))
    return torch.softmax(m, dim=-1)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if x.shape[-1] < 2:
        raise ShapeError("layer_norm needs a last dimension of at least 2")
    return F.layer_norm(x, (x.shape[-1],), gain, bias, eps)


def activation(x: torch.Tensor, kind: str = "silu") -> torch.Tensor:
    if kind == "silu":
        return F.silu(x)
    if kind == "gelu":
        return F.gelu(x)  # exact erf form
    if kind == "relu":
        return F.relu(x)
    raise ValueError(f"unknown activation {kind!r}")


def log_softmax_rows(m: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(m, dim=-1)


def cross_entropy_masked(logits: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of -log softmax(logits)[label] over rows where ``mask`` is set."""
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if not bool(mask.any()):
        raise ValueError("cross_entropy_masked needs at least one masked position")
    idx = torch.nonzero(mask, as_tuple=True)[0]
    picked = logits.index_select(0, idx)
    lp = log_softmax_rows(picked)
    nll = -lp.gather(1, torch.as_tensor(labels)[idx].long().unsqueeze(1)).squeeze(1)
    return nll.mean()


def mae(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mae shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.numel() == 0:
        raise ValueError("mae of an empty set")
    return (pred - target).abs().mean()


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every reachable parameter."""
    if loss.numel() != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


def zero_grads(params: Iterable[torch.nn.Parameter]) -> None:
    for p in params:
        p.grad = None
