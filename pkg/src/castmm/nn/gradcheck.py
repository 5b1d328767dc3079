"""Central finite-difference gradient checker."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import torch

from castmm.nn.core import backward


def _sample_coords(params: dict[str, torch.Tensor], min_coords: int, rng) -> dict[str, np.ndarray]:
    sizes = {n: p.numel() for n, p in params.items()}
    total = sum(sizes.values())
    if total <= min_coords:
        return {n: np.arange(s) for n, s in sizes.items()}
    # stratified: every tensor gets a share, small tensors are taken whole
    per = math.ceil(min_coords / len(sizes))
    out = {}
    for n, s in sizes.items():
        k = min(s, per)
        out[n] = np.sort(rng.choice(s, size=k, replace=False))
    short = min_coords - sum(len(v) for v in out.values())
    for n, s in sorted(sizes.items(), key=lambda kv: -kv[1]):
        if short <= 0:
            break
        rest = np.setdiff1d(np.arange(s), out[n])
        extra = rng.choice(rest, size=min(short, len(rest)), replace=False)
        out[n] = np.sort(np.concatenate([out[n], extra]))
        short -= len(extra)
    return out


def finite_diff_check(
    model: torch.nn.Module,
    batch,
    eps: float = 1e-5,
    min_coords: int = 200,
    seed: int = 0,
    loss_fn: Callable | None = None,
    grad_scale: float = 1.0,
    return_details: bool = False,
):
    """Max relative error between autograd and central differences.

    ``loss_fn(model, batch)`` defaults to ``model.loss(batch)``. Relative error
    per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. ``grad_scale`` scales the
    analytic gradient, for checking that the checker notices corruption.
    """
    loss_fn = loss_fn or (lambda m, b: m.loss(b))
    params = {n: p for n, p in model.named_parameters() if p.requires_grad}
    for p in params.values():
        if p.dtype != torch.float64:
            raise TypeError("finite_diff_check requires float64 parameters")

    for p in params.values():
        p.grad = None
    loss = loss_fn(model, batch)
    backward(loss)
    analytic = {
        n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) * grad_scale
        for n, p in params.items()
    }

    coords = _sample_coords(params, min_coords, np.random.default_rng(seed))
    worst, details = 0.0, []
    with torch.no_grad():
        for n, idx in coords.items():
            flat = params[n].view(-1)
            a_flat = analytic[n].view(-1)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                fp = loss_fn(model, batch).item()
                flat[i] = orig - eps
                fm = loss_fn(model, batch).item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                a = a_flat[i].item()
                rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
                details.append((n, int(i), a, num, rel))
                worst = max(worst, rel)
    for p in params.values():
        p.grad = None
    return (worst, details) if return_details else worst
