"""Adam with decoupled weight decay, with name-addressable moment state."""

from __future__ import annotations

import torch


class AdamW:
    def __init__(self, named_params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = {n: p for n, p in named_params if p.requires_grad}
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self, lr: float):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for n, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[n], self.v[n]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            # decay is not applied to biases, gains or embeddings
            if self.weight_decay and n.endswith("weight"):
                p.mul_(1 - lr * self.weight_decay)
            denom = (v / c2).sqrt_().add_(self.eps)
            p.addcdiv_(m, denom, value=-lr / c1)

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out = {f"opt.m.{n}": t for n, t in self.m.items()}
        out.update({f"opt.v.{n}": t for n, t in self.v.items()})
        return out

    def load_state(self, tensors: dict[str, torch.Tensor], step: int) -> None:
        for n in self.params:
            self.m[n].copy_(tensors[f"opt.m.{n}"])
            self.v[n].copy_(tensors[f"opt.v.{n}"])
        self.step_count = int(step)

