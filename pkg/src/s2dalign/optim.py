"""Decoupled-weight-decay Adam with a warmup-plus-cosine schedule.

Written out explicitly (rather than wrapping a library optimizer) so the
update rule, the decay exemption list, and the schedule are all pinned by
unit oracles and serialize cleanly into checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass
class OptimizerProfile:
    lr: float
    epochs: int
    warmup_steps: int = 100
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")


def lr_schedule(step: int, peak: float, warmup: int, total: int) -> float:
    """Learning rate at 1-based ``step``: linear warmup, cosine decay to zero."""
    if step < 1:
        raise ConfigError(f"step counts from 1, got {step}")
    if warmup > 0 and step <= warmup:
        return peak * step / warmup
    if total <= warmup or step >= total:
        return 0.0
    frac = (step - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


def decay_exemptions(model: nn.Module) -> set[str]:
    """Parameter paths exempt from weight decay.

    Normalization gains/biases, all biases, and memory-bank queries (they
    behave like embeddings, which conventionally go undecayed).
    """
    exempt: set[str] = set()
    for mod_path, module in model.named_modules():
        if isinstance(module, nn.LayerNorm):
            for pname, _ in module.named_parameters(recurse=False):
                exempt.add(f"{mod_path}.{pname}" if mod_path else pname)
    for path, _ in model.named_parameters():
        if path.endswith(".bias") or path.endswith("q_mem"):
            exempt.add(path)
    return exempt


def optimizer_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamWState,
    lr: float,
    profile: OptimizerProfile,
    exempt: set[str] = frozenset(),
) -> AdamWState:
    """One in-place update over named parameters; returns the advanced state."""
    state.step += 1
    t = state.step
    b1, b2 = profile.beta1, profile.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ShapeError(f"{name}: grad shape {tuple(g.shape)} != {tuple(p.shape)}")
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m, v = state.m[name], state.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            if name not in exempt and profile.weight_decay:
                p.add_(p, alpha=-lr * profile.weight_decay)
            denom = (v / bias2).sqrt_().add_(profile.eps)
            p.addcdiv_(m / bias1, denom, value=-lr)
    return state


class StagedOptimizer:
    """Thin loop-facing wrapper: tracks steps, applies the schedule."""

    def __init__(self, named_params: dict[str, torch.Tensor],
                 profile: OptimizerProfile, total_steps: int,
                 exempt: set[str] = frozenset()):
        profile.validate()
        self.params = dict(named_params)
        self.profile = profile
        self.total_steps = total_steps
        self.exempt = set(exempt) & set(named_params)
        self.state = AdamWState()

    @property
    def lr(self) -> float:
        return lr_schedule(self.state.step + 1, self.profile.lr,
                           self.profile.warmup_steps, self.total_steps)

    def step(self) -> float:
        lr = self.lr
        grads = {
            name: p.grad for name, p in self.params.items() if p.grad is not None
        }
        optimizer_step(self.params, grads, self.state, lr, self.profile, self.exempt)
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
