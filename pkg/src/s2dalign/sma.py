"""Memory-query adapters that distill variable-length features.

A single learnable query bank is shared by identity across per-modality
adapter instances (vision, reference text, key-phrase text). Each instance
cross-attends the bank against its auxiliary features, then maps the result
to the decoder width through a 3-layer MLP and a final LayerNorm. Output
length is always the bank size, whatever the input length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, EmptyContextError, ShapeError

ROLES = ("vision", "ref_text", "key_text")
TEXT_ROLES = ("ref_text", "key_text")


class MemoryBank(nn.Module):
    """The shared query matrix. Exactly one per model; instances alias it."""

    def __init__(self, n_mem: int, dim: int, seed: int = 0):
        super().__init__()
        if n_mem < 1 or dim < 1:
            raise ConfigError(f"bank sizes must be positive, got ({n_mem}, {dim})")
        gen = torch.Generator().manual_seed(seed)
        q = torch.randn(n_mem, dim, generator=gen) / math.sqrt(dim)
        self.q_mem = nn.Parameter(q)

    @property
    def n_mem(self) -> int:
        return self.q_mem.shape[0]

    @property
    def dim(self) -> int:
        return self.q_mem.shape[1]


def init_memory(n_mem: int, d: int, seed: int = 0) -> MemoryBank:
    return MemoryBank(n_mem, d, seed)


@dataclass
class AttnParams:
    """Projection bundle for the functional attention op."""

    wq: nn.Linear
    wk: nn.Linear
    wv: nn.Linear
    wo: nn.Linear


def cross_attention(
    q_in: torch.Tensor,
    k_in: torch.Tensor,
    v_in: torch.Tensor,
    params,
    heads: int,
    return_weights: bool = False,
):
    """Scaled-dot-product multi-head cross-attention, one sample.

    ``q_in`` is A x D_q, ``k_in``/``v_in`` are B x D_k; the result is A x D_q.
    ``params`` provides wq/wk/wv/wo projections (wq, wo live in D_q; wk, wv
    map D_k into D_q).
    """
    if k_in.shape[0] == 0:
        raise EmptyContextError("cross-attention needs at least one key row")
    if k_in.shape != v_in.shape:
        raise ShapeError(f"key/value shape mismatch: {k_in.shape} vs {v_in.shape}")
    a = q_in.shape[0]
    b = k_in.shape[0]
    d_inner = params.wq.out_features
    if d_inner % heads:
        raise ShapeError(f"attention dim {d_inner} not divisible by {heads} heads")
    head_dim = d_inner // heads

    def split(t, n):  # (n, d_inner) -> (heads, n, head_dim)
        return t.view(n, heads, head_dim).transpose(0, 1)

    q = split(params.wq(q_in), a)
    k = split(params.wk(k_in), b)
    v = split(params.wv(v_in), b)
    weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(head_dim), dim=-1)
    out = params.wo((weights @ v).transpose(0, 1).reshape(a, d_inner))
    if return_weights:
        return out, weights
    return out


def cross_attention_batched(
    q_in: torch.Tensor,
    keys: torch.Tensor,
    key_mask: torch.Tensor,
    params,
    heads: int,
) -> torch.Tensor:
    """Batched variant over padded keys: (N, B_max, D_k) with a validity mask.

    Matches per-sample ``cross_attention`` on each batch item. Every item
    must have at least one valid key.
    """
    n, b_max, _ = keys.shape
    if key_mask.shape != (n, b_max):
        raise ShapeError(f"mask shape {tuple(key_mask.shape)} != ({n}, {b_max})")
    if not bool(key_mask.any(dim=1).all()):
        raise EmptyContextError("a batch item has no valid key rows")
    a = q_in.shape[0]
    d_inner = params.wq.out_features
    head_dim = d_inner // heads
    q = params.wq(q_in).view(a, heads, head_dim).permute(1, 0, 2)  # (h, a, hd)
    k = params.wk(keys).view(n, b_max, heads, head_dim).permute(0, 2, 1, 3)
    v = params.wv(keys).view(n, b_max, heads, head_dim).permute(0, 2, 1, 3)
    scores = q.unsqueeze(0) @ k.transpose(-2, -1) / math.sqrt(head_dim)  # (n, h, a, b)
    scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
    mixed = torch.softmax(scores, dim=-1) @ v  # (n, h, a, hd)
    return params.wo(mixed.permute(0, 2, 1, 3).reshape(n, a, d_inner))


class SmaInstance(nn.Module):
    """One per-modality adapter; shares the bank, owns everything else.

    Text-role instances carry a learned sentinel row that stands in for an
    empty auxiliary sequence (a study with no key phrases, for example).
    """

    def __init__(self, role: str, bank: MemoryBank, d_aux: int, d_model: int,
                 heads: int = 8):
        super().__init__()
        if role not in ROLES:
            raise ConfigError(f"unknown adapter role {role!r}")
        d_bank = bank.dim
        if d_bank % heads:
            raise ConfigError(f"bank dim {d_bank} not divisible by {heads} heads")
        self.role = role
        self.heads = heads
        self.d_aux = d_aux
        self.d_model = d_model
        self.wq = nn.Linear(d_bank, d_bank)
        self.wk = nn.Linear(d_aux, d_bank)
        self.wv = nn.Linear(d_aux, d_bank)
        self.wo = nn.Linear(d_bank, d_bank)
        hidden = 2 * d_model
        self.fc1 = nn.Linear(d_bank, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, d_model)
        self.ln = nn.LayerNorm(d_model)
        if role in TEXT_ROLES:
            self.sentinel = nn.Parameter(torch.randn(1, d_aux) * 0.02)
        # plain attribute on purpose: the bank is registered once on the
        # owning model, never duplicated into each instance's parameter tree
        object.__setattr__(self, "_bank", bank)

    @property
    def bank(self) -> MemoryBank:
        return self._bank

    def _mlp(self, x: torch.Tensor) -> torch.Tensor:
        x = torch.nn.functional.gelu(self.fc1(x))
        x = torch.nn.functional.gelu(self.fc2(x))
        return self.fc3(x)

    def _aux_or_sentinel(self, f_aux: torch.Tensor) -> torch.Tensor:
        if f_aux.shape[0] > 0:
            return f_aux
        if self.role in TEXT_ROLES:
            return self.sentinel
        raise EmptyContextError(f"{self.role} adapter received an empty sequence")

    def forward(self, f_aux: torch.Tensor) -> torch.Tensor:
        if f_aux.ndim != 2 or f_aux.shape[-1] != self.d_aux:
            raise ShapeError(
                f"{self.role} adapter expects L x {self.d_aux}, got {tuple(f_aux.shape)}"
            )
        f_aux = self._aux_or_sentinel(f_aux)
        mixed = cross_attention(self._bank.q_mem, f_aux, f_aux, self, self.heads)
        return self.ln(self._mlp(mixed))

    def forward_batched(self, keys: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        """(N, L_max, d_aux) + mask -> (N, n_mem, d_model)."""
        if keys.shape[-1] != self.d_aux:
            raise ShapeError(
                f"{self.role} adapter expects keys ending in {self.d_aux}, "
                f"got {tuple(keys.shape)}"
            )
        empty = ~key_mask.any(dim=1)
        if bool(empty.any()):
            if self.role not in TEXT_ROLES:
                raise EmptyContextError(f"{self.role} adapter received an empty sequence")
            keys = keys.clone()
            keys[empty, 0] = self.sentinel[0].to(keys.dtype)
            key_mask = key_mask.clone()
            key_mask[empty, 0] = True
        mixed = cross_attention_batched(self._bank.q_mem, keys, key_mask, self, self.heads)
        return self.ln(self._mlp(mixed))


def sma_forward(inst: SmaInstance, f_aux: torch.Tensor) -> torch.Tensor:
    return inst(f_aux)
