"""Registry of feature-to-decoder connector variants.

Every connector maps an L x D_aux feature sequence to a fixed N_ctx x
D_model block of context rows. The full shared-bank adapter is the default;
the others are ablation baselines that replace attention or sharing with
simpler machinery while keeping parameter budgets comparable.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .errors import EmptyContextError, RegistryError, ShapeError
from .sma import MemoryBank, SmaInstance, TEXT_ROLES, cross_attention

CONNECTOR_NAMES = ("mlp", "mlp_qformer", "sma_msa", "sma_unshared", "sma")


def _chunk_pool(f_aux: torch.Tensor, n_ctx: int) -> torch.Tensor:
    """Mean-pool L rows into n_ctx contiguous chunks (nearest row when L < n_ctx)."""
    l = f_aux.shape[0]
    rows = []
    for i in range(n_ctx):
        start = min(i * l // n_ctx, l - 1)
        end = max((i + 1) * l // n_ctx, start + 1)
        rows.append(f_aux[start:end].mean(dim=0))
    return torch.stack(rows)


class ConnectorBase(nn.Module):
    """Shared plumbing: 3-layer output MLP, final LayerNorm, empty-input sentinel."""

    def __init__(self, role: str, d_aux: int, d_model: int, n_ctx: int, d_mix: int):
        super().__init__()
        self.role = role
        self.d_aux = d_aux
        self.d_model = d_model
        self.n_ctx = n_ctx
        hidden = 2 * d_model
        self.fc1 = nn.Linear(d_mix, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, d_model)
        self.ln = nn.LayerNorm(d_model)
        if role in TEXT_ROLES:
            self.sentinel = nn.Parameter(torch.randn(1, d_aux) * 0.02)

    def _mix(self, f_aux: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def _finish(self, mixed: torch.Tensor) -> torch.Tensor:
        x = F.gelu(self.fc1(mixed))
        x = F.gelu(self.fc2(x))
        return self.ln(self.fc3(x))

    def forward(self, f_aux: torch.Tensor) -> torch.Tensor:
        if f_aux.ndim != 2 or f_aux.shape[-1] != self.d_aux:
            raise ShapeError(
                f"{self.role} connector expects L x {self.d_aux}, got {tuple(f_aux.shape)}"
            )
        if f_aux.shape[0] == 0:
            if self.role not in TEXT_ROLES:
                raise EmptyContextError(f"{self.role} connector received an empty sequence")
            f_aux = self.sentinel
        return self._finish(self._mix(f_aux))

    def forward_batched(self, keys: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        # generic per-sample fallback; the full adapter overrides with batched math
        return torch.stack([self(keys[i][key_mask[i]]) for i in range(keys.shape[0])])


class MlpConnector(ConnectorBase):
    """Chunked mean pooling to n_ctx rows, then the output MLP."""

    def __init__(self, role: str, d_aux: int, d_model: int, n_ctx: int):
        super().__init__(role, d_aux, d_model, n_ctx, d_mix=d_aux)

    def _mix(self, f_aux: torch.Tensor) -> torch.Tensor:
        return _chunk_pool(f_aux, self.n_ctx)


class QFormerConnector(ConnectorBase):
    """Per-instance learned queries contextualized jointly with the input."""

    def __init__(self, role: str, d_aux: int, d_model: int, n_ctx: int, heads: int):
        super().__init__(role, d_aux, d_model, n_ctx, d_mix=d_aux)
        self.queries = nn.Parameter(torch.randn(n_ctx, d_aux) / d_aux**0.5)
        self.ln_in = nn.LayerNorm(d_aux)
        self.attn_wq = nn.Linear(d_aux, d_aux)
        self.attn_wk = nn.Linear(d_aux, d_aux)
        self.attn_wv = nn.Linear(d_aux, d_aux)
        self.attn_wo = nn.Linear(d_aux, d_aux)
        self.heads = heads

    def _mix(self, f_aux: torch.Tensor) -> torch.Tensor:
        x = self.ln_in(torch.cat([self.queries, f_aux], dim=0))
        n, h = x.shape[0], self.heads
        hd = x.shape[1] // h
        q = self.attn_wq(x).view(n, h, hd).transpose(0, 1)
        k = self.attn_wk(x).view(n, h, hd).transpose(0, 1)
        v = self.attn_wv(x).view(n, h, hd).transpose(0, 1)
        w = torch.softmax(q @ k.transpose(-2, -1) / hd**0.5, dim=-1)
        mixed = self.attn_wo((w @ v).transpose(0, 1).reshape(n, -1))
        return (x + mixed)[: self.n_ctx]


class PooledQueryAttention(ConnectorBase):
    """Cross-attention whose queries are pooled from the input (no learned bank)."""

    def __init__(self, role: str, d_aux: int, d_model: int, n_ctx: int, heads: int):
        super().__init__(role, d_aux, d_model, n_ctx, d_mix=d_aux)
        self.wq = nn.Linear(d_aux, d_aux)
        self.wk = nn.Linear(d_aux, d_aux)
        self.wv = nn.Linear(d_aux, d_aux)
        self.wo = nn.Linear(d_aux, d_aux)
        self.heads = heads

    def _mix(self, f_aux: torch.Tensor) -> torch.Tensor:
        pooled = _chunk_pool(f_aux, self.n_ctx)
        return cross_attention(pooled, f_aux, f_aux, self, self.heads)


class UnsharedSma(nn.Module):
    """The full adapter architecture with a private, per-instance bank."""

    def __init__(self, role: str, d_aux: int, d_bank: int, d_model: int,
                 n_mem: int, heads: int, bank_seed: int):
        super().__init__()
        self.own_bank = MemoryBank(n_mem, d_bank, seed=bank_seed)
        self.inst = SmaInstance(role, self.own_bank, d_aux, d_model, heads=heads)
        self.role = role
        self.n_ctx = n_mem

    def forward(self, f_aux: torch.Tensor) -> torch.Tensor:
        return self.inst(f_aux)

    def forward_batched(self, keys: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        return self.inst.forward_batched(keys, key_mask)


def build_connectors(
    name: str,
    d_v: int,
    d_t: int,
    d_model: int,
    n_mem: int,
    heads: int,
    bank_seed: int,
) -> tuple[dict[str, nn.Module], MemoryBank | None]:
    """Instantiate the three per-role connector modules for a variant.

    Returns ({"vision": ..., "ref_text": ..., "key_text": ...}, shared bank
    or None). Only the full variant has a model-level shared bank.
    """
    if name not in CONNECTOR_NAMES:
        raise RegistryError(
            f"unknown connector {name!r}; known: {', '.join(CONNECTOR_NAMES)}"
        )
    dims = {"vision": d_v, "ref_text": d_t, "key_text": d_t}
    if name == "mlp":
        return {r: MlpConnector(r, d, d_model, n_mem) for r, d in dims.items()}, None
    if name == "mlp_qformer":
        return (
            {r: QFormerConnector(r, d, d_model, n_mem, heads) for r, d in dims.items()},
            None,
        )
    if name == "sma_msa":
        return (
            {r: PooledQueryAttention(r, d, d_model, n_mem, heads) for r, d in dims.items()},
            None,
        )
    if name == "sma_unshared":
        mods = {
            r: UnsharedSma(r, d, d_v, d_model, n_mem, heads, bank_seed + i)
            for i, (r, d) in enumerate(dims.items())
        }
        return mods, None
    bank = MemoryBank(n_mem, d_v, seed=bank_seed)
    if d_t != d_v:
        raise ShapeError(
            "the shared bank requires matching visual/text feature dims; "
            f"got D_v={d_v}, D_t={d_t}"
        )
    mods = {r: SmaInstance(r, bank, d, d_model, heads=heads) for r, d in dims.items()}
    return mods, bank


def connector_registry(name: str):
    """Validate a connector name and return its builder."""
    if name not in CONNECTOR_NAMES:
        raise RegistryError(
            f"unknown connector {name!r}; known: {', '.join(CONNECTOR_NAMES)}"
        )
    def builder(**kw):
        return build_connectors(name, **kw)
    builder.connector_name = name
    return builder
