"""Frozen feature extractors for images and token sequences.

Both encoders are tiny pre-LN transformers with deterministically seeded
weights, frozen at construction. They stand in for large pre-trained
encoders: the training pipeline only needs a fixed, position-aware feature
space, not good features. Outputs are sequences (no pooling); downstream
adapters do the distillation.
"""

from __future__ import annotations

import hashlib
import math

import torch
from torch import nn

from .errors import ShapeError, VocabError


def sinusoidal_positions(length: int, dim: int, device=None) -> torch.Tensor:
    """The classic fixed sin/cos position table, shape (length, dim)."""
    pos = torch.arange(length, dtype=torch.float32, device=device)[:, None]
    half = torch.arange(0, dim, 2, dtype=torch.float32, device=device)
    freq = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(length, dim, device=device)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return table


class SelfAttention(nn.Module):
    """Bidirectional multi-head self-attention with explicit projections."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = nn.Linear(dim, dim)
        self.wk = nn.Linear(dim, dim)
        self.wv = nn.Linear(dim, dim)
        self.wo = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, _ = x.shape
        def split(t):  # (n, dim) -> (heads, n, head_dim)
            return t.view(n, self.heads, self.head_dim).transpose(0, 1)
        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        mixed = torch.softmax(scores, dim=-1) @ v
        return self.wo(mixed.transpose(0, 1).reshape(n, -1))


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


def _seed_and_freeze(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if param.ndim >= 2:
                fan_in = param.shape[-1]
                param.copy_(torch.randn(param.shape, generator=gen) / math.sqrt(fan_in))
            elif name.endswith(".weight"):  # LayerNorm gain
                param.fill_(1.0)
            else:
                param.zero_()
    for param in module.parameters():
        param.requires_grad_(False)
    module.eval()


def fingerprint(module: nn.Module) -> str:
    """SHA-256 over all parameter bytes, in name order."""
    digest = hashlib.sha256()
    for name, param in sorted(module.named_parameters()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().to(torch.float32).numpy().tobytes())
    return digest.hexdigest()


class VisualEncoder(nn.Module):
    """Patchify, embed, contextualize. Output (H/P * W/P) x dim."""

    def __init__(self, patch_size: int = 8, dim: int = 64, depth: int = 2,
                 heads: int = 4, channels: int = 1, seed: int = 101):
        super().__init__()
        self.patch_size = patch_size
        self.dim = dim
        self.channels = channels
        self.patch_proj = nn.Linear(patch_size * patch_size * channels, dim)
        self.blocks = nn.ModuleList(EncoderBlock(dim, heads) for _ in range(depth))
        self.ln_out = nn.LayerNorm(dim)
        _seed_and_freeze(self, seed)

    def patchify(self, image: torch.Tensor) -> torch.Tensor:
        h, w, c = image.shape
        p = self.patch_size
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        patches = image.view(h // p, p, w // p, p, c).permute(0, 2, 1, 3, 4)
        return patches.reshape((h // p) * (w // p), p * p * c)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = self.patch_proj(self.patchify(image))
        x = x + sinusoidal_positions(x.shape[0], self.dim, device=x.device)
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


class TextEncoder(nn.Module):
    """Bidirectional token encoder. Output L x dim, zero rows for L = 0."""

    def __init__(self, vocab_size: int, dim: int = 64, depth: int = 2,
                 heads: int = 4, seed: int = 202):
        super().__init__()
        self.vocab_size = vocab_size
        self.dim = dim
        self.embed = nn.Embedding(vocab_size, dim)
        self.blocks = nn.ModuleList(EncoderBlock(dim, heads) for _ in range(depth))
        self.ln_out = nn.LayerNorm(dim)
        _seed_and_freeze(self, seed)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() == 0:
            return torch.zeros(0, self.dim)
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise VocabError(
                f"token id outside vocab of size {self.vocab_size}: "
                f"range [{int(ids.min())}, {int(ids.max())}]"
            )
        x = self.embed(ids)
        x = x + sinusoidal_positions(x.shape[0], self.dim, device=x.device)
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


def encode_image(enc: VisualEncoder, image) -> torch.Tensor:
    """Feature rows for an H x W x C image array (row-major patch order)."""
    tensor = torch.as_tensor(image, dtype=torch.float32)
    if tensor.ndim != 3:
        raise ShapeError(f"image must be HxWxC, got shape {tuple(tensor.shape)}")
    with torch.no_grad():
        return enc(tensor)


def encode_text(enc: TextEncoder, ids) -> torch.Tensor:
    """Feature rows for a token-id sequence; empty input gives a 0 x D matrix."""
    tensor = torch.as_tensor(list(ids) if not torch.is_tensor(ids) else ids,
                             dtype=torch.long)
    if tensor.ndim != 1:
        raise ShapeError(f"token ids must be a flat sequence, got {tuple(tensor.shape)}")
    with torch.no_grad():
        return enc(tensor)
