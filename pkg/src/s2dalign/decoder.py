"""Prefix-conditioned autoregressive report decoder.

The decoder consumes a fixed-order prefix of context rows (vision, then
optional reference-report and key-phrase rows) followed by token embeddings.
Context rows attend only among themselves; token positions attend to the
full prefix plus earlier tokens. Positions are encoded on the token segment
only, relative to its start, so prefix length never shifts token geometry.

Low-rank adapters can wrap every linear layer of the transformer blocks so
the base weights stay frozen while the adapters train.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .catalog import SPECIALS
from .encoders import sinusoidal_positions
from .errors import (
    AsymmetryError,
    ConfigError,
    ContextError,
    ShapeError,
    TrainingError,
    VocabError,
)

PAD_ID, BOS_ID, EOS_ID = 0, 1, 2  # fixed by the vocab layout
assert len(SPECIALS) == 3


@dataclass
class Context:
    """The decoder prefix for one sample: rows plus their segment layout."""

    stage: int
    rows: torch.Tensor  # (n_vision + n_ref + n_key) x d_model
    segment_lengths: tuple[int, int, int]

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]


def build_context(
    stage: int,
    v_mem: torch.Tensor,
    r_mem: torch.Tensor | None = None,
    k_mem: torch.Tensor | None = None,
) -> Context:
    """Concatenate branch outputs along the sequence dimension, fixed order."""
    if stage not in (1, 2, 3):
        raise ContextError(f"stage must be 1..3, got {stage}")
    if stage >= 2 and r_mem is None:
        raise ContextError(f"stage {stage} context requires the reference branch")
    if stage == 3 and k_mem is None:
        raise ContextError("stage 3 context requires the key-phrase branch")
    if stage < 2 and r_mem is not None:
        raise ContextError("stage 1 context must not carry a reference branch")
    if stage < 3 and k_mem is not None:
        raise ContextError(f"stage {stage} context must not carry a key-phrase branch")
    parts = [v_mem]
    n_ref = n_key = 0
    if r_mem is not None:
        parts.append(r_mem)
        n_ref = r_mem.shape[0]
    if k_mem is not None:
        parts.append(k_mem)
        n_key = k_mem.shape[0]
    return Context(
        stage=stage,
        rows=torch.cat(parts, dim=0),
        segment_lengths=(v_mem.shape[0], n_ref, n_key),
    )


class AdaptedLinear(nn.Module):
    """A frozen linear layer plus a trainable low-rank bypass.

    The bypass is zero at initialization (up starts at zero), so wrapping
    never changes the forward pass until training moves the adapter.
    """

    def __init__(self, base: nn.Linear, r: int, alpha: float, dropout: float,
                 seed: int | None = None):
        super().__init__()
        d_out, d_in = base.weight.shape
        if r < 1:
            raise ConfigError(f"adapter rank must be >= 1, got {r}")
        if r > min(d_in, d_out):
            raise ConfigError(f"rank {r} exceeds min({d_in}, {d_out})")
        self.base = base
        self.scale = alpha / r
        self.drop = nn.Dropout(dropout)
        self.lora_down = nn.Linear(d_in, r, bias=False)
        self.lora_up = nn.Linear(r, d_out, bias=False)
        if seed is not None:
            gen = torch.Generator().manual_seed(seed)
            with torch.no_grad():
                self.lora_down.weight.copy_(
                    torch.randn(r, d_in, generator=gen) / math.sqrt(d_in)
                )
        with torch.no_grad():
            self.lora_up.weight.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * self.lora_up(self.lora_down(self.drop(x)))

    def merged_weight(self) -> torch.Tensor:
        return self.base.weight + self.scale * (self.lora_up.weight @ self.lora_down.weight)


def lora_wrap(layer: nn.Linear, r: int, alpha: float, dropout: float,
              seed: int | None = None) -> AdaptedLinear:
    return AdaptedLinear(layer, r, alpha, dropout, seed)


class CausalSelfAttention(nn.Module):
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

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        # x: (n, s, dim); attn_mask: (s, s) additive
        n, s, _ = x.shape
        def split(t):
            return t.view(n, s, self.heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores + attn_mask
        mixed = torch.softmax(scores, dim=-1) @ v
        return self.wo(mixed.transpose(1, 2).reshape(n, s, -1))


class DecoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), attn_mask)
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))

    def linear_layers(self) -> dict[str, nn.Linear]:
        return {
            "attn.wq": self.attn.wq,
            "attn.wk": self.attn.wk,
            "attn.wv": self.attn.wv,
            "attn.wo": self.attn.wo,
            "fc1": self.fc1,
            "fc2": self.fc2,
        }


def prefix_mask(n_ctx: int, n_tok: int, device=None, dtype=torch.float32) -> torch.Tensor:
    """Additive mask: context rows see context only; tokens see prefix + past."""
    s = n_ctx + n_tok
    allowed = torch.zeros(s, s, dtype=torch.bool, device=device)
    allowed[:n_ctx, :n_ctx] = True
    allowed[n_ctx:, :n_ctx] = True
    causal = torch.tril(torch.ones(n_tok, n_tok, dtype=torch.bool, device=device))
    allowed[n_ctx:, n_ctx:] = causal
    mask = torch.zeros(s, s, dtype=dtype, device=device)
    mask.masked_fill_(~allowed, float("-inf"))
    return mask


class DecoderModel(nn.Module):
    def __init__(self, vocab_size: int, d_model: int = 64, depth: int = 4,
                 heads: int = 4, seed: int | None = None):
        super().__init__()
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.embed = nn.Embedding(vocab_size, d_model)
        with torch.no_grad():
            self.embed.weight.normal_(0.0, 0.02)
        self.blocks = nn.ModuleList(DecoderBlock(d_model, heads) for _ in range(depth))
        self.ln_f = nn.LayerNorm(d_model)
        self.head = nn.Linear(d_model, vocab_size)
        if seed is not None:
            # self-seeded init: identical weights no matter what consumed the
            # global RNG beforehand, so warm starts are reusable across variants
            gen = torch.Generator().manual_seed(seed)
            with torch.no_grad():
                for name, p in self.named_parameters():
                    if name == "embed.weight":
                        p.normal_(0.0, 0.02, generator=gen)
                    elif p.ndim >= 2:
                        p.copy_(torch.randn(p.shape, generator=gen) / math.sqrt(p.shape[-1]))
                    elif name.endswith(".weight"):
                        p.fill_(1.0)
                    else:
                        p.zero_()

    # -- adapters ----------------------------------------------------------
    def apply_lora(self, r: int, alpha: float, dropout: float, seed: int = 0) -> None:
        for b, block in enumerate(self.blocks):
            for i, (name, layer) in enumerate(sorted(block.linear_layers().items())):
                adapted = lora_wrap(layer, r, alpha, dropout, seed=seed + 97 * b + i)
                parent = block.attn if name.startswith("attn.") else block
                setattr(parent, name.split(".")[-1], adapted)

    def has_lora(self) -> bool:
        return any(isinstance(m, AdaptedLinear) for m in self.modules())

    # -- forward -----------------------------------------------------------
    def forward(self, context_rows: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """Logits for each token position.

        ``context_rows`` is (C, D) or (N, C, D); ``tokens`` is (T,) or (N, T)
        of ids starting with BOS. Returns (T, V) or (N, T, V).
        """
        single = tokens.ndim == 1
        if single:
            tokens = tokens[None]
            context_rows = context_rows[None]
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise VocabError(f"token id outside vocab of size {self.vocab_size}")
        n, t = tokens.shape
        c = context_rows.shape[1]
        tok = self.embed(tokens)
        tok = tok + sinusoidal_positions(t, self.d_model, device=tok.device).to(tok.dtype)
        x = torch.cat([context_rows.to(tok.dtype), tok], dim=1)
        mask = prefix_mask(c, t, device=x.device, dtype=x.dtype)
        for block in self.blocks:
            x = block(x, mask)
        logits = self.head(self.ln_f(x[:, c:]))
        return logits[0] if single else logits


def decoder_forward(model: DecoderModel, context: Context, tokens) -> torch.Tensor:
    ids = torch.as_tensor(tokens, dtype=torch.long)
    if ids.ndim != 1 or ids.numel() == 0 or int(ids[0]) != BOS_ID:
        raise ShapeError("token sequence must be 1-D and begin with BOS")
    return model(context.rows, ids)


def loss_ce(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood in nats over non-PAD targets."""
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(
            f"logits rows {tuple(logits.shape[:-1])} != targets {tuple(targets.shape)}"
        )
    if int((targets != PAD_ID).sum()) == 0:
        raise TrainingError("loss over all-PAD targets is undefined")
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
        ignore_index=PAD_ID, reduction="mean",
    )


# ---------------------------------------------------------------------------
# generation


def _check_inference_context(context: Context) -> None:
    if context.stage != 1:
        raise AsymmetryError(
            "generation is conditioned on the vision context alone; "
            f"got a stage-{context.stage} context"
        )
    if context.segment_lengths[1] or context.segment_lengths[2]:
        raise AsymmetryError("inference context carries auxiliary rows")


def generate(
    model: DecoderModel,
    context: Context,
    max_len: int = 64,
    mode: str = "greedy",
    beam_width: int = 3,
) -> tuple[list[int], bool]:
    """Decode a report from a stage-1 context.

    Returns (token ids including the closing EOS when produced, truncated
    flag set when max_len was hit first).
    """
    _check_inference_context(context)
    if mode == "greedy":
        out, done = _generate_greedy_batch(model, context.rows[None], max_len)
        return out[0], not done[0]
    if mode == "beam":
        return _generate_beam(model, context, max_len, beam_width)
    raise ConfigError(f"unknown decoding mode {mode!r}")


def generate_batch(
    model: DecoderModel, contexts: torch.Tensor, max_len: int = 64
) -> list[list[int]]:
    """Greedy decoding for a batch of stage-1 context row tensors (N, C, D)."""
    out, _ = _generate_greedy_batch(model, contexts, max_len)
    return out


@torch.no_grad()
def _generate_greedy_batch(model, contexts, max_len):
    was_training = model.training
    model.eval()
    try:
        n = contexts.shape[0]
        tokens = torch.full((n, 1), BOS_ID, dtype=torch.long)
        finished = torch.zeros(n, dtype=torch.bool)
        for _ in range(max_len):
            logits = model(contexts, tokens)
            nxt = logits[:, -1].argmax(dim=-1)
            nxt = torch.where(finished, torch.full_like(nxt, PAD_ID), nxt)
            tokens = torch.cat([tokens, nxt[:, None]], dim=1)
            finished |= nxt == EOS_ID
            if bool(finished.all()):
                break
        outs = []
        for row in tokens[:, 1:].tolist():
            ids = []
            for tid in row:
                if tid == PAD_ID:
                    break
                ids.append(tid)
                if tid == EOS_ID:
                    break
            outs.append(ids)
        return outs, finished.tolist()
    finally:
        model.train(was_training)


@torch.no_grad()
def _generate_beam(model, context, max_len, width):
    was_training = model.training
    model.eval()
    try:
        beams = [([BOS_ID], 0.0)]  # (ids, total logprob)
        complete: list[tuple[list[int], float]] = []
        for _ in range(max_len):
            expansions = []
            for ids, score in beams:
                logits = model(context.rows, torch.tensor(ids, dtype=torch.long))
                logprobs = F.log_softmax(logits[-1], dim=-1)
                top = torch.topk(logprobs, width)
                for lp, tid in zip(top.values.tolist(), top.indices.tolist()):
                    expansions.append((ids + [tid], score + lp))
            expansions.sort(key=lambda e: (-e[1], e[0]))
            beams = []
            for ids, score in expansions:
                if ids[-1] == EOS_ID:
                    complete.append((ids, score))
                else:
                    beams.append((ids, score))
                if len(beams) == width:
                    break
            if not beams:
                break
            # total logprob only falls as a hypothesis extends, so once the
            # best finished candidate matches the best open beam nothing
            # still open can overtake it
            if complete and max(s for _, s in complete) >= beams[0][1]:
                break
        if complete:
            best = max(complete, key=lambda e: e[1])
            return best[0][1:], False
        best = max(beams, key=lambda e: e[1])
        return best[0][1:], True
    finally:
        model.train(was_training)


# ---------------------------------------------------------------------------
# base-LM provisioning


def warm_start_lm(
    model: DecoderModel,
    reports: list[list[int]],
    steps: int = 300,
    lr: float = 3e-3,
    batch_size: int = 16,
    seed: int = 0,
) -> float:
    """Brief next-token pretraining on raw reports, no context rows.

    The decoder stands in for a pre-trained language model: its base weights
    must already speak the report language before any adapter training, else
    gradients through the frozen stack cannot shape generation. Returns the
    final batch loss. Callers freeze the model afterwards.
    """
    if not reports:
        raise TrainingError("warm start needs at least one report")
    rng = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    empty_ctx = torch.zeros(0, model.d_model)
    seqs = [torch.tensor([BOS_ID] + r, dtype=torch.long) for r in reports]
    last = float("nan")
    model.train()
    for _ in range(steps):
        picks = torch.randint(len(seqs), (min(batch_size, len(seqs)),), generator=rng)
        batch = [seqs[int(i)] for i in picks]
        t_max = max(len(s) for s in batch)
        inputs = torch.full((len(batch), t_max - 1), PAD_ID, dtype=torch.long)
        targets = torch.full((len(batch), t_max - 1), PAD_ID, dtype=torch.long)
        for i, s in enumerate(batch):
            inputs[i, : len(s) - 1] = s[:-1]
            targets[i, : len(s) - 1] = s[1:]
        ctx = empty_ctx[None].expand(len(batch), 0, model.d_model)
        loss = loss_ce(model(ctx, inputs), targets)
        opt.zero_grad()
        loss.backward()
        opt.step()
        last = float(loss.detach())
    model.eval()
    return last


def freeze_base(model: DecoderModel) -> None:
    """Freeze everything except adapter factors."""
    for name, param in model.named_parameters():
        param.requires_grad_(".lora_" in name)
