"""Full report-generation model: encoders, connectors, decoder.

Also home of the parameter-namespace scheme used by checkpoints and the
stage-wise freeze machinery. Every parameter maps to exactly one namespace:

    enc_v/*  enc_t/*          frozen feature extractors
    bank/q_mem                the shared memory bank (full connector only)
    sma_v/*  sma_t/*  sma_p/* per-role connector parameters
    dec/embed/*               decoder token embedding
    dec/lora/*                adapter factors
    dec/base/*                everything else in the decoder
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch
from torch import nn

from .connectors import build_connectors
from .corpusio import CorpusSplit
from .decoder import DecoderModel, warm_start_lm
from .encoders import TextEncoder, VisualEncoder
from .errors import ConfigError

NAMESPACES = (
    "enc_v", "enc_t", "bank", "sma_v", "sma_t", "sma_p",
    "dec/embed", "dec/lora", "dec/base",
)

_ROLE_ATTRS = {"vision": "sma_v", "ref_text": "sma_t", "key_text": "sma_p"}


@dataclass
class ModelConfig:
    d_model: int = 64
    d_v: int = 64
    d_t: int = 64
    n_mem: int = 16
    depth: int = 4
    heads: int = 4
    enc_depth: int = 2
    enc_heads: int = 4
    sma_heads: int = 8
    connector: str = "sma"
    lora_r: int = 4
    lora_alpha: float = 8.0
    lora_dropout: float = 0.1
    warm_start_steps: int = 300
    warm_start_lr: float = 3e-3
    enc_v_seed: int = 101
    enc_t_seed: int = 202
    bank_seed: int = 7

    def validate(self) -> None:
        positive = (
            "d_model", "d_v", "d_t", "n_mem", "depth", "heads",
            "enc_depth", "enc_heads", "sma_heads", "lora_r",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.d_v % self.sma_heads:
            raise ConfigError(f"d_v {self.d_v} not divisible by {self.sma_heads} heads")
        if not (0.0 <= self.lora_dropout < 1.0):
            raise ConfigError(f"lora_dropout must be in [0, 1), got {self.lora_dropout}")


def decoder_init_seed(run_seed: int) -> int:
    """Derived seed for the decoder's self-contained initialization."""
    return run_seed * 7919 + 13


class ReportModel(nn.Module):
    """Everything needed to train and evaluate one variant."""

    def __init__(self, config: ModelConfig, vocab_size: int, dec_seed: int | None = None):
        super().__init__()
        config.validate()
        self.config = config
        self.enc_v = VisualEncoder(
            patch_size=8, dim=config.d_v, depth=config.enc_depth,
            heads=config.enc_heads, seed=config.enc_v_seed,
        )
        self.enc_t = TextEncoder(
            vocab_size=vocab_size, dim=config.d_t, depth=config.enc_depth,
            heads=config.enc_heads, seed=config.enc_t_seed,
        )
        mods, bank = build_connectors(
            config.connector, d_v=config.d_v, d_t=config.d_t,
            d_model=config.d_model, n_mem=config.n_mem,
            heads=config.sma_heads, bank_seed=config.bank_seed,
        )
        self.bank = bank  # None for bankless connectors; registered once here
        self.sma_v = mods["vision"]
        self.sma_t = mods["ref_text"]
        self.sma_p = mods["key_text"]
        self.dec = DecoderModel(
            vocab_size=vocab_size, d_model=config.d_model,
            depth=config.depth, heads=config.heads, seed=dec_seed,
        )

    @property
    def n_mem(self) -> int:
        return self.config.n_mem

    def connector_for(self, role: str) -> nn.Module:
        return getattr(self, _ROLE_ATTRS[role])


# ---------------------------------------------------------------------------
# namespaces


def namespace_of(param_path: str) -> str:
    """Map a torch parameter path to its checkpoint namespace."""
    head = param_path.split(".", 1)[0]
    if head in ("enc_v", "enc_t", "bank", "sma_v", "sma_t", "sma_p"):
        return head
    if head == "dec":
        if param_path.startswith("dec.embed."):
            return "dec/embed"
        if ".lora_" in param_path:
            return "dec/lora"
        return "dec/base"
    raise ConfigError(f"parameter path {param_path!r} outside the namespace scheme")


def entry_name(param_path: str) -> str:
    """Checkpoint entry name for a parameter path."""
    ns = namespace_of(param_path)
    sub = param_path.split(".", 1)[1]
    if ns == "dec/embed":
        sub = sub[len("embed."):]
    return f"{ns}/{sub}"


def state_entries(model: nn.Module) -> dict[str, torch.Tensor]:
    """All parameters keyed by checkpoint entry name."""
    out: dict[str, torch.Tensor] = {}
    for path, param in model.named_parameters():
        name = entry_name(path)
        if name in out:
            raise ConfigError(f"duplicate checkpoint entry {name!r}")
        out[name] = param
    return out


def namespace_params(model: nn.Module) -> dict[str, dict[str, torch.Tensor]]:
    grouped: dict[str, dict[str, torch.Tensor]] = {ns: {} for ns in NAMESPACES}
    for path, param in model.named_parameters():
        grouped[namespace_of(path)][path] = param
    return grouped


def namespace_fingerprints(model: nn.Module) -> dict[str, str]:
    """Per-namespace SHA-256 over parameter bytes (name-sorted)."""
    digests = {ns: hashlib.sha256() for ns in NAMESPACES}
    for path, param in sorted(model.named_parameters()):
        d = digests[namespace_of(path)]
        d.update(path.encode())
        d.update(param.detach().cpu().contiguous().to(torch.float32).numpy().tobytes())
    return {ns: d.hexdigest() for ns, d in digests.items()}


def set_trainable(model: nn.Module, namespaces: set[str]) -> list[str]:
    """Freeze everything outside the given namespaces; returns trainable paths."""
    unknown = namespaces - set(NAMESPACES)
    if unknown:
        raise ConfigError(f"unknown namespaces in selector: {sorted(unknown)}")
    frozen_only = {ns for ns in namespaces if ns.startswith("enc_")}
    if frozen_only:
        raise ConfigError(f"encoders are frozen by contract: {sorted(frozen_only)}")
    trainable = []
    for path, param in model.named_parameters():
        on = namespace_of(path) in namespaces
        param.requires_grad_(on)
        if on:
            trainable.append(path)
    return trainable


def trainable_parameters(model: nn.Module) -> list[torch.Tensor]:
    return [p for p in model.parameters() if p.requires_grad]


# ---------------------------------------------------------------------------
# construction


def build_model(
    config: ModelConfig,
    corpus: CorpusSplit,
    seed: int,
    warm_start: bool = True,
    warm_state: dict[str, torch.Tensor] | None = None,
) -> ReportModel:
    """Assemble a model against a corpus vocabulary.

    The decoder is briefly pretrained as a plain language model on the train
    split and then frozen, standing in for a pre-trained report-fluent LLM;
    adapters are attached afterwards so they wrap the warmed weights.
    ``warm_state`` short-circuits the pretraining with a cached state dict
    (it must come from an identical config + corpus + seed).
    """
    torch.manual_seed(seed)
    model = ReportModel(config, vocab_size=len(corpus.vocab),
                        dec_seed=decoder_init_seed(seed))
    if warm_state is not None:
        model.dec.load_state_dict(warm_state)
    elif warm_start:
        reports = [corpus.vocab.encode(s.report) for s in corpus.train]
        warm_start_lm(
            model.dec, reports, steps=config.warm_start_steps,
            lr=config.warm_start_lr, seed=seed,
        )
    for param in model.dec.parameters():
        param.requires_grad_(False)
    model.dec.apply_lora(
        config.lora_r, config.lora_alpha, config.lora_dropout, seed=seed + 1,
    )
    return model
