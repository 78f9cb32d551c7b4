from __future__ import annotations

import pytest
import torch

from s2dalign.errors import ConfigError
from s2dalign.model import (
    NAMESPACES,
    ModelConfig,
    ReportModel,
    build_model,
    decoder_init_seed,
    entry_name,
    namespace_fingerprints,
    namespace_of,
    namespace_params,
    set_trainable,
    state_entries,
    trainable_parameters,
)


@pytest.fixture(scope="module")
def small_config():
    return ModelConfig(
        d_model=16, d_v=16, d_t=16, n_mem=4, depth=2, heads=2,
        enc_depth=1, enc_heads=2, sma_heads=2, lora_r=2,
        warm_start_steps=10,
    )


@pytest.fixture(scope="module")
def small_model(small_config, tiny_corpus):
    return build_model(small_config, tiny_corpus, seed=3, warm_start=False)


def test_namespace_of_known_paths():
    cases = {
        "enc_v.blocks.0.fc1.weight": "enc_v",
        "enc_t.embed.weight": "enc_t",
        "bank.q_mem": "bank",
        "sma_v.wq.weight": "sma_v",
        "sma_t.fc3.bias": "sma_t",
        "sma_p.sentinel": "sma_p",
        "dec.embed.weight": "dec/embed",
        "dec.blocks.0.attn.wq.base.weight": "dec/base",
        "dec.blocks.0.attn.wq.lora_down.weight": "dec/lora",
        "dec.head.bias": "dec/base",
        "dec.ln_f.weight": "dec/base",
    }
    for path, ns in cases.items():
        assert namespace_of(path) == ns, path
    with pytest.raises(ConfigError):
        namespace_of("mystery.weight")


def test_entry_name_layout():
    assert entry_name("dec.embed.weight") == "dec/embed/weight"
    assert (
        entry_name("dec.blocks.0.attn.wq.base.weight")
        == "dec/base/blocks.0.attn.wq.base.weight"
    )
    assert (
        entry_name("dec.blocks.1.fc1.lora_up.weight")
        == "dec/lora/blocks.1.fc1.lora_up.weight"
    )
    assert entry_name("sma_v.fc1.weight") == "sma_v/fc1.weight"
    assert entry_name("bank.q_mem") == "bank/q_mem"


def test_every_parameter_lands_in_a_namespace(small_model):
    seen = set()
    for path, _ in small_model.named_parameters():
        ns = namespace_of(path)
        assert ns in NAMESPACES
        seen.add(ns)
    assert seen == set(NAMESPACES)  # full variant populates all nine


def test_state_entries_unique_and_complete(small_model):
    entries = state_entries(small_model)
    params = dict(small_model.named_parameters())
    assert len(entries) == len(params)
    for path, param in params.items():
        assert entries[entry_name(path)] is param


def test_namespace_params_partition(small_model):
    grouped = namespace_params(small_model)
    total = sum(len(g) for g in grouped.values())
    assert total == len(list(small_model.named_parameters()))
    assert set(grouped["bank"]) == {"bank.q_mem"}
    assert all(".lora_" in p for p in grouped["dec/lora"])
    assert grouped["dec/lora"]  # adapters attached by build_model
    assert set(grouped["dec/embed"]) == {"dec.embed.weight"}


def test_set_trainable_matches_selector_exactly(small_model):
    chosen = {"sma_v", "bank"}
    paths = set_trainable(small_model, chosen)
    for path, param in small_model.named_parameters():
        assert param.requires_grad == (namespace_of(path) in chosen), path
    assert set(paths) == {
        p for p, _ in small_model.named_parameters()
        if namespace_of(p) in chosen
    }
    n_trainable = len(trainable_parameters(small_model))
    assert n_trainable == len(paths)


def test_set_trainable_rejects_unknown_and_encoders(small_model):
    with pytest.raises(ConfigError, match="unknown"):
        set_trainable(small_model, {"sma_v", "decoder"})
    with pytest.raises(ConfigError, match="frozen"):
        set_trainable(small_model, {"enc_v"})


def test_fingerprints_localize_changes(small_model):
    set_trainable(small_model, {"sma_t"})
    before = namespace_fingerprints(small_model)
    assert set(before) == set(NAMESPACES)
    target = next(small_model.sma_t.parameters())
    saved = target.detach().clone()
    with torch.no_grad():
        target.add_(0.25)
    after = namespace_fingerprints(small_model)
    assert after["sma_t"] != before["sma_t"]
    for ns in NAMESPACES:
        if ns != "sma_t":
            assert after[ns] == before[ns], ns
    with torch.no_grad():
        target.copy_(saved)
    assert namespace_fingerprints(small_model)["sma_t"] == before["sma_t"]


def test_build_model_is_seed_deterministic(small_config, tiny_corpus):
    a = build_model(small_config, tiny_corpus, seed=4, warm_start=False)
    torch.manual_seed(12345)  # global RNG noise must not matter
    torch.randn(100)
    b = build_model(small_config, tiny_corpus, seed=4, warm_start=False)
    c = build_model(small_config, tiny_corpus, seed=5, warm_start=False)
    assert namespace_fingerprints(a) == namespace_fingerprints(b)
    assert namespace_fingerprints(a) != namespace_fingerprints(c)


def test_build_model_freezes_decoder_base(small_config, tiny_corpus):
    model = build_model(small_config, tiny_corpus, seed=3, warm_start=False)
    for path, param in model.named_parameters():
        ns = namespace_of(path)
        if ns in ("dec/base", "dec/embed", "enc_v", "enc_t"):
            assert not param.requires_grad, path
        elif ns == "dec/lora":
            assert param.requires_grad, path


def test_warm_state_short_circuits_pretraining(small_config, tiny_corpus):
    full = build_model(small_config, tiny_corpus, seed=6)
    cached = {
        k: v.clone() for k, v in full.dec.state_dict().items()
        if ".lora_" not in k and not k.endswith(".base.weight")
        and not k.endswith(".base.bias")
    }
    # rebuild the pre-adapter names: AdaptedLinear stores base.* under the
    # original linear path, so strip the wrapper suffix back off
    plain = {
        k.replace(".base.weight", ".weight").replace(".base.bias", ".bias"): v
        for k, v in full.dec.state_dict().items() if ".lora_" not in k
    }
    reused = build_model(small_config, tiny_corpus, seed=6, warm_state=plain)
    fp_full = namespace_fingerprints(full)
    fp_reused = namespace_fingerprints(reused)
    assert fp_full == fp_reused
    assert cached  # sanity: the filter actually kept something


def test_shared_bank_registered_once(small_model):
    paths = [p for p, _ in small_model.named_parameters() if "q_mem" in p]
    assert paths == ["bank.q_mem"]
    assert small_model.sma_v._bank is small_model.bank
    assert small_model.sma_t._bank is small_model.bank
    assert small_model.connector_for("vision") is small_model.sma_v
    assert small_model.connector_for("ref_text") is small_model.sma_t
    assert small_model.connector_for("key_text") is small_model.sma_p


def test_bankless_variant_drops_bank_namespace(small_config, tiny_corpus):
    import dataclasses

    cfg = dataclasses.replace(small_config, connector="mlp")
    model = build_model(cfg, tiny_corpus, seed=3, warm_start=False)
    assert model.bank is None
    grouped = namespace_params(model)
    assert not grouped["bank"]
    seen = {namespace_of(p) for p, _ in model.named_parameters()}
    assert "bank" not in seen


def test_config_validation():
    with pytest.raises(ConfigError, match="n_mem"):
        ModelConfig(n_mem=0).validate()
    with pytest.raises(ConfigError, match="divisible"):
        ModelConfig(d_model=30, heads=4).validate()
    with pytest.raises(ConfigError, match="d_v"):
        ModelConfig(d_v=30, sma_heads=8).validate()
    with pytest.raises(ConfigError, match="lora_dropout"):
        ModelConfig(lora_dropout=1.0).validate()
    ModelConfig().validate()


def test_decoder_init_seed_is_injective_over_runs():
    seeds = [decoder_init_seed(s) for s in range(64)]
    assert len(set(seeds)) == len(seeds)
    assert all(s != decoder_init_seed(s) for s in range(64))


def test_model_config_validated_at_construction(tiny_corpus):
    with pytest.raises(ConfigError):
        ReportModel(ModelConfig(d_model=30, heads=4), vocab_size=10)
