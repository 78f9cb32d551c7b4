"""Staged curriculum training, ablation matrices, and split evaluation.

A stage is declarative: which context branches it feeds the decoder, which
parameter namespaces it trains, and its optimizer profile. Plans are ordered
lists of stages (or a joint union trained by round-robin batch mixing).
Stage handoff goes through the checkpoint container and is verified bitwise.

Frozen encoders make features a pure function of the corpus, so they are
computed once into a cache shared by every run of a matrix; the warm-started
decoder likewise depends only on (corpus, seed) and is shared across the
variants of one seed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import PLAN_NAMES, RunConfig, config_echo, config_hash
from .corpusio import CorpusSplit
from .decoder import BOS_ID, PAD_ID, DecoderModel, generate_batch, loss_ce, warm_start_lm
from .encoders import encode_image, encode_text
from .errors import ConfigError, TrainingError
from .metrics import MetricReport, score_generations
from .model import (
    NAMESPACES,
    ReportModel,
    build_model,
    decoder_init_seed,
    namespace_fingerprints,
    set_trainable,
)
from .catalog import PRESENT, ReportGrammar
from .checkpoint import Checkpoint, checkpoint_from_model, load_checkpoint, load_into_model, save_checkpoint
from .optim import OptimizerProfile, StagedOptimizer, decay_exemptions

STAGE_BRANCHES = {
    1: ("vision",),
    2: ("vision", "ref_text"),
    3: ("vision", "ref_text", "key_text"),
}

_BASE_SELECTORS = {
    1: frozenset({"sma_v", "bank"}),
    2: frozenset({"sma_v", "bank", "sma_t", "dec/lora"}),
    3: frozenset({"sma_v", "bank", "sma_t", "sma_p", "dec/lora"}),
}


@dataclass(frozen=True)
class StageSpec:
    stage_id: int
    branches: tuple[str, ...]
    selector: frozenset[str]
    profile: OptimizerProfile
    patience: int
    min_delta: float


@dataclass(frozen=True)
class CurriculumPlan:
    name: str
    stages: tuple[StageSpec, ...]
    joint: bool = False


def build_stage_specs(cfg: RunConfig) -> dict[int, StageSpec]:
    train = cfg.train
    profiles = {1: train.stage1, 2: train.stage2, 3: train.stage3}
    specs = {}
    for sid in (1, 2, 3):
        selector = set(_BASE_SELECTORS[sid])
        if not train.train_bank:
            selector.discard("bank")
        if train.lora_start_stage == 0 or (train.lora_start_stage == 3 and sid == 2):
            selector.discard("dec/lora")
        specs[sid] = StageSpec(
            stage_id=sid,
            branches=STAGE_BRANCHES[sid],
            selector=frozenset(selector),
            profile=OptimizerProfile(
                lr=profiles[sid].lr, epochs=profiles[sid].epochs,
                warmup_steps=train.warmup_steps, weight_decay=train.weight_decay,
                beta1=train.beta1, beta2=train.beta2,
            ),
            patience=train.patience,
            min_delta=train.min_delta,
        )
    return specs


def make_plan(name: str, cfg: RunConfig) -> CurriculumPlan:
    if name not in PLAN_NAMES:
        raise ConfigError(f"unknown plan {name!r}; known: {', '.join(PLAN_NAMES)}")
    specs = build_stage_specs(cfg)
    orders = {
        "canonical": (1, 2, 3),
        "s1": (1,),
        "reversed": (1, 3, 2),
        "s1s2": (1, 2),
        "s1s3": (1, 3),
    }
    if name == "joint":
        union: set[str] = set()
        for spec in specs.values():
            union |= spec.selector
        joint_spec = StageSpec(
            stage_id=3,  # widest recipe; per-batch stages still cycle 1..3
            branches=STAGE_BRANCHES[3],
            selector=frozenset(union),
            profile=OptimizerProfile(
                lr=cfg.train.joint.lr, epochs=cfg.train.joint.epochs,
                warmup_steps=cfg.train.warmup_steps,
                weight_decay=cfg.train.weight_decay,
                beta1=cfg.train.beta1, beta2=cfg.train.beta2,
            ),
            patience=cfg.train.patience,
            min_delta=cfg.train.min_delta,
        )
        return CurriculumPlan(name="joint", stages=(joint_spec,), joint=True)
    return CurriculumPlan(name=name, stages=tuple(specs[s] for s in orders[name]))


# ---------------------------------------------------------------------------
# feature cache


def _key(study) -> tuple[int, int]:
    return (study.patient_id, study.study_index)


class FeatureCache:
    """Frozen-encoder outputs for every study, computed once per corpus."""

    def __init__(self):
        self.vision: dict[tuple[int, int], torch.Tensor] = {}
        self.report: dict[tuple[int, int], torch.Tensor] = {}
        self.phrases: dict[tuple[int, int], list[torch.Tensor]] = {}
        self.report_ids: dict[tuple[int, int], list[int]] = {}

    @classmethod
    def build(cls, corpus: CorpusSplit, model: ReportModel) -> "FeatureCache":
        cache = cls()
        vocab = corpus.vocab
        for split in ("train", "val", "test"):
            for study in corpus.split(split):
                key = _key(study)
                cache.vision[key] = encode_image(model.enc_v, study.image)
                ids = vocab.encode(study.report)
                cache.report_ids[key] = ids
                cache.report[key] = encode_text(model.enc_t, ids)
                cache.phrases[key] = [
                    encode_text(model.enc_t, vocab.encode(p)) for p in study.phrases
                ]
        return cache


def _pad_stack(feats: list[torch.Tensor], dim: int) -> tuple[torch.Tensor, torch.Tensor]:
    n = len(feats)
    l_max = max(1, max((f.shape[0] for f in feats), default=0))
    out = torch.zeros(n, l_max, dim)
    mask = torch.zeros(n, l_max, dtype=torch.bool)
    for i, f in enumerate(feats):
        if f.shape[0]:
            out[i, : f.shape[0]] = f
            mask[i, : f.shape[0]] = True
    return out, mask


def context_rows_batch(
    model: ReportModel,
    corpus: CorpusSplit,
    cache: FeatureCache,
    stage: int,
    records: list,
    rng: np.random.Generator | None,
    l_phrases: int = 4,
    deterministic: bool = False,
) -> torch.Tensor:
    """Stacked context rows (N, rows, d_model) for one batch at one stage.

    Training mode draws the reference study and phrase subset from ``rng``;
    deterministic mode (validation) uses the next study cyclically and the
    first phrases in canonical order.
    """
    branches = STAGE_BRANCHES[stage]
    vision = torch.stack([cache.vision[_key(s)] for s in records])
    v_mask = torch.ones(vision.shape[:2], dtype=torch.bool)
    parts = [model.sma_v.forward_batched(vision, v_mask)]
    if "ref_text" in branches:
        feats = []
        for study in records:
            siblings = corpus.patients[study.patient_id].studies
            others = [s for s in siblings if s.study_index != study.study_index]
            if not others:
                raise TrainingError(
                    f"patient {study.patient_id} has no sibling study for references"
                )
            if deterministic:
                pos = [s.study_index for s in siblings].index(study.study_index)
                ref = siblings[(pos + 1) % len(siblings)]
            else:
                ref = others[int(rng.integers(len(others)))]
            feats.append(cache.report[_key(ref)])
        keys, mask = _pad_stack(feats, model.config.d_t)
        parts.append(model.sma_t.forward_batched(keys, mask))
    if "key_text" in branches:
        feats = []
        for study in records:
            pool = cache.phrases[_key(study)]
            take = min(l_phrases, len(pool))
            if take == 0:
                feats.append(torch.zeros(0, model.config.d_t))
                continue
            if deterministic:
                picks = list(range(take))
            else:
                picks = sorted(int(i) for i in rng.choice(len(pool), size=take, replace=False))
            feats.append(torch.cat([pool[i] for i in picks], dim=0))
        keys, mask = _pad_stack(feats, model.config.d_t)
        parts.append(model.sma_p.forward_batched(keys, mask))
    return torch.cat(parts, dim=1)


def token_batch(records: list, cache: FeatureCache) -> tuple[torch.Tensor, torch.Tensor]:
    """Padded (inputs, targets): inputs start with BOS, targets end with EOS."""
    seqs = [[BOS_ID] + cache.report_ids[_key(s)] for s in records]
    t_max = max(len(s) for s in seqs) - 1
    inputs = torch.full((len(seqs), t_max), PAD_ID, dtype=torch.long)
    targets = torch.full((len(seqs), t_max), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids = torch.tensor(s, dtype=torch.long)
        inputs[i, : len(s) - 1] = ids[:-1]
        targets[i, : len(s) - 1] = ids[1:]
    return inputs, targets


def make_batch(
    stage: int,
    records: list,
    model: ReportModel,
    corpus: CorpusSplit,
    cache: FeatureCache,
    rng: np.random.Generator | None = None,
    l_phrases: int = 4,
    deterministic: bool = False,
):
    ctx = context_rows_batch(
        model, corpus, cache, stage, records, rng,
        l_phrases=l_phrases, deterministic=deterministic,
    )
    inputs, targets = token_batch(records, cache)
    return ctx, inputs, targets


# ---------------------------------------------------------------------------
# stage training


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def split_loss(model, corpus, cache, split: str, stage: int,
               batch_size: int = 32, l_phrases: int = 4) -> float:
    """Teacher-forced mean token loss over a split, deterministic contexts."""
    records = corpus.split(split)
    total, count = 0.0, 0
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            ctx, inputs, targets = make_batch(
                stage, chunk, model, corpus, cache,
                l_phrases=l_phrases, deterministic=True,
            )
            n_tok = int((targets != PAD_ID).sum())
            total += float(loss_ce(model.dec(ctx, inputs), targets)) * n_tok
            count += n_tok
    model.train(was_training)
    return total / max(count, 1)


def train_stage(
    model: ReportModel,
    corpus: CorpusSplit,
    cache: FeatureCache,
    spec: StageSpec,
    cfg: RunConfig,
    log_rows: list,
    global_step: int = 0,
    joint: bool = False,
) -> tuple[Checkpoint, dict]:
    """Train one stage (or the joint union); returns (checkpoint, summary).

    Guarantees after return: no parameter outside the stage selector changed
    (verified by namespace fingerprints), validation losses logged per epoch,
    early stop per patience/min-delta, NaN losses abort with diagnostics.
    """
    before = namespace_fingerprints(model)
    set_trainable(model, set(spec.selector))
    named = {n: p for n, p in model.named_parameters() if p.requires_grad}
    if not named:
        raise TrainingError(f"stage {spec.stage_id} selector selects no parameters")
    n_train = len(corpus.train)
    batch = cfg.train.batch_size
    steps_per_epoch = math.ceil(n_train / batch)
    total_steps = spec.profile.epochs * steps_per_epoch
    opt = StagedOptimizer(named, spec.profile, total_steps, decay_exemptions(model))

    best_val = float("inf")
    stale = 0
    first_train = last_train = float("nan")
    epochs_run = 0
    model.train()
    for epoch in range(spec.profile.epochs):
        torch.manual_seed((cfg.seed * 1_000_003 + spec.stage_id * 101 + epoch) % 2**31)
        order = np.random.default_rng([cfg.seed, spec.stage_id, epoch, 7]).permutation(n_train)
        draw = np.random.default_rng([cfg.seed, spec.stage_id, epoch, 11])
        epoch_loss, epoch_tok = 0.0, 0
        for b, idx in enumerate(_batches(n_train, batch, order)):
            records = [corpus.train[int(i)] for i in idx]
            stage = ((global_step + b) % 3) + 1 if joint else spec.stage_id
            ctx, inputs, targets = make_batch(
                stage, records, model, corpus, cache,
                rng=draw, l_phrases=cfg.train.l_phrases,
            )
            loss = loss_ce(model.dec(ctx, inputs), targets)
            if not torch.isfinite(loss):
                ids = [f"{s.patient_id}/{s.study_index}" for s in records]
                raise TrainingError(
                    f"non-finite loss at stage {spec.stage_id} step {global_step + 1} "
                    f"(lr {opt.lr:.3e}, batch {ids})"
                )
            opt.zero_grad()
            loss.backward()
            lr = opt.step()
            global_step += 1
            n_tok = int((targets != PAD_ID).sum())
            batch_loss = float(loss.detach())
            log_rows.append((global_step, stage, "train", batch_loss, lr))
            epoch_loss += batch_loss * n_tok
            epoch_tok += n_tok
        train_loss = epoch_loss / max(epoch_tok, 1)
        if epoch == 0:
            first_train = train_loss
        last_train = train_loss
        val = split_loss(model, corpus, cache, "val", spec.stage_id,
                         batch_size=batch, l_phrases=cfg.train.l_phrases)
        log_rows.append((global_step, spec.stage_id, "val", val, lr))
        epochs_run = epoch + 1
        if val < best_val - spec.min_delta:
            best_val = val
            stale = 0
        else:
            stale += 1
            if stale >= spec.patience:
                break
    model.eval()

    after = namespace_fingerprints(model)
    changed = {ns for ns in NAMESPACES if before[ns] != after[ns]}
    illegal = changed - set(spec.selector)
    if illegal:
        raise TrainingError(
            f"stage {spec.stage_id} mutated namespaces outside its selector: {sorted(illegal)}"
        )
    summary = {
        "stage_id": spec.stage_id,
        "epochs_run": epochs_run,
        "global_step": global_step,
        "first_train_loss": first_train,
        "last_train_loss": last_train,
        "best_val_loss": best_val,
        "changed_namespaces": sorted(changed),
        "selector": sorted(spec.selector),
    }
    manifest = {
        "stage_id": spec.stage_id,
        "global_step": global_step,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "plan_stage_summary": summary,
    }
    ckpt = checkpoint_from_model(model, manifest)
    for name, tensor in opt.state.m.items():
        ckpt.entries[f"opt/m/{name}"] = tensor.detach().cpu().numpy().copy()
        ckpt.entries[f"opt/v/{name}"] = opt.state.v[name].detach().cpu().numpy().copy()
    ckpt.entries["rng/torch_state"] = torch.get_rng_state().numpy().copy()
    return ckpt, summary


# ---------------------------------------------------------------------------
# curriculum runs


def run_curriculum(
    plan: CurriculumPlan,
    corpus: CorpusSplit,
    cfg: RunConfig,
    run_dir: Path,
    cache: FeatureCache | None = None,
    warm_state: dict | None = None,
    strict_serial: bool = False,
) -> dict:
    """Execute a plan end to end; returns the run manifest (also written)."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if strict_serial:
        torch.set_num_threads(1)
    echo_path = run_dir / "config.echo"
    echo = config_echo(cfg)
    if echo_path.exists() and echo_path.read_text(encoding="utf-8") != echo:
        raise ConfigError(
            f"{run_dir} was created with a different config; refusing to overwrite"
        )
    echo_path.write_text(echo, encoding="utf-8")

    model = build_model(cfg.model, corpus, cfg.seed, warm_state=warm_state)
    if cache is None:
        cache = FeatureCache.build(corpus, model)
    log_rows: list = []
    summaries = []
    global_step = 0
    for position, spec in enumerate(plan.stages, start=1):
        ckpt, summary = train_stage(
            model, corpus, cache, spec, cfg, log_rows,
            global_step=global_step, joint=plan.joint,
        )
        global_step = summary["global_step"]
        path = run_dir / f"stage{position}.ckpt"
        save_checkpoint(ckpt, path)
        # round-trip the handoff through the container and hold it to bitwise
        reloaded = load_checkpoint(path)
        fp_before = namespace_fingerprints(model)
        load_into_model(reloaded, model)
        if namespace_fingerprints(model) != fp_before:
            raise TrainingError(f"checkpoint round trip altered weights at {path}")
        summary["checkpoint"] = path.name
        summaries.append(summary)

    with open(run_dir / "metrics.tsv", "w", encoding="utf-8") as fh:
        fh.write("step\tstage\tsplit\tloss\tlr\n")
        for step, stage, split, loss, lr in log_rows:
            fh.write(f"{step}\t{stage}\t{split}\t{loss:.6f}\t{lr:.6e}\n")
    manifest = {
        "plan": plan.name,
        "connector": cfg.model.connector,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "stages": summaries,
        "n_checkpoints": len(summaries),
    }
    (run_dir / "run.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def load_run_model(run_dir: Path, corpus: CorpusSplit, cfg: RunConfig) -> ReportModel:
    """Rebuild a model from a run directory's final checkpoint."""
    run_dir = Path(run_dir)
    ckpts = sorted(run_dir.glob("stage*.ckpt"))
    if not ckpts:
        raise TrainingError(f"no checkpoints under {run_dir}")
    ckpt = load_checkpoint(ckpts[-1])
    if ckpt.manifest.get("config_hash") != config_hash(cfg):
        raise ConfigError(
            f"checkpoint {ckpts[-1].name} was produced under a different config"
        )
    model = build_model(cfg.model, corpus, cfg.seed, warm_start=False)
    load_into_model(ckpt, model)
    model.eval()
    return model


# ---------------------------------------------------------------------------
# evaluation


def evaluate_split(
    model: ReportModel,
    corpus: CorpusSplit,
    cache: FeatureCache,
    split: str = "test",
    batch_size: int = 32,
    max_len: int = 96,
) -> tuple[MetricReport, list[tuple[str, list[str], set]]]:
    """Greedy generation over a split from vision-only contexts, then scoring.

    Returns the metric report and per-sample prediction rows
    (study id, generated tokens, parsed labels).
    """
    grammar = ReportGrammar()
    records = corpus.split(split)
    vocab = corpus.vocab
    generated: list[list[str]] = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            ctx = context_rows_batch(model, corpus, cache, 1, chunk, rng=None)
            for ids in generate_batch(model.dec, ctx, max_len=max_len):
                generated.append(vocab.decode(ids))
    gold = [s.report for s in records]
    report = score_generations(generated, gold, grammar)
    rows = []
    for study, toks in zip(records, generated):
        sid = f"{split}/{study.patient_id}/{study.study_index}"
        rows.append((sid, toks, grammar.parse(toks)))
    return report, rows


def format_labels(labels, grammar: ReportGrammar) -> str:
    """Readable, deterministic serialization of parsed labels for audit."""
    cat = grammar.catalog
    parts = []
    for l in sorted(labels):
        where = cat.regions[l.region_id].replace(" ", "-")
        if l.polarity == PRESENT:
            parts.append(f"{cat.findings[l.finding_id]}@{where}:{cat.severities[l.severity]}")
        else:
            parts.append(f"{cat.findings[l.finding_id]}@{where}:absent")
    return "; ".join(parts)


def write_predictions(rows, grammar: ReportGrammar, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample_id\tgenerated_report\tparsed_labels\n")
        for sid, toks, labels in rows:
            fh.write(f"{sid}\t{' '.join(toks)}\t{format_labels(labels, grammar)}\n")


# ---------------------------------------------------------------------------
# matrices


def sign_test_p(deltas: list[float]) -> float:
    """One-sided paired sign test: P(wins >= observed | fair coin); ties dropped."""
    wins = sum(1 for d in deltas if d > 0)
    n = sum(1 for d in deltas if d != 0)
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0**n


def matrix_variants(matrix: str) -> list[tuple[str, str]]:
    """(plan, connector) pairs for a named ablation matrix."""
    if matrix == "pag":
        return [(plan, "sma") for plan in ("s1", "joint", "reversed", "s1s2", "s1s3", "canonical")]
    if matrix == "connector":
        return [("canonical", c) for c in ("mlp", "mlp_qformer", "sma_msa", "sma_unshared", "sma")]
    raise ConfigError(f"unknown matrix {matrix!r}; known: pag, connector")


def variant_label(plan: str, connector: str, matrix: str) -> str:
    return plan if matrix == "pag" else connector


def build_warm_state(cfg: RunConfig, corpus: CorpusSplit, seed: int) -> dict:
    """Warm-started base-decoder weights for one seed, shared across variants."""
    dec = DecoderModel(
        vocab_size=len(corpus.vocab), d_model=cfg.model.d_model,
        depth=cfg.model.depth, heads=cfg.model.heads, seed=decoder_init_seed(seed),
    )
    reports = [corpus.vocab.encode(s.report) for s in corpus.train]
    warm_start_lm(dec, reports, steps=cfg.model.warm_start_steps,
                  lr=cfg.model.warm_start_lr, seed=seed)
    return {k: v.detach().clone() for k, v in dec.state_dict().items()}


def run_matrix(
    matrix: str,
    corpus: CorpusSplit,
    base_cfg: RunConfig,
    out_dir: Path,
    seeds: list[int],
    strict_serial: bool = False,
    progress=None,
) -> dict:
    """Train and evaluate every variant of a matrix over the given seeds.

    Writes seeds.tsv (one evaluated run per row) and table.tsv (per-variant
    mean and sd, sorted by CE-F1 descending). Returns {label: {seed: report}}.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = matrix_variants(matrix)
    cache: FeatureCache | None = None
    results: dict[str, dict[int, MetricReport]] = {}
    t0 = time.time()
    for seed in seeds:
        cfg_seed = _with(base_cfg, seed=seed)
        warm = build_warm_state(cfg_seed, corpus, seed)
        for plan_name, connector in variants:
            label = variant_label(plan_name, connector, matrix)
            cfg = _with(cfg_seed, plan=plan_name, connector=connector)
            if cache is None:
                probe = build_model(cfg.model, corpus, seed, warm_start=False)
                cache = FeatureCache.build(corpus, probe)
            run_dir = out_dir / "runs" / label / f"seed{seed}"
            plan = make_plan(plan_name, cfg)
            run_curriculum(plan, corpus, cfg, run_dir, cache=cache,
                           warm_state=warm, strict_serial=strict_serial)
            model = load_run_model(run_dir, corpus, cfg)
            report, _ = evaluate_split(model, corpus, cache, "test",
                                       max_len=cfg.train.max_gen_len)
            results.setdefault(label, {})[seed] = report
            if progress is not None:
                progress(f"[{time.time() - t0:7.1f}s] {label} seed {seed}: "
                         f"ce_f1={report.ce_f1:.4f} b4={report.bleu_4:.4f}")
    write_matrix_tables(results, out_dir)
    return results


def _with(cfg: RunConfig, seed: int | None = None, plan: str | None = None,
          connector: str | None = None) -> RunConfig:
    import copy

    out = copy.deepcopy(cfg)
    if seed is not None:
        out.seed = seed
    if plan is not None:
        out.plan = plan
    if connector is not None:
        out.model.connector = connector
    return out


_METRIC_COLS = ("bleu_1", "bleu_4", "rouge_l", "ce_f1")


def write_matrix_tables(results: dict[str, dict[int, MetricReport]], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "seeds.tsv", "w", encoding="utf-8") as fh:
        fh.write("variant\tseed\t" + "\t".join(_METRIC_COLS) + "\n")
        for label in results:
            for seed in sorted(results[label]):
                r = results[label][seed]
                vals = "\t".join(f"{getattr(r, c):.6f}" for c in _METRIC_COLS)
                fh.write(f"{label}\t{seed}\t{vals}\n")
    rows = []
    for label, by_seed in results.items():
        reports = [by_seed[s] for s in sorted(by_seed)]
        stats = {}
        for col in _METRIC_COLS:
            vals = [getattr(r, col) for r in reports]
            mean = sum(vals) / len(vals)
            sd = (sum((v - mean) ** 2 for v in vals) / len(vals)) ** 0.5
            stats[col] = (mean, sd)
        rows.append((label, len(reports), stats))
    rows.sort(key=lambda r: -r[2]["ce_f1"][0])
    with open(out_dir / "table.tsv", "w", encoding="utf-8") as fh:
        header = ["variant", "n_seeds"]
        for col in _METRIC_COLS:
            header += [f"{col}_mean", f"{col}_sd"]
        fh.write("\t".join(header) + "\n")
        for label, n, stats in rows:
            cells = [label, str(n)]
            for col in _METRIC_COLS:
                mean, sd = stats[col]
                cells += [f"{mean:.6f}", f"{sd:.6f}"]
            fh.write("\t".join(cells) + "\n")
