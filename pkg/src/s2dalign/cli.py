"""Command-line surface: corpus generation, training, ablation, evaluation,
prompt export, and plotting.

Exit codes: 0 success, 2 configuration, 3 corpus, 4 checkpoint, 5 unknown
study id, 6 missing metrics, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import torch

from .catalog import PhraseGrammar, ReportGrammar
from .config import PLAN_NAMES, RunConfig, config_echo, load_config
from .corpusio import build_corpus, find_study, load_corpus, save_corpus
from .errors import (
    AsymmetryError,
    CheckpointError,
    ConfigError,
    CorpusError,
    MetricsError,
    S2DAlignError,
    StudyNotFoundError,
    UsageError,
)
from .pag import (
    FeatureCache,
    evaluate_split,
    load_run_model,
    make_plan,
    run_curriculum,
    run_matrix,
    split_loss,
    write_predictions,
)
from .plots import render_run
from .syndata import build_demo_pool, render_refinement_prompt

_EXIT_CODES = (
    (StudyNotFoundError, 5),  # before its parent CorpusError
    (CheckpointError, 4),
    (MetricsError, 6),
    (ConfigError, 2),
    (UsageError, 2),
    (AsymmetryError, 2),
    (CorpusError, 3),
)


def _home() -> Path:
    return Path(os.environ.get("S2D_HOME", "s2d_home"))


def _load(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "plan", None) is not None:
        overrides["plan"] = args.plan
    return load_config(args.config, overrides or None)


def _load_home_corpus(cfg: RunConfig):
    corpus = load_corpus(_home() / "corpus")
    mismatched = [
        f.name for f in fields(cfg.corpus)
        if getattr(corpus.config, f.name) != getattr(cfg.corpus, f.name)
    ]
    if mismatched:
        raise ConfigError(
            "corpus on disk does not match the corpus section of this config "
            f"(differs in: {', '.join(mismatched)}); regenerate with gen-corpus"
        )
    return corpus


def cmd_gen_corpus(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else _home() / "corpus"
    corpus = build_corpus(cfg.corpus)
    save_corpus(corpus, out)
    print(f"corpus written to {out}")
    for name in ("train", "val", "test"):
        print(f"  {name}: {len(corpus.split(name))} studies")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.strict_serial:
        torch.set_num_threads(1)
    corpus = _load_home_corpus(cfg)
    run_dir = Path(args.out) if args.out else _home() / "runs" / f"{cfg.plan}-seed{cfg.seed}"
    plan = make_plan(cfg.plan, cfg)
    manifest = run_curriculum(plan, corpus, cfg, run_dir,
                              strict_serial=args.strict_serial)
    print(f"run directory: {run_dir}")
    for stage in manifest["stages"]:
        print(f"  stage {stage['stage_id']}: {stage['epochs_run']} epochs, "
              f"val loss {stage['best_val_loss']:.4f} -> {stage['checkpoint']}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    if args.strict_serial:
        torch.set_num_threads(1)
    corpus = _load_home_corpus(cfg)
    out = Path(args.out) if args.out else _home() / f"ablate-{args.matrix}"
    seeds = [cfg.seed + i for i in range(args.seeds)]
    run_matrix(args.matrix, corpus, cfg, out, seeds,
               strict_serial=args.strict_serial, progress=print)
    print(f"ablation table: {out / 'table.tsv'}")
    print((out / "table.tsv").read_text(encoding="utf-8"), end="")
    return 0


def _append_eval_row(run_dir: Path, split: str, loss: float) -> None:
    path = run_dir / "metrics.tsv"
    step = 0
    if path.exists():
        lines = path.read_text(encoding="utf-8").splitlines()
        if len(lines) > 1:
            step = int(lines[-1].split("\t")[0])
    else:
        path.write_text("step\tstage\tsplit\tloss\tlr\n", encoding="utf-8")
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(f"{step}\t1\t{split}\t{loss:.6f}\t0.000000e+00\n")


def cmd_eval(args) -> int:
    if args.context_stage is not None:
        raise AsymmetryError(
            "evaluation always builds vision-only contexts; "
            "a context-stage override is not available"
        )
    run_dir = Path(args.run_dir)
    echo = run_dir / "config.echo"
    if not echo.exists():
        raise ConfigError(f"no config echo under {run_dir}")
    cfg = load_config(echo)
    corpus = _load_home_corpus(cfg)
    model = load_run_model(run_dir, corpus, cfg)
    cache = FeatureCache.build(corpus, model)
    report, rows = evaluate_split(model, corpus, cache, args.split,
                                  max_len=cfg.train.max_gen_len)
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    print(f"samples: {len(rows)}")
    pred_path = run_dir / f"predictions-{args.split}.tsv"
    write_predictions(rows, ReportGrammar(), pred_path)
    print(f"predictions: {pred_path}")
    _append_eval_row(run_dir, args.split,
                     split_loss(model, corpus, cache, args.split, stage=1))
    return 0


def cmd_export_prompt(args) -> int:
    cfg = _load(args)
    corpus = load_corpus(_home() / "corpus")
    study = find_study(corpus, args.study_id)
    pool = build_demo_pool(PhraseGrammar())
    text = render_refinement_prompt(study.tuples, pool, n_demos=args.demos,
                                    seed=cfg.seed)
    if args.out:
        out = Path(args.out)
    else:
        out = _home() / "prompts" / (args.study_id.replace("/", "-") + ".txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    print(f"prompt written to {out}")
    return 0


def cmd_plot(args) -> int:
    written = render_run(Path(args.run_dir), Path(args.out) if args.out else None)
    for path in written:
        print(path)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="YAML config file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    common.add_argument("--out", type=Path, default=None,
                        help="output path (defaults under S2D_HOME)")
    common.add_argument("--strict-serial", action="store_true",
                        help="single-threaded math for bit-reproducible runs")

    parser = argparse.ArgumentParser(
        prog="s2dalign",
        description="staged curriculum training for grounded report generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[common],
                       help="generate the synthetic corpus")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", parents=[common], help="run a curriculum plan")
    p.add_argument("--plan", choices=PLAN_NAMES, default=None,
                   help="curriculum plan (default from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", parents=[common], help="run an ablation matrix")
    p.add_argument("--matrix", choices=("pag", "connector"), required=True)
    p.add_argument("--seeds", type=int, default=5,
                   help="number of seeds per variant (default 5)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a run directory on a split")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--context-stage", type=int, default=None,
                   help="not available: evaluation is vision-only by design")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-prompt", parents=[common],
                       help="render the phrase-refinement prompt for one study")
    p.add_argument("study_id", help="split/patient/study, e.g. train/12/0")
    p.add_argument("--demos", type=int, default=3,
                   help="demonstrations in the system section (default 3)")
    p.set_defaults(func=cmd_export_prompt)

    p = sub.add_parser("plot", parents=[common],
                       help="render loss curves and ablation charts")
    p.add_argument("run_dir", type=Path)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except S2DAlignError as err:
        for cls, code in _EXIT_CODES:
            if isinstance(err, cls):
                print(f"error: {err}", file=sys.stderr)
                return code
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - the contract demands exit 1 here
        if os.environ.get("S2D_DEBUG"):
            raise
        print(f"unexpected error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
