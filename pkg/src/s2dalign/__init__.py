"""Staged alignment training for synthetic radiograph reporting.

The package builds a fully synthetic multi-study corpus, trains a small
vision-conditioned report decoder through a shared-memory staged curriculum,
and evaluates generations with text-overlap and clinical-efficacy metrics.
Inference always conditions on vision alone; the richer text context exists
only during training.
"""

from .catalog import FindingCatalog, FindingLabel, PhraseGrammar, ReportGrammar, default_catalog
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, config_echo, config_hash, load_config
from .corpusio import CorpusConfig, CorpusSplit, Vocab, build_corpus, load_corpus, save_corpus
from .decoder import Context, DecoderModel, build_context, generate
from .errors import S2DAlignError
from .metrics import MetricReport, bleu_n, ce_scores, corpus_bleu, rouge_l, score_generations
from .model import ModelConfig, ReportModel, build_model
from .pag import CurriculumPlan, FeatureCache, evaluate_split, make_plan, run_curriculum, run_matrix
from .sma import MemoryBank, SmaInstance, cross_attention
from .syndata import StudyRecord, gen_patient, render_radiograph

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "Context",
    "CorpusConfig",
    "CorpusSplit",
    "CurriculumPlan",
    "DecoderModel",
    "FeatureCache",
    "FindingCatalog",
    "FindingLabel",
    "MemoryBank",
    "MetricReport",
    "ModelConfig",
    "PhraseGrammar",
    "ReportGrammar",
    "ReportModel",
    "RunConfig",
    "S2DAlignError",
    "SmaInstance",
    "StudyRecord",
    "Vocab",
    "bleu_n",
    "build_context",
    "build_corpus",
    "build_model",
    "ce_scores",
    "config_echo",
    "config_hash",
    "corpus_bleu",
    "cross_attention",
    "default_catalog",
    "evaluate_split",
    "gen_patient",
    "generate",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "make_plan",
    "render_radiograph",
    "rouge_l",
    "run_curriculum",
    "run_matrix",
    "save_checkpoint",
    "save_corpus",
    "score_generations",
]
