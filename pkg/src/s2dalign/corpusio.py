"""Corpus assembly and on-disk formats.

Directory layout::

    corpus/
      manifest                  config echo + seed (JSON)
      vocab.txt                 one token per line, line number = id
      <split>/<patient_id>/<study_index>.img    binary image
      <split>/<patient_id>/<study_index>.rec    structured text records

``.img`` is magic ``S2DIMG\\0``, u32 version, u32 H, u32 W, u32 C, then
little-endian float32 pixels in row-major order. ``.rec`` holds REPORT,
LABEL, TUPLE and PHRASE lines with tab-separated fields.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import (
    BOS,
    EOS,
    PAD,
    SPECIALS,
    FindingLabel,
    ReportGrammar,
    canonical_order,
    default_catalog,
)
from .errors import ConfigError, CorpusError, VocabError
from .syndata import PatientRecord, StudyRecord, gen_patient

IMG_MAGIC = b"S2DIMG\0"
IMG_VERSION = 1
REC_KINDS = ("REPORT", "LABEL", "TUPLE", "PHRASE")


class Vocab:
    """Bidirectional token map. Ids are line numbers; specials come first."""

    def __init__(self, tokens: list[str]):
        if tokens[: len(SPECIALS)] != list(SPECIALS):
            raise VocabError(f"vocab must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise VocabError("vocab contains duplicate tokens")
        self.tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def encode(self, tokens: list[str]) -> list[int]:
        try:
            return [self._ids[t] for t in tokens]
        except KeyError as exc:
            raise VocabError(f"unknown token {exc.args[0]!r}") from None

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    @classmethod
    def from_grammar(cls, grammar: ReportGrammar) -> "Vocab":
        # the grammar's surface inventory is closed, so the vocab never
        # depends on which tokens a particular sample happened to draw
        return cls(list(SPECIALS) + sorted(grammar.all_tokens()))


@dataclass
class CorpusConfig:
    n_train: int = 800
    n_val: int = 100
    n_test: int = 100
    image_size: tuple[int, int] = (64, 64)
    patch_size: int = 8
    min_studies: int = 2
    max_studies: int = 3
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        h, w = self.image_size
        if h < self.patch_size or w < self.patch_size:
            raise ConfigError(f"image size {h}x{w} smaller than patch {self.patch_size}")
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(f"image size {h}x{w} not divisible by patch {self.patch_size}")
        if self.min_studies < 2 or self.max_studies < self.min_studies:
            raise ConfigError("study count range must satisfy 2 <= min <= max")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def echo(self) -> dict:
        return {
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "image_size": list(self.image_size),
            "patch_size": self.patch_size,
            "min_studies": self.min_studies,
            "max_studies": self.max_studies,
            "seed": self.seed,
        }


@dataclass
class CorpusSplit:
    train: list[StudyRecord]
    val: list[StudyRecord]
    test: list[StudyRecord]
    vocab: Vocab
    patients: dict[int, PatientRecord] = field(default_factory=dict)
    config: CorpusConfig | None = None

    def split(self, name: str) -> list[StudyRecord]:
        if name not in ("train", "val", "test"):
            raise CorpusError(f"unknown split {name!r}")
        return getattr(self, name)

    def patient_of(self, study: StudyRecord) -> PatientRecord:
        return self.patients[study.patient_id]


def _patient_seed(corpus_seed: int, index: int) -> int:
    # Disjoint per-patient substreams; also keeps anatomy seeds distinct.
    return (corpus_seed << 32) | index


def build_corpus(config: CorpusConfig) -> CorpusSplit:
    """Generate patient-disjoint splits, fully determined by (config, seed)."""
    config.validate()
    catalog = default_catalog()
    sizes = {"train": config.n_train, "val": config.n_val, "test": config.n_test}
    splits: dict[str, list[StudyRecord]] = {"train": [], "val": [], "test": []}
    patients: dict[int, PatientRecord] = {}
    index = 0
    for name in ("train", "val", "test"):
        for _ in range(sizes[name]):
            patient = gen_patient(
                _patient_seed(config.seed, index),
                catalog,
                patient_id=index,
                image_size=config.image_size,
                min_studies=config.min_studies,
                max_studies=config.max_studies,
                patch_size=config.patch_size,
            )
            patients[index] = patient
            splits[name].extend(patient.studies)
            index += 1
    vocab = Vocab.from_grammar(ReportGrammar(catalog))
    return CorpusSplit(
        train=splits["train"],
        val=splits["val"],
        test=splits["test"],
        vocab=vocab,
        patients=patients,
        config=config,
    )


# ---------------------------------------------------------------------------
# single-study files


def write_image(path: Path, image: np.ndarray) -> None:
    if image.ndim != 3:
        raise CorpusError(f"image must be HxWxC, got shape {image.shape}")
    h, w, c = image.shape
    with open(path, "wb") as fh:
        fh.write(IMG_MAGIC)
        fh.write(struct.pack("<IIII", IMG_VERSION, h, w, c))
        fh.write(image.astype("<f4").tobytes(order="C"))


def read_image(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[: len(IMG_MAGIC)] != IMG_MAGIC:
        raise CorpusError(f"{path}: bad image magic")
    version, h, w, c = struct.unpack_from("<IIII", data, len(IMG_MAGIC))
    if version != IMG_VERSION:
        raise CorpusError(f"{path}: unsupported image version {version}")
    offset = len(IMG_MAGIC) + 16
    expected = h * w * c * 4
    payload = data[offset:]
    if len(payload) != expected:
        raise CorpusError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, c).copy()


def write_record(path: Path, study: StudyRecord) -> None:
    lines = [f"REPORT\t{' '.join(study.report)}"]
    for label in canonical_order(study.labels):
        lines.append(
            f"LABEL\t{label.finding_id}\t{label.region_id}\t{label.polarity}\t{label.severity}"
        )
    for entity, relation, region in study.tuples:
        lines.append(f"TUPLE\t{entity}\t{relation}\t{region}")
    for phrase in study.phrases:
        lines.append(f"PHRASE\t{' '.join(phrase)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_record(path: Path) -> dict:
    report: list[str] = []
    labels: list[FindingLabel] = []
    tuples: list[tuple[str, str, str]] = []
    phrases: list[list[str]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw:
            continue
        kind, _, rest = raw.partition("\t")
        if kind == "REPORT":
            report = rest.split(" ")
        elif kind == "LABEL":
            parts = rest.split("\t")
            if len(parts) != 4:
                raise CorpusError(f"{path}:{lineno}: LABEL needs 4 fields")
            labels.append(FindingLabel(int(parts[0]), int(parts[1]), parts[2], int(parts[3])))
        elif kind == "TUPLE":
            parts = rest.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: TUPLE needs 3 fields")
            tuples.append((parts[0], parts[1], parts[2]))
        elif kind == "PHRASE":
            phrases.append(rest.split(" "))
        else:
            raise CorpusError(f"{path}:{lineno}: unknown record kind {kind!r}")
    if not report:
        raise CorpusError(f"{path}: missing REPORT line")
    return {
        "report": report,
        "labels": frozenset(labels),
        "tuples": tuples,
        "phrases": phrases,
    }


# ---------------------------------------------------------------------------
# whole-corpus persistence


def save_corpus(corpus: CorpusSplit, root: Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if corpus.config is None:
        raise CorpusError("corpus has no config to echo into the manifest")
    counts = {}
    for name in ("train", "val", "test"):
        studies = corpus.split(name)
        counts[name] = len(studies)
        for study in studies:
            pdir = root / name / str(study.patient_id)
            pdir.mkdir(parents=True, exist_ok=True)
            write_image(pdir / f"{study.study_index}.img", study.image)
            write_record(pdir / f"{study.study_index}.rec", study)
    (root / "vocab.txt").write_text("\n".join(corpus.vocab.tokens) + "\n", encoding="utf-8")
    manifest = {
        "format": "s2d-corpus",
        "version": 1,
        "config": corpus.config.echo(),
        "seed": corpus.config.seed,
        "counts": counts,
        "vocab_size": len(corpus.vocab),
    }
    (root / "manifest").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_manifest(root: Path) -> dict:
    path = Path(root) / "manifest"
    if not path.exists():
        raise CorpusError(f"no corpus manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_vocab(root: Path) -> Vocab:
    path = Path(root) / "vocab.txt"
    if not path.exists():
        raise CorpusError(f"no vocab at {path}")
    return Vocab(path.read_text(encoding="utf-8").splitlines())


def load_corpus(root: Path) -> CorpusSplit:
    """Read a persisted corpus back into memory, regrouping studies by patient."""
    root = Path(root)
    manifest = load_manifest(root)
    vocab = load_vocab(root)
    cfg = manifest["config"]
    config = CorpusConfig(
        n_train=cfg["n_train"],
        n_val=cfg["n_val"],
        n_test=cfg["n_test"],
        image_size=tuple(cfg["image_size"]),
        patch_size=cfg["patch_size"],
        min_studies=cfg["min_studies"],
        max_studies=cfg["max_studies"],
        seed=cfg["seed"],
    )
    splits: dict[str, list[StudyRecord]] = {"train": [], "val": [], "test": []}
    patients: dict[int, PatientRecord] = {}
    for name in ("train", "val", "test"):
        split_dir = root / name
        if not split_dir.is_dir():
            raise CorpusError(f"missing split directory {split_dir}")
        for pdir in sorted(split_dir.iterdir(), key=lambda p: int(p.name)):
            pid = int(pdir.name)
            patient = PatientRecord(patient_id=pid, base_anatomy_seed=-1)
            for rec_path in sorted(pdir.glob("*.rec"), key=lambda p: int(p.stem)):
                study_index = int(rec_path.stem)
                rec = read_record(rec_path)
                image = read_image(pdir / f"{study_index}.img")
                patient.studies.append(
                    StudyRecord(
                        patient_id=pid,
                        study_index=study_index,
                        base_anatomy_seed=-1,
                        image=image,
                        report=rec["report"],
                        labels=rec["labels"],
                        tuples=rec["tuples"],
                        phrases=rec["phrases"],
                    )
                )
            if len(patient.studies) < 2:
                raise CorpusError(f"patient {pid} has fewer than two studies on disk")
            patients[pid] = patient
            splits[name].extend(patient.studies)
        if len(splits[name]) != manifest["counts"][name]:
            raise CorpusError(
                f"split {name}: manifest says {manifest['counts'][name]} studies, "
                f"found {len(splits[name])}"
            )
    return CorpusSplit(
        train=splits["train"],
        val=splits["val"],
        test=splits["test"],
        vocab=vocab,
        patients=patients,
        config=config,
    )


def find_study(corpus: CorpusSplit, study_id: str) -> StudyRecord:
    """Resolve a '<split>/<patient_id>/<study_index>' id."""
    parts = study_id.split("/")
    if len(parts) != 3:
        raise CorpusError(f"study id must be split/patient/study, got {study_id!r}")
    split_name, pid_s, sidx_s = parts
    try:
        pid, sidx = int(pid_s), int(sidx_s)
    except ValueError:
        raise CorpusError(f"non-numeric patient or study index in {study_id!r}") from None
    for study in corpus.split(split_name):
        if study.patient_id == pid and study.study_index == sidx:
            return study
    from .errors import StudyNotFoundError

    raise StudyNotFoundError(f"no study {study_id!r} in corpus")
