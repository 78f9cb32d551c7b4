from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pytest

from s2dalign.catalog import SPECIALS, default_catalog
from s2dalign.corpusio import (
    CorpusConfig,
    Vocab,
    build_corpus,
    find_study,
    load_corpus,
    load_manifest,
    read_image,
    read_record,
    save_corpus,
    write_image,
    write_record,
)
from s2dalign.errors import ConfigError, CorpusError, StudyNotFoundError, VocabError
from s2dalign.syndata import gen_patient


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def test_image_round_trip_exact(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.random((48, 32, 1)).astype(np.float32)
    write_image(tmp_path / "x.img", img)
    back = read_image(tmp_path / "x.img")
    assert back.dtype == np.float32
    assert np.array_equal(img, back)


def test_image_write_is_deterministic(tmp_path):
    img = np.random.default_rng(2).random((16, 16, 1)).astype(np.float32)
    write_image(tmp_path / "a.img", img)
    write_image(tmp_path / "b.img", img)
    assert (tmp_path / "a.img").read_bytes() == (tmp_path / "b.img").read_bytes()


def test_image_rejects_truncation_and_bad_magic(tmp_path):
    img = np.zeros((8, 8, 1), dtype=np.float32)
    write_image(tmp_path / "x.img", img)
    data = (tmp_path / "x.img").read_bytes()
    (tmp_path / "short.img").write_bytes(data[:-7])
    with pytest.raises(CorpusError):
        read_image(tmp_path / "short.img")
    (tmp_path / "bad.img").write_bytes(b"WRONG!\0" + data[7:])
    with pytest.raises(CorpusError):
        read_image(tmp_path / "bad.img")


def test_record_round_trip(tmp_path):
    study = gen_patient(9, default_catalog()).studies[0]
    write_record(tmp_path / "r.rec", study)
    back = read_record(tmp_path / "r.rec")
    assert back["report"] == study.report
    assert back["labels"] == study.labels
    assert back["tuples"] == study.tuples
    assert back["phrases"] == study.phrases


def test_record_rejects_malformed_lines(tmp_path):
    (tmp_path / "bad.rec").write_text("LABEL\t1\t2\n", encoding="utf-8")
    with pytest.raises(CorpusError):
        read_record(tmp_path / "bad.rec")
    (tmp_path / "nokind.rec").write_text("WHAT\tx\n", encoding="utf-8")
    with pytest.raises(CorpusError):
        read_record(tmp_path / "nokind.rec")
    (tmp_path / "noreport.rec").write_text("PHRASE\ta b\n", encoding="utf-8")
    with pytest.raises(CorpusError):
        read_record(tmp_path / "noreport.rec")


def test_vocab_layout_and_errors():
    v = Vocab(list(SPECIALS) + ["alpha", "beta"])
    assert v.encode(["alpha", "<eos>"]) == [3, 2]
    assert v.decode([3, 4]) == ["alpha", "beta"]
    with pytest.raises(VocabError, match="gamma"):
        v.encode(["gamma"])
    with pytest.raises(VocabError):
        Vocab(["alpha"] + list(SPECIALS))
    with pytest.raises(VocabError):
        Vocab(list(SPECIALS) + ["dup", "dup"])


def test_corpus_vocab_covers_reports_and_phrases(tiny_corpus):
    v = tiny_corpus.vocab
    assert v.tokens[:3] == list(SPECIALS)
    assert v.tokens[3:] == sorted(v.tokens[3:])
    for study in tiny_corpus.train:
        v.encode(study.report)
        for phrase in study.phrases:
            v.encode(phrase)


def test_corpus_counts_and_patient_disjointness(tiny_corpus):
    cfg = tiny_corpus.config
    seen: dict[str, set[int]] = {}
    for name, want in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        studies = tiny_corpus.split(name)
        pids = {s.patient_id for s in studies}
        assert len(pids) == want, f"{name}: {len(pids)} patients"
        assert len(studies) >= 2 * want  # every patient has >= 2 studies
        seen[name] = pids
    assert not (seen["train"] & seen["val"])
    assert not (seen["train"] & seen["test"])
    assert not (seen["val"] & seen["test"])


def test_corpus_regeneration_identical(tiny_config):
    a = build_corpus(tiny_config.corpus)
    b = build_corpus(tiny_config.corpus)
    for split in ("train", "val", "test"):
        for s1, s2 in zip(a.split(split), b.split(split)):
            assert np.array_equal(s1.image, s2.image)
            assert s1.report == s2.report


def test_different_corpus_seed_changes_content(tiny_config):
    other = CorpusConfig(**{**{f: getattr(tiny_config.corpus, f) for f in (
        "n_train", "n_val", "n_test", "image_size", "patch_size",
        "min_studies", "max_studies")}, "seed": tiny_config.corpus.seed + 1})
    a = build_corpus(tiny_config.corpus)
    b = build_corpus(other)
    assert any(
        not np.array_equal(s1.image, s2.image)
        for s1, s2 in zip(a.train, b.train)
    )


def test_save_load_round_trip_and_manifest(tiny_corpus, tmp_path):
    root = tmp_path / "corpus"
    save_corpus(tiny_corpus, root)
    manifest = load_manifest(root)
    assert manifest["counts"]["train"] == len(tiny_corpus.train)
    back = load_corpus(root)
    assert len(back.vocab) == len(tiny_corpus.vocab)
    for split in ("train", "val", "test"):
        orig, loaded = tiny_corpus.split(split), back.split(split)
        assert len(orig) == len(loaded)
        for s1, s2 in zip(orig, loaded):
            assert (s1.patient_id, s1.study_index) == (s2.patient_id, s2.study_index)
            assert np.array_equal(s1.image, s2.image)
            assert s1.report == s2.report
            assert s1.labels == s2.labels
            assert s1.phrases == s2.phrases
    for pid, patient in back.patients.items():
        assert len(patient.studies) >= 2


def test_save_twice_identical_bytes(tiny_corpus, tmp_path):
    save_corpus(tiny_corpus, tmp_path / "a")
    save_corpus(tiny_corpus, tmp_path / "b")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_find_study(tiny_corpus):
    study = tiny_corpus.test[0]
    sid = f"test/{study.patient_id}/{study.study_index}"
    assert find_study(tiny_corpus, sid) is study
    with pytest.raises(StudyNotFoundError):
        find_study(tiny_corpus, "test/999999/0")
    with pytest.raises(CorpusError):
        find_study(tiny_corpus, "not-an-id")


def test_corpus_config_validation():
    with pytest.raises(ConfigError):
        CorpusConfig(n_train=0).validate()
    with pytest.raises(ConfigError):
        CorpusConfig(image_size=(60, 64)).validate()
    with pytest.raises(ConfigError):
        CorpusConfig(min_studies=1).validate()
    with pytest.raises(ConfigError):
        CorpusConfig(seed=-1).validate()
