from __future__ import annotations

import numpy as np
import pytest

from s2dalign.catalog import PRESENT, FindingLabel, PhraseGrammar, default_catalog
from s2dalign.errors import ConfigError, PromptPoolError, SelectionError
from s2dalign.syndata import (
    StudyRecord,
    build_demo_pool,
    gen_patient,
    region_cell,
    render_background,
    render_radiograph,
    render_refinement_prompt,
    select_reference,
)


@pytest.fixture(scope="module")
def catalog():
    return default_catalog()


def _study(labels, seed=3):
    return StudyRecord(
        patient_id=0, study_index=0, base_anatomy_seed=seed,
        image=np.empty(0, dtype=np.float32), report=[], labels=frozenset(labels),
        tuples=[], phrases=[],
    )


def test_region_cells_tile_the_image_exactly():
    h, w = 63, 50  # deliberately not divisible by the grid
    covered = np.zeros((h, w), dtype=int)
    for rid in range(6):
        r0, r1, c0, c1 = region_cell(rid, h, w)
        assert r0 < r1 and c0 < c1
        covered[r0:r1, c0:c1] += 1
    assert (covered == 1).all()


def test_background_keyed_only_by_anatomy_seed():
    a = render_background(7, 64, 64)
    b = render_background(7, 64, 64)
    c = render_background(8, 64, 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.dtype == np.float32
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_absent_labels_leave_background_untouched():
    labels = [FindingLabel(0, 0, "absent", 0)]
    img = render_radiograph(_study(labels), (64, 64))
    bg = render_background(3, 64, 64)[..., None]
    assert np.array_equal(img, bg)


def test_glyphs_stay_inside_their_cell():
    bg = render_background(3, 64, 64)[..., None]
    for finding in range(12):
        for region in range(6):
            img = render_radiograph(_study([FindingLabel(finding, region, PRESENT, 2)]),
                                    (64, 64))
            diff = np.abs(img - bg)[..., 0]
            r0, r1, c0, c1 = region_cell(region, 64, 64)
            outside = diff.copy()
            outside[r0:r1, c0:c1] = 0.0
            assert outside.max() == 0.0, (finding, region)
            assert diff[r0:r1, c0:c1].max() > 0.0, (finding, region)


def test_distinct_findings_render_distinct_glyphs():
    imgs = [
        render_radiograph(_study([FindingLabel(f, 0, PRESENT, 1)]), (64, 64))
        for f in range(12)
    ]
    for i in range(12):
        for j in range(i + 1, 12):
            assert not np.array_equal(imgs[i], imgs[j]), (i, j)


def test_severity_scales_intensity():
    deltas = []
    bg = render_background(3, 64, 64)[..., None]
    for sev in range(3):
        img = render_radiograph(_study([FindingLabel(0, 0, PRESENT, sev)]), (64, 64))
        deltas.append(float((img - bg).sum()))
    assert deltas[0] < deltas[1] < deltas[2]


def test_render_rejects_patch_indivisible_size():
    with pytest.raises(ConfigError):
        render_radiograph(_study([]), (60, 64), patch_size=8)


def test_gen_patient_deterministic_and_multi_study(catalog):
    p1 = gen_patient(42, catalog)
    p2 = gen_patient(42, catalog)
    assert len(p1.studies) >= 2
    assert len(p1.studies) == len(p2.studies)
    for s1, s2 in zip(p1.studies, p2.studies):
        assert np.array_equal(s1.image, s2.image)
        assert s1.report == s2.report
        assert s1.labels == s2.labels
        assert s1.phrases == s2.phrases


def test_studies_share_anatomy_but_differ_in_labels(catalog):
    rng = np.random.default_rng(0)
    for seed in rng.integers(0, 10_000, size=25):
        patient = gen_patient(int(seed), catalog)
        assert len({s.base_anatomy_seed for s in patient.studies}) == 1
        for a, b in zip(patient.studies, patient.studies[1:]):
            assert a.labels != b.labels, f"seed {seed}: consecutive studies identical"


def test_reports_parse_back_to_labels(catalog):
    from s2dalign.catalog import ReportGrammar

    grammar = ReportGrammar(catalog)
    for seed in range(30):
        for study in gen_patient(seed, catalog).studies:
            assert grammar.parse(study.report) == set(study.labels)


def test_tuples_are_present_only_and_phrases_match(catalog):
    pg = PhraseGrammar(catalog)
    for seed in range(30):
        for study in gen_patient(seed, catalog).studies:
            n_present = sum(1 for l in study.labels if l.polarity == PRESENT)
            assert len(study.tuples) == n_present
            assert all(pg.is_positive(rel) for _, rel, _ in study.tuples)
            assert len(study.phrases) == len(study.tuples)


def test_select_reference_uniform_over_other_studies(catalog):
    patient = gen_patient(11, catalog, max_studies=3, min_studies=3)
    assert len(patient.studies) == 3
    rng = np.random.default_rng(123)
    hits = {1: 0, 2: 0}
    n = 10_000
    for _ in range(n):
        ref = select_reference(patient, 0, rng)
        for idx in (1, 2):
            if ref == patient.studies[idx].report:
                hits[idx] += 1
    assert hits[1] + hits[2] == n
    assert abs(hits[1] / n - 0.5) < 0.02


def test_select_reference_never_returns_self(catalog):
    patient = gen_patient(13, catalog)
    rng = np.random.default_rng(5)
    own = patient.studies[0].report
    siblings = {tuple(s.report) for s in patient.studies[1:]}
    for _ in range(200):
        got = tuple(select_reference(patient, 0, rng))
        assert got in siblings
        # reports of different label sets differ, so identity would show up
        assert got != tuple(own) or tuple(own) in siblings


def test_select_reference_requires_sibling(catalog):
    patient = gen_patient(17, catalog)
    patient.studies = patient.studies[:1]
    with pytest.raises(SelectionError):
        select_reference(patient, 0, np.random.default_rng(0))


def test_prompt_rendering_fixed_seed_is_stable():
    pool = build_demo_pool(PhraseGrammar())
    tuples = [("nodule", "present-mild", "left apex")]
    a = render_refinement_prompt(tuples, pool, n_demos=3, seed=4)
    b = render_refinement_prompt(tuples, pool, n_demos=3, seed=4)
    assert a == b
    assert a.count("Example") == 3
    assert "---" in a
    system, user = a.split("---")
    assert "nodule" in user


def test_prompt_with_no_tuples_has_empty_query_and_output():
    pool = build_demo_pool(PhraseGrammar())
    text = render_refinement_prompt([], pool, n_demos=3, seed=0)
    user = text.split("---")[1]
    assert "(none)" in user or "none" in user.lower()


def test_prompt_pool_too_small_raises():
    pool = build_demo_pool(PhraseGrammar(), size=2)
    with pytest.raises(PromptPoolError):
        render_refinement_prompt([], pool, n_demos=3, seed=0)
