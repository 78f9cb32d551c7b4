"""Synthetic longitudinal radiograph-report corpus.

Each patient owns a fixed anatomy (a smooth textured background keyed by an
anatomy seed) and a short series of studies. A study overlays one glyph per
present finding inside its region cell; the report is composed from the same
labels through the template grammar, so report and image are consistent by
construction. Entity-relation tuples and refined key phrases are read off the
ground truth rather than extracted by an annotator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import (
    ABSENT,
    PRESENT,
    REGION_COLS,
    REGION_ROWS,
    FindingCatalog,
    FindingLabel,
    PhraseGrammar,
    ReportGrammar,
    canonical_order,
    default_catalog,
)
from .errors import ConfigError, PromptPoolError, SelectionError


@dataclass
class StudyRecord:
    patient_id: int
    study_index: int
    base_anatomy_seed: int
    image: np.ndarray  # H x W x 1 float32 in [0, 1]
    report: list[str]
    labels: frozenset[FindingLabel]
    tuples: list[tuple[str, str, str]]
    phrases: list[list[str]]

    @property
    def study_id(self) -> str:
        return f"{self.patient_id}/{self.study_index}"


@dataclass
class PatientRecord:
    patient_id: int
    base_anatomy_seed: int
    studies: list[StudyRecord] = field(default_factory=list)


# ---------------------------------------------------------------------------
# rendering


def region_cell(region_id: int, height: int, width: int) -> tuple[int, int, int, int]:
    """Pixel bounds (r0, r1, c0, c1) of a region in the 3x2 grid."""
    row, col = divmod(region_id, REGION_COLS)
    r0 = round(height * row / REGION_ROWS)
    r1 = round(height * (row + 1) / REGION_ROWS)
    c0 = round(width * col / REGION_COLS)
    c1 = round(width * (col + 1) / REGION_COLS)
    return r0, r1, c0, c1


def _smooth_field(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Bilinearly upsampled coarse noise: a per-anatomy smooth structure."""
    coarse = rng.normal(size=(8, 8))
    ys = np.linspace(0, 7, height)
    xs = np.linspace(0, 7, width)
    y0 = np.clip(ys.astype(int), 0, 6)
    x0 = np.clip(xs.astype(int), 0, 6)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    tl = coarse[np.ix_(y0, x0)]
    tr = coarse[np.ix_(y0, x0 + 1)]
    bl = coarse[np.ix_(y0 + 1, x0)]
    br = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (1 - wy) * ((1 - wx) * tl + wx * tr) + wy * ((1 - wx) * bl + wx * br)


def render_background(base_anatomy_seed: int, height: int, width: int) -> np.ndarray:
    """The all-absent render: identical for every study of a patient."""
    rng = np.random.default_rng(base_anatomy_seed)
    field_part = _smooth_field(rng, height, width)
    texture = rng.normal(scale=0.02, size=(height, width))
    img = 0.4 + 0.1 * field_part + texture
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _glyph_mask(finding_id: int, h: int, w: int) -> np.ndarray:
    """One distinct shape per finding kind, drawn on an h x w cell."""
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ry, rx = h / 3.2, w / 3.2
    dy, dx = (yy - cy) / ry, (xx - cx) / rx
    rad = np.sqrt(dy**2 + dx**2)
    kind = finding_id % 12
    if kind == 0:  # disk
        return rad <= 1.0
    if kind == 1:  # ring
        return (rad <= 1.0) & (rad >= 0.55)
    if kind == 2:  # cross
        return ((np.abs(yy - cy) <= h / 10) | (np.abs(xx - cx) <= w / 10)) & (rad <= 1.2)
    if kind == 3:  # horizontal bar
        return (np.abs(yy - cy) <= h / 8) & (np.abs(dx) <= 1.0)
    if kind == 4:  # vertical bar
        return (np.abs(xx - cx) <= w / 8) & (np.abs(dy) <= 1.0)
    if kind == 5:  # filled square
        return (np.abs(dy) <= 0.7) & (np.abs(dx) <= 0.7)
    if kind == 6:  # square outline
        inner = (np.abs(dy) <= 0.45) & (np.abs(dx) <= 0.45)
        outer = (np.abs(dy) <= 0.8) & (np.abs(dx) <= 0.8)
        return outer & ~inner
    if kind == 7:  # main diagonal stripe
        return (np.abs(dy - dx) <= 0.35) & (rad <= 1.4)
    if kind == 8:  # anti-diagonal stripe
        return (np.abs(dy + dx) <= 0.35) & (rad <= 1.4)
    if kind == 9:  # triangle (lower half wedge)
        return (dy >= -0.2) & (np.abs(dx) <= 0.75 * (1.0 - np.clip(-dy, -1, 1))) & (dy <= 0.85)
    if kind == 10:  # checker
        return (((yy // max(2, h // 8)) + (xx // max(2, w // 8))) % 2 == 0) & (rad <= 1.0)
    # kind == 11: dot grid
    step_y, step_x = max(3, h // 6), max(3, w // 6)
    return ((yy % step_y <= 1) & (xx % step_x <= 1)) & (rad <= 1.2)


def render_radiograph(
    study: StudyRecord,
    size: tuple[int, int],
    patch_size: int | None = None,
) -> np.ndarray:
    """Render a study image: anatomy background plus one glyph per present label.

    Glyphs stay strictly inside their region cell; severity scales intensity.
    """
    height, width = size
    if patch_size is not None and (height % patch_size or width % patch_size):
        raise ConfigError(
            f"image size {height}x{width} not divisible by patch size {patch_size}"
        )
    img = render_background(study.base_anatomy_seed, height, width).astype(np.float64)
    for label in canonical_order(study.labels):
        if label.polarity != PRESENT:
            continue
        r0, r1, c0, c1 = region_cell(label.region_id, height, width)
        mask = _glyph_mask(label.finding_id, r1 - r0, c1 - c0)
        intensity = 0.25 + 0.15 * label.severity
        img[r0:r1, c0:c1][mask] += intensity
    return np.clip(img, 0.0, 1.0).astype(np.float32)[..., None]


# ---------------------------------------------------------------------------
# reports, tuples, phrases


def compose_report(labels, grammar: ReportGrammar) -> list[str]:
    return grammar.compose(labels)


def extract_tuples(study: StudyRecord) -> list[tuple[str, str, str]]:
    """One (entity, relation, region) tuple per present label, canonical order."""
    catalog = default_catalog()
    phrase_grammar = PhraseGrammar(catalog)
    out = []
    for label in canonical_order(study.labels):
        if label.polarity != PRESENT:
            continue
        out.append(
            (
                catalog.findings[label.finding_id],
                phrase_grammar.relation_text(label.polarity, label.severity),
                catalog.regions[label.region_id],
            )
        )
    return out


def refine_tuples_to_phrases(
    tuples: list[tuple[str, str, str]], grammar: PhraseGrammar
) -> list[list[str]]:
    """Deterministic refiner: each positive tuple becomes one phrase, in order."""
    phrases = []
    for entity, relation, region in tuples:
        if not grammar.is_positive(relation):
            continue
        phrases.append(grammar.phrase(entity, relation, region))
    return phrases


def _format_tuples(tuples: list[tuple[str, str, str]]) -> str:
    if not tuples:
        return "(none)"
    return "; ".join(f"({e} | {rel} | {reg})" for e, rel, reg in tuples)


def build_demo_pool(
    grammar: PhraseGrammar, size: int = 8, seed: int = 20_240_001
) -> list[tuple[list[tuple[str, str, str]], list[list[str]]]]:
    """A fixed pool of (tuples, phrases) demonstrations for prompt rendering."""
    rng = np.random.default_rng(seed)
    catalog = grammar.catalog
    pool = []
    for _ in range(size):
        count = int(rng.integers(1, 4))
        tuples = []
        for _ in range(count):
            entity = catalog.findings[int(rng.integers(catalog.n_findings))]
            severity = int(rng.integers(catalog.n_severities))
            region = catalog.regions[int(rng.integers(catalog.n_regions))]
            tuples.append((entity, grammar.relation_text(PRESENT, severity), region))
        pool.append((tuples, refine_tuples_to_phrases(tuples, grammar)))
    return pool


def render_refinement_prompt(
    tuples: list[tuple[str, str, str]],
    demos: list[tuple[list[tuple[str, str, str]], list[list[str]]]],
    n_demos: int = 3,
    seed: int = 0,
) -> str:
    """Assemble the two-part phrase-refinement prompt.

    The system section embeds ``n_demos`` demonstrations sampled without
    replacement from ``demos``; the user section carries the query tuples.
    Layout is stable for a fixed seed.
    """
    if n_demos > len(demos):
        raise PromptPoolError(f"need {n_demos} demos, pool has {len(demos)}")
    rng = np.random.default_rng(seed)
    picks = [demos[i] for i in sorted(rng.choice(len(demos), size=n_demos, replace=False))] if n_demos else []
    lines = [
        "SYSTEM:",
        "You rewrite structured (entity | relation | region) tuples as short,",
        "natural clinical phrases. Emit one phrase per tuple whose relation is",
        "positive, in the given order, separated by semicolons.",
        "",
    ]
    for i, (demo_tuples, demo_phrases) in enumerate(picks, start=1):
        lines.append(f"Example {i}:")
        lines.append(f"Input: {_format_tuples(demo_tuples)}")
        rendered = "; ".join(" ".join(p) for p in demo_phrases) or "(none)"
        lines.append(f"Output: {rendered}")
        lines.append("")
    lines.append("---")
    lines.append("USER:")
    lines.append(f"Input: {_format_tuples(tuples)}")
    lines.append("Output:")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# patients


def _draw_labels(rng: np.random.Generator, catalog: FindingCatalog) -> frozenset[FindingLabel]:
    n_slots = int(rng.integers(1, 5))
    slots = rng.choice(catalog.n_findings * catalog.n_regions, size=n_slots, replace=False)
    labels = []
    for slot in sorted(int(s) for s in slots):
        finding_id, region_id = divmod(slot, catalog.n_regions)
        polarity = PRESENT if rng.random() < 0.7 else ABSENT
        severity = int(rng.integers(catalog.n_severities)) if polarity == PRESENT else 0
        labels.append(FindingLabel(finding_id, region_id, polarity, severity))
    return frozenset(labels)


def _mutate_labels(
    rng: np.random.Generator, labels: frozenset[FindingLabel], catalog: FindingCatalog
) -> frozenset[FindingLabel]:
    """A follow-up label set guaranteed to differ from the previous one."""
    for _ in range(64):
        candidate = _apply_mutation(rng, labels, catalog)
        if candidate != labels:
            return candidate
    raise AssertionError("mutation failed to change the label set")


def _apply_mutation(rng, labels, catalog) -> frozenset[FindingLabel]:
    current = list(canonical_order(labels))
    move = rng.random()
    if current and move < 0.3:  # drop one
        victim = current[int(rng.integers(len(current)))]
        return frozenset(l for l in current if l is not victim)
    if current and move < 0.6:  # flip or rescale one
        idx = int(rng.integers(len(current)))
        old = current[idx]
        if old.polarity == PRESENT and rng.random() < 0.5:
            new = FindingLabel(old.finding_id, old.region_id, ABSENT, 0)
        else:
            severity = int(rng.integers(catalog.n_severities))
            new = FindingLabel(old.finding_id, old.region_id, PRESENT, severity)
        current[idx] = new
        return frozenset(current)
    # add a fresh slot
    taken = {l.slot() for l in current}
    free = [s for s in range(catalog.n_findings * catalog.n_regions)
            if divmod(s, catalog.n_regions) not in taken]
    if not free:
        return frozenset(current[1:])
    slot = free[int(rng.integers(len(free)))]
    finding_id, region_id = divmod(slot, catalog.n_regions)
    polarity = PRESENT if rng.random() < 0.7 else ABSENT
    severity = int(rng.integers(catalog.n_severities)) if polarity == PRESENT else 0
    return frozenset(current + [FindingLabel(finding_id, region_id, polarity, severity)])


def gen_patient(
    seed: int,
    catalog: FindingCatalog,
    patient_id: int | None = None,
    image_size: tuple[int, int] = (64, 64),
    min_studies: int = 2,
    max_studies: int = 3,
    patch_size: int | None = None,
) -> PatientRecord:
    """Generate one patient: shared anatomy, >= 2 studies, consecutive label drift.

    Deterministic for a fixed seed; the anatomy seed equals the patient seed,
    so distinct seeds can never collide on anatomy.
    """
    if seed < 0:
        raise ConfigError("patient seed must be non-negative")
    if not catalog.findings:
        raise ConfigError("catalog is empty")
    if min_studies < 2 or max_studies < min_studies:
        raise ConfigError("patients need at least two studies")
    pid = seed if patient_id is None else patient_id
    rng = np.random.default_rng(seed)
    report_grammar = ReportGrammar(catalog)
    phrase_grammar = PhraseGrammar(catalog)
    n_studies = int(rng.integers(min_studies, max_studies + 1))
    patient = PatientRecord(patient_id=pid, base_anatomy_seed=seed)
    labels = _draw_labels(rng, catalog)
    for study_index in range(n_studies):
        if study_index > 0:
            labels = _mutate_labels(rng, labels, catalog)
        study = StudyRecord(
            patient_id=pid,
            study_index=study_index,
            base_anatomy_seed=seed,
            image=np.empty(0, dtype=np.float32),
            report=[],
            labels=labels,
            tuples=[],
            phrases=[],
        )
        study.image = render_radiograph(study, image_size, patch_size)
        study.report = compose_report(labels, report_grammar)
        study.tuples = extract_tuples(study)
        study.phrases = refine_tuples_to_phrases(study.tuples, phrase_grammar)
        patient.studies.append(study)
    return patient


def select_reference(
    patient: PatientRecord, study_index: int, rng: np.random.Generator
) -> list[str]:
    """The report of a uniformly chosen *other* study of the same patient."""
    others = [s for s in patient.studies if s.study_index != study_index]
    if not others:
        raise SelectionError(f"patient {patient.patient_id} has a single study")
    return others[int(rng.integers(len(others)))].report
