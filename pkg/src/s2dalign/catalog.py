"""Findings catalog and the closed report/phrase grammar.

The catalog enumerates finding kinds, anatomical regions (a 3x2 grid:
apex/mid/base rows, left/right columns), and severities. The grammar turns
labels into report sentences and positive tuples into key phrases, and can
parse grammar-shaped sentences back into labels. All surface strings live in
``data/grammar.json`` so tests can pin exact outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .errors import GrammarError

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
SPECIALS = (PAD, BOS, EOS)

PRESENT = "present"
ABSENT = "absent"

REGION_ROWS = 3  # apex / mid / base
REGION_COLS = 2  # left / right


@dataclass(frozen=True, order=True)
class FindingLabel:
    """One finding assertion: (what, where, whether, how strongly)."""

    finding_id: int
    region_id: int
    polarity: str  # PRESENT or ABSENT
    severity: int  # 0..n_severities-1; meaningful only when present

    def slot(self) -> tuple[int, int]:
        """The (finding, region) pair; at most one label per slot per study."""
        return (self.finding_id, self.region_id)


@dataclass(frozen=True)
class FindingCatalog:
    findings: tuple[str, ...]
    regions: tuple[str, ...]
    severities: tuple[str, ...]

    @property
    def n_findings(self) -> int:
        return len(self.findings)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_severities(self) -> int:
        return len(self.severities)

    def validate_label(self, label: FindingLabel) -> None:
        if not (0 <= label.finding_id < self.n_findings):
            raise GrammarError(f"finding_id {label.finding_id} outside catalog")
        if not (0 <= label.region_id < self.n_regions):
            raise GrammarError(f"region_id {label.region_id} outside catalog")
        if label.polarity not in (PRESENT, ABSENT):
            raise GrammarError(f"polarity {label.polarity!r} unknown")
        if not (0 <= label.severity < self.n_severities):
            raise GrammarError(f"severity {label.severity} outside catalog")


def _grammar_spec() -> dict:
    with resources.files("s2dalign.data").joinpath("grammar.json").open() as fh:
        return json.load(fh)


def default_catalog() -> FindingCatalog:
    spec = _grammar_spec()
    return FindingCatalog(
        findings=tuple(spec["findings"]),
        regions=tuple(spec["regions"]),
        severities=tuple(spec["severities"]),
    )


def canonical_order(labels) -> list[FindingLabel]:
    """Region-major, then finding id: the fixed sentence order of reports."""
    return sorted(labels, key=lambda l: (l.region_id, l.finding_id))


class ReportGrammar:
    """Labels -> report tokens and (robustly) back."""

    def __init__(self, catalog: FindingCatalog | None = None):
        spec = _grammar_spec()
        self.catalog = catalog or default_catalog()
        self.preamble = spec["preamble"].split()
        self.closing = spec["closing"].split()
        self.normal_sentence = spec["normal_sentence"].split()
        self._present_template = spec["present_template"]
        self._absent_template = spec["absent_template"]
        self._finding_ids = {w: i for i, w in enumerate(self.catalog.findings)}
        self._severity_ids = {w: i for i, w in enumerate(self.catalog.severities)}
        self._region_ids = {tuple(r.split()): i for i, r in enumerate(self.catalog.regions)}

    def sentence(self, label: FindingLabel) -> list[str]:
        self.catalog.validate_label(label)
        region = self.catalog.regions[label.region_id]
        finding = self.catalog.findings[label.finding_id]
        if label.polarity == PRESENT:
            text = self._present_template.format(
                severity=self.catalog.severities[label.severity],
                finding=finding,
                region=region,
            )
        else:
            text = self._absent_template.format(finding=finding, region=region)
        return text.split()

    def compose(self, labels) -> list[str]:
        """Full report: preamble, one sentence per label in canonical order
        (or the normal sentence when empty), closing, EOS."""
        tokens = list(self.preamble)
        ordered = canonical_order(labels)
        if not ordered:
            tokens += self.normal_sentence
        for label in ordered:
            tokens += self.sentence(label)
        tokens += self.closing
        tokens.append(EOS)
        return tokens

    def parse(self, tokens) -> set[FindingLabel]:
        """Scan for grammar-shaped sentences; skip anything malformed.

        Contradictory mentions of the same (finding, region) slot resolve to
        the later mention.
        """
        words = [t for t in tokens if t not in SPECIALS]
        by_slot: dict[tuple[int, int], FindingLabel] = {}
        sentence: list[str] = []
        for w in words:
            if w != ".":
                sentence.append(w)
                continue
            label = self._parse_sentence(sentence)
            sentence = []
            if label is not None:
                by_slot[label.slot()] = label
        return set(by_slot.values())

    def _parse_sentence(self, words: list[str]) -> FindingLabel | None:
        # there is no F at the R...   |   there is S F at the R...
        if len(words) < 6 or words[0] != "there" or words[1] != "is":
            return None
        if words[2] == "no":
            polarity, severity, finding_word, rest = ABSENT, 0, words[3], words[4:]
        else:
            polarity = PRESENT
            severity = self._severity_ids.get(words[2])
            finding_word, rest = words[3], words[4:]
            if severity is None:
                return None
        finding_id = self._finding_ids.get(finding_word)
        if finding_id is None or len(rest) < 2 or rest[0] != "at" or rest[1] != "the":
            return None
        region_id = self._region_ids.get(tuple(rest[2:]))
        if region_id is None:
            return None
        return FindingLabel(finding_id, region_id, polarity, severity)

    def all_tokens(self) -> list[str]:
        """Every surface token the grammar can emit (specials excluded)."""
        seen: dict[str, None] = {}
        for chunk in (self.preamble, self.normal_sentence, self.closing):
            for w in chunk:
                seen[w] = None
        for template in (self._present_template, self._absent_template):
            for w in template.split():
                if not (w.startswith("{") and w.endswith("}")):
                    seen[w] = None
        for group in (self.catalog.severities, self.catalog.findings, self.catalog.regions):
            for phrase in group:
                for w in phrase.split():
                    seen[w] = None
        return list(seen)


class PhraseGrammar:
    """Positive entity-relation tuples -> short key phrases."""

    def __init__(self, catalog: FindingCatalog | None = None):
        spec = _grammar_spec()
        self.catalog = catalog or default_catalog()
        self._template = spec["phrase_template"]
        self._known_entities = set(self.catalog.findings)
        self._known_severities = set(self.catalog.severities)

    def relation_text(self, polarity: str, severity: int) -> str:
        if polarity == PRESENT:
            return f"present-{self.catalog.severities[severity]}"
        return ABSENT

    def is_positive(self, relation: str) -> bool:
        return relation.startswith("present")

    def phrase(self, entity: str, relation: str, region: str) -> list[str]:
        if entity not in self._known_entities:
            raise GrammarError(f"unknown entity {entity!r}")
        severity_word = relation.split("-", 1)[1] if "-" in relation else ""
        if severity_word not in self._known_severities:
            raise GrammarError(f"relation {relation!r} carries no known severity")
        return self._template.format(
            severity=severity_word, finding=entity, region=region
        ).split()
