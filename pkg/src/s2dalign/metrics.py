"""Text-overlap and clinical-efficacy metrics.

BLEU uses clipped n-gram counts with uniform weights and an add-epsilon
floor so short toy reports with no 4-gram overlap still score nonzero.
ROUGE-L is the recall-weighted LCS F-measure (beta = 1.2). CE parses
generated reports back into findings labels with the exact template grammar
and micro-averages precision/recall/F1 over present findings.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import exp, log

from .catalog import PRESENT, SPECIALS, FindingLabel, ReportGrammar
from .errors import MetricsError

EPS = 1e-9
ROUGE_BETA = 1.2


def content_tokens(tokens) -> list[str]:
    return [t for t in tokens if t not in SPECIALS]


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(candidate: list[str], references: list[list[str]], n: int):
    cand = _ngram_counts(candidate, n)
    if not cand:
        return 0, 0
    best: Counter = Counter()
    for ref in references:
        for gram, count in _ngram_counts(ref, n).items():
            if count > best[gram]:
                best[gram] = count
    matched = sum(min(count, best[gram]) for gram, count in cand.items())
    return matched, sum(cand.values())


def _closest_ref_length(cand_len: int, references: list[list[str]]) -> int:
    # closest length; ties resolved toward the shorter reference
    return min((abs(len(r) - cand_len), len(r)) for r in references)[1]


def _bleu_from_stats(stats: list[tuple[int, int]], cand_len: int, ref_len: int) -> float:
    # orders the candidate is too short to produce are excluded (identity
    # stays exactly 1.0); zero matches over a nonzero denominator floor at EPS
    log_sum = 0.0
    orders = 0
    for matched, total in stats:
        if total == 0:
            continue
        orders += 1
        precision = matched / total if matched else EPS / total
        log_sum += log(precision)
    if orders == 0:
        return 0.0
    geo = exp(log_sum / orders)
    bp = 1.0 if cand_len > ref_len else exp(1.0 - ref_len / max(cand_len, 1))
    return bp * geo


def bleu_n(candidate, references, n: int) -> float:
    """Single-candidate BLEU against one or more references."""
    if not 1 <= n <= 4:
        raise MetricsError(f"n must be in 1..4, got {n}")
    if not references or any(len(r) == 0 for r in references):
        raise MetricsError("references must be non-empty")
    candidate = list(candidate)
    if not candidate:
        return 0.0
    stats = [_clipped_matches(candidate, references, k) for k in range(1, n + 1)]
    return _bleu_from_stats(stats, len(candidate), _closest_ref_length(len(candidate), references))


def corpus_bleu(candidates, references_per, n: int) -> float:
    """Aggregate-count BLEU over a corpus (the table-reporting variant)."""
    if len(candidates) != len(references_per):
        raise MetricsError("candidate/reference count mismatch")
    totals = [[0, 0] for _ in range(n)]
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references_per):
        cand = list(cand)
        if not cand:
            ref_len += _closest_ref_length(0, refs)
            continue
        cand_len += len(cand)
        ref_len += _closest_ref_length(len(cand), refs)
        for k in range(1, n + 1):
            matched, total = _clipped_matches(cand, refs, k)
            totals[k - 1][0] += matched
            totals[k - 1][1] += total
    if cand_len == 0:
        return 0.0
    return _bleu_from_stats([tuple(t) for t in totals], cand_len, ref_len)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    """LCS F-measure, recall-weighted (beta = 1.2)."""
    candidate, reference = list(candidate), list(reference)
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    b2 = ROUGE_BETA**2
    return (1 + b2) * p * r / (r + b2 * p)


def parse_findings(report_tokens, grammar: ReportGrammar) -> set[FindingLabel]:
    """Extract findings labels from (possibly malformed) report tokens."""
    return grammar.parse(report_tokens)


def _present_slots(labels) -> set[tuple[int, int]]:
    return {(l.finding_id, l.region_id) for l in labels if l.polarity == PRESENT}


def ce_scores(predictions, ground_truths, macro: bool = False):
    """Precision/recall/F1 over present findings.

    Micro by default: confusion counts pool across the whole set. Severity is
    not scored; a finding counts as matched when (finding, region) agree.
    """
    if len(predictions) != len(ground_truths):
        raise MetricsError(
            f"got {len(predictions)} predictions for {len(ground_truths)} truths"
        )
    per_sample = []
    tp = fp = fn = 0
    for pred, truth in zip(predictions, ground_truths):
        p_slots, t_slots = _present_slots(pred), _present_slots(truth)
        s_tp = len(p_slots & t_slots)
        s_fp = len(p_slots - t_slots)
        s_fn = len(t_slots - p_slots)
        tp, fp, fn = tp + s_tp, fp + s_fp, fn + s_fn
        per_sample.append((s_tp, s_fp, s_fn))
    if macro:
        triples = per_sample or [(0, 0, 0)]
        scored = [_prf(*t) for t in triples]
        n = len(scored)
        return tuple(sum(s[i] for s in scored) / n for i in range(3))
    return _prf(tp, fp, fn)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = tp / (tp + fn) if (tp + fn) else 1.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return precision, recall, f1


@dataclass
class MetricReport:
    bleu_1: float
    bleu_2: float
    bleu_3: float
    bleu_4: float
    rouge_l: float
    ce_precision: float
    ce_recall: float
    ce_f1: float
    n_samples: int

    def validate(self) -> None:
        for name in ("bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l",
                     "ce_precision", "ce_recall", "ce_f1"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise MetricsError(f"{name} = {value} outside [0, 1]")

    def as_dict(self) -> dict[str, float]:
        return {
            "bleu_1": self.bleu_1, "bleu_2": self.bleu_2,
            "bleu_3": self.bleu_3, "bleu_4": self.bleu_4,
            "rouge_l": self.rouge_l, "ce_precision": self.ce_precision,
            "ce_recall": self.ce_recall, "ce_f1": self.ce_f1,
            "n_samples": self.n_samples,
        }


def score_generations(
    generated: list[list[str]],
    gold: list[list[str]],
    grammar: ReportGrammar,
) -> MetricReport:
    """Full metric sweep over decoded token sequences (specials stripped here)."""
    if len(generated) != len(gold):
        raise MetricsError("generated/gold count mismatch")
    if not generated:
        raise MetricsError("nothing to score")
    cands = [content_tokens(g) for g in generated]
    refs = [[content_tokens(g)] for g in gold]
    pred_labels = [parse_findings(c, grammar) for c in cands]
    true_labels = [parse_findings(r[0], grammar) for r in refs]
    p, r, f1 = ce_scores(pred_labels, true_labels)
    rl = sum(rouge_l(c, rf[0]) for c, rf in zip(cands, refs)) / len(cands)
    report = MetricReport(
        bleu_1=corpus_bleu(cands, refs, 1),
        bleu_2=corpus_bleu(cands, refs, 2),
        bleu_3=corpus_bleu(cands, refs, 3),
        bleu_4=corpus_bleu(cands, refs, 4),
        rouge_l=rl,
        ce_precision=p,
        ce_recall=r,
        ce_f1=f1,
        n_samples=len(cands),
    )
    report.validate()
    return report
