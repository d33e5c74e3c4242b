"""Thresholded classification and evaluation reports.

Per-relation decision thresholds are tuned on dev by exhaustive search
over the observed probabilities; micro scores pool TP/FP/FN over all
non-NULL relations while macro averages per-relation scores without
support weighting. Also: exact-span NER F1 over BIO tags, evaluation
restricted by mention distance, and ensembling by averaging the
per-class probabilities of aligned prediction sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Document, NULL_LABEL
from .scorer import PairPrediction

log = logging.getLogger(__name__)


@dataclass
class PRF:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def support(self) -> int:
        return self.tp + self.fn


@dataclass
class MetricReport:
    per_relation: dict[str, PRF] = field(default_factory=dict)
    micro: PRF = field(default_factory=PRF)
    repaired: int = 0

    @property
    def macro_precision(self) -> float:
        rows = self.per_relation.values()
        return sum(r.precision for r in rows) / len(self.per_relation) if rows else 0.0

    @property
    def macro_recall(self) -> float:
        rows = self.per_relation.values()
        return sum(r.recall for r in rows) / len(self.per_relation) if rows else 0.0

    @property
    def macro_f1(self) -> float:
        rows = self.per_relation.values()
        return sum(r.f1 for r in rows) / len(self.per_relation) if rows else 0.0


def _as_label_set(value) -> set[str]:
    return {value} if isinstance(value, str) else set(value)


def classify(probs: dict[str, float], thresholds: dict[str, float],
             null_label: str = NULL_LABEL) -> str:
    """Most probable class overall; a non-NULL winner below its
    relation-specific threshold falls back to NULL."""
    best = min(sorted(probs), key=lambda l: -probs[l])
    if best == null_label:
        return best
    if probs[best] < thresholds.get(best, 0.5):
        return null_label
    return best


def tune_thresholds(predictions: list[PairPrediction], gold: dict,
                    null_label: str = NULL_LABEL) -> dict[str, float]:
    """Per-relation threshold maximizing that relation's dev F1.

    The grid is every distinct observed probability plus {0, 1}; ties
    pick the lowest threshold. Relations with no dev support fall back
    to 0.5 with a warning.
    """
    labels = sorted({l for p in predictions for l in p.probs if l != null_label})
    thresholds: dict[str, float] = {}
    for rel in labels:
        gold_total = sum(1 for v in gold.values() if rel in _as_label_set(v))
        if gold_total == 0:
            log.warning("relation %s has no dev support; threshold falls back to 0.5", rel)
            thresholds[rel] = 0.5
            continue
        # one-vs-rest: the pair counts as predicted-r whenever prob_r >= t
        points = [(p.probs[rel], rel in _as_label_set(gold.get(p.key, null_label)))
                  for p in predictions]
        grid = sorted({prob for prob, _ in points} | {0.0, 1.0})
        best_t, best_f1 = 0.5, -1.0
        for t in grid:
            tp = sum(1 for prob, ok in points if prob >= t and ok)
            fp = sum(1 for prob, ok in points if prob >= t and not ok)
            row = PRF(tp=tp, fp=fp, fn=gold_total - tp)
            if row.f1 > best_f1 or (row.f1 == best_f1 and t < best_t):
                best_t, best_f1 = t, row.f1
        thresholds[rel] = best_t
    return thresholds


def prf1(pred: dict, gold: dict, null_label: str = NULL_LABEL) -> MetricReport:
    """Micro and macro precision/recall/F1 over non-NULL relations.

    ``pred`` maps pair keys to a single label; ``gold`` may map to a
    label or a set of labels (document-level pairs can carry several
    relation types). Key sets must align.
    """
    if set(pred) != set(gold):
        raise ValueError(f"prf1: prediction keys do not align with gold "
                         f"({len(pred)} vs {len(gold)})")
    report = MetricReport()
    rows = report.per_relation
    for key, gold_value in gold.items():
        gold_set = _as_label_set(gold_value) - {null_label}
        p = pred[key]
        if p != null_label:
            if p in gold_set:
                report.micro.tp += 1
                rows.setdefault(p, PRF()).tp += 1
            else:
                report.micro.fp += 1
                rows.setdefault(p, PRF()).fp += 1
        for g in gold_set:
            if g != p:
                report.micro.fn += 1
                rows.setdefault(g, PRF()).fn += 1
    report.per_relation = dict(sorted(rows.items()))
    return report


# ---------------------------------------------------------------------------
# NER span scoring


def _repair_bio(tags: list[str]) -> tuple[list[str], int]:
    """I-X after O or after a different type becomes B-X (counted)."""
    out = []
    repaired = 0
    prev = "O"
    for tag in tags:
        if tag.startswith("I-") and (prev == "O" or prev[2:] != tag[2:]):
            tag = "B-" + tag[2:]
            repaired += 1
        out.append(tag)
        prev = tag
    return out, repaired


def _spans(tags: list[str]) -> set[tuple[str, int, int]]:
    spans = set()
    start = None
    current = None
    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            if current is not None:
                spans.add((current, start, i - 1))
            current, start = tag[2:], i
        elif tag.startswith("I-") and current == tag[2:]:
            continue
        else:
            if current is not None:
                spans.add((current, start, i - 1))
            current, start = None, None
    if current is not None:
        spans.add((current, start, len(tags) - 1))
    return spans


def span_ner_f1(pred_tags: list[list[str]], gold_tags: list[list[str]]) -> MetricReport:
    """Exact span-and-type match F1 over BIO sequences."""
    if len(pred_tags) != len(gold_tags):
        raise ValueError("span_ner_f1: sequence counts differ")
    report = MetricReport()
    for seq_i, (pred, gold) in enumerate(zip(pred_tags, gold_tags)):
        if len(pred) != len(gold):
            raise ValueError(f"span_ner_f1: length mismatch in sequence {seq_i}")
        pred, repaired = _repair_bio(pred)
        report.repaired += repaired
        p_spans = _spans(pred)
        g_spans = _spans(gold)
        for span in p_spans:
            row = report.per_relation.setdefault(span[0], PRF())
            if span in g_spans:
                report.micro.tp += 1
                row.tp += 1
            else:
                report.micro.fp += 1
                row.fp += 1
        for span in g_spans - p_spans:
            report.micro.fn += 1
            report.per_relation.setdefault(span[0], PRF()).fn += 1
    report.per_relation = dict(sorted(report.per_relation.items()))
    return report


# ---------------------------------------------------------------------------
# distance-restricted evaluation


def pair_min_distance(doc: Document, head: str, tail: str) -> int:
    """Sub-word tokens between the nearest boundaries of the closest
    mention pair (0 for overlapping spans)."""
    best = None
    for hs, he in doc.mention_token_spans(head):
        for ts, te in doc.mention_token_spans(tail):
            if he <= ts:
                d = ts - he
            elif te <= hs:
                d = hs - te
            else:
                d = 0
            if best is None or d < best:
                best = d
    if best is None:
        raise ValueError(f"{doc.doc_id}: no mention spans for pair ({head}, {tail})")
    return best


def gold_pair_labels(docs: list[Document]) -> dict[tuple, set[str]]:
    """Pair key -> set of gold relation labels (NULL candidates included)."""
    gold: dict[tuple, set[str]] = {}
    for doc in docs:
        for p in doc.pairs:
            gold.setdefault((doc.doc_id, p.head, p.tail), set()).add(p.relation)
    return gold


def distance_filtered_eval(docs: list[Document], predictions: list[PairPrediction],
                           cutoffs: list[int], thresholds: dict[str, float],
                           null_label: str = NULL_LABEL) -> dict[int, dict]:
    """Metrics with candidate pairs (positive and negative) restricted
    to those whose closest mention pair is within each cutoff.

    One prediction set, no retraining: the same predictions are
    re-filtered per cutoff.
    """
    if sorted(cutoffs) != list(cutoffs):
        raise ValueError("cutoffs must be ascending")
    gold = gold_pair_labels(docs)
    by_key = {p.key: p for p in predictions}
    if set(by_key) != set(gold):
        raise ValueError("predictions do not align with document candidate pairs")
    by_doc = {doc.doc_id: doc for doc in docs}
    distances = {key: pair_min_distance(by_doc[key[0]], key[1], key[2])
                 for key in gold}
    results: dict[int, dict] = {}
    for cutoff in cutoffs:
        keys = [k for k in gold if distances[k] <= cutoff]
        pred = {k: classify(by_key[k].probs, thresholds, null_label) for k in keys}
        report = prf1(pred, {k: gold[k] for k in keys}, null_label)
        results[cutoff] = {"report": report, "candidates": len(keys)}
    return results


# ---------------------------------------------------------------------------
# ensembling


def ensemble(prediction_sets: list[list[PairPrediction]]) -> list[PairPrediction]:
    """Average per-class probabilities (and pooled scores) across runs."""
    if len(prediction_sets) < 2:
        raise ValueError("ensemble needs at least two prediction sets")
    keys = sorted({p.key for p in prediction_sets[0]})
    maps = []
    for i, preds in enumerate(prediction_sets):
        m = {p.key: p for p in preds}
        if sorted(m) != keys:
            raise ValueError(f"prediction set {i} keys are misaligned")
        maps.append(m)
    labels = sorted(prediction_sets[0][0].probs)
    out = []
    for key in keys:
        probs = {l: sum(m[key].probs[l] for m in maps) / len(maps) for l in labels}
        scores = {l: sum(m[key].scores[l] for m in maps) / len(maps) for l in labels}
        out.append(PairPrediction(key[0], key[1], key[2], scores, probs))
    return out


# ---------------------------------------------------------------------------
# report rendering


def format_metric_table(report: MetricReport) -> str:
    lines = ["Relation\tP\tR\tF1\tSupport"]
    for rel, row in report.per_relation.items():
        lines.append(f"{rel}\t{row.precision:.4f}\t{row.recall:.4f}\t"
                     f"{row.f1:.4f}\t{row.support}")
    m = report.micro
    lines.append(f"micro\t{m.precision:.4f}\t{m.recall:.4f}\t{m.f1:.4f}\t{m.support}")
    lines.append(f"macro\t{report.macro_precision:.4f}\t{report.macro_recall:.4f}\t"
                 f"{report.macro_f1:.4f}\t{m.support}")
    return "\n".join(lines) + "\n"


def format_cutoff_table(results: dict[int, dict]) -> str:
    lines = ["Cutoff\tCandidates\tP\tR\tF1"]
    for cutoff, row in results.items():
        m = row["report"].micro
        lines.append(f"{cutoff}\t{row['candidates']}\t{m.precision:.4f}\t"
                     f"{m.recall:.4f}\t{m.f1:.4f}")
    return "\n".join(lines) + "\n"
