"""Scoring: word-level F1, exact entity-set matching, relaxed partial
matching, and language-classification F1.

All entity metrics are micro-pooled over documents; tables carry one row
per entity type (PER, PRO, EVT, LOC, ORG order) plus an All row.  A
``flagged`` row means a degenerate denominator convention was applied
(no predictions, or both sides empty).
"""
from __future__ import annotations

from dataclasses import dataclass

from .corpus import REPORT_ORDER, EntityAnnotation, split_words


@dataclass
class PrfRow:
    label: str
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    flagged: bool = False


class EvalError(ValueError):
    pass


def _row(label: str, tp: int, fp: int, fn: int) -> PrfRow:
    flagged = False
    if tp + fp == 0:
        precision, flagged = (1.0, True) if fn == 0 else (0.0, True)
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, flagged = (1.0, True) if fp == 0 else (0.0, True)
    else:
        recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PrfRow(label, precision, recall, f1, tp, fp, fn, flagged)


def _entity_type(label: str) -> str | None:
    if label == "O":
        return None
    return label.partition("-")[2]


def word_level_f1(pred: list[list[str]], gold: list[list[str]]) -> list[PrfRow]:
    """Micro P/R/F1 over non-O tokens, per collapsed type plus All.

    A token is a true positive when the predicted label equals the gold
    label exactly (B/I prefix included).
    """
    if len(pred) != len(gold):
        raise EvalError(f"{len(pred)} predicted sentences vs {len(gold)} gold")
    counts = {t: [0, 0, 0] for t in REPORT_ORDER}
    for p_sent, g_sent in zip(pred, gold):
        if len(p_sent) != len(g_sent):
            raise EvalError("sentence length mismatch")
        for p, g in zip(p_sent, g_sent):
            pt, gt = _entity_type(p), _entity_type(g)
            if p == g:
                if gt is not None:
                    counts[gt][0] += 1
            else:
                if pt is not None:
                    counts[pt][1] += 1
                if gt is not None:
                    counts[gt][2] += 1
    rows = [_row(t, *counts[t]) for t in REPORT_ORDER]
    total = [sum(c[i] for c in counts.values()) for i in range(3)]
    rows.append(_row("All", *total))
    return rows


def _check_doc_ids(pred: dict, gold: dict):
    missing = sorted(set(gold) - set(pred)) + sorted(set(pred) - set(gold))
    if missing:
        raise EvalError(f"document sets differ: {missing[:5]}")


def exact_set_metrics(pred: dict[str, list[EntityAnnotation]],
                      gold: dict[str, list[EntityAnnotation]]) -> list[PrfRow]:
    """Exact (surface, type) matching per document, micro-pooled."""
    _check_doc_ids(pred, gold)
    counts = {t: [0, 0, 0] for t in REPORT_ORDER}
    for doc_id in sorted(gold):
        p_set, g_set = set(pred[doc_id]), set(gold[doc_id])
        for ann in p_set & g_set:
            counts[ann.etype][0] += 1
        for ann in p_set - g_set:
            counts[ann.etype][1] += 1
        for ann in g_set - p_set:
            counts[ann.etype][2] += 1
    rows = [_row(t, *counts[t]) for t in REPORT_ORDER]
    total = [sum(c[i] for c in counts.values()) for i in range(3)]
    rows.append(_row("All", *total))
    return rows


def _tokens(surface: str) -> frozenset[str]:
    return frozenset(w for w, _ in split_words(surface))


def relaxed_partial_metrics(pred: dict[str, list[EntityAnnotation]],
                            gold: dict[str, list[EntityAnnotation]]) -> list[PrfRow]:
    """Same-type entities match when their word-token sets overlap.

    Each gold entity is creditable once; candidate pairs are assigned
    greedily by descending overlap, ties by gold order then prediction
    order.
    """
    _check_doc_ids(pred, gold)
    counts = {t: [0, 0, 0] for t in REPORT_ORDER}
    for doc_id in sorted(gold):
        preds, golds = list(pred[doc_id]), list(gold[doc_id])
        pairs = []
        for gi, g in enumerate(golds):
            g_tokens = _tokens(g.surface)
            for pi, p in enumerate(preds):
                if p.etype != g.etype:
                    continue
                overlap = len(g_tokens & _tokens(p.surface))
                if overlap:
                    pairs.append((-overlap, gi, pi))
        used_g, used_p = set(), set()
        for _, gi, pi in sorted(pairs):
            if gi in used_g or pi in used_p:
                continue
            used_g.add(gi)
            used_p.add(pi)
            counts[golds[gi].etype][0] += 1
        for pi, p in enumerate(preds):
            if pi not in used_p:
                counts[p.etype][1] += 1
        for gi, g in enumerate(golds):
            if gi not in used_g:
                counts[g.etype][2] += 1
    rows = [_row(t, *counts[t]) for t in REPORT_ORDER]
    total = [sum(c[i] for c in counts.values()) for i in range(3)]
    rows.append(_row("All", *total))
    return rows


def language_f1(pred_tags: list[str], gold_tags: list[str],
                inventory: list[str] | None = None) -> list[PrfRow]:
    """Per-class P/R/F1 over sentence-level language tags plus a macro row."""
    if not pred_tags or len(pred_tags) != len(gold_tags):
        raise EvalError("need equal-length non-empty tag lists")
    classes = inventory or sorted(set(gold_tags) | set(pred_tags))
    rows = []
    for cls in classes:
        tp = sum(1 for p, g in zip(pred_tags, gold_tags) if p == g == cls)
        fp = sum(1 for p, g in zip(pred_tags, gold_tags) if p == cls != g)
        fn = sum(1 for p, g in zip(pred_tags, gold_tags) if g == cls != p)
        rows.append(_row(cls, tp, fp, fn))
    macro_p = sum(r.precision for r in rows) / len(rows)
    macro_r = sum(r.recall for r in rows) / len(rows)
    macro_f = sum(r.f1 for r in rows) / len(rows)
    rows.append(PrfRow("All", macro_p, macro_r, macro_f,
                       sum(r.tp for r in rows), sum(r.fp for r in rows),
                       sum(r.fn for r in rows)))
    return rows


def render_table(rows: list[PrfRow]) -> str:
    lines = [f"{'label':<10} {'precision':>9} {'recall':>9} {'f1-score':>9} {'tp':>6} {'fp':>6} {'fn':>6}"]
    for r in rows:
        star = "*" if r.flagged else " "
        lines.append(f"{r.label:<10} {r.precision:>9.3f} {r.recall:>9.3f} "
                     f"{r.f1:>9.3f} {r.tp:>6} {r.fp:>6} {r.fn:>6}{star}")
    return "\n".join(lines)


def rows_to_csv(rows: list[PrfRow]) -> str:
    out = ["label,precision,recall,f1,tp,fp,fn"]
    for r in rows:
        out.append(f"{r.label},{r.precision:.6f},{r.recall:.6f},{r.f1:.6f},{r.tp},{r.fp},{r.fn}")
    return "\n".join(out) + "\n"
