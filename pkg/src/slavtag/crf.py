"""Linear-chain CRF inference layer.

Scores a label path as

    trans(START, y_1) + sum_t E[t, y_t] + sum_t trans(y_t, y_{t+1})
    + trans(y_T, STOP)

over K real labels plus virtual START/STOP states stored as rows/columns
K and K+1 of the transition matrix.  The log-partition and the gold-path
score are built as autodiff graphs (so the sentence-level NLL is
differentiable in both emissions and transitions); Viterbi and exact
n-best decoding are plain dynamic programs.

Tie-breaking is lexicographic: among equal-scoring paths the one with the
smaller label at the earliest differing position ranks first, which is
also the order an exhaustive enumeration sorted by (-score, labels)
produces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

FORBIDDEN_SCORE = -10000.0


class CrfError(ValueError):
    pass


@dataclass
class CrfParams:
    """(K+2)x(K+2) transition scores; START=K, STOP=K+1.

    Transitions into START and out of STOP are pinned at a large negative
    constant and are never updated.
    """

    transitions: np.ndarray

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        k2 = self.transitions.shape[0]
        if self.transitions.shape != (k2, k2) or k2 < 3:
            raise ValueError(f"transitions must be square (K+2)^2, got {self.transitions.shape}")
        if not np.isfinite(self.transitions).all():
            raise ValueError("non-finite transition scores")

    @property
    def num_labels(self) -> int:
        return self.transitions.shape[0] - 2

    @classmethod
    def initial(cls, num_labels: int) -> "CrfParams":
        t = np.zeros((num_labels + 2, num_labels + 2))
        t[:, num_labels] = FORBIDDEN_SCORE   # into START
        t[num_labels + 1, :] = FORBIDDEN_SCORE  # out of STOP
        return cls(transitions=t)


def trainable_transition_mask(num_labels: int) -> np.ndarray:
    """False on the pinned START/STOP constraint entries."""
    mask = np.ones((num_labels + 2, num_labels + 2), dtype=bool)
    mask[:, num_labels] = False
    mask[num_labels + 1, :] = False
    return mask


@dataclass
class PathResult:
    labels: list[int]
    score: float


def _effective_length(mask, total: int) -> int:
    if mask is None:
        return total
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (total,):
        raise CrfError(f"mask length {m.shape} does not match {total} positions")
    n = int(m.sum())
    if not np.array_equal(m, np.concatenate([np.ones(n), np.zeros(total - n)])):
        raise CrfError("mask must be a monotone 1...10...0 prefix mask")
    if n < 1:
        raise CrfError("empty sequence: all positions masked")
    return n


# ---------------------------------------------------------------------------
# differentiable pieces


def logz_expr(e: ad.Expr, mask: ad.Expr, trans: ad.Expr, num_labels: int) -> ad.Expr:
    """Forward algorithm in log space with masked positions carried through."""
    t_len, k = e.shape
    if k != num_labels:
        raise ad.ShapeError(f"emissions have {k} labels, expected {num_labels}")
    kk = ad.slice2d(trans, 0, k, 0, k)
    start_row = ad.slice_vec(ad.select_row(trans, k), 0, k)
    stop_col = ad.slice_vec(ad.select_col(trans, k + 1), 0, k)
    one = ad.const(1.0)
    alpha = ad.add(start_row, ad.select_row(e, 0))
    for t in range(1, t_len):
        cand = ad.logsumexp(ad.add(ad.outer_add(alpha, ad.select_row(e, t)), kk), axis=0)
        m_t = ad.select_index(mask, t)
        alpha = ad.add(ad.scale_by(cand, m_t), ad.scale_by(alpha, ad.sub(one, m_t)))
    return ad.logsumexp(ad.add(alpha, stop_col))


def gold_score_expr(
    e: ad.Expr,
    trans: ad.Expr,
    num_labels: int,
    emit_hot: ad.Expr,
    trans_counts: ad.Expr,
    first_hot: ad.Expr,
    last_hot: ad.Expr,
) -> ad.Expr:
    """Gold path score from one-hot occupancy inputs (see gold_bindings)."""
    k = num_labels
    kk = ad.slice2d(trans, 0, k, 0, k)
    start_row = ad.slice_vec(ad.select_row(trans, k), 0, k)
    stop_col = ad.slice_vec(ad.select_col(trans, k + 1), 0, k)
    score = ad.add(ad.sum_all(ad.mul(e, emit_hot)), ad.sum_all(ad.mul(kk, trans_counts)))
    score = ad.add(score, ad.sum_all(ad.mul(start_row, first_hot)))
    return ad.add(score, ad.sum_all(ad.mul(stop_col, last_hot)))


def gold_bindings(gold_labels, mask, total: int, num_labels: int) -> dict[str, np.ndarray]:
    """One-hot occupancy arrays describing a gold path over the unmasked
    prefix: per-position emission indicators, adjacent-pair transition
    counts, and first/last label indicators."""
    n = _effective_length(mask, total)
    labels = np.asarray(gold_labels, dtype=int)
    if labels.shape[0] < n:
        raise CrfError("gold labels shorter than the unmasked prefix")
    labels = labels[:n]
    if labels.min() < 0 or labels.max() >= num_labels:
        raise CrfError(f"gold label out of range [0, {num_labels})")
    emit_hot = np.zeros((total, num_labels))
    emit_hot[np.arange(n), labels] = 1.0
    counts = np.zeros((num_labels, num_labels))
    np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
    first_hot = np.zeros(num_labels)
    first_hot[labels[0]] = 1.0
    last_hot = np.zeros(num_labels)
    last_hot[labels[-1]] = 1.0
    return {"emit_hot": emit_hot, "trans_counts": counts,
            "first_hot": first_hot, "last_hot": last_hot}


def _build_public_graph(t_len: int, k: int, with_gold: bool):
    e = ad.inp("e", (t_len, k))
    mask = ad.inp("mask", (t_len,))
    trans = ad.param("trans", (k + 2, k + 2))
    logz = logz_expr(e, mask, trans, k)
    if not with_gold:
        return logz
    gold = gold_score_expr(
        e, trans, k,
        ad.inp("emit_hot", (t_len, k)), ad.inp("trans_counts", (k, k)),
        ad.inp("first_hot", (k,)), ad.inp("last_hot", (k,)),
    )
    return ad.sub(logz, gold)


def _mask_array(mask, total: int) -> np.ndarray:
    n = _effective_length(mask, total)
    return np.concatenate([np.ones(n), np.zeros(total - n)])


def log_partition(e, mask, params: CrfParams) -> float:
    """log sum over all label paths of exp(path score)."""
    e = np.asarray(e, dtype=np.float64)
    t_len, k = e.shape
    if k != params.num_labels:
        raise CrfError(f"emissions have {k} labels, transitions expect {params.num_labels}")
    root = _build_public_graph(t_len, k, with_gold=False)
    return float(ad.evaluate(root, {"e": e, "mask": _mask_array(mask, t_len),
                                    "trans": params.transitions}))


def nll_loss(e, mask, gold_labels, params: CrfParams) -> float:
    """Sentence-level negative log-likelihood: log Z minus gold path score."""
    e = np.asarray(e, dtype=np.float64)
    t_len, k = e.shape
    root = _build_public_graph(t_len, k, with_gold=True)
    bindings = {"e": e, "mask": _mask_array(mask, t_len), "trans": params.transitions}
    bindings.update(gold_bindings(gold_labels, mask, t_len, k))
    return float(ad.evaluate(root, bindings))


# ---------------------------------------------------------------------------
# decoding


def _score_blocks(e, mask, params):
    e = np.asarray(e, dtype=np.float64)
    t_len, k = e.shape
    if k != params.num_labels:
        raise CrfError(f"emissions have {k} labels, transitions expect {params.num_labels}")
    n = _effective_length(mask, t_len)
    trans = params.transitions
    return e[:n], trans[:k, :k], trans[k, :k], trans[:k, k + 1], n, k


def _path_score(labels, ee, kk, start, stop) -> float:
    score = start[labels[0]] + ee[0, labels[0]]
    for t in range(1, len(labels)):
        score += kk[labels[t - 1], labels[t]] + ee[t, labels[t]]
    return float(score + stop[labels[-1]])


def viterbi(e, mask, params: CrfParams) -> PathResult:
    """Maximum-score path; equal scores resolve to the lexicographically
    smallest label sequence."""
    ee, kk, start, stop, n, k = _score_blocks(e, mask, params)
    # suffix[t, s]: best score of the path tail starting at t with y_t = s
    suffix = np.empty((n, k))
    suffix[n - 1] = ee[n - 1] + stop
    for t in range(n - 2, -1, -1):
        suffix[t] = ((ee[t][:, None] + kk) + suffix[t + 1][None, :]).max(axis=1)
    labels = [int(np.argmax(start + suffix[0]))]
    for t in range(1, n):
        labels.append(int(np.argmax(kk[labels[-1]] + suffix[t])))
    return PathResult(labels=labels, score=_path_score(labels, ee, kk, start, stop))


def nbest(e, mask, params: CrfParams, n_paths: int) -> list[PathResult]:
    """The min(n, K^T) highest-scoring paths in (-score, labels) order.

    Exact: a per-(position, state) beam of width n is sufficient because
    any globally top-n path must rank top-n among the suffixes of its own
    (position, state) cell.  Entries are (score, next_state, next_rank)
    suffix links; ranks double as lexicographic tie keys since each cell's
    list is already sorted.
    """
    if n_paths < 1:
        raise CrfError("n must be at least 1")
    ee, kk, start, stop, n, k = _score_blocks(e, mask, params)
    cells = [[None] * k for _ in range(n)]
    for s in range(k):
        cells[n - 1][s] = [(float(ee[n - 1, s] + stop[s]), -1, -1)]
    for t in range(n - 2, -1, -1):
        for s in range(k):
            head = ee[t, s] + kk[s]
            cands = [
                (float(head[ns] + sc), ns, r)
                for ns in range(k)
                for r, (sc, _, _) in enumerate(cells[t + 1][ns])
            ]
            cands.sort(key=lambda c: (-c[0], c[1], c[2]))
            cells[t][s] = cands[:n_paths]
    roots = [
        (float(start[s] + sc), s, r)
        for s in range(k)
        for r, (sc, _, _) in enumerate(cells[0][s])
    ]
    roots.sort(key=lambda c: (-c[0], c[1], c[2]))
    out = []
    for score, s, r in roots[:n_paths]:
        labels = [s]
        t = 0
        while True:
            _, ns, nr = cells[t][s][r]
            if ns < 0:
                break
            labels.append(ns)
            s, r, t = ns, nr, t + 1
        out.append(PathResult(labels=labels, score=score))
    return out


def format_nbest(paths: list[PathResult], label_names=None) -> str:
    """One "score\\tlabel label ..." line per path."""
    lines = []
    for p in paths:
        names = [str(l) if label_names is None else label_names[l] for l in p.labels]
        lines.append(f"{p.score:.6f}\t{' '.join(names)}")
    return "\n".join(lines)
