"""Subtoken predictions -> word labels (by voting) -> entity sets."""
from __future__ import annotations

from collections import Counter

from .corpus import (
    CLS_LABEL,
    PAD_LABEL,
    X_LABEL,
    EntityAnnotation,
    TaggedSentence,
    spans_from_iob,
)


def vote_word_label(subtoken_labels: list[str]) -> str:
    """Majority vote over a word's piece labels, ignoring X.

    Stray supporting labels ([CLS]/pad) predicted mid-word count as X.
    Ties go to the label that occurs earliest in the list; an all-X word
    votes O.
    """
    if not subtoken_labels:
        raise ValueError("a word needs at least one subtoken label")
    cleaned = [X_LABEL if l in (CLS_LABEL, PAD_LABEL) else l for l in subtoken_labels]
    votes = Counter(l for l in cleaned if l != X_LABEL)
    if not votes:
        return "O"
    top = max(votes.values())
    tied = {label for label, count in votes.items() if count == top}
    for label in cleaned:
        if label in tied:
            return label
    raise AssertionError("unreachable")


def word_labels_from_path(sent: TaggedSentence, path_labels: list[str]) -> list[str]:
    """Vote one label per word from a subtoken label path.

    Accepts a path over the unmasked prefix or over the full padded
    sequence; anything else is a length mismatch.
    """
    n_unmasked = sum(sent.mask)
    if len(path_labels) not in (n_unmasked, len(sent.subtokens)):
        raise ValueError(
            f"path length {len(path_labels)} matches neither the unmasked "
            f"prefix ({n_unmasked}) nor the padded length ({len(sent.subtokens)})"
        )
    return [vote_word_label(list(path_labels[start:end]))
            for start, end in sent.alignment]


def predictions_to_entities(sent: TaggedSentence,
                            path_labels: list[str]) -> list[EntityAnnotation]:
    """Deduplicated (surface, type) pairs implied by a predicted path."""
    return spans_from_iob(sent.words, word_labels_from_path(sent, path_labels))
