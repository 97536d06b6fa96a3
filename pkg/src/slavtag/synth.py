"""Synthetic corpus generator for desk-scale experiments.

Words are concatenations of 2-character syllables, so the greedy
WordPiece split always yields one syllable per piece.  The first syllable
of an entity word encodes its role (B-word or I-word of one of the five
types), a continuation syllable encodes the language, and function words
open with a language syllable; every label is therefore recoverable from
token identity alone, which makes the corpora reliably learnable at tiny
model sizes while still exercising multi-piece alignment, voting and the
language head.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ENTITY_TYPES, CLS_TOKEN, PAD_TOKEN

LANG_SYLLABLES = ("ba", "be", "bi", "bo")
TYPE_FIRST = {"PER": "pe", "LOC": "lo", "ORG": "og", "PRO": "pr", "EVT": "ev"}
TYPE_SECOND = {"PER": "pu", "LOC": "lu", "ORG": "ou", "PRO": "ru", "EVT": "eu"}
INDEX_SYLLABLES = ("da", "de", "di", "do", "du", "ka", "ke", "ki", "ko", "ku")

DEFAULT_LANGS = ("l0", "l1", "l2", "l3")


@dataclass
class SynthSpec:
    languages: tuple[str, ...] = DEFAULT_LANGS
    topic: str = "synth_a"
    docs_per_lang: int = 5
    sents_per_doc: int = 4
    entity_width: int = 6   # distinct surfaces per (type, language, role)
    seed: int = 0
    # single_piece keeps every word whole in the vocabulary; multi-piece
    # words split into syllables and exercise the X alignment instead
    single_piece: bool = False
    # balanced: every sentence carries one two-word entity of each type and
    # a single filler, keeping label frequencies near-uniform (skewed label
    # priors otherwise dominate the small training budget)
    balanced: bool = False

    def __post_init__(self):
        if len(self.languages) > len(LANG_SYLLABLES):
            raise ValueError(f"at most {len(LANG_SYLLABLES)} synthetic languages")
        if self.entity_width > len(INDEX_SYLLABLES):
            raise ValueError("entity_width exceeds the syllable inventory")


def function_word(lang_idx: int, j: int) -> str:
    return LANG_SYLLABLES[lang_idx] + INDEX_SYLLABLES[j]


def entity_first_word(etype: str, lang_idx: int, j: int) -> str:
    return TYPE_FIRST[etype] + LANG_SYLLABLES[lang_idx] + INDEX_SYLLABLES[j]


def entity_second_word(etype: str, lang_idx: int, j: int) -> str:
    return TYPE_SECOND[etype] + LANG_SYLLABLES[lang_idx] + INDEX_SYLLABLES[j]


def all_words(spec: SynthSpec) -> list[str]:
    words = []
    for lang_idx in range(len(spec.languages)):
        for j in range(spec.entity_width):
            words.append(function_word(lang_idx, j))
            for etype in ENTITY_TYPES:
                words.append(entity_first_word(etype, lang_idx, j))
                words.append(entity_second_word(etype, lang_idx, j))
    return words


def vocab_lines(spec: SynthSpec | None = None) -> list[str]:
    """Full wordpiece inventory covering every generatable word."""
    if spec is not None and spec.single_piece:
        pieces = sorted(set(all_words(spec))) + ["."]
    else:
        first = set(LANG_SYLLABLES) | set(TYPE_FIRST.values()) | set(TYPE_SECOND.values())
        cont = set(LANG_SYLLABLES) | set(INDEX_SYLLABLES)
        pieces = sorted(first) + sorted("##" + s for s in cont) + ["."]
    # [SEP]/[MASK] are never produced by the tagger but keep the file usable
    # as a stock wordpiece vocabulary for external embedding exporters
    return ["[UNK]", CLS_TOKEN, PAD_TOKEN, "[SEP]", "[MASK]"] + pieces


@dataclass
class SynthSentence:
    words: list[str]
    annotations: list[tuple[str, str]]  # (surface, type)
    language: str


def make_balanced_sentence(rng: np.random.Generator, lang_idx: int,
                           language: str, entity_width: int) -> SynthSentence:
    words: list[str] = []
    anns: list[tuple[str, str]] = []
    words.append(function_word(lang_idx, int(rng.integers(0, entity_width))))
    order = list(ENTITY_TYPES)
    rng.shuffle(order)
    for etype in order:
        first = entity_first_word(etype, lang_idx, int(rng.integers(0, entity_width)))
        second = entity_second_word(etype, lang_idx, int(rng.integers(0, entity_width)))
        anns.append((f"{first} {second}", etype))
        words += [first, second]
    words.append(".")
    return SynthSentence(words=words, annotations=anns, language=language)


def make_sentence(rng: np.random.Generator, lang_idx: int, language: str,
                  entity_width: int, forced_type: str | None = None) -> SynthSentence:
    words: list[str] = []
    anns: list[tuple[str, str]] = []

    def fillers(k):
        return [function_word(lang_idx, int(rng.integers(0, entity_width)))
                for _ in range(k)]

    words += fillers(int(rng.integers(1, 3)))
    n_entities = int(rng.integers(1, 4))
    for e in range(n_entities):
        etype = forced_type if (e == 0 and forced_type) else \
            ENTITY_TYPES[int(rng.integers(0, len(ENTITY_TYPES)))]
        j = int(rng.integers(0, entity_width))
        surface_words = [entity_first_word(etype, lang_idx, j)]
        if rng.integers(0, 2):
            surface_words.append(
                entity_second_word(etype, lang_idx, int(rng.integers(0, entity_width))))
        anns.append((" ".join(surface_words), etype))
        words += surface_words
        words += fillers(int(rng.integers(1, 3)))
    words.append(".")
    return SynthSentence(words=words, annotations=anns, language=language)


def make_document_sentences(rng, lang_idx, language, sents, entity_width,
                            type_cycle_start=0, balanced=False) -> list[SynthSentence]:
    out = []
    for k in range(sents):
        if balanced:
            out.append(make_balanced_sentence(rng, lang_idx, language, entity_width))
        else:
            forced = ENTITY_TYPES[(type_cycle_start + k) % len(ENTITY_TYPES)]
            out.append(make_sentence(rng, lang_idx, language, entity_width, forced))
    return out


def generate_corpus(root, spec: SynthSpec) -> Path:
    """Write a corpus tree plus vocab.txt under ``root``; returns the root."""
    root = Path(root)
    rng = np.random.default_rng(spec.seed)
    (root / "vocab.txt").parent.mkdir(parents=True, exist_ok=True)
    (root / "vocab.txt").write_text("\n".join(vocab_lines(spec)) + "\n", encoding="utf-8")
    counter = 0
    for lang_idx, language in enumerate(spec.languages):
        raw_dir = root / spec.topic / language / "raw"
        ann_dir = root / spec.topic / language / "ann"
        raw_dir.mkdir(parents=True, exist_ok=True)
        ann_dir.mkdir(parents=True, exist_ok=True)
        for d in range(spec.docs_per_lang):
            sents = make_document_sentences(
                rng, lang_idx, language, spec.sents_per_doc, spec.entity_width,
                type_cycle_start=counter, balanced=spec.balanced)
            counter += spec.sents_per_doc
            text = "\n".join(" ".join(s.words) for s in sents) + "\n"
            seen = set()
            ann_lines = []
            for s in sents:
                for surface, etype in s.annotations:
                    if (surface, etype) not in seen:
                        seen.add((surface, etype))
                        ann_lines.append(f"{surface}\t{etype}")
            (raw_dir / f"{d}.txt").write_text(text, encoding="utf-8")
            (ann_dir / f"{d}.ann").write_text("\n".join(ann_lines) + "\n", encoding="utf-8")
    return root
