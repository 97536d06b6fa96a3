"""Corpus I/O: documents, span annotations, word-level IOB labels, WordPiece
subtokens and the word/subtoken alignment used by the tagger.

Directory layout expected by the loaders:

    corpus_root/<topic>/<language>/raw/<id>.txt
    corpus_root/<topic>/<language>/ann/<id>.ann

Annotation files carry one ``<surface>\\t<TYPE>`` pair per line.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

ENTITY_TYPES = ("PER", "LOC", "ORG", "PRO", "EVT")
# reporting order used by the evaluation tables
REPORT_ORDER = ("PER", "PRO", "EVT", "LOC", "ORG")

DEFAULT_LANGUAGES = ("bg", "cs", "pl", "ru")

CLS_LABEL = "[CLS]"
X_LABEL = "X"
PAD_LABEL = "pad"
CLS_TOKEN = "[CLS]"
PAD_TOKEN = "[PAD]"

LABELS = (
    "O",
    "B-PER", "I-PER",
    "B-LOC", "I-LOC",
    "B-ORG", "I-ORG",
    "B-PRO", "I-PRO",
    "B-EVT", "I-EVT",
    X_LABEL, CLS_LABEL, PAD_LABEL,
)
MEANINGFUL_LABELS = LABELS[:11]
SUPPORTING_LABELS = (X_LABEL, CLS_LABEL, PAD_LABEL)
LABEL_TO_ID = {label: i for i, label in enumerate(LABELS)}

_WORD_RE = re.compile(r"[^\W_]+|\S", re.UNICODE)


class CorpusError(Exception):
    """Raised for malformed corpus files or layout violations."""


@dataclass(frozen=True)
class LabelInventory:
    """The 14-label tag set: 11 meaningful IOB labels plus X/[CLS]/pad."""

    labels: tuple[str, ...] = LABELS

    def __post_init__(self):
        if len(self.labels) != 14:
            raise ValueError(f"label inventory must have 14 labels, got {len(self.labels)}")
        meaningful = [l for l in self.labels if l not in SUPPORTING_LABELS]
        if len(meaningful) != 11:
            raise ValueError("label inventory must contain 11 meaningful labels")

    @property
    def index(self) -> dict[str, int]:
        return {l: i for i, l in enumerate(self.labels)}

    def id_of(self, label: str) -> int:
        return self.index[label]

    def __len__(self):
        return len(self.labels)


DEFAULT_INVENTORY = LabelInventory()


@dataclass(frozen=True)
class Document:
    id: str
    language: str
    topic: str
    text: str


@dataclass(frozen=True, order=True)
class EntityAnnotation:
    surface: str
    etype: str


@dataclass
class TaggedSentence:
    """Words with IOB labels plus the padded subtoken view fed to the model.

    ``subtokens[0]`` is [CLS]; ``alignment[i]`` is the half-open subtoken
    range of word ``i``; padded positions carry the pad label and mask 0.
    """

    words: list[str]
    word_labels: list[str]
    subtokens: list[str]
    subtoken_labels: list[str]
    alignment: list[tuple[int, int]]
    mask: list[int]
    language: str
    doc_id: str = ""
    topic: str = ""
    sent_index: int = 0

    def validate(self):
        assert len(self.words) == len(self.word_labels)
        assert len(self.subtokens) == len(self.subtoken_labels) == len(self.mask)
        assert self.subtokens[0] == CLS_TOKEN and self.subtoken_labels[0] == CLS_LABEL
        prev_end = 1
        for start, end in self.alignment:
            assert start == prev_end and end > start
            prev_end = end
        for pos in range(len(self.subtokens)):
            if self.mask[pos] == 0:
                assert self.subtoken_labels[pos] == PAD_LABEL
                assert self.subtokens[pos] == PAD_TOKEN
        covered = self.alignment[-1][1] if self.alignment else 1
        assert all(m == 1 for m in self.mask[:covered])
        assert all(m == 0 for m in self.mask[covered:])
        for (start, end), label in zip(self.alignment, self.word_labels[:len(self.alignment)]):
            assert self.subtoken_labels[start] == label
            assert all(l == X_LABEL for l in self.subtoken_labels[start + 1:end])

    @property
    def length(self) -> int:
        return sum(self.mask)


@dataclass(frozen=True)
class SubwordVocab:
    """WordPiece vocabulary; continuation pieces carry the ``##`` prefix."""

    pieces: frozenset[str]
    unk_token: str = "[UNK]"
    max_word_chars: int = 100

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("empty subword vocabulary")
        for required in (self.unk_token, CLS_TOKEN):
            if required not in self.pieces:
                raise ValueError(f"vocabulary must contain {required!r}")


def load_vocab(path) -> SubwordVocab:
    """One piece per line, wordpiece text format."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    pieces = frozenset(l.rstrip("\n") for l in lines if l.strip())
    return SubwordVocab(pieces=pieces)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _clean_text(text: str) -> str:
    text = unicodedata.normalize("NFC", text)
    # drop control and format characters (zero-width spaces etc.), keep \n \t
    return "".join(
        ch for ch in text
        if ch in "\n\t" or unicodedata.category(ch) not in ("Cc", "Cf")
    )


def load_document(path, languages=DEFAULT_LANGUAGES) -> Document:
    """Read one raw text file, inferring topic/language from the path."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc
    parts = path.parent.parts
    if parts and parts[-1] == "raw":
        if len(parts) < 3:
            raise CorpusError(f"{path}: cannot infer topic/language from layout")
        language, topic = parts[-2], parts[-3]
    else:
        if len(parts) < 2:
            raise CorpusError(f"{path}: cannot infer topic/language from layout")
        language, topic = parts[-1], parts[-2]
    if language not in languages:
        raise CorpusError(f"{path}: unknown language directory {language!r}")
    text = _clean_text(text)
    if not text.strip():
        raise CorpusError(f"{path}: empty document")
    return Document(id=path.stem, language=language, topic=topic, text=text)


def load_annotations(path, etypes=ENTITY_TYPES) -> list[EntityAnnotation]:
    """Parse ``<surface>\\t<TYPE>`` lines, collapsing exact duplicates."""
    path = Path(path)
    out: list[EntityAnnotation] = []
    seen = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise CorpusError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(fields)}")
        surface = unicodedata.normalize("NFC", fields[0]).strip()
        etype = fields[1].strip()
        if not surface:
            raise CorpusError(f"{path}:{lineno}: empty surface form")
        if etype not in etypes:
            raise CorpusError(f"{path}:{lineno}: unknown entity type {etype!r}")
        ann = EntityAnnotation(surface, etype)
        if ann not in seen:
            seen.add(ann)
            out.append(ann)
    return out


def split_words(text: str) -> list[tuple[str, int]]:
    """Maximal alphanumeric runs, or single non-space marks, with offsets."""
    return [(m.group(0), m.start()) for m in _WORD_RE.finditer(text)]


def words_to_iob(
    words: list[str],
    annotations: list[EntityAnnotation],
) -> tuple[list[str], list[EntityAnnotation]]:
    """Label every non-overlapping annotation occurrence with B-/I- tags.

    Each surface form is itself word-split and searched case-sensitively in
    ``words``.  Overlap resolution: longer surfaces win, then earlier start
    position, then annotation file order.  Returns the labels plus the
    annotations whose surface was never found at all.
    """
    labels = ["O"] * len(words)
    taken = [False] * len(words)
    candidates = []  # (-len, start, ann_order)
    unmatched = []
    for order, ann in enumerate(annotations):
        ann_words = [w for w, _ in split_words(ann.surface)]
        if not ann_words:
            unmatched.append(ann)
            continue
        found = False
        for start in range(len(words) - len(ann_words) + 1):
            if words[start:start + len(ann_words)] == ann_words:
                found = True
                candidates.append((-len(ann_words), start, order, ann))
        if not found:
            unmatched.append(ann)
    for neg_len, start, order, ann in sorted(candidates, key=lambda c: c[:3]):
        end = start - neg_len
        if any(taken[start:end]):
            continue
        for i in range(start, end):
            taken[i] = True
            labels[i] = ("B-" if i == start else "I-") + ann.etype
    return labels, unmatched


def subword_tokenize(word: str, vocab: SubwordVocab) -> list[str]:
    """Greedy longest-prefix wordpiece split; unsplittable words map to unk."""
    if not word:
        raise ValueError("cannot tokenize an empty word")
    if len(word) > vocab.max_word_chars:
        return [vocab.unk_token]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = "##" + candidate
            if candidate in vocab.pieces:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [vocab.unk_token]
        pieces.append(piece)
        start = end
    return pieces


def build_tagged_sentence(
    words: list[str],
    word_labels: list[str],
    vocab: SubwordVocab,
    max_len: int,
    language: str = "",
    doc_id: str = "",
    topic: str = "",
    sent_index: int = 0,
) -> tuple[TaggedSentence, int]:
    """Assemble the padded subtoken view; returns (sentence, words dropped).

    Truncation drops whole trailing words that do not fit in ``max_len``
    positions (position 0 is [CLS]).
    """
    if len(words) != len(word_labels):
        raise ValueError("words and labels differ in length")
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    subtokens = [CLS_TOKEN]
    subtoken_labels = [CLS_LABEL]
    alignment: list[tuple[int, int]] = []
    kept_words: list[str] = []
    kept_labels: list[str] = []
    dropped = 0
    for word, label in zip(words, word_labels):
        pieces = subword_tokenize(word, vocab)
        if len(subtokens) + len(pieces) > max_len:
            if not kept_words:
                raise CorpusError(
                    f"first word {word!r} needs {len(pieces)} subtokens; max_len {max_len} too small"
                )
            # truncation cuts the whole tail; keeping later short words would
            # stitch a non-contiguous word sequence
            dropped = len(words) - len(kept_words)
            break
        start = len(subtokens)
        subtokens.extend(pieces)
        subtoken_labels.extend([label] + [X_LABEL] * (len(pieces) - 1))
        alignment.append((start, start + len(pieces)))
        kept_words.append(word)
        kept_labels.append(label)
    used = len(subtokens)
    subtokens.extend([PAD_TOKEN] * (max_len - used))
    subtoken_labels.extend([PAD_LABEL] * (max_len - used))
    mask = [1] * used + [0] * (max_len - used)
    sent = TaggedSentence(
        words=kept_words,
        word_labels=kept_labels,
        subtokens=subtokens,
        subtoken_labels=subtoken_labels,
        alignment=alignment,
        mask=mask,
        language=language,
        doc_id=doc_id,
        topic=topic,
        sent_index=sent_index,
    )
    return sent, dropped


def spans_from_iob(words: list[str], word_labels: list[str]) -> list[EntityAnnotation]:
    """Cut maximal non-O runs into spans, repairing dangling I- labels.

    A run breaks at O, at any B-, and at a type change; an I- following O
    or a different type opens a new span.  Result is deduplicated by
    (surface, type), first occurrence first.
    """
    if len(words) != len(word_labels):
        raise ValueError("words and labels differ in length")
    spans: list[EntityAnnotation] = []
    seen = set()
    cur_type = None
    cur_words: list[str] = []

    def close():
        nonlocal cur_type, cur_words
        if cur_type is not None:
            ann = EntityAnnotation(" ".join(cur_words), cur_type)
            if ann not in seen:
                seen.add(ann)
                spans.append(ann)
        cur_type, cur_words = None, []

    for word, label in zip(words, word_labels):
        if label == "O":
            close()
            continue
        prefix, _, etype = label.partition("-")
        if prefix == "B" or cur_type != etype:
            close()
            cur_type = etype
            cur_words = [word]
        else:
            cur_words.append(word)
    close()
    return spans


def dedup_annotations(anns: list[EntityAnnotation]) -> list[EntityAnnotation]:
    seen = set()
    out = []
    for ann in anns:
        if ann not in seen:
            seen.add(ann)
            out.append(ann)
    return out


# ---------------------------------------------------------------------------
# document -> sentences


def _line_segments(line: str, vocab: SubwordVocab, max_len: int) -> list[str]:
    words = split_words(line)
    total = 1 + sum(len(subword_tokenize(w, vocab)) for w, _ in words)
    if total <= max_len or ". " not in line:
        return [line]
    parts = line.split(". ")
    return [p + "." if i < len(parts) - 1 else p for i, p in enumerate(parts) if p.strip()]


def document_sentences(
    doc: Document,
    annotations: list[EntityAnnotation],
    vocab: SubwordVocab,
    max_len: int,
) -> tuple[list[TaggedSentence], list[EntityAnnotation], int]:
    """Split a document into tagged sentences.

    Sentences are the document's non-blank lines, split further at ". "
    when a line overflows ``max_len`` subtokens.  Returns (sentences,
    annotations never matched anywhere in the document, words dropped by
    truncation).
    """
    sentences: list[TaggedSentence] = []
    matched: set[EntityAnnotation] = set()
    dropped_total = 0
    index = 0
    for line in doc.text.split("\n"):
        if not line.strip():
            continue
        for segment in _line_segments(line, vocab, max_len):
            words = [w for w, _ in split_words(segment)]
            if not words:
                continue
            labels, unmatched = words_to_iob(words, annotations)
            matched.update(set(annotations) - set(unmatched))
            sent, dropped = build_tagged_sentence(
                words, labels, vocab, max_len,
                language=doc.language, doc_id=doc.id, topic=doc.topic, sent_index=index,
            )
            dropped_total += dropped
            sentences.append(sent)
            index += 1
    never_matched = [a for a in annotations if a not in matched]
    return sentences, never_matched, dropped_total


# ---------------------------------------------------------------------------
# corpus walking and the prepared-sentence cache


def _worker_cap() -> int:
    env = os.environ.get("SLAVTAG_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def load_corpus(root, languages=DEFAULT_LANGUAGES):
    """All (document, annotations) pairs under ``root``, deterministically
    sorted by (topic, language, id).  Annotation files are optional per doc."""
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root {root} is not a directory")
    raw_files = sorted(root.glob("*/*/raw/*.txt"))
    if not raw_files:
        raise CorpusError(f"no documents under {root} (expected <topic>/<lang>/raw/*.txt)")

    def one(path):
        doc = load_document(path, languages=languages)
        ann_path = path.parent.parent / "ann" / (path.stem + ".ann")
        anns = load_annotations(ann_path) if ann_path.exists() else []
        return doc, anns

    with ThreadPoolExecutor(max_workers=_worker_cap()) as pool:
        pairs = list(pool.map(one, raw_files))
    pairs.sort(key=lambda p: (p[0].topic, p[0].language, p[0].id))
    return pairs


def sentence_key(sent: TaggedSentence) -> str:
    return f"{sent.topic}__{sent.language}__{sent.doc_id}__{sent.sent_index}"


def write_cache(cache_dir, sentences: list[TaggedSentence], meta: dict,
                warnings: list[str] | None = None) -> None:
    """Serialize prepared sentences as deterministic JSONL plus meta.json."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    with open(cache_dir / "sentences.jsonl", "w", encoding="utf-8") as fh:
        for sent in sentences:
            row = asdict(sent)
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True,
                                separators=(",", ":")) + "\n")
    with open(cache_dir / "meta.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, ensure_ascii=False, sort_keys=True, indent=2) + "\n")
    if warnings is not None:
        with open(cache_dir / "warnings.txt", "w", encoding="utf-8") as fh:
            for line in warnings:
                fh.write(line + "\n")


def read_cache(cache_dir) -> tuple[list[TaggedSentence], dict]:
    cache_dir = Path(cache_dir)
    meta_path = cache_dir / "meta.json"
    rows_path = cache_dir / "sentences.jsonl"
    if not meta_path.exists() or not rows_path.exists():
        raise CorpusError(f"{cache_dir} is not a prepared sentence cache")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    sentences = []
    for line in rows_path.read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        row["alignment"] = [tuple(r) for r in row["alignment"]]
        sentences.append(TaggedSentence(**row))
    return sentences, meta
