"""Command-line entry point.

Subcommands: prepare, train, predict, eval, selfcheck.  Configuration is
flat "key = value" lines with dotted keys (encoder.*, train.*, model.*,
data.*); command-line flags override file values.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import crf
from .corpus import (
    CorpusError,
    DEFAULT_LANGUAGES,
    LABELS,
    dedup_annotations,
    document_sentences,
    file_sha256,
    load_corpus,
    load_vocab,
    read_cache,
    write_cache,
)
from .embeddings import LembDirSource, LembError, SyntheticSource, source_from_description
from .encoder import EncoderConfig
from .evaluator import (
    EvalError,
    exact_set_metrics,
    language_f1,
    relaxed_partial_metrics,
    render_table,
    rows_to_csv,
    word_level_f1,
)
from .lang_clf import softmax_probs
from .model import TaggerModel
from .postprocess import predictions_to_entities
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainError,
    load_checkpoint,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration handling

ENCODER_KEYS = {
    "encoder.input_dim": int,
    "encoder.lstm_hidden": int,
    "encoder.attn_heads": int,
    "encoder.attn_key_dim": int,
    "encoder.attn_value_dim": int,
    "encoder.label_count": int,
    "encoder.dropout_rate": float,
    "encoder.attn_residual": lambda s: s.lower() in ("1", "true", "yes"),
}
TRAIN_KEYS = {
    "train.base_lr": float,
    "train.beta1": float,
    "train.beta2": float,
    "train.weight_decay": float,
    "train.clip_norm": float,
    "train.batch_size": int,
    "train.max_epochs": int,
    "train.warmup_fraction": float,
    "train.early_stop_patience": int,
    "train.seed": int,
}
MODEL_KEYS = {
    "model.layer_weight_init": float,
    "model.seed": int,
}
DATA_KEYS = {
    "data.max_len": int,
    "data.languages": str,
}
ALL_KEYS = {**ENCODER_KEYS, **TRAIN_KEYS, **MODEL_KEYS, **DATA_KEYS}


def parse_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in ALL_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown configuration key {key!r}")
        values[key] = ALL_KEYS[key](raw)
    return values


def effective_config(values: dict) -> str:
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    return "\n".join(lines) + "\n"


def build_encoder_config(values: dict) -> EncoderConfig:
    kwargs = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("encoder.")}
    return EncoderConfig(**kwargs)


def build_train_config(values: dict) -> TrainConfig:
    kwargs = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("train.")}
    return TrainConfig(**kwargs)


def parse_languages(values: dict) -> tuple[str, ...]:
    raw = values.get("data.languages")
    if not raw:
        return DEFAULT_LANGUAGES
    return tuple(t.strip() for t in raw.split(",") if t.strip())


def _parse_synthetic(raw: str) -> SyntheticSource:
    try:
        seed, m, dim = (int(x) for x in raw.split(","))
    except ValueError as exc:
        raise UsageError("--synthetic-embeddings wants 'seed,m,D'") from exc
    return SyntheticSource(seed, m, dim)


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare(args) -> int:
    values = dict(parse_config_file(args.config)) if args.config else {}
    if args.max_len:
        values["data.max_len"] = args.max_len
    if args.languages:
        values["data.languages"] = args.languages
    max_len = values.get("data.max_len", 128)
    languages = parse_languages(values)
    vocab = load_vocab(args.vocab)
    pairs = load_corpus(args.corpus, languages=languages)
    sentences = []
    warnings = []
    truncated = 0
    counts: dict[tuple[str, str], int] = {}
    for doc, anns in pairs:
        sents, unmatched, dropped = document_sentences(doc, anns, vocab, max_len)
        truncated += dropped
        sentences.extend(sents)
        counts[(doc.topic, doc.language)] = counts.get((doc.topic, doc.language), 0) + len(sents)
        for ann in unmatched:
            warnings.append(f"{doc.id}\tUNMATCHED\t{ann.surface}\t{ann.etype}")
    meta = {
        "vocab_sha256": file_sha256(args.vocab),
        "max_len": max_len,
        "languages": list(languages),
        "labels": list(LABELS),
        "sentence_count": len(sentences),
        "truncated_words": truncated,
    }
    write_cache(args.out, sentences, meta, warnings=warnings)
    (Path(args.out) / "config_used.cfg").write_text(
        effective_config({**values, "data.max_len": max_len,
                          "data.languages": ",".join(languages)}),
        encoding="utf-8")
    for (topic, language), n in sorted(counts.items()):
        print(f"{topic}/{language}\t{n} sentences")
    print(f"total\t{len(sentences)} sentences, {len(warnings)} unmatched annotations, "
          f"{truncated} truncated words")
    return EXIT_OK


def _embedding_source(args, meta, checkpoint_desc=None):
    if getattr(args, "synthetic_embeddings", None):
        return _parse_synthetic(args.synthetic_embeddings)
    if getattr(args, "embeddings", None):
        return LembDirSource(args.embeddings)
    if checkpoint_desc:
        return source_from_description(checkpoint_desc)
    raise UsageError("need --embeddings DIR or --synthetic-embeddings seed,m,D")


def _filter_topics(sentences, topics, which):
    if not topics:
        return sentences
    wanted = {t.strip() for t in topics.split(",") if t.strip()}
    kept = [s for s in sentences if s.topic in wanted]
    if not kept:
        raise CorpusError(f"no {which} sentences left after topic filter {sorted(wanted)}")
    return kept


def cmd_train(args) -> int:
    values = dict(parse_config_file(args.config)) if args.config else {}
    train_sents, train_meta = read_cache(args.train)
    dev_sents, dev_meta = read_cache(args.dev)
    train_sents = _filter_topics(train_sents, args.train_topics, "train")
    dev_sents = _filter_topics(dev_sents, args.dev_topics, "dev")
    if train_meta["vocab_sha256"] != dev_meta["vocab_sha256"]:
        raise CorpusError("train and dev caches were prepared with different vocabularies")
    languages = tuple(train_meta["languages"])
    source = _embedding_source(args, train_meta)
    probe = source.get(train_sents[0])
    enc_values = {k: v for k, v in values.items() if k.startswith("encoder.")}
    enc_values.setdefault("encoder.input_dim", probe.dim)
    encoder = build_encoder_config(enc_values)
    if encoder.input_dim != probe.dim:
        raise CorpusError(f"encoder.input_dim {encoder.input_dim} != embedding dim {probe.dim}")
    tcfg = build_train_config(values)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.resume:
        model = load_checkpoint(out_dir / "final.ckpt")
    else:
        model = TaggerModel.create(
            encoder, layer_count=probe.m, languages=languages, labels=LABELS,
            seed=values.get("model.seed", tcfg.seed),
            embedding_source=source.describe(),
            vocab_sha256=train_meta["vocab_sha256"],
            layer_weight_init=values.get("model.layer_weight_init"),
        )
    (out_dir / "config_used.cfg").write_text(
        effective_config({**values, "data.max_len": train_meta["max_len"]}),
        encoding="utf-8")
    history, best_epoch = train(
        model, train_sents, dev_sents, source, tcfg,
        with_lang=not args.no_lang_clf, out_dir=out_dir)
    last = history[-1]
    print(f"trained {len(history)} epochs (best dev loss at epoch {best_epoch}); "
          f"final dev word F1 {last.dev_word_f1:.3f}, span F1 {last.dev_span_f1:.3f}, "
          f"language F1 {last.dev_lang_f1:.3f}")
    print(f"checkpoints and history written to {out_dir}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    sentences, meta = read_cache(args.input)
    if model.vocab_sha256 and meta["vocab_sha256"] != model.vocab_sha256:
        raise CorpusError("checkpoint and cache use different vocabularies")
    if tuple(meta["labels"]) != model.labels:
        raise CorpusError("checkpoint and cache use different label inventories")
    source = _embedding_source(args, meta, checkpoint_desc=model.embedding_source)
    out_root = Path(args.out)
    crf_params = model.crf_params()
    dump_nbest = args.nbest is not None
    n_paths = args.nbest if dump_nbest else 1
    if n_paths < 1:
        raise UsageError("--nbest must be at least 1")
    by_doc: dict[tuple[str, str, str], list] = {}
    for sent in sentences:
        by_doc.setdefault((sent.topic, sent.language, sent.doc_id), []).append(sent)
    for (topic, language, doc_id), doc_sents in sorted(by_doc.items()):
        doc_sents.sort(key=lambda s: s.sent_index)
        entities = []
        nbest_lines = []
        lang_lines = []
        for sent in doc_sents:
            emb = source.get(sent)
            emit, logits = model.forward(emb.values, sent.mask)
            best = crf.viterbi(emit, sent.mask, crf_params)
            path = [model.labels[i] for i in best.labels]
            entities.extend(predictions_to_entities(sent, path))
            if dump_nbest:
                paths = crf.nbest(emit, sent.mask, crf_params, n_paths)
                nbest_lines.append(f"# {doc_id}#{sent.sent_index}")
                nbest_lines.append(crf.format_nbest(paths, label_names=model.labels))
            if args.emit_lang:
                probs = softmax_probs(logits)
                tag = model.languages[int(np.argmax(probs))]
                lang_lines.append(f"lang\t{tag}\t{probs.max():.6f}")
        entities = dedup_annotations(entities)
        doc_dir = out_root / topic / language
        doc_dir.mkdir(parents=True, exist_ok=True)
        body = "".join(f"{a.surface}\t{a.etype}\n" for a in entities)
        (doc_dir / f"{doc_id}.ann").write_text(body, encoding="utf-8")
        if nbest_lines:
            (doc_dir / f"{doc_id}.nbest").write_text("\n".join(nbest_lines) + "\n",
                                                     encoding="utf-8")
        if lang_lines:
            (doc_dir / f"{doc_id}.lang").write_text("\n".join(lang_lines) + "\n",
                                                    encoding="utf-8")
    print(f"wrote predictions for {len(by_doc)} documents to {out_root}")
    return EXIT_OK


def _read_ann_tree(root: Path) -> dict[str, list]:
    from .corpus import load_annotations

    out = {}
    for path in sorted(root.glob("*/*/*.ann")):
        doc_key = f"{path.parts[-3]}/{path.parts[-2]}/{path.stem}"
        out[doc_key] = load_annotations(path)
    if not out:
        raise CorpusError(f"no .ann files under {root} (expected <topic>/<lang>/<id>.ann)")
    return out


def _read_gold_tree(root: Path) -> dict[str, list]:
    from .corpus import load_annotations

    out = {}
    for path in sorted(root.glob("*/*/ann/*.ann")):
        doc_key = f"{path.parts[-4]}/{path.parts[-3]}/{path.stem}"
        out[doc_key] = load_annotations(path)
    if not out:
        raise CorpusError(f"no gold annotations under {root} "
                          "(expected <topic>/<lang>/ann/<id>.ann)")
    return out


def cmd_eval(args) -> int:
    gold_root = Path(args.gold)
    pred_root = Path(args.pred)
    if args.mode in ("exact", "partial", "word"):
        gold = _read_gold_tree(gold_root)
        pred = _read_ann_tree(pred_root)
        missing = sorted(set(gold) ^ set(pred))
        if missing:
            for key in missing:
                print(f"missing: {key}", file=sys.stderr)
            raise EvalError(f"{len(missing)} documents missing on one side")
    if args.mode == "exact":
        print("# exact matching: identical (surface, type) pairs per document, micro-pooled")
        rows = exact_set_metrics(pred, gold)
    elif args.mode == "partial":
        print("# relaxed partial matching (toolkit-local definition): same-type entities"
              "\n# match when their word-token sets overlap; each gold entity credited once")
        rows = relaxed_partial_metrics(pred, gold)
    elif args.mode == "word":
        from .corpus import load_document, split_words, words_to_iob

        languages = tuple(sorted({k.split("/")[1] for k in gold}))
        pred_labels, gold_labels = [], []
        for key in sorted(gold):
            topic, language, doc_id = key.split("/")
            doc = load_document(gold_root / topic / language / "raw" / f"{doc_id}.txt",
                                languages=languages)
            words = [w for w, _ in split_words(doc.text)]
            gold_labels.append(words_to_iob(words, gold[key])[0])
            pred_labels.append(words_to_iob(words, pred[key])[0])
        rows = word_level_f1(pred_labels, gold_labels)
    elif args.mode == "lang":
        gold_tags, pred_tags = [], []
        for path in sorted(pred_root.glob("*/*/*.lang")):
            language = path.parts[-2]
            for line in path.read_text(encoding="utf-8").splitlines():
                fields = line.split("\t")
                if len(fields) != 3 or fields[0] != "lang":
                    raise EvalError(f"{path}: malformed language line")
                pred_tags.append(fields[1])
                gold_tags.append(language)
        if not pred_tags:
            raise EvalError(f"no .lang files under {pred_root} (predict with --emit-lang)")
        rows = language_f1(pred_tags, gold_tags)
    else:
        raise UsageError(f"unknown mode {args.mode}")
    print(render_table(rows))
    if args.csv:
        Path(args.csv).write_text(rows_to_csv(rows), encoding="utf-8")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    """Reduced oracle suites; exit 0 only if everything holds."""
    import itertools

    from . import autodiff as ad
    from .corpus import EntityAnnotation, SubwordVocab, build_tagged_sentence
    from .embeddings import (load_embedding_file, synthetic_embeddings,
                             write_embedding_file)
    from .postprocess import predictions_to_entities as p2e
    import tempfile

    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    rng = np.random.default_rng(0)
    # CRF decoding against exhaustive enumeration
    crf_ok = True
    for trial in range(10):
        t_len, k = 4, 4
        e = rng.uniform(-2, 2, (t_len, k))
        params = crf.CrfParams.initial(k)
        mask2 = crf.trainable_transition_mask(k)
        params.transitions[mask2] = rng.uniform(-1, 1, mask2.sum())
        paths = []
        trans = params.transitions
        for path in itertools.product(range(k), repeat=t_len):
            score = trans[k, path[0]] + e[0, path[0]]
            for t in range(1, t_len):
                score += trans[path[t - 1], path[t]] + e[t, path[t]]
            score += trans[path[-1], k + 1]
            paths.append((float(score), list(path)))
        paths.sort(key=lambda sp: (-sp[0], sp[1]))
        hi = max(s for s, _ in paths)
        logz = hi + np.log(sum(np.exp(s - hi) for s, _ in paths))
        crf_ok &= abs(crf.log_partition(e, np.ones(t_len), params) - logz) < 1e-9
        vit = crf.viterbi(e, np.ones(t_len), params)
        crf_ok &= vit.labels == paths[0][1]
        got = crf.nbest(e, np.ones(t_len), params, 11)
        crf_ok &= [p.labels for p in got] == [p for _, p in paths[:11]]
    check("crf enumeration oracle (10 instances)", crf_ok)

    # gradient check on a small joint model
    cfg = EncoderConfig(input_dim=6, lstm_hidden=6, attn_heads=2,
                        attn_key_dim=3, attn_value_dim=3, label_count=14)
    model = TaggerModel.create(cfg, layer_count=2, languages=["a", "b", "c", "d"],
                               labels=LABELS, seed=1)
    emb = rng.uniform(-1, 1, (2, 4, 6))
    g = model.graph(4, with_lang=True)
    b = model.bindings(emb, np.ones(4), gold_labels=[12, 1, 2, 0], lang_id=1)
    report = ad.check_gradients(g.loss, b, eps=1e-4)
    if args.perturb_gradient:
        # test hook: simulate a broken transition adjoint
        report["crf.trans"] = 1.0
    worst = max(report.values())
    check(f"joint-loss gradient check (max rel err {worst:.2e})", worst <= 1e-4)

    # LEMB round trip
    with tempfile.TemporaryDirectory() as tmp:
        original = synthetic_embeddings(["[CLS]", "a", "b"], m=3, dim=5, seed=2)
        path = Path(tmp) / "x.lemb"
        write_embedding_file(path, original)
        loaded = load_embedding_file(path)
        check("embedding file round trip",
              loaded.tokens == original.tokens
              and np.array_equal(loaded.values.astype(np.float32),
                                 original.values.astype(np.float32)))

    # IOB -> subwords -> voting round trip
    vocab = SubwordVocab(frozenset({"[UNK]", "[CLS]", "jo", "##hn", "ny", "in"}))
    words = ["jo", "ny", "in", "jo"]
    anns = [EntityAnnotation("jo ny", "PER")]
    from .corpus import words_to_iob
    labels, unmatched = words_to_iob(words, anns)
    sent, _ = build_tagged_sentence(words, labels, vocab, max_len=8, language="pl")
    got = p2e(sent, sent.subtoken_labels)
    check("annotation round trip", got == anns and not unmatched)

    if failures:
        print(f"{len(failures)} check(s) failed")
        return EXIT_NUMERIC
    print("all checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="slavtag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert a corpus tree into a sentence cache")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--languages", default=None, help="comma-separated inventory")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on prepared caches")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--synthetic-embeddings", default=None, metavar="SEED,M,D")
    p.add_argument("--no-lang-clf", action="store_true")
    p.add_argument("--train-topics", default=None,
                   help="comma-separated topic filter for the train cache "
                        "(e.g. brexit)")
    p.add_argument("--dev-topics", default=None,
                   help="comma-separated topic filter for the dev cache "
                        "(e.g. asia_bibi)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--from-scratch", dest="resume", action="store_false")
    group.add_argument("--continue", dest="resume", action="store_true")
    p.set_defaults(func=cmd_train, resume=False)

    p = sub.add_parser("predict", help="write .ann predictions for a cache")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nbest", type=int, default=None,
                   help="also dump the K best label paths per sentence")
    p.add_argument("--emit-lang", action="store_true")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--synthetic-embeddings", default=None, metavar="SEED,M,D")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--mode", choices=("word", "exact", "partial", "lang"), required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selfcheck", help="run reduced oracle and round-trip suites")
    p.add_argument("--perturb-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainError, crf.CrfError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, CheckpointError, LembError, EvalError,
            FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
