import numpy as np
import pytest

from slavtag import synth
from slavtag.cli import main
from slavtag.corpus import read_cache
from slavtag.synth import SynthSpec


@pytest.fixture
def corpus_dir(tmp_path):
    spec = SynthSpec(languages=("l0", "l1"), docs_per_lang=2, sents_per_doc=2,
                     entity_width=2, seed=1, single_piece=True, balanced=True)
    root = tmp_path / "corpus"
    synth.generate_corpus(root, spec)
    return root


def run(*argv):
    return main([str(a) for a in argv])


def prepare(corpus_dir, tmp_path, name="cache"):
    out = tmp_path / name
    code = run("prepare", "--corpus", corpus_dir, "--vocab", corpus_dir / "vocab.txt",
               "--out", out, "--max-len", 16, "--languages", "l0,l1")
    assert code == 0
    return out


def test_prepare_counts_and_determinism(corpus_dir, tmp_path, capsys):
    cache = prepare(corpus_dir, tmp_path)
    out = capsys.readouterr().out
    assert "total\t8 sentences" in out
    first = (cache / "sentences.jsonl").read_bytes()
    meta_first = (cache / "meta.json").read_bytes()
    prepare(corpus_dir, tmp_path)
    assert (cache / "sentences.jsonl").read_bytes() == first
    assert (cache / "meta.json").read_bytes() == meta_first
    sents, meta = read_cache(cache)
    assert meta["sentence_count"] == 8
    for s in sents:
        s.validate()


def test_prepare_reports_unmatched(corpus_dir, tmp_path):
    ann = next(corpus_dir.glob("*/l0/ann/*.ann"))
    ann.write_text(ann.read_text() + "missing words\tPER\n", encoding="utf-8")
    cache = prepare(corpus_dir, tmp_path)
    warnings = (cache / "warnings.txt").read_text()
    assert "UNMATCHED\tmissing words\tPER" in warnings


def test_prepare_rejects_bad_language(corpus_dir, tmp_path):
    code = run("prepare", "--corpus", corpus_dir, "--vocab", corpus_dir / "vocab.txt",
               "--out", tmp_path / "x", "--languages", "l0")
    assert code == 2


CONFIG = """
encoder.input_dim = 8
encoder.lstm_hidden = 8
encoder.attn_heads = 2
encoder.attn_key_dim = 4
encoder.attn_value_dim = 4
encoder.dropout_rate = 0.0
encoder.attn_residual = true
train.max_epochs = 2
train.batch_size = 4
train.seed = 3
train.base_lr = 0.001
train.early_stop_patience = 50
model.layer_weight_init = 1.0
"""


def write_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CONFIG, encoding="utf-8")
    return cfg


def train_tiny(corpus_dir, tmp_path, out_name="run", extra=()):
    cache = prepare(corpus_dir, tmp_path, "cache")
    cfg = write_config(tmp_path)
    out = tmp_path / out_name
    code = run("train", "--train", cache, "--dev", cache, "--config", cfg,
               "--out", out, "--synthetic-embeddings", "5,2,8", *extra)
    assert code == 0
    return cache, out


def test_train_writes_outputs(corpus_dir, tmp_path):
    cache, out = train_tiny(corpus_dir, tmp_path)
    assert (out / "best.ckpt").exists()
    assert (out / "final.ckpt").exists()
    history = (out / "history.csv").read_text().splitlines()
    assert history[0].startswith("epoch,loss")
    assert len(history) == 3
    assert (out / "config_used.cfg").read_text().startswith("data.max_len")


def test_train_no_lang_clf_zero_column(corpus_dir, tmp_path):
    _, out = train_tiny(corpus_dir, tmp_path, "ablate", extra=("--no-lang-clf",))
    rows = (out / "history.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[3]) == 0.0 for r in rows)


def test_train_deterministic(corpus_dir, tmp_path):
    _, out1 = train_tiny(corpus_dir, tmp_path, "run1")
    _, out2 = train_tiny(corpus_dir, tmp_path, "run2")
    assert (out1 / "best.ckpt").read_bytes() == (out2 / "best.ckpt").read_bytes()
    assert (out1 / "history.csv").read_bytes() == (out2 / "history.csv").read_bytes()


def test_train_deterministic_across_processes(corpus_dir, tmp_path):
    """Fresh interpreters with different hash seeds produce identical bytes;
    catches any accidental dependence on set/dict iteration order."""
    import os
    import subprocess
    import sys

    cache = prepare(corpus_dir, tmp_path)
    cfg = write_config(tmp_path)
    blobs = []
    for name, hashseed in (("p1", "1"), ("p2", "2")):
        out = tmp_path / name
        env = dict(os.environ)
        env["PYTHONHASHSEED"] = hashseed
        proc = subprocess.run(
            [sys.executable, "-m", "slavtag.cli", "train",
             "--train", str(cache), "--dev", str(cache), "--config", str(cfg),
             "--out", str(out), "--synthetic-embeddings", "5,2,8"],
            env=env, capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0, proc.stderr
        blobs.append(((out / "best.ckpt").read_bytes(),
                      (out / "final.ckpt").read_bytes(),
                      (out / "history.csv").read_bytes()))
    assert blobs[0] == blobs[1]


def test_predict_eval_roundtrip(corpus_dir, tmp_path, capsys):
    cache, out = train_tiny(corpus_dir, tmp_path)
    pred = tmp_path / "pred"
    code = run("predict", "--model", out / "final.ckpt", "--input", cache,
               "--out", pred, "--nbest", 3, "--emit-lang")
    assert code == 0
    ann_files = sorted(pred.glob("*/*/*.ann"))
    assert len(ann_files) == 4
    nbest_files = sorted(pred.glob("*/*/*.nbest"))
    assert nbest_files and all("\t" in f.read_text() for f in nbest_files)
    lang_files = sorted(pred.glob("*/*/*.lang"))
    assert lang_files and all(l.read_text().startswith("lang\t") for l in lang_files)

    capsys.readouterr()
    for mode in ("exact", "partial", "word"):
        code = run("eval", "--pred", pred, "--gold", corpus_dir, "--mode", mode,
                   "--csv", tmp_path / f"{mode}.csv")
        assert code == 0
        table = capsys.readouterr().out
        assert "All" in table
        csv = (tmp_path / f"{mode}.csv").read_text().splitlines()
        assert csv[0] == "label,precision,recall,f1,tp,fp,fn"
        assert len(csv) == 7
    code = run("eval", "--pred", pred, "--gold", corpus_dir, "--mode", "lang")
    assert code == 0


def test_predict_nbest_one_matches_ann(corpus_dir, tmp_path):
    """The labels on the first dumped path imply exactly the .ann output."""
    from slavtag.corpus import dedup_annotations, load_annotations
    from slavtag.postprocess import predictions_to_entities

    cache, out = train_tiny(corpus_dir, tmp_path)
    sents, _ = read_cache(cache)

    pred = tmp_path / "pred2"
    run("predict", "--model", out / "final.ckpt", "--input", cache,
        "--out", pred, "--nbest", 1)
    doc_sents = sorted((s for s in sents if s.language == "l0" and s.doc_id == "0"),
                       key=lambda s: s.sent_index)
    nbest_lines = (pred / "synth_a" / "l0" / "0.nbest").read_text().splitlines()
    entities = []
    sent_iter = iter(doc_sents)
    for line in nbest_lines:
        if line.startswith("#"):
            sent = next(sent_iter)
            continue
        labels = line.split("\t")[1].split(" ")
        entities.extend(predictions_to_entities(sent, labels))
    ann = load_annotations(pred / "synth_a" / "l0" / "0.ann")
    assert dedup_annotations(entities) == ann

    pred_default = tmp_path / "pred_default"
    run("predict", "--model", out / "final.ckpt", "--input", cache,
        "--out", pred_default)
    assert not list(pred_default.glob("*/*/*.nbest"))  # dump is opt-in


def test_predict_rejects_mismatched_cache(corpus_dir, tmp_path):
    import json

    cache, out = train_tiny(corpus_dir, tmp_path)
    meta_path = cache / "meta.json"
    meta = json.loads(meta_path.read_text())
    meta["vocab_sha256"] = "f" * 64
    meta_path.write_text(json.dumps(meta))
    code = run("predict", "--model", out / "final.ckpt", "--input", cache,
               "--out", tmp_path / "nope")
    assert code == 2


def test_eval_identical_sets_all_ones(corpus_dir, tmp_path, capsys):
    pred = tmp_path / "pred"
    for ann in corpus_dir.glob("*/*/ann/*.ann"):
        topic, language = ann.parts[-4], ann.parts[-3]
        dest = pred / topic / language
        dest.mkdir(parents=True, exist_ok=True)
        (dest / ann.name).write_text(ann.read_text(), encoding="utf-8")
    code = run("eval", "--pred", pred, "--gold", corpus_dir, "--mode", "exact")
    assert code == 0
    table = capsys.readouterr().out
    data_rows = [l for l in table.splitlines()
                 if l and not l.startswith(("#", "label"))]
    assert len(data_rows) == 6
    for line in data_rows:
        assert " 1.000 " in line


def test_eval_missing_documents_abort(corpus_dir, tmp_path):
    pred = tmp_path / "pred"
    anns = sorted(corpus_dir.glob("*/*/ann/*.ann"))
    topic, language = anns[0].parts[-4], anns[0].parts[-3]
    dest = pred / topic / language
    dest.mkdir(parents=True)
    (dest / anns[0].name).write_text(anns[0].read_text(), encoding="utf-8")
    code = run("eval", "--pred", pred, "--gold", corpus_dir, "--mode", "exact")
    assert code == 2


def test_topic_filters(corpus_dir, tmp_path):
    cache = prepare(corpus_dir, tmp_path)
    cfg = write_config(tmp_path)
    code = run("train", "--train", cache, "--dev", cache, "--config", cfg,
               "--out", tmp_path / "t", "--synthetic-embeddings", "5,2,8",
               "--train-topics", "synth_a", "--dev-topics", "synth_a")
    assert code == 0
    code = run("train", "--train", cache, "--dev", cache, "--config", cfg,
               "--out", tmp_path / "t2", "--synthetic-embeddings", "5,2,8",
               "--train-topics", "no_such_topic")
    assert code == 2


def test_unknown_config_key_is_usage_error(corpus_dir, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense.key = 1\n", encoding="utf-8")
    code = run("prepare", "--corpus", corpus_dir, "--vocab", corpus_dir / "vocab.txt",
               "--out", tmp_path / "c", "--config", cfg)
    assert code == 1


def test_prepare_cyrillic_and_nfc_normalization(tmp_path, capsys):
    """Composed text with decomposed annotations matches after NFC."""
    import unicodedata

    raw = tmp_path / "c" / "brexit" / "ru" / "raw"
    ann = tmp_path / "c" / "brexit" / "ru" / "ann"
    raw.mkdir(parents=True)
    ann.mkdir(parents=True)
    text = "Тереза Мэй в Лондоне."
    assert unicodedata.normalize("NFC", text) == text
    (raw / "1.txt").write_text(text + "\n", encoding="utf-8")
    decomposed = unicodedata.normalize("NFD", "Тереза Мэй")
    assert decomposed != "Тереза Мэй"  # й really decomposes
    (ann / "1.ann").write_text(f"{decomposed}\tPER\nЛондоне\tLOC\n", encoding="utf-8")
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("\n".join(
        ["[UNK]", "[CLS]", "[PAD]", "Тереза", "Мэй", "в", "Лондоне", "."]) + "\n",
        encoding="utf-8")
    out = tmp_path / "cache"
    code = run("prepare", "--corpus", tmp_path / "c", "--vocab", vocab,
               "--out", out, "--max-len", "12")
    assert code == 0
    assert (out / "warnings.txt").read_text() == ""
    sents, _ = read_cache(out)
    assert sents[0].word_labels == ["B-PER", "I-PER", "O", "B-LOC", "O"]


def test_usage_error_exit_code():
    assert main(["train"]) == 1


def test_bad_vocab_is_data_error(corpus_dir, tmp_path):
    vocab = tmp_path / "broken.txt"
    vocab.write_text("justonepiece\n", encoding="utf-8")  # no [UNK]/[CLS]
    code = run("prepare", "--corpus", corpus_dir, "--vocab", vocab,
               "--out", tmp_path / "x")
    assert code == 2


def test_selfcheck_passes():
    assert main(["selfcheck"]) == 0


def test_selfcheck_perturbed_gradient_fails():
    assert main(["selfcheck", "--perturb-gradient"]) == 3
