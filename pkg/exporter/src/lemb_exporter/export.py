"""Run a frozen pretrained encoder over cached sentences and dump LEMB files."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .lemb import write_lemb

PAD_TOKEN = "[PAD]"


class ExportError(Exception):
    pass


def read_cache(cache_dir):
    cache_dir = Path(cache_dir)
    meta_path = cache_dir / "meta.json"
    rows_path = cache_dir / "sentences.jsonl"
    if not meta_path.exists() or not rows_path.exists():
        raise ExportError(f"{cache_dir} is not a prepared sentence cache")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    sentences = [json.loads(line) for line in
                 rows_path.read_text(encoding="utf-8").splitlines()]
    return sentences, meta


def sentence_file_stem(row: dict) -> str:
    return f"{row['topic']}__{row['language']}__{row['doc_id']}__{row['sent_index']}"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_model(name_or_path):
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(name_or_path, use_fast=False)
    model = AutoModel.from_pretrained(name_or_path)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return tokenizer, model


def check_vocab(model_dir, expected_sha: str) -> None:
    vocab_path = Path(model_dir) / "vocab.txt"
    if not vocab_path.exists():
        raise ExportError(f"{model_dir} has no vocab.txt to checksum")
    got = sha256_file(vocab_path)
    if got != expected_sha:
        raise ExportError(
            f"vocabulary checksum mismatch: cache {expected_sha}, model {got}")


def check_tokenization(tokenizer, row: dict) -> None:
    """The exporter must split words exactly as the cache did."""
    for word, (start, end) in zip(row["words"], row["alignment"]):
        cached = row["subtokens"][start:end]
        fresh = tokenizer.tokenize(word)
        if fresh != cached:
            for c, f in zip(cached + [None], fresh + [None]):
                if c != f:
                    raise ExportError(
                        f"tokenization mismatch on word {word!r}: cache has "
                        f"{c!r}, model tokenizer produced {f!r}")


@torch.no_grad()
def embed_sentence(tokenizer, model, row: dict) -> np.ndarray:
    ids = tokenizer.convert_tokens_to_ids(row["subtokens"])
    if any(i is None for i in ids):
        missing = row["subtokens"][ids.index(None)]
        raise ExportError(f"subtoken {missing!r} missing from the model vocabulary")
    input_ids = torch.tensor([ids], dtype=torch.long)
    mask = torch.tensor([row["mask"]], dtype=torch.long)
    out = model(input_ids=input_ids, attention_mask=mask,
                token_type_ids=torch.zeros_like(input_ids),
                output_hidden_states=True)
    # hidden_states[0] is the embedding lookup; export the encoder layers
    stack = torch.stack(out.hidden_states[1:], dim=0)[:, 0]  # (m, T, D)
    values = stack.numpy().astype(np.float32)
    values[:, np.asarray(row["mask"]) == 0, :] = 0.0
    return values


def export_cache(cache_dir, model_name, out_dir) -> dict:
    """Write one LEMB file per cached sentence plus manifest.txt."""
    sentences, meta = read_cache(cache_dir)
    tokenizer, model = load_model(model_name)
    if Path(str(model_name)).is_dir():
        check_vocab(model_name, meta["vocab_sha256"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    dims = None
    for row in sentences:
        check_tokenization(tokenizer, row)
        values = embed_sentence(tokenizer, model, row)
        if dims is None:
            dims = values.shape[:1] + values.shape[2:]
        path = out_dir / f"{sentence_file_stem(row)}.lemb"
        write_lemb(path, row["subtokens"], values)
        files.append(path.name)
    manifest = {
        "model": str(model_name),
        "m": dims[0],
        "dim": dims[1],
        "vocab_sha256": meta["vocab_sha256"],
        "file_count": len(files),
    }
    lines = [f"{k} = {v}" for k, v in manifest.items()]
    lines += [f"file.{i} = {name}" for i, name in enumerate(files)]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def make_random_model(vocab_path, out_dir, layers=12, hidden=768, heads=12,
                      max_positions=512, seed=0) -> None:
    """Materialize a randomly initialized encoder around an existing
    wordpiece vocabulary, for offline use where no pretrained weights are
    available.  The result loads through the normal pretrained-model path."""
    from transformers import BertConfig, BertModel, BertTokenizer

    vocab_path = Path(vocab_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab_lines = [l for l in vocab_path.read_text(encoding="utf-8").splitlines() if l]
    (out_dir / "vocab.txt").write_text("\n".join(vocab_lines) + "\n", encoding="utf-8")
    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=len(vocab_lines),
        hidden_size=hidden,
        num_hidden_layers=layers,
        num_attention_heads=heads,
        intermediate_size=4 * hidden,
        max_position_embeddings=max_positions,
    )
    model = BertModel(config)
    model.save_pretrained(out_dir)
    tokenizer = BertTokenizer(str(out_dir / "vocab.txt"), do_lower_case=False)
    tokenizer.save_pretrained(out_dir)
