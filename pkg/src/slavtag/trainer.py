"""Joint optimization: Adam with decoupled weight decay, linear warmup and
decay, global-norm gradient clipping, length-bucketed batches, early
stopping on the dev joint loss, and binary checkpoints.

Checkpoint layout (little-endian):
    magic "STCK" | u32 version=1 | u32 json_len | config JSON (UTF-8)
    u32 param_count | per param: u16 name_len + name | u8 ndim | u32 dims...
                                 | float64 payload
    u32 CRC-32 of everything between the version field and the CRC
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import crf
from .corpus import LABEL_TO_ID, TaggedSentence, spans_from_iob
from .encoder import EncoderConfig
from .evaluator import exact_set_metrics, language_f1, word_level_f1
from .model import TaggerModel
from .postprocess import predictions_to_entities, word_labels_from_path

ADAM_EPS = 1e-8
CKPT_MAGIC = b"STCK"
CKPT_VERSION = 1

# decay applies to weight matrices only: no biases, no aggregation
# weights, no CRF transitions
_NO_DECAY = ("agg.gamma", "agg.s", "crf.trans")


class TrainError(RuntimeError):
    pass


class CheckpointError(Exception):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    beta1: float = 0.8
    beta2: float = 0.9
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    batch_size: int = 16
    max_epochs: int = 150
    warmup_fraction: float = 0.1
    early_stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        for name in ("base_lr", "clip_norm", "batch_size", "max_epochs",
                     "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    loss_sl: float
    loss_clf: float
    dev_word_f1: float
    dev_span_f1: float
    dev_lang_f1: float
    lr: float
    dev_lang_acc: float = 0.0  # convenience; not part of the CSV schema


HISTORY_HEADER = "epoch,loss,loss_sl,loss_clf,dev_word_f1,dev_span_f1,dev_lang_f1,lr"


def history_to_csv(records: list[EpochRecord]) -> str:
    lines = [HISTORY_HEADER]
    for r in records:
        lines.append(
            f"{r.epoch},{r.loss:.8f},{r.loss_sl:.8f},{r.loss_clf:.8f},"
            f"{r.dev_word_f1:.6f},{r.dev_span_f1:.6f},{r.dev_lang_f1:.6f},{r.lr:.10g}")
    return "\n".join(lines) + "\n"


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear 0 -> base_lr over the warmup steps, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = cfg.warmup_fraction * total_steps
    if warmup > 0 and step <= warmup:
        return cfg.base_lr * step / warmup
    if total_steps == warmup:
        return 0.0
    return cfg.base_lr * (total_steps - step) / (total_steps - warmup)


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale all gradients in place so the global norm is <= clip_norm."""
    total = 0.0
    for name in sorted(grads):
        total += float((grads[name] ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > clip_norm:
        scale = clip_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


@dataclass
class AdamState:
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def _decays(name: str) -> bool:
    return not (name in _NO_DECAY or name.endswith(".b"))


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, cfg: TrainConfig,
              frozen: dict[str, np.ndarray] | None = None) -> None:
    """One bias-corrected Adam update with decoupled weight decay.

    ``frozen`` maps a parameter name to a boolean mask of entries that
    must never move (the CRF START/STOP pins).
    """
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    for name in sorted(params):
        g = grads[name]
        m = state.exp_avg.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        else:
            v = state.exp_avg_sq[name]
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        state.exp_avg[name] = m
        state.exp_avg_sq[name] = v
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        if cfg.weight_decay > 0 and _decays(name):
            update = update + lr * cfg.weight_decay * params[name]
        new = params[name] - update
        if frozen and name in frozen:
            new = np.where(frozen[name], new, params[name])
        params[name] = new


def joint_loss(batch_emissions, batch_gold_labels, batch_lang_logits,
               batch_lang_gold, masks, crf_params: crf.CrfParams) -> float:
    """Mean over the batch of (sentence NLL + language cross-entropy)."""
    total = 0.0
    for e, gold, logits, lang, mask in zip(
            batch_emissions, batch_gold_labels, batch_lang_logits,
            batch_lang_gold, masks):
        nll = crf.nll_loss(e, mask, gold, crf_params)
        logits = np.asarray(logits, dtype=np.float64)
        shifted = logits - logits.max()
        ce = float(np.log(np.exp(shifted).sum()) - shifted[lang])
        total += nll + ce
    return total / len(batch_emissions)


# ---------------------------------------------------------------------------
# checkpoints


def _config_blob(model: TaggerModel) -> dict:
    return {
        "version": CKPT_VERSION,
        "encoder": {
            "input_dim": model.encoder.input_dim,
            "lstm_hidden": model.encoder.lstm_hidden,
            "attn_heads": model.encoder.attn_heads,
            "attn_key_dim": model.encoder.attn_key_dim,
            "attn_value_dim": model.encoder.attn_value_dim,
            "label_count": model.encoder.label_count,
            "dropout_rate": model.encoder.dropout_rate,
            "attn_residual": model.encoder.attn_residual,
        },
        "layer_count": model.layer_count,
        "languages": model.languages,
        "labels": list(model.labels),
        "embedding_source": model.embedding_source,
        "vocab_sha256": model.vocab_sha256,
    }


def save_checkpoint(model: TaggerModel, path) -> None:
    body = bytearray()
    blob = json.dumps(_config_blob(model), ensure_ascii=False, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    body += struct.pack("<I", len(blob))
    body += blob
    body += struct.pack("<I", len(model.params))
    for name in sorted(model.params):
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(model.params[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        body += struct.pack("<H", len(raw))
        body += raw
        body += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            body += struct.pack("<I", dim)
        body += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(bytes(body))))


def load_checkpoint(path) -> TaggerModel:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    body, (crc,) = data[8:-4], struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    off = 0
    (json_len,) = struct.unpack_from("<I", body, off)
    off += 4
    cfg = json.loads(body[off:off + json_len].decode("utf-8"))
    off += json_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f8", count=size, offset=off)
            off += 8 * size
            params[name] = arr.reshape(shape).astype(np.float64)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated parameter table") from exc
    return TaggerModel(
        encoder=EncoderConfig(**cfg["encoder"]),
        layer_count=cfg["layer_count"],
        languages=list(cfg["languages"]),
        labels=tuple(cfg["labels"]),
        params=params,
        embedding_source=cfg.get("embedding_source"),
        vocab_sha256=cfg.get("vocab_sha256", ""),
    )


# ---------------------------------------------------------------------------
# the loop


def _sentence_inputs(model: TaggerModel, sent: TaggedSentence):
    gold = [LABEL_TO_ID[l] for l in sent.subtoken_labels]
    lang_id = model.languages.index(sent.language)
    return gold, lang_id


def make_batches(lengths: list[int], batch_size: int, rng) -> list[list[int]]:
    """Shuffle, stable-sort by length into buckets, then shuffle batches."""
    order = list(rng.permutation(len(lengths)))
    order.sort(key=lambda i: lengths[i])
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(batches)
    return [list(b) for b in batches]


def evaluate_dev(model: TaggerModel, sentences: list[TaggedSentence],
                 emb_values: list[np.ndarray], with_lang: bool = True):
    """Dev joint loss plus word/span/language F1 at the current params."""
    total_loss = 0.0
    pred_words, gold_words = [], []
    pred_sets: dict[str, list] = {}
    gold_sets: dict[str, list] = {}
    pred_langs, gold_langs = [], []
    crf_params = model.crf_params()
    for sent, values in zip(sentences, emb_values):
        gold, lang_id = _sentence_inputs(model, sent)
        g = model.graph(len(sent.mask), with_lang=with_lang)
        b = model.bindings(values, sent.mask, gold_labels=gold,
                           lang_id=lang_id if with_lang else None)
        loss, emit, logits = ad.evaluate_many([g.loss, g.emissions, g.logits], b)
        total_loss += float(loss)
        best = crf.viterbi(emit, sent.mask, crf_params)
        path = [model.labels[i] for i in best.labels]
        pred_words.append(word_labels_from_path(sent, path))
        gold_words.append(sent.word_labels)
        key = f"{sent.topic}/{sent.language}/{sent.doc_id}#{sent.sent_index}"
        pred_sets[key] = predictions_to_entities(sent, path)
        gold_sets[key] = spans_from_iob(sent.words, sent.word_labels)
        pred_langs.append(model.languages[int(np.argmax(logits))])
        gold_langs.append(sent.language)
    word_rows = word_level_f1(pred_words, gold_words)
    span_rows = exact_set_metrics(pred_sets, gold_sets)
    lang_rows = language_f1(pred_langs, gold_langs, inventory=model.languages)
    lang_acc = sum(p == g for p, g in zip(pred_langs, gold_langs)) / len(pred_langs)
    return (total_loss / len(sentences), word_rows[-1].f1, span_rows[-1].f1,
            lang_rows[-1].f1, lang_acc)


def train(model: TaggerModel, train_sents: list[TaggedSentence],
          dev_sents: list[TaggedSentence], emb_source, cfg: TrainConfig,
          with_lang: bool = True, out_dir=None, epoch_callback=None):
    """Optimize the model; returns (history, best_epoch).

    Deterministic for a fixed config/seed and inputs: batching, dropout
    and initialization all derive from seeded generators, and per-batch
    gradients are accumulated in fixed sentence order.

    ``epoch_callback(model, record) -> bool`` may request an early stop.
    """
    if not train_sents or not dev_sents:
        raise TrainError("empty training or dev corpus")
    train_emb = [np.ascontiguousarray(emb_source.get(s).values) for s in train_sents]
    dev_emb = [np.ascontiguousarray(emb_source.get(s).values) for s in dev_sents]
    frozen = {"crf.trans": crf.trainable_transition_mask(model.encoder.label_count)}
    batch_rng = np.random.default_rng([cfg.seed, 1])
    drop_rng = np.random.default_rng([cfg.seed, 2])
    state = AdamState()
    lengths = [sum(s.mask) for s in train_sents]
    steps_per_epoch = (len(train_sents) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.max_epochs * steps_per_epoch
    history: list[EpochRecord] = []
    best_loss = float("inf")
    best_epoch = -1
    since_best = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epoch_loss = epoch_sl = epoch_clf = 0.0
        n_seen = 0
        lr = 0.0
        for batch in make_batches(lengths, cfg.batch_size, batch_rng):
            step += 1
            lr = lr_at(step, total_steps, cfg)
            grad_sum: dict[str, np.ndarray] = {}
            for idx in batch:
                sent = train_sents[idx]
                gold, lang_id = _sentence_inputs(model, sent)
                g = model.graph(len(sent.mask), with_lang=with_lang)
                b = model.bindings(train_emb[idx], sent.mask, gold_labels=gold,
                                   lang_id=lang_id if with_lang else None,
                                   drop_rng=drop_rng)
                loss_val, grads, aux = ad.value_and_grad(g.loss, b, aux=(g.nll,))
                sl = float(aux[0])
                clf = loss_val - sl if with_lang else 0.0
                if not np.isfinite(loss_val):
                    raise TrainError(
                        f"non-finite loss at epoch {epoch} for sentence "
                        f"{sent.doc_id}#{sent.sent_index}")
                epoch_loss += loss_val
                epoch_sl += sl
                epoch_clf += clf
                n_seen += 1
                for name, grad in grads.items():
                    if name in grad_sum:
                        grad_sum[name] += grad
                    else:
                        grad_sum[name] = grad.copy()
            inv = 1.0 / len(batch)
            for name in grad_sum:
                grad_sum[name] *= inv
            for name in model.params:
                if name not in grad_sum:
                    grad_sum[name] = np.zeros_like(model.params[name])
            clip_gradients(grad_sum, cfg.clip_norm)
            adam_step(model.params, grad_sum, state, lr, cfg, frozen=frozen)
        dev_loss, dev_word, dev_span, dev_lang, dev_acc = evaluate_dev(
            model, dev_sents, dev_emb, with_lang=with_lang)
        record = EpochRecord(
            epoch=epoch, loss=epoch_loss / n_seen, loss_sl=epoch_sl / n_seen,
            loss_clf=epoch_clf / n_seen, dev_word_f1=dev_word,
            dev_span_f1=dev_span, dev_lang_f1=dev_lang, lr=lr,
            dev_lang_acc=dev_acc)
        history.append(record)
        if dev_loss < best_loss - 1e-12:
            best_loss = dev_loss
            best_epoch = epoch
            since_best = 0
            if out_dir is not None:
                save_checkpoint(model, out_dir / "best.ckpt")
        else:
            since_best += 1
        stop = epoch_callback(model, record) if epoch_callback else False
        if since_best >= cfg.early_stop_patience or stop:
            break
    if out_dir is not None:
        save_checkpoint(model, out_dir / "final.ckpt")
        if not (out_dir / "best.ckpt").exists():
            save_checkpoint(model, out_dir / "best.ckpt")
        (out_dir / "history.csv").write_text(history_to_csv(history), encoding="utf-8")
    return history, best_epoch
