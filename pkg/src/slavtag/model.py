"""Full tagging model: parameter store, joint-loss graph assembly and
sentence-level prediction.

One graph is built per (sequence length, with/without language head) and
reused across sentences by rebinding inputs; dropout enters as bound
multiplier masks so the same graph serves training and inference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import crf
from .corpus import LABELS, DEFAULT_LANGUAGES
from .embeddings import aggregate_expr
from .encoder import (
    EncoderConfig,
    attention_expr,
    bilstm_expr,
    emissions_expr,
    encoder_param_shapes,
    init_encoder_params,
)
from .lang_clf import classify_expr, cross_entropy_expr, init_lang_params, softmax_probs


@dataclass
class ModelGraph:
    t_len: int
    with_lang: bool
    loss: ad.Expr
    nll: ad.Expr
    ce: ad.Expr | None
    emissions: ad.Expr
    logits: ad.Expr


def init_model_params(cfg: EncoderConfig, layer_count: int, num_languages: int,
                      seed: int, layer_weight_init: float | None = None) -> dict[str, np.ndarray]:
    """Fresh parameter store.

    ``layer_weight_init`` sets the initial per-layer aggregation weights;
    the default 1/m starts from the layer average, 1.0 from the plain sum
    (useful when inputs are small and the training budget is tight).
    """
    rng = np.random.default_rng(seed)
    if layer_weight_init is None:
        layer_weight_init = 1.0 / layer_count
    params: dict[str, np.ndarray] = {
        "agg.gamma": np.asarray(1.0),
        "agg.s": np.full(layer_count, float(layer_weight_init)),
    }
    params.update(init_encoder_params(cfg, rng))
    lang = init_lang_params(cfg.output_dim, num_languages, rng)
    params["lang.w"] = lang.weight
    params["lang.b"] = lang.bias
    params["crf.trans"] = crf.CrfParams.initial(cfg.label_count).transitions
    return params


def build_graph(cfg: EncoderConfig, layer_count: int, num_languages: int,
                t_len: int, with_lang: bool = True) -> ModelGraph:
    d, k, c = cfg.input_dim, cfg.label_count, num_languages
    layers = [ad.inp(f"emb.layer{i}", (t_len, d)) for i in range(layer_count)]
    mask = ad.inp("mask", (t_len,))
    drop_agg = ad.inp("drop_agg", (t_len, d))
    drop_attn = ad.inp("drop_attn", (t_len, cfg.output_dim))

    shapes = {"agg.gamma": (), "agg.s": (layer_count,)}
    shapes.update(encoder_param_shapes(cfg))
    p = {name: ad.param(name, shape) for name, shape in shapes.items()}
    p["lang.w"] = ad.param("lang.w", (3 * cfg.output_dim, c))
    p["lang.b"] = ad.param("lang.b", (c,))
    p["crf.trans"] = ad.param("crf.trans", (k + 2, k + 2))

    x = ad.mul(aggregate_expr(layers, p["agg.gamma"], p["agg.s"]), drop_agg)
    hidden = bilstm_expr(x, mask, p, cfg.lstm_hidden)
    attended = ad.mul(attention_expr(hidden, mask, p, cfg), drop_attn)
    emit = emissions_expr(attended, p)

    logz = crf.logz_expr(emit, mask, p["crf.trans"], k)
    gold = crf.gold_score_expr(
        emit, p["crf.trans"], k,
        ad.inp("emit_hot", (t_len, k)), ad.inp("trans_counts", (k, k)),
        ad.inp("first_hot", (k,)), ad.inp("last_hot", (k,)))
    nll = ad.sub(logz, gold)

    logits = classify_expr(attended, mask, p["lang.w"], p["lang.b"])
    ce = None
    loss = nll
    if with_lang:
        ce = cross_entropy_expr(logits, ad.inp("lang_hot", (c,)))
        loss = ad.add(nll, ce)
    return ModelGraph(t_len=t_len, with_lang=with_lang, loss=loss, nll=nll,
                      ce=ce, emissions=emit, logits=logits)


@dataclass
class TaggerModel:
    encoder: EncoderConfig
    layer_count: int
    languages: list[str]
    labels: tuple[str, ...]
    params: dict[str, np.ndarray]
    embedding_source: dict | None = None
    vocab_sha256: str = ""
    _graphs: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def create(cls, encoder: EncoderConfig, layer_count: int,
               languages=DEFAULT_LANGUAGES, labels=LABELS, seed: int = 0,
               embedding_source: dict | None = None, vocab_sha256: str = "",
               layer_weight_init: float | None = None):
        if encoder.label_count != len(labels):
            raise ValueError("label_count must match the label inventory")
        params = init_model_params(encoder, layer_count, len(languages), seed,
                                   layer_weight_init=layer_weight_init)
        return cls(encoder=encoder, layer_count=layer_count,
                   languages=list(languages), labels=tuple(labels), params=params,
                   embedding_source=embedding_source, vocab_sha256=vocab_sha256)

    @property
    def num_languages(self) -> int:
        return len(self.languages)

    def crf_params(self) -> crf.CrfParams:
        return crf.CrfParams(self.params["crf.trans"])

    def graph(self, t_len: int, with_lang: bool = True) -> ModelGraph:
        key = (t_len, with_lang)
        if key not in self._graphs:
            self._graphs[key] = build_graph(
                self.encoder, self.layer_count, self.num_languages, t_len, with_lang)
        return self._graphs[key]

    def bindings(self, emb_values: np.ndarray, mask, *, gold_labels=None,
                 lang_id: int | None = None, drop_rng=None) -> dict:
        """Input bindings for one sentence; params are bound by reference.

        ``drop_rng`` switches on inverted dropout for the two dropout
        sites; None means inference (identity masks).
        """
        t_len = emb_values.shape[1]
        d, width = self.encoder.input_dim, self.encoder.output_dim
        b = {f"emb.layer{i}": emb_values[i] for i in range(self.layer_count)}
        b["mask"] = np.asarray(mask, dtype=np.float64)
        rate = self.encoder.dropout_rate
        if drop_rng is None or rate == 0.0:
            b["drop_agg"] = np.ones((t_len, d))
            b["drop_attn"] = np.ones((t_len, width))
        else:
            keep = 1.0 - rate
            b["drop_agg"] = (drop_rng.random((t_len, d)) < keep) / keep
            b["drop_attn"] = (drop_rng.random((t_len, width)) < keep) / keep
        if gold_labels is not None:
            b.update(crf.gold_bindings(gold_labels, b["mask"], t_len,
                                       self.encoder.label_count))
        if lang_id is not None:
            hot = np.zeros(self.num_languages)
            hot[lang_id] = 1.0
            b["lang_hot"] = hot
        b.update(self.params)
        return b

    def forward(self, emb_values: np.ndarray, mask) -> tuple[np.ndarray, np.ndarray]:
        """Inference-mode emissions and language logits for one sentence."""
        g = self.graph(emb_values.shape[1], with_lang=True)
        b = self.bindings(emb_values, mask)
        emit, logits = ad.evaluate_many([g.emissions, g.logits], b)
        return emit, logits

    def decode(self, emb_values: np.ndarray, mask, n_paths: int = 1):
        """Viterbi (and optional n-best) label indices plus language probs."""
        emit, logits = self.forward(emb_values, mask)
        params = self.crf_params()
        best = crf.viterbi(emit, mask, params)
        extra = crf.nbest(emit, mask, params, n_paths) if n_paths > 1 else [best]
        return best, extra, softmax_probs(logits)
