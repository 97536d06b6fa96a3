"""Trainable sequence encoder: BiLSTM, multi-head self-attention, and the
bounded linear emission head.

All three stages are expressed as autodiff graphs over one sentence of T
padded positions.  Masked positions produce zero rows and contribute zero
attention weight, so appending padding never changes unmasked outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 768
    lstm_hidden: int = 512       # per direction; outputs are 2x this
    attn_heads: int = 6
    attn_key_dim: int = 64
    attn_value_dim: int = 64
    label_count: int = 14
    dropout_rate: float = 0.1
    attn_residual: bool = False  # add H back to the attention output

    def __post_init__(self):
        for name in ("input_dim", "lstm_hidden", "attn_heads",
                     "attn_key_dim", "attn_value_dim", "label_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def output_dim(self) -> int:
        return 2 * self.lstm_hidden


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, shape)


def init_encoder_params(cfg: EncoderConfig, rng) -> dict[str, np.ndarray]:
    """LSTM weights uniform in [-1/sqrt(h), 1/sqrt(h)] with forget bias +1;
    attention and linear maps uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    d, h = cfg.input_dim, cfg.lstm_hidden
    two_h = cfg.output_dim
    params: dict[str, np.ndarray] = {}
    lstm_bound = 1.0 / np.sqrt(h)
    for direction in ("fw", "bw"):
        params[f"lstm.{direction}.wx"] = _uniform(rng, lstm_bound, (d, 4 * h))
        params[f"lstm.{direction}.wh"] = _uniform(rng, lstm_bound, (h, 4 * h))
        bias = _uniform(rng, lstm_bound, 4 * h)
        bias[h:2 * h] += 1.0  # forget gate
        params[f"lstm.{direction}.b"] = bias
    attn_bound = 1.0 / np.sqrt(two_h)
    for i in range(cfg.attn_heads):
        params[f"attn.h{i}.wq"] = _uniform(rng, attn_bound, (two_h, cfg.attn_key_dim))
        params[f"attn.h{i}.wk"] = _uniform(rng, attn_bound, (two_h, cfg.attn_key_dim))
        params[f"attn.h{i}.wv"] = _uniform(rng, attn_bound, (two_h, cfg.attn_value_dim))
    concat_dim = cfg.attn_heads * cfg.attn_value_dim
    params["attn.wo"] = _uniform(rng, 1.0 / np.sqrt(concat_dim), (concat_dim, two_h))
    emit_bound = 1.0 / np.sqrt(two_h)
    params["emit.w"] = _uniform(rng, emit_bound, (two_h, cfg.label_count))
    params["emit.b"] = _uniform(rng, emit_bound, cfg.label_count)
    return params


def encoder_param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, h, two_h = cfg.input_dim, cfg.lstm_hidden, cfg.output_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for direction in ("fw", "bw"):
        shapes[f"lstm.{direction}.wx"] = (d, 4 * h)
        shapes[f"lstm.{direction}.wh"] = (h, 4 * h)
        shapes[f"lstm.{direction}.b"] = (4 * h,)
    for i in range(cfg.attn_heads):
        shapes[f"attn.h{i}.wq"] = (two_h, cfg.attn_key_dim)
        shapes[f"attn.h{i}.wk"] = (two_h, cfg.attn_key_dim)
        shapes[f"attn.h{i}.wv"] = (two_h, cfg.attn_value_dim)
    shapes["attn.wo"] = (cfg.attn_heads * cfg.attn_value_dim, two_h)
    shapes["emit.w"] = (two_h, cfg.label_count)
    shapes["emit.b"] = (cfg.label_count,)
    return shapes


# ---------------------------------------------------------------------------
# graph builders


def _lstm_direction(x: ad.Expr, mask: ad.Expr, wx, wh, b, h: int, reverse: bool):
    """Unrolled masked LSTM; masked steps carry state through unchanged,
    so the reverse pass effectively starts at the last unmasked position."""
    t_len = x.shape[0]
    one = ad.const(1.0)
    zeros = ad.const(np.zeros(h))
    state_h, state_c = zeros, zeros
    outputs: list[ad.Expr | None] = [None] * t_len
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        gates = ad.add(ad.add(ad.matmul(ad.select_row(x, t), wx),
                              ad.matmul(state_h, wh)), b)
        gi = ad.sigmoid(ad.slice_vec(gates, 0, h))
        gf = ad.sigmoid(ad.slice_vec(gates, h, 2 * h))
        gc = ad.tanh(ad.slice_vec(gates, 2 * h, 3 * h))
        go = ad.sigmoid(ad.slice_vec(gates, 3 * h, 4 * h))
        c_new = ad.add(ad.mul(gf, state_c), ad.mul(gi, gc))
        h_new = ad.mul(go, ad.tanh(c_new))
        m = ad.select_index(mask, t)
        keep = ad.sub(one, m)
        state_c = ad.add(ad.scale_by(c_new, m), ad.scale_by(state_c, keep))
        state_h = ad.add(ad.scale_by(h_new, m), ad.scale_by(state_h, keep))
        outputs[t] = state_h
    return outputs


def bilstm_expr(x: ad.Expr, mask: ad.Expr, p: dict[str, ad.Expr], h: int) -> ad.Expr:
    fwd = _lstm_direction(x, mask, p["lstm.fw.wx"], p["lstm.fw.wh"], p["lstm.fw.b"], h, False)
    bwd = _lstm_direction(x, mask, p["lstm.bw.wx"], p["lstm.bw.wh"], p["lstm.bw.b"], h, True)
    rows = [ad.concat([fwd[t], bwd[t]]) for t in range(x.shape[0])]
    return ad.mask_rows(ad.stack_rows(rows), mask)


def attention_expr(h: ad.Expr, mask: ad.Expr, p: dict[str, ad.Expr], cfg: EncoderConfig) -> ad.Expr:
    """Scaled dot-product heads with key-side masking, concatenated and
    projected back to the encoder width.

    The default is the bare block (no residual, no layer norm); setting
    ``attn_residual`` adds the input back to the projection, which makes
    token identity survive the near-uniform attention of a freshly
    initialized model.
    """
    heads = []
    for i in range(cfg.attn_heads):
        q = ad.matmul(h, p[f"attn.h{i}.wq"])
        k = ad.matmul(h, p[f"attn.h{i}.wk"])
        v = ad.matmul(h, p[f"attn.h{i}.wv"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(cfg.attn_key_dim))
        weights = ad.masked_softmax(scores, mask)
        heads.append(ad.matmul(weights, v))
    merged = ad.matmul(ad.concat(heads), p["attn.wo"])
    if cfg.attn_residual:
        merged = ad.add(merged, h)
    return ad.mask_rows(merged, mask)


def emissions_expr(a: ad.Expr, p: dict[str, ad.Expr]) -> ad.Expr:
    return ad.tanh(ad.bias_add(ad.matmul(a, p["emit.w"]), p["emit.b"]))


def _param_exprs(params: dict[str, np.ndarray]) -> dict[str, ad.Expr]:
    return {name: ad.param(name, np.asarray(v).shape) for name, v in params.items()}


def _mask_or_ones(mask, t_len):
    if mask is None:
        return np.ones(t_len)
    return np.asarray(mask, dtype=np.float64)


# ---------------------------------------------------------------------------
# public single-shot wrappers (tests, notebooks)


def bilstm_forward(x, mask, params, h: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    p = _param_exprs(params)
    root = bilstm_expr(ad.inp("x", x.shape), ad.inp("mask", (x.shape[0],)), p, h)
    return ad.evaluate(root, {"x": x, "mask": _mask_or_ones(mask, x.shape[0]), **params})


def multihead_attention(h_in, mask, params, cfg: EncoderConfig) -> np.ndarray:
    h_in = np.asarray(h_in, dtype=np.float64)
    p = _param_exprs(params)
    root = attention_expr(ad.inp("h", h_in.shape), ad.inp("mask", (h_in.shape[0],)), p, cfg)
    return ad.evaluate(root, {"h": h_in, "mask": _mask_or_ones(mask, h_in.shape[0]), **params})


def emissions(a, params) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    p = _param_exprs(params)
    root = emissions_expr(ad.inp("a", a.shape), p)
    return ad.evaluate(root, {"a": a, **params})
